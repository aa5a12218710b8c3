use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use provenance_core::eval::GroundTruthCase;
use provenance_core::imaging::GrayImage;
use provenance_core::synth::{generate, image_file_name, load_cases, SynthOutput, SynthSpec, TransformKind};

fn photos() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/photos")
}

fn in_degrees(case: &GroundTruthCase) -> BTreeMap<u64, usize> {
    let mut d: BTreeMap<u64, usize> = case.graph.nodes.iter().map(|n| (n.id, 0)).collect();
    for e in &case.graph.edges {
        *d.get_mut(&e.to).unwrap() += 1;
    }
    d
}

fn is_dag(case: &GroundTruthCase) -> bool {
    let mut indeg = in_degrees(case);
    let mut ready: Vec<u64> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for e in case.graph.edges.iter().filter(|e| e.from == n) {
            let d = indeg.get_mut(&e.to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(e.to);
            }
        }
    }
    seen == case.graph.nodes.len()
}

fn check_structure(out: &SynthOutput, dir: &Path) {
    let mut graph_ids = BTreeSet::new();
    for (case, meta) in out.cases.iter().zip(&out.meta) {
        assert!(is_dag(case));
        assert!(case.graph.edges.iter().all(|e| e.directed));
        let composites: BTreeSet<u64> = meta
            .edges
            .iter()
            .filter(|e| e.transform == TransformKind::Splice)
            .map(|e| e.to)
            .collect();
        for (node, d) in in_degrees(case) {
            if composites.contains(&node) {
                assert_eq!(d, 2, "composite {node}");
            } else {
                assert!(d <= 1, "node {node}");
            }
        }
        // one truth edge per applied transformation, irreversible ones listed
        let truth: BTreeSet<(u64, u64)> = case.graph.edges.iter().map(|e| (e.from, e.to)).collect();
        let applied: BTreeSet<(u64, u64)> = meta.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(truth, applied);
        assert_eq!(meta.edges.len(), case.graph.edges.len());
        let irreversible: BTreeSet<[u64; 2]> = meta.edges.iter().filter(|e| e.irreversible).map(|e| [e.from, e.to]).collect();
        assert_eq!(irreversible, case.irreversible.iter().copied().collect());
        let relevant: BTreeSet<u64> = case.relevant.iter().copied().collect();
        assert_eq!(relevant, case.graph.node_ids());
        assert!(relevant.contains(&case.query));
        for id in &relevant {
            assert!(graph_ids.insert(*id), "image {id} in two cases");
            assert!(dir.join("images").join(image_file_name(*id)).exists());
        }
    }
    for d in &out.distractors {
        assert!(!graph_ids.contains(d));
        assert!(dir.join("images").join(image_file_name(*d)).exists());
    }
    assert_eq!(load_cases(dir.join("cases")).unwrap(), out.cases);
}

#[test]
fn depth_two_chain_without_composites() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        graphs: 1,
        nodes: (3, 3),
        depth: (2, 2),
        branching: 1,
        palette: vec![TransformKind::Crop, TransformKind::Brightness],
        distractors: 0,
        image_size: 96,
        ..SynthSpec::default()
    };
    let out = generate(&spec, dir.path()).unwrap();
    let case = &out.cases[0];
    assert_eq!(case.graph.nodes.len(), 3);
    let e = &case.graph.edges;
    assert_eq!(e.len(), 2);
    assert_eq!(e[0].to, e[1].from, "path A -> B -> C");
    assert_eq!(case.query, e[1].to);
    check_structure(&out, dir.path());
}

#[test]
fn one_splice_makes_a_two_parent_composite() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        graphs: 1,
        nodes: (3, 3),
        depth: (1, 1),
        palette: vec![TransformKind::Splice],
        distractors: 0,
        image_size: 96,
        ..SynthSpec::default()
    };
    let out = generate(&spec, dir.path()).unwrap();
    let case = &out.cases[0];
    let degrees = in_degrees(case);
    assert_eq!(degrees[&case.query], 2);
    assert_eq!(degrees.values().filter(|&&d| d == 0).count(), 2, "host and donor");
    check_structure(&out, dir.path());
}

#[test]
fn distractors_are_disjoint_from_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { graphs: 2, nodes: (4, 5), distractors: 1000, image_size: 64, ..SynthSpec::default() };
    let out = generate(&spec, dir.path()).unwrap();
    assert_eq!(out.distractors.len(), 1000);
    let in_graphs: BTreeSet<u64> = out.cases.iter().flat_map(|c| c.relevant.iter().copied()).collect();
    assert!(out.distractors.iter().all(|d| !in_graphs.contains(d)));
    check_structure(&out, dir.path());
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn default_spec_is_reproducible_and_uses_the_whole_palette() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = SynthSpec::default();
    let out = generate(&spec, a.path()).unwrap();
    generate(&spec, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), tb.len());
    assert!(ta == tb, "regeneration differs");

    let used: std::collections::HashSet<TransformKind> = out.meta.iter().flat_map(|m| m.edges.iter().map(|e| e.transform)).collect();
    assert_eq!(used, TransformKind::ALL.into_iter().collect());
    check_structure(&out, a.path());

    let other = tempfile::tempdir().unwrap();
    generate(&SynthSpec { seed: 1, ..spec }, other.path()).unwrap();
    assert!(tree_bytes(other.path()) != ta);
}

#[test]
fn photo_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        seed_dir: Some(photos()),
        graphs: 2,
        nodes: (6, 8),
        distractors: 10,
        image_size: 128,
        ..SynthSpec::default()
    };
    let out = generate(&spec, dir.path()).unwrap();
    check_structure(&out, dir.path());
    let img = GrayImage::open(dir.path().join("images").join(image_file_name(out.cases[0].graph.nodes[0].id))).unwrap();
    assert!(img.width() >= 32 && img.height() >= 32);
}

#[test]
fn unreadable_seeds_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    fs::create_dir_all(&seeds).unwrap();
    fs::write(seeds.join("a.png"), b"not an image").unwrap();
    fs::write(seeds.join("b.png"), b"not an image").unwrap();
    let spec = SynthSpec { seed_dir: Some(seeds), graphs: 1, distractors: 0, ..SynthSpec::default() };
    assert!(generate(&spec, dir.path().join("out")).is_err());
    let missing = SynthSpec { seed_dir: Some(dir.path().join("nope")), ..SynthSpec::default() };
    assert!(generate(&missing, dir.path().join("out2")).is_err());
}
