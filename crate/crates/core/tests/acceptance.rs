//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `--nocapture` gives a summary of the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use provenance_core::config::PipelineConfig;
use provenance_core::detector::{detect, select_distributed_detailed, Descriptor, DetectorConfig, InterestPoint};
use provenance_core::eval::{directed_overlap_on, evaluate_suite, graph_overlap, CaseResult, GroundTruthCase};
use provenance_core::filtering::{rank_csv, read_rank_csv, FeatureDir, FeatureSource};
use provenance_core::graphs::{kruskal_build, ProvenanceGraph};
use provenance_core::imaging::{entropy_bits, warp, GrayImage, Homography};
use provenance_core::index::{ingest_feature_files, IndexConfig, IvfAdcIndex};
use provenance_core::pairwise::{build_with, fit_homography, mutual_information, MatchConfig, PairScorer, PairwiseAnalysis};
use provenance_core::pipeline::{end_to_end, extract_corpus, feature_files, oracle_graph, retrieve, train_from_features, Corpus};
use provenance_core::synth::{generate, SynthOutput, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

// 1. Kruskal against exhaustive spanning trees

/// Every labelled tree on n vertices, decoded from Prüfer sequences.
fn all_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    match n {
        1 => return vec![vec![]],
        2 => return vec![vec![(0, 1)]],
        _ => {}
    }
    (0..n.pow(n as u32 - 2))
        .map(|mut code| {
            let seq: Vec<usize> = (0..n - 2)
                .map(|_| {
                    let v = code % n;
                    code /= n;
                    v
                })
                .collect();
            let mut degree = vec![1usize; n];
            seq.iter().for_each(|&v| degree[v] += 1);
            let mut edges = Vec::with_capacity(n - 1);
            for &v in &seq {
                let leaf = (0..n).find(|&u| degree[u] == 1).unwrap();
                edges.push((leaf, v));
                degree[leaf] -= 1;
                degree[v] -= 1;
            }
            let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
            edges.push((rest[0], rest[1]));
            edges
        })
        .collect()
}

fn analysis_of(d: Vec<Vec<f64>>) -> PairwiseAnalysis {
    let n = d.len();
    PairwiseAnalysis {
        ids: (0..n as u64).collect(),
        query: 0,
        m: vec![vec![0; n]; n],
        d_gcm: d,
        d_mi: vec![vec![0.0; n]; n],
        active: vec![true; n],
        pair_computations: 0,
        computed: vec![],
    }
}

/// Sum of edge weights in ascending order, so equal trees sum identically.
fn tree_weight(d: &[Vec<f64>], edges: impl Iterator<Item = (usize, usize)>) -> f64 {
    let mut w: Vec<f64> = edges.map(|(i, j)| d[i][j]).collect();
    w.sort_by(f64::total_cmp);
    w.iter().sum()
}

#[test]
fn criterion_1_kruskal_is_minimal() {
    let t = Instant::now();
    let trees: Vec<_> = (0..=7).map(|n| if n == 0 { vec![] } else { all_trees(n) }).collect();
    let mut mismatches = Vec::new();
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=7);
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                // a coarse grid of values so ties occur
                let v = if r.random_bool(0.2) { 0.5 } else { r.random_range(0.01..1.0) };
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        let best = trees[n].iter().map(|t| tree_weight(&d, t.iter().copied())).fold(f64::INFINITY, f64::min);
        let g = kruskal_build(&analysis_of(d.clone()));
        let got = tree_weight(&d, g.edges.iter().map(|e| (e.from as usize, e.to as usize)));
        if g.edges.len() != n - 1 || got != best {
            mismatches.push(seed);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && secs < 10.0;
    report(1, pass, format!("100 seeds, mismatching seeds {mismatches:?}, {secs:.2} s"));
    assert!(pass);
}

// 2. Mutual information

fn uniform_patch(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_fn(w, h, |_, _| r.random())
}

#[test]
fn criterion_2_mutual_information() {
    let mut self_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    for seed in 0..50 {
        let x = uniform_patch(64, 64, 100 + seed);
        self_err = self_err.max((mutual_information(&x, &x).unwrap() - entropy_bits(&x)).abs());
        let noise = uniform_patch(64, 64, 200 + seed);
        let y = GrayImage::from_fn(64, 64, |c, r| x.get(c, r) / 2 + noise.get(c, r) / 2);
        sym_err = sym_err.max((mutual_information(&x, &y).unwrap() - mutual_information(&y, &x).unwrap()).abs());
    }
    let independent = (0..10)
        .map(|s| mutual_information(&uniform_patch(64, 64, 2 * s), &uniform_patch(64, 64, 2 * s + 1)).unwrap())
        .sum::<f64>()
        / 10.0;
    let half = GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0 } else { 255 });
    let half_mi = mutual_information(&half, &half).unwrap();

    let parts = [
        ("self", self_err < 1e-9),
        ("symmetry", sym_err < 1e-12),
        ("independent", independent < 0.15),
        ("half", half_mi == 1.0),
    ];
    let pass = parts.iter().all(|p| p.1);
    let failed: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    report(
        2,
        pass,
        format!(
            "max |MI(X,X)-H(X)| {self_err:.1e}, max asymmetry {sym_err:.1e}, \
             independent 64x64 mean {independent:.3} bits (need < 0.15), half/half {half_mi}; failed: {failed:?}"
        ),
    );
    assert!(pass);
}

// 3. Homography recovery

/// A random projective map with condition number below 50 that keeps
/// [0, 200]^2 well in front of the camera.
fn random_homography(r: &mut ChaCha8Rng) -> Homography {
    loop {
        let (s, a) = (r.random_range(0.7..1.4), r.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let aniso = r.random_range(0.85..1.15);
        let m = nalgebra::Matrix3::new(
            s * aniso * a.cos(),
            -s * a.sin() + r.random_range(-0.1..0.1),
            r.random_range(-4.0..4.0),
            s * a.sin(),
            s / aniso * a.cos(),
            r.random_range(-4.0..4.0),
            r.random_range(-1e-3..1e-3),
            r.random_range(-1e-3..1e-3),
            1.0,
        );
        let sv = m.svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        let h = Homography::new(m);
        let front = [(0.0, 0.0), (200.0, 0.0), (0.0, 200.0), (200.0, 200.0)]
            .iter()
            .all(|&(x, y)| m[(2, 0)] * x + m[(2, 1)] * y + 1.0 > 0.5);
        if cond < 50.0 && front {
            return h;
        }
    }
}

fn reprojection(h: &Homography, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (x, y) = h.apply(a.0, a.1);
    (x - b.0).hypot(y - b.1)
}

#[test]
fn criterion_3_homography_recovery() {
    let cfg = MatchConfig { gc_epsilon: 5.0, ..MatchConfig::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(3000 + seed);
        let h = random_homography(&mut r);
        let a: Vec<(f64, f64)> = (0..20).map(|_| (r.random_range(0.0..200.0), r.random_range(0.0..200.0))).collect();
        let b: Vec<(f64, f64)> = a.iter().map(|&(x, y)| h.apply(x, y)).collect();
        let fit = fit_homography(&a, &b, &cfg).unwrap();
        let err = a.iter().zip(&b).map(|(&p, &q)| reprojection(&fit.homography, p, q)).fold(0.0, f64::max);
        worst = worst.max(err);
    }

    // 30% of 40 correspondences are replaced by points at least 3 epsilon
    // from their true image; inliers carry +-0.25 px of jitter
    let mut recovered = 0;
    for seed in 0..100 {
        let mut r = rng(4000 + seed);
        let h = random_homography(&mut r);
        let n = 40;
        let a: Vec<(f64, f64)> = (0..n).map(|_| (r.random_range(0.0..200.0), r.random_range(0.0..200.0))).collect();
        let outlier: Vec<bool> = (0..n).map(|k| k % 10 < 3).collect();
        let b: Vec<(f64, f64)> = a
            .iter()
            .zip(&outlier)
            .map(|(&(x, y), &out)| {
                let (u, v) = h.apply(x, y);
                if out {
                    loop {
                        let q = (r.random_range(-20.0..220.0), r.random_range(-20.0..220.0));
                        if (q.0 - u).hypot(q.1 - v) > 3.0 * cfg.gc_epsilon {
                            break q;
                        }
                    }
                } else {
                    (u + r.random_range(-0.25..0.25), v + r.random_range(-0.25..0.25))
                }
            })
            .collect();
        let Ok(fit) = fit_homography(&a, &b, &cfg) else { continue };
        let truth: Vec<usize> = (0..n).filter(|&k| !outlier[k]).collect();
        if fit.inliers == truth && fit.rms < 0.5 {
            recovered += 1;
        }
    }
    let pass = worst < 1e-6 && recovered >= 95;
    report(3, pass, format!("noise-free max reprojection {worst:.2e} px, 30% outliers recovered {recovered}/100"));
    assert!(pass);
}

// 4. ANN quality

fn uniform_vectors(n: usize, seed: u64) -> Vec<Descriptor> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut d = [0f32; 64];
            d.iter_mut().for_each(|v| *v = r.random());
            d
        })
        .collect()
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

#[test]
fn criterion_4_ann_quality() {
    let t = Instant::now();
    let data = uniform_vectors(50_000, 40);
    let cfg = IndexConfig { subq_m: 16, coarse_k: 32, subq_k: 96, ..IndexConfig::default() };
    let mut index = IvfAdcIndex::train(&data, &cfg).unwrap();
    let feats: Vec<(u64, Descriptor)> = data.iter().enumerate().map(|(i, d)| (i as u64, *d)).collect();
    index.add_batch(&feats);

    index.set_search_params(cfg.coarse_k, 10).unwrap();
    let queries = uniform_vectors(500, 41);
    let rows = index.search_knn(&queries).unwrap();
    let hits = queries
        .iter()
        .zip(&rows)
        .filter(|(q, row)| {
            let nn = (0..data.len()).min_by(|&a, &b| sq(&data[a], &q[..]).total_cmp(&sq(&data[b], &q[..]))).unwrap();
            row.iter().any(|n| n.feature_id == nn as u64)
        })
        .count();
    let recall = hits as f64 / queries.len() as f64;

    // feature ids follow insertion order, so id i is data[i]
    index.set_search_params(cfg.coarse_k, 2000).unwrap();
    let probes = &data[..50];
    let rows = index.search_knn(probes).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut missing = 0;
    for (i, row) in rows.iter().enumerate() {
        let (list, codes) = index.encode_one(&data[i]);
        let want = sq(&index.rotate(&data[i]), &index.reconstruct(list, &codes));
        match row.iter().find(|n| n.feature_id == i as u64) {
            Some(hit) => worst_rel = worst_rel.max((hit.distance as f64 - want).abs() / want.max(1e-12)),
            None => missing += 1,
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = recall >= 0.8 && missing == 0 && worst_rel <= 1e-4 && secs < 120.0;
    report(
        4,
        pass,
        format!(
            "recall@10 {recall:.3} (16x96 codes, 32 lists, full probe), \
             ADC self-distance max rel. error {worst_rel:.1e}, {secs:.1} s"
        ),
    );
    assert!(pass);
}

// 5. Distractor-avoidance pair counts

/// The first `related` nodes after the query match each other and the
/// query strongly; everything else matches nothing above threshold.
struct Planted {
    related: usize,
}

impl PairScorer for Planted {
    type Evidence = ();
    fn consistent(&self, i: usize, j: usize) -> (u32, ()) {
        (if i <= self.related && j <= self.related { 30 } else { 1 }, ())
    }
    fn mi(&self, _: usize, _: usize, _: &()) -> f64 {
        1.0
    }
}

#[test]
fn criterion_5_distractor_avoidance_counts() {
    let k = 50usize;
    let cfg = MatchConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for d in [0usize, 10, 40] {
        let a = build_with((0..=k as u64).collect(), 0, &cfg, &Planted { related: k - d });
        let expected = (k * k + k) / 2 - (d * d - d) / 2;
        pass &= a.pair_computations == expected;
        lines.push(format!("d={d}: {} (expected {expected})", a.pair_computations));
    }
    let d40 = build_with((0..=k as u64).collect(), 0, &cfg, &Planted { related: 10 }).pair_computations;
    pass &= d40 == 495;
    report(5, pass, format!("k=50, {}", lines.join(", ")));
    assert!(pass);
}

// 6. Synthetic end-to-end

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[test]
fn criterion_6_synthetic_end_to_end() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        graphs: 20,
        nodes: (6, 12),
        distractors: 5000,
        image_size: 160,
        seed: 1,
        ..SynthSpec::default()
    };
    let out = generate(&spec, dir.path()).unwrap();
    let cfg = PipelineConfig::load(manifest_dir().join("../../configs/synthetic.conf")).unwrap();
    assert_eq!(cfg.filter.if_iterations, 0);
    let corpus = Corpus::scan(dir.path().join("images")).unwrap();
    let fd = FeatureDir(dir.path().join("features"));
    extract_corpus(&corpus, &fd, &cfg.detector).unwrap();
    let mut index = train_from_features(&fd, &cfg.index, cfg.training_sample).unwrap();
    ingest_feature_files(&mut index, &feature_files(&fd).unwrap()).unwrap();

    let mut plain = BTreeMap::new();
    let mut iterative = BTreeMap::new();
    let mut oracle = BTreeMap::new();
    let mut icfg = cfg.clone();
    icfg.filter.if_iterations = 2;
    for case in &out.cases {
        let run = end_to_end(case.query, &corpus, &fd, &index, &cfg).unwrap();
        plain.insert(case.query, CaseResult { rank: Some(run.rank), graph: Some(run.graph) });
        let qf = fd.features(case.query).unwrap();
        let rank = retrieve(&qf, &index, &fd, &icfg, None).unwrap();
        iterative.insert(case.query, CaseResult { rank: Some(rank), graph: None });
        let (_, g) = oracle_graph(case.query, &case.relevant, &corpus, &fd, &cfg).unwrap();
        oracle.insert(case.query, CaseResult { rank: None, graph: Some(g) });
    }
    let plain = evaluate_suite(&out.cases, &plain).unwrap();
    let iterative = evaluate_suite(&out.cases, &iterative).unwrap();
    let oracle = evaluate_suite(&out.cases, &oracle).unwrap();

    let r50 = |rep: &provenance_core::eval::SuiteReport| mean(rep.cases.iter().map(|c| c.recall[2].unwrap()));
    let (plain_r50, iter_r50) = (r50(&plain), r50(&iterative));
    let oracle_vo = oracle.mean.vo;
    let irreversible = oracle.mean.eo_irreversible.unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = plain_r50 >= 0.85 && oracle_vo >= 0.85 && irreversible >= 0.5 && iter_r50 >= plain_r50;
    report(
        6,
        pass,
        format!(
            "R@50 plain {plain_r50:.3}, iterative {iter_r50:.3}; oracle clustered VO {oracle_vo:.3}, \
             irreversible directed EO {irreversible:.3}; end-to-end VO {:.3}, VEO {:.3}, \
             irreversible EO {:.3}; {secs:.0} s",
            plain.mean.vo,
            plain.mean.veo_directed,
            plain.mean.eo_irreversible.unwrap_or(f64::NAN),
        ),
    );
    assert!(pass);
}

// 7. Metric fixtures

#[test]
fn criterion_7_metric_fixtures() {
    let fixture = |name: &str| manifest_dir().join("tests/fixtures/eval").join(name);
    let truth = GroundTruthCase::load(fixture("truth.json")).unwrap();
    let got = ProvenanceGraph::load_json(fixture("retrieved.json")).unwrap();
    let o = graph_overlap(&got, &truth.graph, true);

    let mut t = ProvenanceGraph::new(1);
    t.add_edge(1, 2, true, 1.0);
    let mut reversed = ProvenanceGraph::new(1);
    reversed.add_edge(2, 1, true, 1.0);
    let directed = graph_overlap(&reversed, &t, true).eo;
    let undirected = graph_overlap(&reversed, &t, false).eo;

    let pass = (o.vo, o.eo, o.veo) == (0.8, 2.0 / 3.0, 0.75)
        && directed == 0.0
        && undirected == 1.0
        && directed_overlap_on(&reversed, &[[1, 2]]) == Some(0.0);
    report(
        7,
        pass,
        format!("VO {} EO {} VEO {}; reversed edge EO directed {directed}, undirected {undirected}", o.vo, o.eo, o.veo),
    );
    assert!(pass);
}

// 8. Determinism

/// Runs synth, extraction, indexing and every case end to end under `dir`,
/// returning each case's rank CSV and graph JSON.
fn pipeline_outputs(dir: &Path, threads: usize) -> BTreeMap<String, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let spec = SynthSpec { graphs: 3, nodes: (6, 8), distractors: 60, image_size: 128, seed: 5, ..SynthSpec::default() };
        let out: SynthOutput = generate(&spec, dir).unwrap();
        let mut cfg = PipelineConfig::load(manifest_dir().join("../../configs/synthetic.conf")).unwrap();
        cfg.filter.if_iterations = 1;
        let corpus = Corpus::scan(dir.join("images")).unwrap();
        let fd = FeatureDir(dir.join("features"));
        extract_corpus(&corpus, &fd, &cfg.detector).unwrap();
        let mut index = train_from_features(&fd, &cfg.index, cfg.training_sample).unwrap();
        ingest_feature_files(&mut index, &feature_files(&fd).unwrap()).unwrap();
        let mut files = BTreeMap::new();
        for case in &out.cases {
            let run = end_to_end(case.query, &corpus, &fd, &index, &cfg).unwrap();
            let rank_path = dir.join(format!("{:07}.csv", case.query));
            provenance_core::filtering::write_rank_csv(&rank_path, &run.rank).unwrap();
            let graph_path = dir.join(format!("{:07}.json", case.query));
            run.graph.save_json(&graph_path).unwrap();
            assert_eq!(rank_csv(&read_rank_csv(&rank_path).unwrap()), rank_csv(&run.rank));
            for p in [rank_path, graph_path] {
                files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap());
            }
        }
        files
    })
}

#[test]
fn criterion_8_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_outputs(a.path(), 1);
    let second = pipeline_outputs(b.path(), 3);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let pass = !first.is_empty() && first.len() == second.len() && differing.is_empty();
    report(8, pass, format!("{} rank/graph files compared across 1 and 3 threads, differing {differing:?}", first.len()));
    assert!(pass);
}

// 9. Distributed selection on photo variants

fn photos() -> Vec<GrayImage> {
    let dir = manifest_dir().join("tests/fixtures/photos");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| GrayImage::open(p).unwrap()).collect()
}

fn resize(img: &GrayImage, w: usize, h: usize) -> GrayImage {
    let (sx, sy) = (w as f64 / img.width() as f64, h as f64 / img.height() as f64);
    warp(img, &Homography::scaling(sx, sy), w, h).unwrap()
}

fn random_crop(img: &GrayImage, r: &mut ChaCha8Rng, min_frac: f64) -> GrayImage {
    let w = ((img.width() as f64) * r.random_range(min_frac..=1.0)) as usize;
    let h = ((img.height() as f64) * r.random_range(min_frac..=1.0)) as usize;
    let x = r.random_range(0..=img.width() - w);
    let y = r.random_range(0..=img.height() - h);
    img.crop(x, y, w, h).unwrap()
}

/// Crops, rescales and 2x2 mosaics of the fixture photos.
fn variant(photos: &[GrayImage], i: u64) -> GrayImage {
    let mut r = rng(9000 + i);
    let base = &photos[i as usize % photos.len()];
    match i % 3 {
        0 => random_crop(base, &mut r, 0.5),
        1 => {
            let s = r.random_range(0.9..2.0);
            resize(base, (base.width() as f64 * s) as usize, (base.height() as f64 * s) as usize)
        }
        _ => {
            let tile = r.random_range(256..=400usize);
            let tiles: Vec<GrayImage> = (0..4)
                .map(|_| {
                    let p = &photos[r.random_range(0..photos.len())];
                    resize(&random_crop(p, &mut r, 0.4), tile, tile)
                })
                .collect();
            GrayImage::from_fn(2 * tile, 2 * tile, |x, y| tiles[(y / tile) * 2 + x / tile].get(x % tile, y % tile))
        }
    }
}

fn overlapping(a: &InterestPoint, b: &InterestPoint, factor: f64) -> bool {
    let d = ((a.x - b.x) as f64).hypot((a.y - b.y) as f64);
    d < factor * (a.scale + b.scale) as f64
}

#[test]
fn criterion_9_distributed_selection() {
    let photos = photos();
    let cfg = DetectorConfig::dsurf();
    let (mut saturated, mut wrong_count, mut overlaps) = (0, Vec::new(), Vec::new());
    for i in 0..500u64 {
        let img = variant(&photos, i);
        let detected = detect(&img, &cfg);
        let sel = select_distributed_detailed(&detected, &cfg);
        if detected.len() >= cfg.points {
            saturated += 1;
            if sel.points.len() != cfg.points {
                wrong_count.push(i);
            }
        } else if sel.points.len() != detected.len() {
            wrong_count.push(i);
        }
        let spread = sel.spread();
        let clash = spread.iter().enumerate().any(|(k, a)| {
            spread[k + 1..].iter().any(|b| overlapping(a, b, cfg.overlap_factor))
                || sel.top().iter().any(|b| overlapping(a, b, cfg.overlap_factor))
        });
        if clash {
            overlaps.push(i);
        }
    }
    let pass = wrong_count.is_empty() && overlaps.is_empty() && saturated > 0;
    report(
        9,
        pass,
        format!(
            "500 variants, {saturated} with >= 5000 detections; wrong counts {wrong_count:?}, overlapping disks {overlaps:?}"
        ),
    );
    assert!(pass);
}
