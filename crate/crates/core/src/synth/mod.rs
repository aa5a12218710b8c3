//! Synthetic provenance cases: transformation trees grown from seed images,
//! with composites and an unrelated distractor pool.

mod procedural;
mod transforms;

pub use procedural::procedural_image;
pub use transforms::{apply, splice, TransformKind, MIN_SIDE};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruthCase;
use crate::graphs::ProvenanceGraph;
use crate::imaging::GrayImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Photos to cut graph roots and donors from; procedural scenes if unset.
    pub seed_dir: Option<PathBuf>,
    pub graphs: usize,
    /// Inclusive node-count range per graph.
    pub nodes: (usize, usize),
    /// Inclusive depth range: every graph has a chain of at least the first
    /// value, none is deeper than the second.
    pub depth: (usize, usize),
    /// Maximum children per node.
    pub branching: usize,
    pub palette: Vec<TransformKind>,
    pub distractors: usize,
    /// Side of generated (or cut) square base images.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed_dir: None,
            graphs: 5,
            nodes: (8, 10),
            depth: (2, 4),
            branching: 3,
            palette: TransformKind::ALL.to_vec(),
            distractors: 100,
            image_size: 256,
            seed: 0,
        }
    }
}

fn parse_range(key: &str, v: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("{key}: expected N or A..B, got `{v}`"));
    match v.split_once("..") {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = v.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

impl SynthSpec {
    /// Parses `key = value` lines (`#` starts a comment). Ranges are written
    /// `A..B` (inclusive); the palette is a comma-separated list.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<u64> {
                v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: `{v}` is not a number")))
            };
            match key {
                "seed_dir" => spec.seed_dir = Some(PathBuf::from(value)),
                "graphs" => spec.graphs = num(value)? as usize,
                "nodes" => spec.nodes = parse_range(key, value)?,
                "depth" => spec.depth = parse_range(key, value)?,
                "branching" => spec.branching = num(value)? as usize,
                "distractors" => spec.distractors = num(value)? as usize,
                "image_size" => spec.image_size = num(value)? as usize,
                "seed" => spec.seed = num(value)?,
                "palette" => {
                    spec.palette = value
                        .split(',')
                        .map(|s| TransformKind::parse(s.trim()))
                        .collect::<Result<_>>()?
                }
                _ => return Err(Error::InvalidConfig(format!("unknown synth key `{key}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.depth.0 < 1 || self.depth.1 < self.depth.0 {
            return bad("depth range must satisfy 1 <= min <= max");
        }
        if self.nodes.1 < self.nodes.0 || self.nodes.0 < self.depth.0 + 1 {
            return bad("node range must satisfy depth_min + 1 <= min <= max");
        }
        if self.branching == 0 || self.palette.is_empty() {
            return bad("branching and palette must be non-empty");
        }
        if self.image_size < 2 * MIN_SIDE {
            return bad("image_size too small");
        }
        let capacity: usize = (0..=self.depth.1).map(|d| self.branching.saturating_pow(d as u32)).sum();
        if capacity < self.nodes.1 {
            return bad("node count unreachable with this depth and branching");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEdge {
    pub from: u64,
    pub to: u64,
    pub transform: TransformKind,
    pub irreversible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCaseMeta {
    pub query: u64,
    pub edges: Vec<SynthEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub spec: SynthSpec,
    pub cases: Vec<GroundTruthCase>,
    pub meta: Vec<SynthCaseMeta>,
    pub distractors: Vec<u64>,
}

pub fn image_file_name(id: u64) -> String {
    format!("{id:07}.png")
}

/// Case graph before global ids are assigned; indices are local.
struct LocalCase {
    images: Vec<GrayImage>,
    edges: Vec<(usize, usize, TransformKind)>,
    query: usize,
}

struct BaseImages {
    seeds: Vec<GrayImage>,
    size: usize,
}

impl BaseImages {
    fn draw<R: Rng>(&self, rng: &mut R) -> Result<GrayImage> {
        let Some(photo) = self.seeds.choose(rng) else {
            return Ok(procedural_image(self.size, self.size, rng));
        };
        let (w, h) = (self.size.min(photo.width()), self.size.min(photo.height()));
        let x = rng.random_range(0..=photo.width() - w);
        let y = rng.random_range(0..=photo.height() - h);
        photo.crop(x, y, w, h)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const DISTRACTOR_STREAM: u64 = 1 << 40;

fn grow_case(spec: &SynthSpec, base: &BaseImages, case: usize) -> Result<LocalCase> {
    let mut rng = rng_for(spec.seed, case as u64 + 1);
    let target = rng.random_range(spec.nodes.0..=spec.nodes.1);
    let mut images = vec![base.draw(&mut rng)?];
    let mut depth = vec![0usize];
    let mut children = vec![0usize];
    let mut edges: Vec<(usize, usize, TransformKind)> = Vec::new();
    let mut composites = Vec::new();
    let mut applied = 0usize;
    let mut failures = 0usize;

    while images.len() < target {
        let parent = if applied < spec.depth.0 {
            images.len() - 1
        } else {
            let eligible: Vec<usize> = (0..images.len())
                .filter(|&i| depth[i] < spec.depth.1 && children[i] < spec.branching)
                .collect();
            match eligible.choose(&mut rng) {
                Some(&p) => p,
                None => break,
            }
        };
        // each case walks the whole palette once before choosing at random
        let mut kind = if applied < spec.palette.len() {
            spec.palette[(case + applied) % spec.palette.len()]
        } else {
            *spec.palette.choose(&mut rng).expect("palette is non-empty")
        };
        if kind == TransformKind::Splice && images.len() + 2 > target {
            match spec.palette.iter().find(|&&k| k != TransformKind::Splice) {
                Some(&k) => kind = k,
                None => break,
            }
        }

        let made = if kind == TransformKind::Splice {
            base.draw(&mut rng).and_then(|donor| {
                let child = splice(&images[parent], &donor, &mut rng)?;
                Ok((Some(donor), child))
            })
        } else {
            apply(kind, &images[parent], &mut rng).map(|child| (None, child))
        };
        let (donor, child) = match made {
            Ok(v) => v,
            Err(_) if failures < 64 => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };

        let child_idx = images.len() + donor.is_some() as usize;
        if let Some(donor) = donor {
            let d = images.len();
            images.push(donor);
            depth.push(0);
            children.push(1);
            edges.push((d, child_idx, kind));
            composites.push(child_idx);
        }
        images.push(child);
        depth.push(depth[parent] + 1);
        children.push(0);
        children[parent] += 1;
        edges.push((parent, child_idx, kind));
        applied += 1;
    }

    // the query is the deepest composite, else the deepest node (latest on ties)
    let pick = |pool: &mut dyn Iterator<Item = usize>| pool.max_by_key(|&i| (depth[i], i));
    let query = pick(&mut composites.iter().copied())
        .or_else(|| pick(&mut (0..images.len())))
        .expect("case has a root");
    Ok(LocalCase { images, edges, query })
}

fn load_seeds(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!("no seed images in {}", dir.display())));
    }
    paths.iter().map(GrayImage::open).collect()
}

/// Generates the cases and distractors into `out_dir`: `images/{id:07}.png`,
/// `cases/case_{n:03}.json` (ground truth) and `synth.json` (spec, applied
/// transforms, distractor ids). Ids are a seeded shuffle over all images, so
/// id order says nothing about relevance. Identical specs give identical
/// bytes.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    spec.validate()?;
    let seeds = match &spec.seed_dir {
        Some(dir) => load_seeds(dir)?,
        None => Vec::new(),
    };
    if !seeds.is_empty() && seeds.len() < 2 && spec.palette.contains(&TransformKind::Splice) {
        return Err(Error::InvalidConfig("splicing needs at least two seed images".into()));
    }
    let base = BaseImages {
        seeds,
        size: spec.image_size,
    };

    let out_dir = out_dir.as_ref();
    let image_dir = out_dir.join("images");
    let case_dir = out_dir.join("cases");
    for d in [&image_dir, &case_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let local: Vec<LocalCase> = (0..spec.graphs)
        .into_par_iter()
        .map(|c| grow_case(spec, &base, c))
        .collect::<Result<_>>()?;

    let graph_total: usize = local.iter().map(|c| c.images.len()).sum();
    let mut ids: Vec<u64> = (0..(graph_total + spec.distractors) as u64).collect();
    ids.shuffle(&mut rng_for(spec.seed, 0));

    let mut cases = Vec::new();
    let mut meta = Vec::new();
    let mut offset = 0;
    for c in &local {
        let id = |i: usize| ids[offset + i];
        let mut graph = ProvenanceGraph::new(id(c.query));
        for i in 0..c.images.len() {
            graph.add_node(id(i));
        }
        let mut edges = Vec::new();
        for &(a, b, kind) in &c.edges {
            graph.add_edge(id(a), id(b), true, 1.0);
            edges.push(SynthEdge {
                from: id(a),
                to: id(b),
                transform: kind,
                irreversible: kind.irreversible(),
            });
        }
        graph.set_files(|i| Some(image_file_name(i)));
        let mut relevant: Vec<u64> = (0..c.images.len()).map(id).collect();
        relevant.sort_unstable();
        cases.push(GroundTruthCase {
            query: id(c.query),
            relevant,
            graph,
            irreversible: edges.iter().filter(|e| e.irreversible).map(|e| [e.from, e.to]).collect(),
        });
        meta.push(SynthCaseMeta {
            query: id(c.query),
            edges,
        });
        offset += c.images.len();
    }

    let graph_images: Vec<(u64, &GrayImage)> = {
        let mut offset = 0;
        let mut v = Vec::with_capacity(graph_total);
        for c in &local {
            for (i, img) in c.images.iter().enumerate() {
                v.push((ids[offset + i], img));
            }
            offset += c.images.len();
        }
        v
    };
    graph_images
        .par_iter()
        .try_for_each(|(id, img)| img.save_png(image_dir.join(image_file_name(*id))))?;

    let distractors: Vec<u64> = ids[graph_total..].to_vec();
    distractors.par_iter().enumerate().try_for_each(|(i, &id)| {
        let mut rng = rng_for(spec.seed, DISTRACTOR_STREAM + i as u64);
        let img = procedural_image(spec.image_size, spec.image_size, &mut rng);
        img.save_png(image_dir.join(image_file_name(id)))
    })?;

    for (n, case) in cases.iter().enumerate() {
        case.save(case_dir.join(format!("case_{n:03}.json")))?;
    }
    let output = SynthOutput {
        spec: spec.clone(),
        cases,
        meta,
        distractors,
    };
    let summary = out_dir.join("synth.json");
    fs::write(&summary, serde_json::to_string_pretty(&output)? + "\n").map_err(|e| Error::io(&summary, e))?;
    Ok(output)
}

/// Reads every `case_*.json` of a directory, in name order.
pub fn load_cases(case_dir: impl AsRef<Path>) -> Result<Vec<GroundTruthCase>> {
    let dir = case_dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(GroundTruthCase::load).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_values() {
        let spec = SynthSpec::parse(
            "# demo\ngraphs = 3\nnodes = 4..6\ndepth = 1..3\nbranching = 2\ndistractors = 7\nimage_size = 96\nseed = 9\npalette = crop, clip\n",
        )
        .unwrap();
        assert_eq!(spec.graphs, 3);
        assert_eq!(spec.nodes, (4, 6));
        assert_eq!(spec.palette, vec![TransformKind::Crop, TransformKind::Clip]);
        assert!(SynthSpec::parse("wat = 1").is_err());
        assert!(SynthSpec::parse("depth = 0..2").is_err());
        assert!(SynthSpec::parse("nodes = 2..3").is_err());
    }

    #[test]
    fn chain_without_composites() {
        let spec = SynthSpec {
            nodes: (3, 3),
            depth: (2, 2),
            palette: vec![TransformKind::Brightness, TransformKind::Crop],
            image_size: 96,
            ..SynthSpec::default()
        };
        let base = BaseImages { seeds: vec![], size: 96 };
        let case = grow_case(&spec, &base, 0).unwrap();
        let e: Vec<(usize, usize)> = case.edges.iter().map(|&(a, b, _)| (a, b)).collect();
        assert_eq!(e, vec![(0, 1), (1, 2)]);
        assert_eq!(case.query, 2);
    }

    #[test]
    fn splice_makes_in_degree_two() {
        let spec = SynthSpec {
            nodes: (3, 3),
            depth: (1, 1),
            palette: vec![TransformKind::Splice],
            image_size: 96,
            ..SynthSpec::default()
        };
        let base = BaseImages { seeds: vec![], size: 96 };
        let case = grow_case(&spec, &base, 0).unwrap();
        assert_eq!(case.images.len(), 3);
        assert_eq!(case.edges.iter().filter(|e| e.1 == case.query).count(), 2);
    }
}
