//! Corpus-level plumbing shared by the command-line tool and tests: image
//! directories, feature directories, index training and per-query runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Builder, PipelineConfig};
use crate::detector::{extract_features, read_feature_file, write_feature_file, Descriptor, DetectorConfig, FeatureSet};
use crate::error::{Error, Result};
use crate::filtering::{filter_query, iterative_filter, FeatureDir, FeatureSource, RankedList};
use crate::graphs::{clustered_expansion, kruskal_build, ProvenanceGraph};
use crate::imaging::GrayImage;
use crate::index::{IndexConfig, IvfAdcIndex};
use crate::pairwise::{build_matrices, Candidate, PairwiseAnalysis};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Images of a directory keyed by id. Files named by a number use it as
/// their id; otherwise ids are positions in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dir: PathBuf,
    pub images: BTreeMap<u64, PathBuf>,
}

impl Corpus {
    pub fn scan(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        paths.sort();
        let numeric: Option<Vec<u64>> = paths
            .iter()
            .map(|p| p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()))
            .collect();
        let images = match numeric {
            Some(ids) if !ids.is_empty() => {
                let map: BTreeMap<u64, PathBuf> = ids.into_iter().zip(paths.iter().cloned()).collect();
                if map.len() != paths.len() {
                    return Err(Error::InvalidConfig(format!("duplicate image ids in {}", dir.display())));
                }
                map
            }
            _ => paths.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            images,
        })
    }

    pub fn path(&self, id: u64) -> Result<&Path> {
        self.images.get(&id).map(PathBuf::as_path).ok_or(Error::UnknownImage(id))
    }

    pub fn open(&self, id: u64) -> Result<GrayImage> {
        GrayImage::open(self.path(id)?)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct ExtractReport {
    pub images: usize,
    pub points: usize,
}

/// Extracts every corpus image into `{id:07}.pvf` files.
pub fn extract_corpus(corpus: &Corpus, out: &FeatureDir, cfg: &DetectorConfig) -> Result<ExtractReport> {
    fs::create_dir_all(&out.0).map_err(|e| Error::io(&out.0, e))?;
    let counts = corpus
        .images
        .par_iter()
        .map(|(&id, path)| {
            let set = extract_features(&GrayImage::open(path)?, id, cfg);
            write_feature_file(out.path_for(id), &set)?;
            Ok(set.len())
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(ExtractReport {
        images: counts.len(),
        points: counts.iter().sum(),
    })
}

/// Feature files of a directory in name order.
pub fn feature_files(dir: &FeatureDir) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(&dir.0)
        .map_err(|e| Error::io(&dir.0, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pvf"))
        .collect();
    files.sort();
    Ok(files)
}

/// Up to `max` descriptors spread evenly over the files, chosen with a
/// seeded generator.
pub fn training_sample(files: &[PathBuf], max: usize, seed: u64) -> Result<Vec<Descriptor>> {
    if files.is_empty() {
        return Ok(Vec::new());
    }
    let per_file = max.div_ceil(files.len()).max(1);
    let parts = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let set = read_feature_file(path)?;
            if set.len() <= per_file {
                return Ok(set.descriptors);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut picks = sample(&mut rng, set.len(), per_file).into_vec();
            picks.sort_unstable();
            Ok(picks.into_iter().map(|k| set.descriptors[k]).collect())
        })
        .collect::<Result<Vec<Vec<Descriptor>>>>()?;
    let mut all: Vec<Descriptor> = parts.into_iter().flatten().collect();
    all.truncate(max);
    Ok(all)
}

/// Trains an index on a sample of the feature files.
pub fn train_from_features(dir: &FeatureDir, cfg: &IndexConfig, sample_size: usize) -> Result<IvfAdcIndex> {
    let files = feature_files(dir)?;
    let sample = training_sample(&files, sample_size, cfg.seed)?;
    IvfAdcIndex::train(&sample, cfg)
}

/// Plain or iterative filtering, depending on `if_iterations`.
pub fn retrieve(
    query: &FeatureSet,
    index: &IvfAdcIndex,
    source: &dyn FeatureSource,
    cfg: &PipelineConfig,
    exclude: Option<u64>,
) -> Result<RankedList> {
    if cfg.filter.if_iterations == 0 {
        filter_query(query, index, &cfg.filter, exclude)
    } else {
        iterative_filter(query, index, source, &cfg.filter, exclude)
    }
}

/// Pairwise analysis of `query` against `others` (duplicates and the query
/// itself are skipped), reading pixels from the corpus.
pub fn analyze(
    query: u64,
    others: &[u64],
    corpus: &Corpus,
    source: &dyn FeatureSource,
    cfg: &PipelineConfig,
) -> Result<PairwiseAnalysis> {
    let mut ids = vec![query];
    for &id in others {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let candidates = ids
        .par_iter()
        .map(|&id| {
            Ok(Candidate {
                image: corpus.open(id)?,
                features: source.features(id)?.into_owned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(build_matrices(0, &candidates, &cfg.matching))
}

pub fn build_graph(analysis: &PairwiseAnalysis, cfg: &PipelineConfig) -> Result<ProvenanceGraph> {
    match cfg.graph.builder {
        Builder::Kruskal => Ok(kruskal_build(analysis)),
        Builder::Clustered => clustered_expansion(analysis, &cfg.graph.expansion),
    }
}

/// Everything produced for one corpus query.
#[derive(Clone, Debug)]
pub struct QueryRun {
    pub rank: RankedList,
    pub analysis: PairwiseAnalysis,
    pub graph: ProvenanceGraph,
}

/// Retrieval, then pairwise analysis of the top `graph.candidates` and
/// graph construction, for a query that is itself a corpus image.
pub fn end_to_end(
    query: u64,
    corpus: &Corpus,
    features: &FeatureDir,
    index: &IvfAdcIndex,
    cfg: &PipelineConfig,
) -> Result<QueryRun> {
    let qf = features.features(query)?;
    let rank = retrieve(&qf, index, features, cfg, None)?;
    let top: Vec<u64> = rank.ids().into_iter().take(cfg.graph.candidates).collect();
    let analysis = analyze(query, &top, corpus, features, cfg)?;
    let mut graph = build_graph(&analysis, cfg)?;
    set_file_names(&mut graph, corpus);
    Ok(QueryRun { rank, analysis, graph })
}

/// Graph over a known set of related images (oracle filtering).
pub fn oracle_graph(
    query: u64,
    relevant: &[u64],
    corpus: &Corpus,
    features: &FeatureDir,
    cfg: &PipelineConfig,
) -> Result<(PairwiseAnalysis, ProvenanceGraph)> {
    let analysis = analyze(query, relevant, corpus, features, cfg)?;
    let mut graph = build_graph(&analysis, cfg)?;
    set_file_names(&mut graph, corpus);
    Ok((analysis, graph))
}

fn set_file_names(graph: &mut ProvenanceGraph, corpus: &Corpus) {
    graph.set_files(|id| {
        corpus
            .images
            .get(&id)
            .and_then(|p| p.file_name())
            .map(|f| f.to_string_lossy().into_owned())
    });
}
