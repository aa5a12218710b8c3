//! Pairwise analysis of a query's candidate set: ratio-test matching,
//! similarity-consistent match filtering, homographies, mutual information
//! and the distractor-avoiding construction of the GCM and MI matrices.

mod geometry;
mod matching;
mod mi;

pub use geometry::{estimate_homography, fit_homography, geometric_consistency, HomographyFit};
pub use matching::{nndr_accept, nndr_match, Match};
pub(crate) use matching::two_nearest;
pub use mi::{mi_pair, mutual_information, patch_entropy};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::FeatureSet;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub nndr_t: f64,
    /// Inlier radius in pixels for both the similarity and homography models.
    pub gc_epsilon: f64,
    /// Match pairs tried by the consistency filter (all pairs when fewer).
    pub gc_trials: usize,
    pub ransac_trials: usize,
    pub min_matches_for_homography: usize,
    /// Consistent matches needed to connect a node during expansion.
    pub connect_threshold: u32,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            nndr_t: 0.8,
            gc_epsilon: 5.0,
            gc_trials: 512,
            ransac_trials: 1000,
            min_matches_for_homography: 4,
            connect_threshold: 4,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nndr_t > 0.0 && self.nndr_t < 1.0) {
            return Err(Error::InvalidConfig(format!("nndr_t={} outside (0, 1)", self.nndr_t)));
        }
        if !(self.gc_epsilon > 0.0) {
            return Err(Error::InvalidConfig("gc_epsilon must be positive".into()));
        }
        if self.gc_trials == 0 || self.ransac_trials == 0 {
            return Err(Error::InvalidConfig("trial counts must be positive".into()));
        }
        if self.min_matches_for_homography < 4 {
            return Err(Error::InvalidConfig("a homography needs at least 4 matches".into()));
        }
        Ok(())
    }
}

/// Ratio-test matches of A in B that survive the consistency filter.
pub fn consistent_matches(a: &FeatureSet, b: &FeatureSet, cfg: &MatchConfig) -> Vec<Match> {
    let raw = nndr_match(a, b, cfg.nndr_t);
    geometric_consistency(&raw, &a.points, &b.points, cfg)
}

/// Number of geometrically consistent matches and the GCM dissimilarity
/// `1 / count` (`+inf` without matches).
pub fn gcm_pair(a: &FeatureSet, b: &FeatureSet, cfg: &MatchConfig) -> (usize, f64) {
    let count = consistent_matches(a, b, cfg).len();
    (count, gcm_dissimilarity(count as u32))
}

#[inline]
pub fn gcm_dissimilarity(count: u32) -> f64 {
    if count == 0 {
        f64::INFINITY
    } else {
        1.0 / count as f64
    }
}

/// Source of pair measurements for [`build_with`].
pub trait PairScorer: Sync {
    /// Whatever the MI step needs from the match stage (matches for images).
    type Evidence: Send + Sync;

    /// Consistent match count between `i < j`.
    fn consistent(&self, i: usize, j: usize) -> (u32, Self::Evidence);

    /// MI evidence that `from` explains `to`; `evidence` was produced for
    /// `(min, max)` of the two.
    fn mi(&self, from: usize, to: usize, evidence: &Self::Evidence) -> f64;
}

/// Matrices of one query's candidate set. Indices are positions in `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseAnalysis {
    pub ids: Vec<u64>,
    pub query: usize,
    /// Symmetric consistent match counts, zero diagonal.
    pub m: Vec<Vec<u32>>,
    pub d_gcm: Vec<Vec<f64>>,
    /// `d_mi[i][j]`: MI evidence that i generated j (larger = more related).
    pub d_mi: Vec<Vec<f64>>,
    pub active: Vec<bool>,
    pub pair_computations: usize,
    /// Pairs in computation order.
    pub computed: Vec<(usize, usize)>,
}

impl PairwiseAnalysis {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.active[i]).collect()
    }

    /// Writes `m.csv`, `d_gcm.csv` and `d_mi.csv` with image ids as header.
    pub fn dump_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header: Vec<String> = self.ids.iter().map(|id| id.to_string()).collect();
        let write = |name: &str, cell: &dyn Fn(usize, usize) -> String| -> Result<()> {
            let mut out = format!("id,{}\n", header.join(","));
            for i in 0..self.n() {
                out.push_str(&header[i]);
                for j in 0..self.n() {
                    let _ = write!(out, ",{}", cell(i, j));
                }
                out.push('\n');
            }
            let path = dir.join(name);
            fs::write(&path, out).map_err(|e| Error::io(&path, e))
        };
        write("m.csv", &|i, j| self.m[i][j].to_string())?;
        write("d_gcm.csv", &|i, j| fmt_real(self.d_gcm[i][j]))?;
        write("d_mi.csv", &|i, j| fmt_real(self.d_mi[i][j]))
    }
}

fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Frontier expansion from the query. When a node connects (the query at
/// the start), its pairs with every node it has not been measured against
/// are computed; nodes reaching `connect_threshold` matches with a newly
/// connected node connect in the next round. Pairs between two nodes that
/// never connect are never computed.
pub fn build_with<S: PairScorer>(ids: Vec<u64>, query: usize, cfg: &MatchConfig, scorer: &S) -> PairwiseAnalysis {
    let n = ids.len();
    assert!(query < n, "query index out of range");
    let mut m = vec![vec![0u32; n]; n];
    let mut done = vec![vec![false; n]; n];
    let mut active = vec![false; n];
    let mut computed = Vec::new();
    let mut evidence: HashMap<(usize, usize), S::Evidence> = HashMap::new();

    active[query] = true;
    let mut frontier = vec![query];
    while !frontier.is_empty() {
        let mut pairs = Vec::new();
        for &u in &frontier {
            for v in 0..n {
                if v != u && !done[u][v] {
                    done[u][v] = true;
                    done[v][u] = true;
                    pairs.push((u.min(v), u.max(v)));
                }
            }
        }
        let results: Vec<(u32, S::Evidence)> = pairs.par_iter().map(|&(i, j)| scorer.consistent(i, j)).collect();

        let mut next = Vec::new();
        for (&(i, j), (count, ev)) in pairs.iter().zip(results) {
            computed.push((i, j));
            m[i][j] = count;
            m[j][i] = count;
            if count >= cfg.connect_threshold {
                for k in [i, j] {
                    if !active[k] && !next.contains(&k) {
                        next.push(k);
                    }
                }
            }
            evidence.insert((i, j), ev);
        }
        next.sort_unstable();
        for &k in &next {
            active[k] = true;
        }
        frontier = next;
    }

    let d_gcm = m
        .iter()
        .map(|row| row.iter().map(|&c| gcm_dissimilarity(c)).collect())
        .collect();

    let min_h = cfg.min_matches_for_homography as u32;
    let directed: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && active[i] && active[j] && m[i][j] >= min_h)
        .collect();
    let mi_values: Vec<f64> = directed
        .par_iter()
        .map(|&(i, j)| scorer.mi(i, j, &evidence[&(i.min(j), i.max(j))]))
        .collect();
    let mut d_mi = vec![vec![0.0; n]; n];
    for (&(i, j), v) in directed.iter().zip(mi_values) {
        d_mi[i][j] = v;
    }

    PairwiseAnalysis {
        ids,
        query,
        m,
        d_gcm,
        d_mi,
        active,
        pair_computations: computed.len(),
        computed,
    }
}

/// An image of the candidate set with its extracted features.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub image: GrayImage,
    pub features: FeatureSet,
}

struct ImageScorer<'a> {
    candidates: &'a [Candidate],
    cfg: &'a MatchConfig,
}

impl PairScorer for ImageScorer<'_> {
    type Evidence = Vec<Match>;

    fn consistent(&self, i: usize, j: usize) -> (u32, Vec<Match>) {
        let matches = consistent_matches(&self.candidates[i].features, &self.candidates[j].features, self.cfg);
        (matches.len() as u32, matches)
    }

    fn mi(&self, from: usize, to: usize, evidence: &Vec<Match>) -> f64 {
        let (a, b) = (&self.candidates[from], &self.candidates[to]);
        let oriented: Vec<Match> = if from < to {
            evidence.clone()
        } else {
            evidence.iter().map(|m| m.swapped()).collect()
        };
        mi_pair(&a.image, &a.features, &b.image, &b.features, &oriented, self.cfg).unwrap_or(0.0)
    }
}

/// GCM and MI matrices over real images. Matching is run from the lower to
/// the higher index of each pair and mirrored.
pub fn build_matrices(query: usize, candidates: &[Candidate], cfg: &MatchConfig) -> PairwiseAnalysis {
    let ids = candidates.iter().map(|c| c.features.image_id).collect();
    build_with(ids, query, cfg, &ImageScorer { candidates, cfg })
}
