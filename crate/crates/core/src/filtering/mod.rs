//! Provenance image filtering: feature-level ANN search, vote aggregation,
//! RCMM near-duplicate scoring and iterative re-querying.

mod rank_io;

pub use rank_io::{parse_rank_csv, read_rank_csv, rank_csv, write_rank_csv};

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{read_feature_file, FeatureSet};
use crate::error::{Error, Result};
use crate::index::{IvfAdcIndex, Neighbor};
use crate::pairwise::{nndr_accept, two_nearest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub rank_k: usize,
    pub if_iterations: usize,
    /// RCMM at or above which a candidate counts as a near duplicate of the query.
    pub rcmm_nd_threshold: f64,
    pub max_seeds_per_iter: usize,
    pub nndr_t: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            rank_k: 200,
            if_iterations: 2,
            rcmm_nd_threshold: 0.3,
            max_seeds_per_iter: 5,
            nndr_t: 0.8,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank_k == 0 {
            return Err(Error::InvalidConfig("rank_k must be at least 1".into()));
        }
        if !(self.nndr_t > 0.0 && self.nndr_t < 1.0) {
            return Err(Error::InvalidConfig(format!("nndr_t={} outside (0, 1)", self.nndr_t)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub image_id: u64,
    pub votes: u64,
    /// Best RCMM against the query set; only iterative filtering fills it.
    pub rcmm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.image_id).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    fn without(mut self, id: Option<u64>) -> Self {
        if let Some(id) = id {
            self.entries.retain(|e| e.image_id != id);
        }
        self
    }
}

/// Votes per image over all non-sentinel cells of the search matrix, sorted
/// by votes (descending) then image id.
pub fn aggregate_votes(rows: &[Vec<Neighbor>]) -> RankedList {
    let mut votes: BTreeMap<u64, u64> = BTreeMap::new();
    for n in rows.iter().flatten().filter(|n| !n.is_sentinel()) {
        *votes.entry(n.image_id).or_default() += 1;
    }
    let mut entries: Vec<RankEntry> = votes
        .into_iter()
        .map(|(image_id, votes)| RankEntry {
            image_id,
            votes,
            rcmm: None,
        })
        .collect();
    entries.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.image_id.cmp(&b.image_id)));
    RankedList { entries }
}

/// Reciprocal condition matching measure: the fraction (of the smaller set)
/// of points whose nearest neighbour in the other set points back at them,
/// with both directions passing the ratio test `t`.
pub fn rcmm(a: &FeatureSet, b: &FeatureSet, t: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let best = |from: &FeatureSet, to: &FeatureSet| -> Vec<Option<usize>> {
        from.descriptors
            .par_iter()
            .with_min_len(32)
            .map(|q| {
                let (j, d1, d2) = two_nearest(q, &to.descriptors)?;
                let pass = nndr_accept((d1 as f64).sqrt(), (d2 as f64).sqrt(), t);
                pass.then_some(j)
            })
            .collect()
    };
    let ab = best(a, b);
    let ba = best(b, a);
    let reciprocal = ab
        .iter()
        .enumerate()
        .filter(|&(i, j)| j.is_some_and(|j| ba[j] == Some(i)))
        .count();
    Ok(reciprocal as f64 / a.len().min(b.len()) as f64)
}

/// Where iterative filtering gets the features of retrieved images.
pub trait FeatureSource: Sync {
    fn features(&self, image_id: u64) -> Result<Cow<'_, FeatureSet>>;
}

impl FeatureSource for HashMap<u64, FeatureSet> {
    fn features(&self, image_id: u64) -> Result<Cow<'_, FeatureSet>> {
        self.get(&image_id).map(Cow::Borrowed).ok_or(Error::UnknownImage(image_id))
    }
}

/// Feature files named `{id:07}.pvf` in one directory.
#[derive(Clone, Debug)]
pub struct FeatureDir(pub PathBuf);

impl FeatureDir {
    pub fn path_for(&self, image_id: u64) -> PathBuf {
        self.0.join(format!("{image_id:07}.pvf"))
    }
}

impl FeatureSource for FeatureDir {
    fn features(&self, image_id: u64) -> Result<Cow<'_, FeatureSet>> {
        let path = self.path_for(image_id);
        if !path.exists() {
            return Err(Error::UnknownImage(image_id));
        }
        read_feature_file(path).map(Cow::Owned)
    }
}

/// Vote ranking of one query's features, without `exclude` (the query's own
/// id when it is in the corpus), truncated to `rank_k`.
pub fn filter_query(query: &FeatureSet, index: &IvfAdcIndex, cfg: &FilterConfig, exclude: Option<u64>) -> Result<RankedList> {
    if query.is_empty() {
        return Ok(RankedList::default());
    }
    let rows = index.search_knn(&query.descriptors)?;
    let mut list = aggregate_votes(&rows).without(exclude);
    list.truncate(cfg.rank_k);
    Ok(list)
}

/// Iterative filtering. Round 0 is [`filter_query`]. Each further round
/// scores the previous round's candidates by RCMM against the query,
/// suppresses near duplicates (RCMM >= threshold), and re-queries with up to
/// `max_seeds_per_iter` of the remaining ones. The union of everything
/// retrieved is ranked by best RCMM against the query or the seed that
/// retrieved it, then votes, then id. Without any seed, round 0 is returned.
pub fn iterative_filter(
    query: &FeatureSet,
    index: &IvfAdcIndex,
    source: &dyn FeatureSource,
    cfg: &FilterConfig,
    exclude: Option<u64>,
) -> Result<RankedList> {
    let round0 = filter_query(query, index, cfg, exclude)?;
    if cfg.if_iterations == 0 || round0.is_empty() {
        return Ok(round0);
    }

    let mut votes: HashMap<u64, u64> = HashMap::new();
    let mut retrieved_by: HashMap<u64, BTreeSet<u64>> = HashMap::new();
    for e in &round0.entries {
        votes.insert(e.image_id, e.votes);
    }
    let mut query_scores: HashMap<u64, f64> = HashMap::new();
    let mut used: BTreeSet<u64> = BTreeSet::new();
    let mut pending: Vec<u64> = round0.ids();

    for _ in 0..cfg.if_iterations {
        let mut seeds = Vec::new();
        for &c in &pending {
            if seeds.len() == cfg.max_seeds_per_iter {
                break;
            }
            if used.contains(&c) || Some(c) == exclude {
                continue;
            }
            let score = match query_scores.get(&c) {
                Some(&s) => s,
                None => {
                    let s = rcmm_or_zero(query, &*source.features(c)?, cfg.nndr_t);
                    query_scores.insert(c, s);
                    s
                }
            };
            if score < cfg.rcmm_nd_threshold {
                seeds.push(c);
            }
        }
        if seeds.is_empty() {
            break;
        }

        let mut next: Vec<(u64, u64)> = Vec::new();
        for &seed in &seeds {
            used.insert(seed);
            let seed_feats = source.features(seed)?;
            let list = filter_query(&seed_feats, index, cfg, Some(seed))?.without(exclude);
            for e in list.entries {
                *votes.entry(e.image_id).or_default() += e.votes;
                retrieved_by.entry(e.image_id).or_default().insert(seed);
                next.push((e.image_id, e.votes));
            }
        }
        next.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut seen = BTreeSet::new();
        pending = next.into_iter().map(|(id, _)| id).filter(|id| seen.insert(*id)).collect();
    }

    if used.is_empty() {
        return Ok(round0);
    }

    let mut ids: Vec<u64> = votes.keys().copied().collect();
    ids.sort_unstable();
    let scored: Vec<Result<RankEntry>> = ids
        .par_iter()
        .map(|&id| {
            let feats = source.features(id)?;
            let mut best = match query_scores.get(&id) {
                Some(&s) => s,
                None => rcmm_or_zero(query, &feats, cfg.nndr_t),
            };
            for &seed in retrieved_by.get(&id).into_iter().flatten() {
                let seed_feats = source.features(seed)?;
                best = best.max(rcmm_or_zero(&seed_feats, &feats, cfg.nndr_t));
            }
            Ok(RankEntry {
                image_id: id,
                votes: votes[&id],
                rcmm: Some(best),
            })
        })
        .collect();
    let mut entries = scored.into_iter().collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.rcmm
            .unwrap_or(0.0)
            .total_cmp(&a.rcmm.unwrap_or(0.0))
            .then(b.votes.cmp(&a.votes))
            .then(a.image_id.cmp(&b.image_id))
    });
    entries.truncate(cfg.rank_k);
    Ok(RankedList { entries })
}

fn rcmm_or_zero(a: &FeatureSet, b: &FeatureSet, t: f64) -> f64 {
    rcmm(a, b, t).unwrap_or(0.0)
}
