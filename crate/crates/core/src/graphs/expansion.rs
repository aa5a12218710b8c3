use serde::{Deserialize, Serialize};

use super::ProvenanceGraph;
use crate::error::{Error, Result};
use crate::pairwise::PairwiseAnalysis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Floor of the acceptance half-width as a fraction of the running mean.
    pub alpha: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// i generated j.
    Forward,
    /// j generated i.
    Backward,
}

/// Orientation of the edge between i and j from the MI evidence in both
/// directions. Pass the endpoint nearer the cluster seed as i: exact ties
/// point away from the seed.
pub fn edge_direction(mi_ij: f64, mi_ji: f64) -> Direction {
    if mi_ji > mi_ij {
        Direction::Backward
    } else {
        Direction::Forward
    }
}

/// A cluster path with the match counts of its edges in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub members: Vec<usize>,
    pub counts: Vec<u32>,
}

impl ClusterState {
    pub fn new(seed: usize) -> Self {
        Self {
            members: vec![seed],
            counts: Vec::new(),
        }
    }

    pub fn push(&mut self, node: usize, count: u32) {
        self.members.push(node);
        self.counts.push(count);
    }

    pub fn last(&self) -> usize {
        *self.members.last().expect("cluster has a seed")
    }

    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.counts.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let mu = self.mean();
        let var = self.counts.iter().map(|&c| (c as f64 - mu).powi(2)).sum::<f64>() / self.counts.len() as f64;
        var.sqrt()
    }

    /// Whether `count` lies within `mean ± max(std, alpha * mean)`.
    pub fn accepts(&self, count: u32, alpha: f64) -> bool {
        let mu = self.mean();
        let half = self.std().max(alpha * mu);
        count > 0 && (count as f64 - mu).abs() <= half
    }
}

/// Clustered provenance graph expansion (directed). Starting at the query,
/// unconnected nodes are taken in decreasing match count with the seed and
/// appended to a path while each new edge's count stays within the
/// cluster's running band. Paths are oriented by MI and then made to follow
/// their dominant direction. Further clusters start from the connected node
/// with the largest single count to the unconnected ones (ties: larger sum,
/// then smaller id). Nodes sharing no matches with the graph are left out.
pub fn clustered_expansion(analysis: &PairwiseAnalysis, cfg: &ExpansionConfig) -> Result<ProvenanceGraph> {
    let q = analysis.query;
    let ids = &analysis.ids;
    let m = &analysis.m;
    if !analysis.active[q] {
        return Err(Error::QueryNotActive(ids[q]));
    }

    let mut graph = ProvenanceGraph::new(ids[q]);
    let mut connected = vec![q];
    let mut unconnected: Vec<usize> = analysis.active_indices().into_iter().filter(|&i| i != q).collect();
    let mut seed = q;

    while !unconnected.is_empty() {
        let cluster = grow(seed, &unconnected, analysis, cfg.alpha);
        if cluster.counts.is_empty() {
            break;
        }
        add_path(&mut graph, &cluster, analysis);
        for &node in &cluster.members[1..] {
            connected.push(node);
        }
        unconnected.retain(|u| !cluster.members.contains(u));

        let best = connected
            .iter()
            .map(|&c| {
                let max = unconnected.iter().map(|&u| m[c][u]).max().unwrap_or(0);
                let sum: u64 = unconnected.iter().map(|&u| m[c][u] as u64).sum();
                (c, max, sum)
            })
            .max_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)).then(ids[b.0].cmp(&ids[a.0])));
        match best {
            Some((c, max, _)) if max > 0 => seed = c,
            _ => break,
        }
    }
    Ok(graph)
}

fn grow(seed: usize, unconnected: &[usize], analysis: &PairwiseAnalysis, alpha: f64) -> ClusterState {
    let m = &analysis.m;
    let mut order = unconnected.to_vec();
    order.sort_by(|&a, &b| m[seed][b].cmp(&m[seed][a]).then(analysis.ids[a].cmp(&analysis.ids[b])));

    let mut cluster = ClusterState::new(seed);
    let Some((&first, rest)) = order.split_first() else {
        return cluster;
    };
    if m[seed][first] == 0 {
        return cluster;
    }
    cluster.push(first, m[seed][first]);
    for &c in rest {
        let count = m[cluster.last()][c];
        if !cluster.accepts(count, alpha) {
            break;
        }
        cluster.push(c, count);
    }
    cluster
}

fn add_path(graph: &mut ProvenanceGraph, cluster: &ClusterState, analysis: &PairwiseAnalysis) {
    let mi = &analysis.d_mi;
    let steps: Vec<(usize, usize, u32)> = cluster
        .members
        .windows(2)
        .zip(&cluster.counts)
        .map(|(w, &c)| (w[0], w[1], c))
        .collect();
    let dirs: Vec<Direction> = steps.iter().map(|&(a, b, _)| edge_direction(mi[a][b], mi[b][a])).collect();
    let forward = dirs.iter().filter(|&&d| d == Direction::Forward).count();
    let backward = dirs.len() - forward;
    let dominant = match forward.cmp(&backward) {
        std::cmp::Ordering::Greater => Some(Direction::Forward),
        std::cmp::Ordering::Less => Some(Direction::Backward),
        std::cmp::Ordering::Equal => None,
    };
    for (&(a, b, count), &dir) in steps.iter().zip(&dirs) {
        let (from, to) = match dominant.unwrap_or(dir) {
            Direction::Forward => (a, b),
            Direction::Backward => (b, a),
        };
        graph.add_edge(analysis.ids[from], analysis.ids[to], true, count as f64);
    }
}
