//! Filtering and graph metrics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::RankedList;
use crate::graphs::ProvenanceGraph;

/// Recall cutoffs of the suite report.
pub const RECALL_CUTOFFS: [usize; 3] = [50, 100, 200];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCase {
    pub query: u64,
    pub relevant: Vec<u64>,
    pub graph: ProvenanceGraph,
    /// Edges whose transformation cannot be undone from pixels, as `[from, to]`.
    #[serde(default)]
    pub irreversible: Vec<[u64; 2]>,
}

impl GroundTruthCase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Fraction of `relevant` found among the first `k` ids of `rank`.
pub fn recall_at_k(rank: &[u64], relevant: &[u64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("recall cutoff must be at least 1".into()));
    }
    let relevant: HashSet<u64> = relevant.iter().copied().collect();
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let top: HashSet<u64> = rank.iter().take(k).copied().collect();
    Ok(top.intersection(&relevant).count() as f64 / relevant.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub vo: f64,
    pub eo: f64,
    pub veo: f64,
}

fn edge_keys(g: &ProvenanceGraph, directed: bool) -> BTreeSet<(u64, u64)> {
    g.edges
        .iter()
        .map(|e| if directed { (e.from, e.to) } else { e.unordered() })
        .collect()
}

fn f1(common: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * common as f64 / (a + b) as f64
    }
}

/// Vertex, edge and vertex-and-edge overlap (F1) of `g` against `truth`.
/// Two empty edge sets agree perfectly.
pub fn graph_overlap(g: &ProvenanceGraph, truth: &ProvenanceGraph, directed: bool) -> Overlap {
    let (v, vt) = (g.node_ids(), truth.node_ids());
    let (e, et) = (edge_keys(g, directed), edge_keys(truth, directed));
    let cv = v.intersection(&vt).count();
    let ce = e.intersection(&et).count();
    Overlap {
        vo: f1(cv, v.len(), vt.len()),
        eo: f1(ce, e.len(), et.len()),
        veo: f1(cv + ce, v.len() + vt.len(), e.len() + et.len()),
    }
}

/// Directed edge overlap restricted to the given truth edges: retrieved
/// edges are kept when they join one of those pairs (either orientation).
/// `None` when `edges` is empty.
pub fn directed_overlap_on(g: &ProvenanceGraph, edges: &[[u64; 2]]) -> Option<f64> {
    if edges.is_empty() {
        return None;
    }
    let truth: BTreeSet<(u64, u64)> = edges.iter().map(|e| (e[0], e[1])).collect();
    let pairs: BTreeSet<(u64, u64)> = truth.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let found: BTreeSet<(u64, u64)> = g
        .edges
        .iter()
        .filter(|e| pairs.contains(&e.unordered()))
        .map(|e| (e.from, e.to))
        .collect();
    Some(f1(found.intersection(&truth).count(), found.len(), truth.len()))
}

/// What a pipeline produced for one case. Oracle runs have no rank.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub rank: Option<RankedList>,
    pub graph: Option<ProvenanceGraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case: u64,
    pub vo: f64,
    pub eo_directed: f64,
    pub eo_undirected: f64,
    pub veo_directed: f64,
    pub veo_undirected: f64,
    /// Recall at [`RECALL_CUTOFFS`]; `None` without a rank.
    pub recall: [Option<f64>; 3],
    /// Directed EO over the irreversible truth edges, if the case has any.
    pub eo_irreversible: Option<f64>,
    /// No result was supplied; the metrics are zeros.
    pub missing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseMetrics>,
    pub mean: CaseMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMeans {
    pub vo: f64,
    pub eo_directed: f64,
    pub eo_undirected: f64,
    pub veo_directed: f64,
    pub veo_undirected: f64,
    pub recall: [Option<f64>; 3],
    pub eo_irreversible: Option<f64>,
}

fn evaluate_case(case: &GroundTruthCase, result: Option<&CaseResult>) -> Result<CaseMetrics> {
    let mut out = CaseMetrics {
        case: case.query,
        vo: 0.0,
        eo_directed: 0.0,
        eo_undirected: 0.0,
        veo_directed: 0.0,
        veo_undirected: 0.0,
        recall: [None; 3],
        eo_irreversible: None,
        missing: result.is_none(),
    };
    let Some(result) = result else {
        out.recall = [Some(0.0); 3];
        if !case.irreversible.is_empty() {
            out.eo_irreversible = Some(0.0);
        }
        return Ok(out);
    };
    if let Some(rank) = &result.rank {
        let ids = rank.ids();
        for (slot, &k) in out.recall.iter_mut().zip(&RECALL_CUTOFFS) {
            *slot = Some(recall_at_k(&ids, &case.relevant, k)?);
        }
    }
    if let Some(g) = &result.graph {
        let d = graph_overlap(g, &case.graph, true);
        let u = graph_overlap(g, &case.graph, false);
        out.vo = d.vo;
        out.eo_directed = d.eo;
        out.eo_undirected = u.eo;
        out.veo_directed = d.veo;
        out.veo_undirected = u.veo;
        out.eo_irreversible = directed_overlap_on(g, &case.irreversible);
    } else if !case.irreversible.is_empty() {
        out.eo_irreversible = Some(0.0);
    }
    Ok(out)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| mean_of(present.into_iter()))
}

/// Per-case metrics and unweighted means. `results` is keyed by query id;
/// cases without a result are reported as zeros and flagged.
pub fn evaluate_suite(cases: &[GroundTruthCase], results: &BTreeMap<u64, CaseResult>) -> Result<SuiteReport> {
    let rows = cases
        .par_iter()
        .map(|c| evaluate_case(c, results.get(&c.query)))
        .collect::<Result<Vec<_>>>()?;
    let mean = CaseMeans {
        vo: mean_of(rows.iter().map(|r| r.vo)),
        eo_directed: mean_of(rows.iter().map(|r| r.eo_directed)),
        eo_undirected: mean_of(rows.iter().map(|r| r.eo_undirected)),
        veo_directed: mean_of(rows.iter().map(|r| r.veo_directed)),
        veo_undirected: mean_of(rows.iter().map(|r| r.veo_undirected)),
        recall: [0, 1, 2].map(|i| mean_opt(rows.iter().map(|r| r.recall[i]))),
        eo_irreversible: mean_opt(rows.iter().map(|r| r.eo_irreversible)),
    };
    Ok(SuiteReport { cases: rows, mean })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl SuiteReport {
    /// One row per case plus a final `mean` row. Recall cells are empty
    /// when no rank was evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,VO,EO_directed,EO_undirected,VEO_directed,VEO_undirected,R@50,R@100,R@200\n");
        let mut row = |name: String, vals: [f64; 5], recall: &[Option<f64>; 3]| {
            let _ = write!(out, "{name}");
            for v in vals {
                let _ = write!(out, ",{v:.6}");
            }
            for r in recall {
                let _ = write!(out, ",{}", cell(*r));
            }
            out.push('\n');
        };
        for c in &self.cases {
            row(
                c.case.to_string(),
                [c.vo, c.eo_directed, c.eo_undirected, c.veo_directed, c.veo_undirected],
                &c.recall,
            );
        }
        let m = &self.mean;
        row(
            "mean".into(),
            [m.vo, m.eo_directed, m.eo_undirected, m.veo_directed, m.veo_undirected],
            &m.recall,
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(query: u64, nodes: &[u64], edges: &[(u64, u64)]) -> ProvenanceGraph {
        let mut g = ProvenanceGraph::new(query);
        for &n in nodes {
            g.add_node(n);
        }
        for &(a, b) in edges {
            g.add_edge(a, b, true, 1.0);
        }
        g
    }

    #[test]
    fn recall_counts() {
        assert_eq!(recall_at_k(&[1, 9], &[1, 2, 3, 4], 2).unwrap(), 0.25);
        assert_eq!(recall_at_k(&[4, 3, 2, 1], &[1, 2, 3, 4], 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[1, 2], &[1, 2], 100).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&[1], &[], 5), Err(Error::EmptyRelevant)));
        assert!(recall_at_k(&[1], &[1], 0).is_err());
    }

    #[test]
    fn empty_edge_sets_agree() {
        let g = graph(1, &[1], &[]);
        let o = graph_overlap(&g, &g, true);
        assert_eq!((o.vo, o.eo, o.veo), (1.0, 1.0, 1.0));
    }

    #[test]
    fn irreversible_subset() {
        let truth = [[1, 2], [2, 3]];
        let g = graph(3, &[], &[(1, 2), (3, 2), (3, 4)]);
        // found (1,2) right, (3,2) wrong: 2*1/(2+2)
        assert_eq!(directed_overlap_on(&g, &truth), Some(0.5));
        assert_eq!(directed_overlap_on(&g, &[]), None);
    }

    #[test]
    fn missing_results_are_zeros() {
        let case = GroundTruthCase {
            query: 1,
            relevant: vec![1, 2],
            graph: graph(1, &[2], &[(2, 1)]),
            irreversible: vec![],
        };
        let report = evaluate_suite(&[case], &BTreeMap::new()).unwrap();
        assert!(report.cases[0].missing);
        assert_eq!(report.mean.vo, 0.0);
        assert_eq!(report.mean.recall[0], Some(0.0));
    }

    #[test]
    fn csv_layout() {
        let case = GroundTruthCase {
            query: 1,
            relevant: vec![1],
            graph: graph(1, &[], &[]),
            irreversible: vec![],
        };
        let mut results = BTreeMap::new();
        results.insert(1, CaseResult { rank: None, graph: Some(graph(1, &[], &[])) });
        let csv = evaluate_suite(&[case], &results).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "case,VO,EO_directed,EO_undirected,VEO_directed,VEO_undirected,R@50,R@100,R@200");
        assert_eq!(lines[1], "1,1.000000,1.000000,1.000000,1.000000,1.000000,,,");
        assert!(lines[2].starts_with("mean,"));
    }
}
