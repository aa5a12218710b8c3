//! Provenance graph construction from pairwise evidence.

mod expansion;
mod kruskal;

pub use expansion::{clustered_expansion, edge_direction, ClusterState, Direction, ExpansionConfig};
pub use kruskal::kruskal_build;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: u64,
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: u64,
    pub to: u64,
    pub directed: bool,
    pub weight: f64,
}

impl GraphEdge {
    /// Endpoints as an unordered pair.
    pub fn unordered(&self) -> (u64, u64) {
        (self.from.min(self.to), self.from.max(self.to))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceGraph {
    pub query: u64,
    /// Sorted by id.
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl ProvenanceGraph {
    pub fn new(query: u64) -> Self {
        Self {
            query,
            nodes: vec![GraphNode { id: query, file: None }],
            edges: Vec::new(),
        }
    }

    pub fn add_node(&mut self, id: u64) {
        if let Err(pos) = self.nodes.binary_search_by_key(&id, |n| n.id) {
            self.nodes.insert(pos, GraphNode { id, file: None });
        }
    }

    /// Adds the edge and its endpoints. Self-loops and second edges between
    /// the same pair are ignored.
    pub fn add_edge(&mut self, from: u64, to: u64, directed: bool, weight: f64) {
        let key = (from.min(to), from.max(to));
        if from == to || self.edges.iter().any(|e| e.unordered() == key) {
            return;
        }
        self.add_node(from);
        self.add_node(to);
        self.edges.push(GraphEdge {
            from,
            to,
            directed,
            weight,
        });
    }

    pub fn node_ids(&self) -> BTreeSet<u64> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn has_node(&self, id: u64) -> bool {
        self.nodes.binary_search_by_key(&id, |n| n.id).is_ok()
    }

    pub fn set_files(&mut self, file: impl Fn(u64) -> Option<String>) {
        for n in &mut self.nodes {
            n.file = file(n.id);
        }
    }

    /// Number of connected components of the underlying undirected graph.
    pub fn components(&self) -> usize {
        let ids: Vec<u64> = self.nodes.iter().map(|n| n.id).collect();
        let pos = |id: u64| ids.binary_search(&id).expect("edge endpoint is a node");
        let mut uf = kruskal::UnionFind::new(ids.len());
        let mut comps = ids.len();
        for e in &self.edges {
            if uf.union(pos(e.from), pos(e.to)) {
                comps -= 1;
            }
        }
        comps
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Graphviz text. Directed edges use `->`, undirected ones `dir=none`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph provenance {\n");
        for n in &self.nodes {
            let label = n.file.as_deref().unwrap_or("");
            let shape = if n.id == self.query { ", shape=doublecircle" } else { "" };
            let _ = writeln!(out, "  n{} [label=\"{}\\n{}\"{}];", n.id, n.id, label, shape);
        }
        for e in &self.edges {
            let dir = if e.directed { "" } else { ", dir=none" };
            let _ = writeln!(out, "  n{} -> n{} [label=\"{:.4}\"{}];", e.from, e.to, e.weight, dir);
        }
        out.push_str("}\n");
        out
    }
}
