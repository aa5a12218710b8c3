use super::ProvenanceGraph;
use crate::pairwise::PairwiseAnalysis;

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False when already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Minimum spanning forest over the active nodes weighted by `d_gcm`
/// (undirected). Infinite entries are not edges; equal weights are taken in
/// ascending `(i, j)` order. Nodes left without edges are dropped, except
/// the query.
pub fn kruskal_build(analysis: &PairwiseAnalysis) -> ProvenanceGraph {
    let active = analysis.active_indices();
    let mut edges = Vec::new();
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            let d = analysis.d_gcm[i][j];
            if d.is_finite() {
                edges.push((d, i, j));
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut uf = UnionFind::new(analysis.n());
    let mut graph = ProvenanceGraph::new(analysis.ids[analysis.query]);
    for (d, i, j) in edges {
        if uf.union(i, j) {
            graph.add_edge(analysis.ids[i], analysis.ids[j], false, d);
        }
    }
    graph
}
