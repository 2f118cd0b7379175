use serde::{Deserialize, Serialize};

use crate::error::{DmpcError, Result};

/// Undirected interaction graph over agents `0..n`. Edges are stored as
/// `(i, j)` with `i < j`, sorted; the lower endpoint owns the edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct InteractionGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphSpec {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphSpec> for InteractionGraph {
    type Error = DmpcError;
    fn try_from(s: GraphSpec) -> Result<Self> {
        Self::from_edges(s.nodes, &s.edges)
    }
}

impl From<InteractionGraph> for GraphSpec {
    fn from(g: InteractionGraph) -> Self {
        Self { nodes: g.n, edges: g.edges }
    }
}

impl InteractionGraph {
    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    pub fn empty(n: usize) -> Self {
        Self::from_edges(n, &[]).expect("empty graph is valid")
    }

    /// Rejects self-loops, out-of-range ids and repeated pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(DmpcError::InvalidArgument(format!("self-loop on agent {a}")));
            }
            if a >= n || b >= n {
                return Err(DmpcError::InvalidArgument(format!(
                    "edge ({a}, {b}) references an agent outside 0..{n}"
                )));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
            return Err(DmpcError::InvalidArgument(format!("duplicate edge {:?}", w[0])));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &norm {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for l in neighbors.iter_mut() {
            l.sort_unstable();
        }
        Ok(Self { n, edges: norm, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i.min(j), i.max(j))).ok()
    }

    /// Agent that computes the edge update.
    pub fn owner(&self, edge: usize) -> usize {
        self.edges[edge].0
    }

    pub fn owned_edges(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.0 == i).map(|(k, _)| k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_counts() {
        let g = InteractionGraph::complete(4);
        assert_eq!(g.num_edges(), 6);
        assert_eq!(g.neighbors(2), &[0, 1, 3]);
        assert_eq!(g.edge_index(3, 1), Some(4));
        assert_eq!(g.owner(4), 1);
        assert_eq!(g.owned_edges(0).count(), 3);
    }

    #[test]
    fn invalid_edges_are_rejected() {
        assert!(InteractionGraph::from_edges(3, &[(0, 0)]).is_err());
        assert!(InteractionGraph::from_edges(3, &[(0, 3)]).is_err());
        assert!(InteractionGraph::from_edges(3, &[(0, 1), (1, 0)]).is_err());
        let g = InteractionGraph::from_edges(3, &[(2, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 2)]);
        assert!(g.are_neighbors(2, 0) && !g.are_neighbors(1, 2));
    }

    #[test]
    fn serde_round_trip_validates() {
        let g = InteractionGraph::complete(3);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<InteractionGraph>(&s).unwrap(), g);
        assert!(serde_json::from_str::<InteractionGraph>(r#"{"nodes":2,"edges":[[0,0]]}"#).is_err());
    }
}
