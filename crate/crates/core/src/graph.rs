//! Undirected weighted graphs, closed neighborhoods and the combinatorial
//! Laplacian.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::eigen::{self, EigenError, SpectralBasis};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid node {node} for graph with {num_nodes} nodes")]
    InvalidNode { node: usize, num_nodes: usize },
    #[error("self-loop on node {0} (self-loops are implicit)")]
    SelfLoop(usize),
    #[error("edge ({u}, {v}) given twice with conflicting weights {first} and {second}")]
    ConflictingEdge {
        u: usize,
        v: usize,
        first: f64,
        second: f64,
    },
    #[error("edge ({u}, {v}) has invalid weight {weight}")]
    InvalidWeight { u: usize, v: usize, weight: f64 },
    #[error("graph must have at least one node")]
    Empty,
    #[error("k = {k} must satisfy 1 <= k < {num_points}")]
    InvalidK { k: usize, num_points: usize },
    #[error("point {index} has non-finite coordinates")]
    NonFinitePoint { index: usize },
    #[error("point {index} has {got} coordinates, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Undirected graph on nodes `0..num_nodes` with nonnegative edge weights.
///
/// Adjacency is stored symmetrically with neighbors kept in ascending id
/// order. Self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<BTreeMap<usize, f64>>,
}

impl Graph {
    /// Graph with `num_nodes` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self {
            adjacency: vec![BTreeMap::new(); num_nodes],
        })
    }

    /// Builds a graph from unit-weight edges.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        Self::from_weighted_edges(num_nodes, edges.into_iter().map(|(u, v)| (u, v, 1.0)))
    }

    /// Builds a graph from weighted edges. An edge listed in both directions
    /// (or twice) is accepted when the weights agree.
    pub fn from_weighted_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::empty(num_nodes)?;
        for (u, v, w) in edges {
            g.add_edge(u, v, w)?;
        }
        Ok(g)
    }

    fn add_edge(&mut self, u: usize, v: usize, weight: f64) -> Result<(), GraphError> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(GraphError::InvalidWeight { u, v, weight });
        }
        if let Some(&existing) = self.adjacency[u].get(&v) {
            if existing != weight {
                return Err(GraphError::ConflictingEdge {
                    u: u.min(v),
                    v: u.max(v),
                    first: existing,
                    second: weight,
                });
            }
            return Ok(());
        }
        self.adjacency[u].insert(v, weight);
        self.adjacency[v].insert(u, weight);
        Ok(())
    }

    fn check_node(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.num_nodes() {
            Err(GraphError::InvalidNode {
                node: v,
                num_nodes: self.num_nodes(),
            })
        } else {
            Ok(())
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn degree(&self, v: usize) -> Result<usize, GraphError> {
        self.check_node(v)?;
        Ok(self.adjacency[v].len())
    }

    /// Edge weight between `u` and `v`, if they are adjacent.
    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adjacency.get(u)?.get(&v).copied()
    }

    /// Neighbors of `v` (excluding `v`) in ascending order.
    pub fn neighbors(&self, v: usize) -> Result<impl Iterator<Item = usize> + '_, GraphError> {
        self.check_node(v)?;
        Ok(self.adjacency[v].keys().copied())
    }

    /// `v` together with its 1-hop neighbors, sorted ascending.
    pub fn closed_neighbors(&self, v: usize) -> Result<Vec<usize>, GraphError> {
        self.check_node(v)?;
        let mut out: Vec<usize> = Vec::with_capacity(self.adjacency[v].len() + 1);
        let mut placed = false;
        for &u in self.adjacency[v].keys() {
            if !placed && u > v {
                out.push(v);
                placed = true;
            }
            out.push(u);
        }
        if !placed {
            out.push(v);
        }
        Ok(out)
    }

    /// Each undirected edge once as `(u, v, w)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| {
                nbrs.iter()
                    .filter(move |(&v, _)| v > u)
                    .map(move |(&v, &w)| (u, v, w))
            })
            .collect()
    }

    /// Combinatorial Laplacian `Deg - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.num_nodes();
        let mut lap = DMatrix::zeros(n, n);
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            let mut deg = 0.0;
            for (&v, &w) in nbrs {
                lap[(u, v)] = -w;
                deg += w;
            }
            lap[(u, u)] = deg;
        }
        lap
    }

    /// Eigendecomposition of the Laplacian.
    pub fn spectral_basis(&self) -> Result<SpectralBasis, GraphError> {
        Ok(eigen::eigendecompose(&self.laplacian())?)
    }
}

/// Edge weighting scheme for [`knn_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnWeights {
    #[default]
    Unit,
    /// `exp(-d^2 / sigma^2)` with sigma the mean k-NN distance.
    Gaussian,
}

/// Symmetrized k-nearest-neighbor graph over Euclidean points.
///
/// Ties in distance go to the lower node id. The edge set is the union of
/// each node's k-NN lists.
pub fn knn_graph(points: &[Vec<f64>], k: usize, weights: KnnWeights) -> Result<Graph, GraphError> {
    let n = points.len();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if k == 0 || k >= n {
        return Err(GraphError::InvalidK { k, num_points: n });
    }
    let dim = points[0].len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GraphError::DimensionMismatch {
                index,
                got: p.len(),
                expected: dim,
            });
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(GraphError::NonFinitePoint { index });
        }
    }

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    // (i, j) -> distance, i < j
    let mut selected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut knn_dist_sum = 0.0;
    for i in 0..n {
        let mut cands: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist(&points[i], &points[j]), j))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in cands.iter().take(k) {
            knn_dist_sum += d;
            selected.insert((i.min(j), i.max(j)), d);
        }
    }

    let sigma = knn_dist_sum / (n * k) as f64;
    let edges = selected.into_iter().map(|((u, v), d)| {
        let w = match weights {
            KnnWeights::Unit => 1.0,
            KnnWeights::Gaussian if sigma > 0.0 => (-(d * d) / (sigma * sigma)).exp(),
            KnnWeights::Gaussian => 1.0,
        };
        (u, v, w)
    });
    Graph::from_weighted_edges(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn closed_neighbors_examples() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(tri.closed_neighbors(0).unwrap(), vec![0, 1, 2]);
        assert_eq!(path3().closed_neighbors(0).unwrap(), vec![0, 1]);
        assert_eq!(path3().closed_neighbors(1).unwrap(), vec![0, 1, 2]);
        let iso = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert_eq!(iso.closed_neighbors(2).unwrap(), vec![2]);
    }

    #[test]
    fn closed_neighbors_rejects_out_of_range() {
        assert_eq!(
            path3().closed_neighbors(3),
            Err(GraphError::InvalidNode {
                node: 3,
                num_nodes: 3
            })
        );
    }

    #[test]
    fn laplacian_examples() {
        let l = path3().laplacian();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, expected);

        let l = Graph::from_edges(2, [(0, 1)]).unwrap().laplacian();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));

        let l = Graph::empty(3).unwrap().laplacian();
        assert_eq!(l, DMatrix::zeros(3, 3));
    }

    #[test]
    fn rejects_bad_edges() {
        assert_eq!(Graph::from_edges(3, [(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert!(matches!(
            Graph::from_edges(3, [(0, 5)]),
            Err(GraphError::InvalidNode { node: 5, .. })
        ));
        assert!(matches!(
            Graph::from_weighted_edges(3, [(0, 1, 1.0), (1, 0, 2.0)]),
            Err(GraphError::ConflictingEdge { .. })
        ));
        assert!(matches!(
            Graph::from_weighted_edges(3, [(0, 1, -1.0)]),
            Err(GraphError::InvalidWeight { .. })
        ));
        assert_eq!(Graph::empty(0), Err(GraphError::Empty));
    }

    #[test]
    fn duplicate_edge_in_both_directions_is_deduplicated() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn knn_collinear_points() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let g = knn_graph(&pts, 1, KnnWeights::Unit).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn knn_two_points() {
        let g = knn_graph(&[vec![0.0, 0.0], vec![3.0, 4.0]], 1, KnnWeights::Unit).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0)]);
    }

    #[test]
    fn knn_square_has_no_diagonals() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ];
        let g = knn_graph(&pts, 2, KnnWeights::Unit).unwrap();
        assert_eq!(
            g.edges(),
            vec![(0, 1, 1.0), (0, 3, 1.0), (1, 2, 1.0), (2, 3, 1.0)]
        );
    }

    #[test]
    fn knn_ties_go_to_lower_id() {
        // node 1 is equidistant from 0 and 2
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let g = knn_graph(&pts, 1, KnnWeights::Unit).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
        assert!(g.weight(0, 2).is_none());
    }

    #[test]
    fn knn_allows_coincident_points() {
        let pts = vec![vec![0.0], vec![0.0], vec![5.0]];
        let g = knn_graph(&pts, 1, KnnWeights::Gaussian).unwrap();
        assert_eq!(g.weight(0, 1), Some(1.0));
    }

    #[test]
    fn knn_gaussian_weights() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        let g = knn_graph(&pts, 1, KnnWeights::Gaussian).unwrap();
        // k-NN distances: 1, 1, 2 -> sigma = 4/3
        let sigma: f64 = 4.0 / 3.0;
        approx::assert_relative_eq!(g.weight(0, 1).unwrap(), (-1.0 / (sigma * sigma)).exp());
        approx::assert_relative_eq!(g.weight(1, 2).unwrap(), (-4.0 / (sigma * sigma)).exp());
    }

    #[test]
    fn knn_rejects_bad_k() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            knn_graph(&pts, 2, KnnWeights::Unit),
            Err(GraphError::InvalidK { .. })
        ));
        assert!(matches!(
            knn_graph(&pts, 0, KnnWeights::Unit),
            Err(GraphError::InvalidK { .. })
        ));
        assert!(matches!(
            knn_graph(&[vec![0.0], vec![f64::NAN]], 1, KnnWeights::Unit),
            Err(GraphError::NonFinitePoint { index: 1 })
        ));
    }
}
