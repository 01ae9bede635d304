//! Weighted undirected graphs over points and superpoints.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// Undirected graph with edges stored once as `(u, v)`, `u < v`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    node_count: usize,
    edges: Vec<(u32, u32)>,
    weights: Vec<f64>,
    agreements: Option<Vec<f64>>,
    /// Number of point edges behind each superpoint edge.
    crossings: Option<Vec<u32>>,
}

impl AdjacencyGraph {
    /// Builds a graph from an edge list with unit weights. Pairs are
    /// canonicalized to `u < v` and sorted; self-loops or duplicates are errors.
    pub fn from_edges(node_count: usize, edges: Vec<(u32, u32)>) -> Result<Self> {
        let weights = vec![1.0; edges.len()];
        Self::with_weights(node_count, edges, weights)
    }

    pub fn with_weights(node_count: usize, edges: Vec<(u32, u32)>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != edges.len() {
            return Err(Error::structural(format!(
                "{} weights for {} edges",
                weights.len(),
                edges.len()
            )));
        }
        let mut keyed: Vec<((u32, u32), f64)> = edges
            .into_iter()
            .map(|(u, v)| (u.min(v), u.max(v)))
            .zip(weights)
            .collect();
        for &((u, v), w) in &keyed {
            if u == v {
                return Err(Error::structural(format!("self-loop on node {u}")));
            }
            if v as usize >= node_count {
                return Err(Error::structural(format!(
                    "edge ({u},{v}) references a node beyond {node_count}"
                )));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::numeric(format!("edge ({u},{v}) has weight {w}")));
            }
        }
        keyed.sort_unstable_by_key(|e| e.0);
        if let Some(pair) = keyed.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::structural(format!("duplicate edge {:?}", pair[0].0)));
        }
        let (edges, weights) = keyed.into_iter().unzip();
        Ok(Self {
            node_count,
            edges,
            weights,
            agreements: None,
            crossings: None,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn agreements(&self) -> Option<&[f64]> {
        self.agreements.as_deref()
    }

    pub fn crossings(&self) -> Option<&[u32]> {
        self.crossings.as_deref()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.edges.len() {
            return Err(Error::structural("weight count differs from edge count"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::numeric(format!("invalid edge weight {w}")));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn set_agreements(&mut self, agreements: Vec<f64>) -> Result<()> {
        if agreements.len() != self.edges.len() {
            return Err(Error::structural("agreement count differs from edge count"));
        }
        if let Some(a) = agreements.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::numeric(format!("agreement {a} outside [0,1]")));
        }
        self.agreements = Some(agreements);
        Ok(())
    }

    /// Index of edge `(u, v)` in canonical order, if present.
    pub fn find_edge(&self, u: u32, v: u32) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            d[u as usize] += 1;
            d[v as usize] += 1;
        }
        d
    }

    /// Compressed adjacency: for node `i`, neighbors and edge ids live in
    /// `offsets[i]..offsets[i + 1]`.
    pub fn csr(&self) -> Csr {
        Csr::new(self.node_count, &self.edges)
    }

    /// Connected components labeled in order of their smallest node.
    pub fn connected_components(&self) -> (Vec<u32>, usize) {
        let csr = self.csr();
        let mut label = vec![u32::MAX; self.node_count];
        let mut count = 0u32;
        let mut stack = Vec::new();
        for start in 0..self.node_count {
            if label[start] != u32::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start as u32);
            while let Some(u) = stack.pop() {
                for &(v, _) in csr.neighbors(u) {
                    if label[v as usize] == u32::MAX {
                        label[v as usize] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (label, count as usize)
    }
}

#[derive(Debug, Clone)]
pub struct Csr {
    offsets: Vec<usize>,
    /// `(neighbor, edge id)`
    adjacency: Vec<(u32, u32)>,
}

impl Csr {
    fn new(node_count: usize, edges: &[(u32, u32)]) -> Self {
        let mut offsets = vec![0usize; node_count + 1];
        for &(u, v) in edges {
            offsets[u as usize + 1] += 1;
            offsets[v as usize + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0u32, 0u32); 2 * edges.len()];
        for (e, &(u, v)) in edges.iter().enumerate() {
            adjacency[fill[u as usize]] = (v, e as u32);
            fill[u as usize] += 1;
            adjacency[fill[v as usize]] = (u, e as u32);
            fill[v as usize] += 1;
        }
        Self { offsets, adjacency }
    }

    #[inline]
    pub fn neighbors(&self, node: u32) -> &[(u32, u32)] {
        &self.adjacency[self.offsets[node as usize]..self.offsets[node as usize + 1]]
    }
}

/// Symmetrized exact k-nearest-neighbor graph with unit weights.
///
/// Each point links to its `k` nearest others (ties to the lower index); an
/// undirected edge exists when either endpoint selected the other.
pub fn build_knn_graph(positions: &[[f64; 3]], k: usize) -> Result<AdjacencyGraph> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::parameter(format!("k-NN graph needs at least 2 points, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::parameter(format!("k must lie in [1, {}), got {k}", n)));
    }
    if positions.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::numeric("non-finite point coordinate"));
    }
    let tree = KdTree::build(positions);
    let mut pairs: Vec<(u32, u32)> = (0..n as u32)
        .into_par_iter()
        .flat_map_iter(|i| {
            tree.nearest(&positions[i as usize], k, Some(i))
                .into_iter()
                .map(move |(j, _)| (i.min(j), i.max(j)))
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    let weights = vec![1.0; pairs.len()];
    Ok(AdjacencyGraph {
        node_count: n,
        edges: pairs,
        weights,
        agreements: None,
        crossings: None,
    })
}

/// Graph over groups of points: groups `s != t` are adjacent when some point
/// edge joins them. The number of such point edges is kept as `crossings`.
pub fn superpoint_adjacency(
    point_to_superpoint: &[u32],
    superpoint_count: usize,
    point_graph: &AdjacencyGraph,
) -> Result<AdjacencyGraph> {
    if point_to_superpoint.len() != point_graph.node_count() {
        return Err(Error::structural(format!(
            "{} point assignments for a graph of {} nodes",
            point_to_superpoint.len(),
            point_graph.node_count()
        )));
    }
    if let Some(s) = point_to_superpoint.iter().find(|&&s| s as usize >= superpoint_count) {
        return Err(Error::structural(format!("superpoint id {s} beyond count {superpoint_count}")));
    }
    let mut crossing: Vec<(u32, u32)> = point_graph
        .edges()
        .par_iter()
        .filter_map(|&(p, q)| {
            let (s, t) = (point_to_superpoint[p as usize], point_to_superpoint[q as usize]);
            (s != t).then(|| (s.min(t), s.max(t)))
        })
        .collect();
    crossing.par_sort_unstable();
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for pair in crossing {
        if edges.last() == Some(&pair) {
            *counts.last_mut().unwrap() += 1;
        } else {
            edges.push(pair);
            counts.push(1u32);
        }
    }
    let weights = vec![1.0; edges.len()];
    Ok(AdjacencyGraph {
        node_count: superpoint_count,
        edges,
        weights,
        agreements: None,
        crossings: Some(counts),
    })
}
