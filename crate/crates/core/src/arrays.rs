//! Flat-array entry points for foreign callers (NumPy-style buffers).
//!
//! Labels use `-1` for unlabeled; edges are `E x 2` row-major.

use crate::cutpursuit::{solve_gmp, ComponentValue};
use crate::domain::{ClassEntry, ClassTable, ClusteringParams, NodeSignal, PanopticLabels, PointCloud, IGNORE};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::metrics::{panoptic_quality, PanopticMetrics};
use crate::panoptic::apply_weights;
use crate::superpoints::compute_superpoints;

fn rows3(flat: &[f64], what: &str) -> Result<Vec<[f64; 3]>> {
    if flat.len() % 3 != 0 {
        return Err(Error::structural(format!("{what} length {} is not a multiple of 3", flat.len())));
    }
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn edge_list(edges: &[i64], node_count: usize) -> Result<Vec<(u32, u32)>> {
    if edges.len() % 2 != 0 {
        return Err(Error::structural("edge array length is odd"));
    }
    edges
        .chunks_exact(2)
        .map(|e| {
            let ok = |v: i64| u32::try_from(v).ok().filter(|&v| (v as usize) < node_count);
            match (ok(e[0]), ok(e[1])) {
                (Some(u), Some(v)) => Ok((u.min(v), u.max(v))),
                _ => Err(Error::structural(format!("edge ({}, {}) outside 0..{node_count}", e[0], e[1]))),
            }
        })
        .collect()
}

fn sorted_graph(node_count: usize, edges: Vec<(u32, u32)>, values: &[f64]) -> Result<(AdjacencyGraph, Vec<f64>)> {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by_key(|&i| edges[i]);
    let graph = AdjacencyGraph::from_edges(node_count, order.iter().map(|&i| edges[i]).collect())?;
    Ok((graph, order.iter().map(|&i| values[i]).collect()))
}

fn to_labels(values: &[i32], what: &str) -> Result<Vec<u32>> {
    values
        .iter()
        .map(|&v| match v {
            -1 => Ok(IGNORE),
            v if v >= 0 => Ok(v as u32),
            v => Err(Error::structural(format!("{what} label {v} is negative"))),
        })
        .collect()
}

/// Result of [`solve_gmp_arrays`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySolution {
    pub component_ids: Vec<u32>,
    pub values: Vec<ComponentValue>,
    pub energy: f64,
}

/// Clusters N nodes from positions (N x 3), class scores (N x C), edges
/// (E x 2) and per-edge agreements.
#[allow(clippy::too_many_arguments)]
pub fn solve_gmp_arrays(
    positions: &[f64],
    class_scores: &[f64],
    num_classes: usize,
    edges: &[i64],
    agreements: &[f64],
    lambda: f64,
    eta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<ArraySolution> {
    let positions = rows3(positions, "positions")?;
    let n = positions.len();
    let edge_pairs = edge_list(edges, n)?;
    if agreements.len() != edge_pairs.len() {
        return Err(Error::structural(format!("{} agreements for {} edges", agreements.len(), edge_pairs.len())));
    }
    let signal = NodeSignal::new(num_classes, class_scores.to_vec(), positions)?;
    let (mut graph, agreements) = sorted_graph(n, edge_pairs, agreements)?;
    graph.set_agreements(agreements)?;
    let params = ClusteringParams { lambda, eta, epsilon, seed, ..Default::default() };
    let weighted = apply_weights(&graph, epsilon)?;
    let part = solve_gmp(&signal, &weighted, &params)?;
    Ok(ArraySolution {
        component_ids: part.assignment,
        values: part.components.into_iter().map(|c| c.value).collect(),
        energy: part.energy,
    })
}

/// Panoptic metrics from flat label arrays; classes are named by their id.
pub fn panoptic_quality_arrays(pred_class: &[i32], pred_object: &[i32], gt_class: &[i32], gt_object: &[i32], is_thing: &[bool]) -> Result<PanopticMetrics> {
    let table = ClassTable::new(
        is_thing
            .iter()
            .enumerate()
            .map(|(c, &thing)| ClassEntry { name: c.to_string(), thing })
            .collect(),
    )?;
    let pred = PanopticLabels {
        class: to_labels(pred_class, "predicted class")?,
        object: to_labels(pred_object, "predicted object")?,
    };
    let mut gt = PointCloud::new(vec![[0.0; 3]; gt_class.len()]);
    gt.semantic = Some(to_labels(gt_class, "true class")?);
    gt.object = Some(to_labels(gt_object, "true object")?);
    panoptic_quality(&pred, &gt, &table)
}

/// Superpoint assignment of N points from features (N x dim), positions
/// (N x 3) and point edges (E x 2).
pub fn compute_superpoints_arrays(features: &[f64], dim: usize, positions: &[f64], edges: &[i64], regularization: f64) -> Result<Vec<u32>> {
    let positions = rows3(positions, "positions")?;
    let n = positions.len();
    let mut pairs = edge_list(edges, n)?;
    pairs.sort_unstable();
    pairs.dedup();
    let graph = AdjacencyGraph::from_edges(n, pairs)?;
    Ok(compute_superpoints(features, dim, &positions, &graph, regularization)?.point_to_superpoint)
}
