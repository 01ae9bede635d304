//! Generalized minimal partition solver.
//!
//! Finds a piecewise-constant approximation `y` of a node signal `x` that
//! minimizes
//!
//! ```text
//! sum_p d(x_p, y_p) + lambda * sum_{(p,q)} w_pq [y_p != y_q]
//! d(x, y) = H(y_class, x_class) + eta * |x_pos - y_pos|^2
//! ```
//!
//! with an l0 cut-pursuit scheme: components are split with exact binary
//! min-cuts (run concurrently over components) and greedily merged back.

mod maxflow;
mod observations;
mod solver;

use std::collections::HashMap;

pub use observations::{dissimilarity, ComponentValue};

pub(crate) use observations::{Observations, Stats};

use crate::domain::{ClusteringParams, NodeSignal};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use maxflow::MaxFlow;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Node ids, ascending.
    pub members: Vec<u32>,
    pub value: ComponentValue,
}

/// Constant components of a solution, ordered by their smallest node.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignment: Vec<u32>,
    pub components: Vec<Component>,
    /// Objective value of this state.
    pub energy: f64,
    /// Objective after initialization and after every accepted outer round.
    pub energy_history: Vec<f64>,
    pub iterations: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Partition with the given assignment and optimal component values.
    /// Component ids must be dense; the energy is left at zero.
    pub fn from_assignment(assignment: Vec<u32>, x: &NodeSignal) -> Result<Self> {
        if assignment.len() != x.len() {
            return Err(Error::structural("assignment length differs from node count"));
        }
        let count = assignment.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); count];
        for (p, &c) in assignment.iter().enumerate() {
            members[c as usize].push(p as u32);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(Error::structural("component ids are not dense"));
        }
        let components = members
            .into_iter()
            .map(|m| Component {
                value: optimal_component_value(&m, x),
                members: m,
            })
            .collect();
        Ok(Self {
            assignment,
            components,
            energy: 0.0,
            energy_history: Vec::new(),
            iterations: 0,
        })
    }

    fn from_segmentation(seg: solver::Segmentation) -> Self {
        let components = seg
            .members
            .into_iter()
            .zip(seg.values)
            .map(|(members, value)| Component { members, value })
            .collect();
        Self {
            assignment: seg.assignment,
            components,
            energy: seg.energy,
            energy_history: seg.history,
            iterations: seg.iterations,
        }
    }
}

fn observations<'a>(x: &'a NodeSignal, eta: f64) -> Observations<'a> {
    Observations::new(x.class_scores(), x.num_classes(), x.positions().as_flattened(), 3, eta)
}

/// Mean class distribution and centroid of `members`, the minimizer of the
/// summed dissimilarity over the component. Panics on an empty set.
pub fn optimal_component_value(members: &[u32], x: &NodeSignal) -> ComponentValue {
    assert!(!members.is_empty(), "component value of an empty set");
    Stats::of(&observations(x, 0.0), members).value()
}

/// Objective value of a partition.
pub fn energy(partition: &Partition, x: &NodeSignal, graph: &AdjacencyGraph, params: &ClusteringParams) -> Result<f64> {
    if partition.assignment.len() != graph.node_count() || x.len() != graph.node_count() {
        return Err(Error::structural(format!(
            "partition covers {} nodes, signal {}, graph {}",
            partition.assignment.len(),
            x.len(),
            graph.node_count()
        )));
    }
    if let Some(c) = partition.assignment.iter().find(|&&c| c as usize >= partition.components.len()) {
        return Err(Error::structural(format!("assignment references missing component {c}")));
    }
    let values: Vec<ComponentValue> = partition.components.iter().map(|c| c.value.clone()).collect();
    let cut_weights: Vec<f64> = graph.weights().iter().map(|w| params.lambda * w).collect();
    Ok(solver::total_energy(
        &observations(x, params.eta),
        &partition.assignment,
        &values,
        graph.edges(),
        &cut_weights,
    ))
}

/// Exact minimizer of `sum_p d(x_p, y_{b(p)}) + lambda * sum w_pq [b(p) != b(q)]`
/// over binary labelings of `members`, using the edges of `graph` with both
/// endpoints in `members`. Returns `true` where candidate 1 is chosen; nodes
/// indifferent between the two take candidate 0.
pub fn binary_split(
    members: &[u32],
    graph: &AdjacencyGraph,
    candidates: (&ComponentValue, &ComponentValue),
    x: &NodeSignal,
    params: &ClusteringParams,
) -> Result<Vec<bool>> {
    if x.len() != graph.node_count() {
        return Err(Error::structural("signal and graph sizes differ"));
    }
    let local: HashMap<u32, u32> = members.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
    if local.len() != members.len() {
        return Err(Error::structural("duplicate member"));
    }
    let mut edges = Vec::new();
    for (&(u, v), &w) in graph.edges().iter().zip(graph.weights()) {
        if let (Some(&i), Some(&j)) = (local.get(&u), local.get(&v)) {
            edges.push((i, j, params.lambda * w));
        }
    }
    let obs = observations(x, params.eta);
    let mut flow = MaxFlow::new(members.len(), &edges);
    let mut terminal = vec![0.0; members.len()];
    Ok(solver::min_cut_labels(&obs, members, &mut flow, candidates, &mut terminal))
}

/// Solves the generalized minimal partition problem for a node signal.
///
/// The solver starts from the connected components of `graph`, so every
/// returned component is connected. Runs on the current rayon pool; the output
/// depends only on the inputs and `params.seed`.
pub fn solve_gmp(x: &NodeSignal, graph: &AdjacencyGraph, params: &ClusteringParams) -> Result<Partition> {
    let obs = observations(x, params.eta);
    solver::solve(&obs, graph, params).map(Partition::from_segmentation)
}

/// Same solver with a purely quadratic fidelity on arbitrary feature vectors
/// (`features` is row-major with `dim` columns). Used for oversegmentation.
pub fn solve_quadratic(features: &[f64], dim: usize, graph: &AdjacencyGraph, params: &ClusteringParams) -> Result<Partition> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::structural("feature matrix is not a whole number of rows"));
    }
    if let Some(v) = features.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite feature {v}")));
    }
    let obs = Observations::new(&[], 0, features, dim, params.eta);
    solver::solve(&obs, graph, params).map(Partition::from_segmentation)
}

#[cfg(test)]
mod tests;
