//! From class scores and object agreements to panoptic labels.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::cutpursuit::{solve_gmp, Partition};
use crate::domain::{ClassTable, ClusteringParams, NodeSignal, PanopticLabels, PointCloud};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, superpoint_adjacency, AdjacencyGraph};
use crate::metrics::panoptic_quality;
use crate::scenegen::oracle_signals;
use crate::superpoints::{compute_superpoints, default_features, majority_labels, propagate_to_points, superpoint_agreements, SuperpointPartition};

/// Cost of cutting an edge with agreement `a`: `a / (1 - a + epsilon)`.
/// Agreements are clamped to [0, 1].
pub fn edge_weight(a: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if a.is_nan() {
        return Err(Error::numeric("agreement is NaN"));
    }
    let a = a.clamp(0.0, 1.0);
    Ok(a / (1.0 - a + epsilon))
}

/// Copy of `graph` whose weights are derived from its agreements.
pub fn apply_weights(graph: &AdjacencyGraph, epsilon: f64) -> Result<AdjacencyGraph> {
    let agreements = graph
        .agreements()
        .ok_or_else(|| Error::structural("graph carries no agreements"))?;
    let weights = agreements.iter().map(|&a| edge_weight(a, epsilon)).collect::<Result<Vec<_>>>()?;
    let mut out = graph.clone();
    out.set_weights(weights)?;
    Ok(out)
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u32
}

/// Labels every node with the argmax class of its component (ties to the
/// lower class). Thing components get fresh object ids `C, C+1, ...` in
/// component order; stuff components share the stuff index of their class.
pub fn clusters_to_panoptic(partition: &Partition, table: &ClassTable) -> PanopticLabels {
    let mut next = table.first_thing_index();
    let comp_labels: Vec<(u32, u32)> = partition
        .components
        .iter()
        .map(|comp| {
            let class = argmax(&comp.value.class);
            if table.is_thing(class) {
                next += 1;
                (class, next - 1)
            } else {
                (class, table.stuff_index(class))
            }
        })
        .collect();
    PanopticLabels {
        class: partition.assignment.iter().map(|&c| comp_labels[c as usize].0).collect(),
        object: partition.assignment.iter().map(|&c| comp_labels[c as usize].1).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    /// Row-major per-point class probabilities, averaged over superpoints.
    PerPoint(Vec<f64>),
    /// One-hot class of each superpoint's majority object, mixed with the
    /// uniform distribution by `noise`.
    Oracle { noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgreementSource {
    /// Agreements on point edges, averaged over the point edges joining two
    /// superpoints. Superpoint edges without any get 0.
    PointEdges(Vec<(u32, u32, f64)>),
    /// True superpoint agreements, each replaced by a uniform draw with
    /// probability `corruption`.
    Oracle { corruption: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: ClusteringParams,
    pub table: ClassTable,
    pub knn: usize,
    pub superpoint_regularization: f64,
    /// Precomputed point-to-superpoint assignment; computed when `None`.
    pub superpoints: Option<Vec<u32>>,
    pub scores: ScoreSource,
    pub agreements: AgreementSource,
}

impl PipelineConfig {
    pub fn oracle(table: ClassTable) -> Self {
        Self {
            params: ClusteringParams::default(),
            table,
            knn: 10,
            superpoint_regularization: DEFAULT_SUPERPOINT_REGULARIZATION,
            superpoints: None,
            scores: ScoreSource::Oracle { noise: 0.0 },
            agreements: AgreementSource::Oracle { corruption: 0.0, seed: 0 },
        }
    }
}

/// Gives roughly one superpoint per 30 points on the default synthetic scenes.
pub const DEFAULT_SUPERPOINT_REGULARIZATION: f64 = 0.025;

/// Wall time per pipeline stage in milliseconds, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings(pub Vec<(String, f64)>);

impl StageTimings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((stage.to_string(), start.elapsed().as_secs_f64() * 1e3));
        out
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, ms)| ms).sum()
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.0.iter().find(|(s, _)| s == stage).map(|(_, ms)| *ms)
    }
}

impl Serialize for StageTimings {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (stage, ms) in &self.0 {
            map.serialize_entry(stage, ms)?;
        }
        map.end()
    }
}

/// A scene reduced to its superpoint graph, ready to be clustered with any
/// parameters.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub cloud: PointCloud,
    pub superpoints: SuperpointPartition,
    /// Superpoint adjacency carrying agreements.
    pub graph: AdjacencyGraph,
    pub signal: NodeSignal,
    pub timings: StageTimings,
}

fn averaged_scores(sp: &SuperpointPartition, scores: &[f64], c: usize) -> Result<Vec<f64>> {
    if scores.len() != sp.point_count() * c {
        return Err(Error::structural(format!(
            "{} class scores for {} points and {c} classes",
            scores.len(),
            sp.point_count()
        )));
    }
    let mut out = Vec::with_capacity(sp.len() * c);
    for m in &sp.members {
        let mut row = vec![0.0; c];
        for &p in m {
            for (k, v) in row.iter_mut().enumerate() {
                *v += scores[p as usize * c + k];
            }
        }
        out.extend(row.into_iter().map(|v| v / m.len() as f64));
    }
    Ok(out)
}

fn averaged_agreements(sp: &SuperpointPartition, graph: &AdjacencyGraph, point_edges: &[(u32, u32, f64)]) -> Result<Vec<f64>> {
    let index: HashMap<(u32, u32), usize> = graph.edges().iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut sum = vec![0.0; graph.edge_count()];
    let mut count = vec![0usize; graph.edge_count()];
    let n = sp.point_count() as u32;
    for &(p, q, a) in point_edges {
        if p >= n || q >= n {
            return Err(Error::structural(format!("agreement on edge ({p}, {q}) beyond {n} points")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::numeric(format!("agreement {a} on edge ({p}, {q}) outside [0, 1]")));
        }
        let (s, t) = (sp.point_to_superpoint[p as usize], sp.point_to_superpoint[q as usize]);
        if s == t {
            continue;
        }
        if let Some(&e) = index.get(&(s.min(t), s.max(t))) {
            sum[e] += a;
            count[e] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect())
}

/// Oversegments the cloud and builds the superpoint signal and graph.
pub fn prepare_scene(cloud: &PointCloud, config: &PipelineConfig) -> Result<PreparedScene> {
    cloud.check_lengths()?;
    let mut timings = StageTimings::default();
    let point_graph = timings.time("knn", || build_knn_graph(&cloud.positions, config.knn))?;
    let mut sp = timings.time("superpoints", || match &config.superpoints {
        Some(assignment) => SuperpointPartition::from_assignment(assignment, &cloud.positions),
        None => {
            let (features, dim) = default_features(cloud);
            compute_superpoints(&features, dim, &cloud.positions, &point_graph, config.superpoint_regularization)
        }
    })?;
    let mut graph = timings.time("adjacency", || superpoint_adjacency(&sp.point_to_superpoint, sp.len(), &point_graph))?;
    let needs_truth = matches!(config.scores, ScoreSource::Oracle { .. }) || matches!(config.agreements, AgreementSource::Oracle { .. });
    if needs_truth {
        timings.time("labels", || majority_labels(&mut sp, cloud))?;
    }
    let c = config.table.num_classes();
    let (signal, agreements) = timings.time("signals", || -> Result<(NodeSignal, Vec<f64>)> {
        let oracle = if needs_truth {
            let truth = superpoint_agreements(&sp, &graph, cloud)?;
            let (noise, corruption, seed) = match (&config.scores, &config.agreements) {
                (ScoreSource::Oracle { noise }, AgreementSource::Oracle { corruption, seed }) => (*noise, *corruption, *seed),
                (ScoreSource::Oracle { noise }, _) => (*noise, 0.0, 0),
                (_, AgreementSource::Oracle { corruption, seed }) => (0.0, *corruption, *seed),
                _ => unreachable!(),
            };
            Some(oracle_signals(&sp, &graph, &truth, &config.table, noise, corruption, seed)?)
        } else {
            None
        };
        let signal = match &config.scores {
            ScoreSource::PerPoint(scores) => NodeSignal::new(c, averaged_scores(&sp, scores, c)?, sp.centroids.clone())?,
            ScoreSource::Oracle { .. } => oracle.as_ref().unwrap().signal.clone(),
        };
        let agreements = match &config.agreements {
            AgreementSource::PointEdges(edges) => averaged_agreements(&sp, &graph, edges)?,
            AgreementSource::Oracle { .. } => oracle.unwrap().agreements,
        };
        Ok((signal, agreements))
    })?;
    graph.set_agreements(agreements)?;
    Ok(PreparedScene {
        cloud: cloud.clone(),
        superpoints: sp,
        graph,
        signal,
        timings,
    })
}

/// Clusters a prepared scene; returns the superpoint partition and the point labels.
pub fn cluster_scene(scene: &PreparedScene, params: &ClusteringParams, table: &ClassTable) -> Result<(Partition, PanopticLabels)> {
    let weighted = apply_weights(&scene.graph, params.epsilon)?;
    let partition = solve_gmp(&scene.signal, &weighted, params)?;
    let labels = propagate_to_points(&scene.superpoints, &clusters_to_panoptic(&partition, table))?;
    Ok((partition, labels))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub labels: PanopticLabels,
    pub superpoints: SuperpointPartition,
    pub graph: AdjacencyGraph,
    pub partition: Partition,
    pub timings: StageTimings,
    /// Wall time of the whole run in milliseconds.
    pub total_ms: f64,
}

/// Superpoints, adjacency, signals, weights, cut pursuit and conversion back
/// to point labels.
pub fn run_pipeline(cloud: &PointCloud, config: &PipelineConfig) -> Result<PipelineOutput> {
    let start = Instant::now();
    let scene = prepare_scene(cloud, config)?;
    let mut timings = scene.timings.clone();
    let weighted = timings.time("weights", || apply_weights(&scene.graph, config.params.epsilon))?;
    let partition = timings.time("solve", || solve_gmp(&scene.signal, &weighted, &config.params))?;
    let labels = timings.time("convert", || {
        propagate_to_points(&scene.superpoints, &clusters_to_panoptic(&partition, &config.table))
    })?;
    Ok(PipelineOutput {
        labels,
        superpoints: scene.superpoints,
        graph: weighted,
        partition,
        timings,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lambda: vec![5.0, 10.0, 20.0, 40.0],
            eta: vec![0.025, 0.05, 0.1],
            epsilon: vec![1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub lambda: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub mean_pq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: GridCell,
    pub table: Vec<GridCell>,
}

/// Mean PQ of every grid cell over the scenes. The best cell maximizes it,
/// ties going to the lexicographically smallest `(lambda, eta, epsilon)`.
pub fn grid_search(scenes: &[PreparedScene], grid: &Grid, base: &ClusteringParams, table: &ClassTable) -> Result<GridResult> {
    if grid.lambda.is_empty() || grid.eta.is_empty() || grid.epsilon.is_empty() {
        return Err(Error::parameter("empty parameter grid"));
    }
    if scenes.is_empty() {
        return Err(Error::parameter("no scenes to tune on"));
    }
    let mut cells = Vec::new();
    for &lambda in &grid.lambda {
        for &eta in &grid.eta {
            for &epsilon in &grid.epsilon {
                cells.push(ClusteringParams { lambda, eta, epsilon, ..*base });
            }
        }
    }
    for cell in &cells {
        cell.validate()?;
        edge_weight(0.0, cell.epsilon)?;
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..scenes.len()).map(move |s| (c, s))).collect();
    let pq: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let (_, labels) = cluster_scene(&scenes[s], &cells[c], table)?;
            Ok(panoptic_quality(&labels, &scenes[s].cloud, table)?.pq)
        })
        .collect::<Result<_>>()?;
    let table: Vec<GridCell> = cells
        .iter()
        .enumerate()
        .map(|(c, p)| GridCell {
            lambda: p.lambda,
            eta: p.eta,
            epsilon: p.epsilon,
            mean_pq: pq[c * scenes.len()..(c + 1) * scenes.len()].iter().sum::<f64>() / scenes.len() as f64,
        })
        .collect();
    let key = |c: &GridCell| (c.lambda, c.eta, c.epsilon);
    let best = table
        .iter()
        .reduce(|a, b| {
            let better = b.mean_pq > a.mean_pq || (b.mean_pq == a.mean_pq && key(b).partial_cmp(&key(a)) == Some(std::cmp::Ordering::Less));
            if better {
                b
            } else {
                a
            }
        })
        .unwrap()
        .clone();
    Ok(GridResult { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutpursuit::Partition;

    fn table() -> ClassTable {
        ClassTable::from_pairs([("wall", false), ("chair", true), ("table", true)]).unwrap()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(edge_weight(0.0, 1e-4).unwrap(), 0.0);
        assert!((edge_weight(1.0, 1e-4).unwrap() - 1e4).abs() < 1e-9);
        assert!(matches!(edge_weight(0.5, 0.0), Err(Error::Parameter(_))));
        assert_eq!(edge_weight(1.5, 1e-4).unwrap(), edge_weight(1.0, 1e-4).unwrap());
    }

    #[test]
    fn weights_need_agreements() {
        let mut g = AdjacencyGraph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        assert!(matches!(apply_weights(&g, 1e-4), Err(Error::Structural(_))));
        g.set_agreements(vec![0.0, 0.0]).unwrap();
        assert_eq!(apply_weights(&g, 1e-4).unwrap().weights(), &[0.0, 0.0]);
    }

    #[test]
    fn conversion_rules() {
        let x = NodeSignal::new(
            3,
            vec![0.1, 0.8, 0.1, 0.7, 0.2, 0.1, 0.5, 0.5, 0.0, 0.9, 0.05, 0.05, 0.0, 0.0, 1.0],
            vec![[0.0; 3]; 5],
        )
        .unwrap();
        let part = Partition::from_assignment(vec![0, 1, 2, 3, 4], &x).unwrap();
        let labels = clusters_to_panoptic(&part, &table());
        // chair, wall, tie (wall), wall, table
        assert_eq!(labels.class, vec![1, 0, 0, 0, 2]);
        assert_eq!(labels.object, vec![3, 0, 0, 0, 4]);
        labels.check(&table()).unwrap();
    }
}
