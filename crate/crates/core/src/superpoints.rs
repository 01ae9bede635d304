//! Oversegmentation into superpoints and the labels derived from it.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cutpursuit::solve_quadratic;
use crate::domain::{ClusteringParams, PanopticLabels, PointCloud, IGNORE};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointPartition {
    pub point_to_superpoint: Vec<u32>,
    /// Point ids of each superpoint, ascending. Superpoints are ordered by
    /// their smallest point.
    pub members: Vec<Vec<u32>>,
    pub centroids: Vec<[f64; 3]>,
    /// obj(s); `IGNORE` until [`majority_labels`] runs or when every point is unlabeled.
    pub majority_object: Vec<u32>,
    /// cls(s), the most common class among the points.
    pub majority_class: Vec<u32>,
    /// Class of the points carrying obj(s).
    pub object_class: Vec<u32>,
}

impl SuperpointPartition {
    /// Builds the partition from a per-point assignment with dense ids.
    /// Superpoints are renumbered by smallest point.
    pub fn from_assignment(assignment: &[u32], positions: &[[f64; 3]]) -> Result<Self> {
        if assignment.len() != positions.len() {
            return Err(Error::structural(format!(
                "{} assignments for {} points",
                assignment.len(),
                positions.len()
            )));
        }
        if assignment.is_empty() {
            return Err(Error::parameter("empty point cloud"));
        }
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut members: Vec<Vec<u32>> = Vec::new();
        let mut point_to_superpoint = Vec::with_capacity(assignment.len());
        for (p, &a) in assignment.iter().enumerate() {
            let id = *remap.entry(a).or_insert_with(|| {
                members.push(Vec::new());
                members.len() as u32 - 1
            });
            members[id as usize].push(p as u32);
            point_to_superpoint.push(id);
        }
        let centroids = members
            .iter()
            .map(|m| {
                let mut c = [0.0; 3];
                for &p in m {
                    for a in 0..3 {
                        c[a] += positions[p as usize][a];
                    }
                }
                c.map(|v| v / m.len() as f64)
            })
            .collect();
        let k = members.len();
        Ok(Self {
            point_to_superpoint,
            members,
            centroids,
            majority_object: vec![IGNORE; k],
            majority_class: vec![IGNORE; k],
            object_class: vec![IGNORE; k],
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn size(&self, s: usize) -> usize {
        self.members[s].len()
    }

    pub fn point_count(&self) -> usize {
        self.point_to_superpoint.len()
    }
}

/// Default per-point features: position over scene diameter and RGB over 255,
/// each channel z-scored. Returns a row-major matrix and its width.
pub fn default_features(cloud: &PointCloud) -> (Vec<f64>, usize) {
    let n = cloud.len();
    let dim = if cloud.colors.is_some() { 6 } else { 3 };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diameter = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut feats = Vec::with_capacity(n * dim);
    for p in 0..n {
        feats.extend(cloud.positions[p].iter().map(|v| v / diameter));
        if let Some(colors) = &cloud.colors {
            feats.extend(colors[p].iter().map(|&v| v as f64 / 255.0));
        }
    }
    for j in 0..dim {
        let mean = (0..n).map(|p| feats[p * dim + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|p| (feats[p * dim + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for p in 0..n {
            let v = &mut feats[p * dim + j];
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
    (feats, dim)
}

/// Piecewise-constant approximation of the point features on the point graph
/// (unit edge weights); its constant components are the superpoints.
pub fn compute_superpoints(
    features: &[f64],
    dim: usize,
    positions: &[[f64; 3]],
    point_graph: &AdjacencyGraph,
    regularization: f64,
) -> Result<SuperpointPartition> {
    if positions.is_empty() || point_graph.node_count() == 0 {
        return Err(Error::parameter("empty point cloud"));
    }
    if !(regularization > 0.0 && regularization.is_finite()) {
        return Err(Error::parameter(format!("superpoint regularization must be positive, got {regularization}")));
    }
    if point_graph.node_count() != positions.len() || features.len() != positions.len() * dim {
        return Err(Error::structural("features, positions and graph disagree on the point count"));
    }
    let unit = AdjacencyGraph::from_edges(point_graph.node_count(), point_graph.edges().to_vec())?;
    let params = ClusteringParams {
        lambda: regularization,
        eta: 1.0,
        max_outer_iterations: 20,
        ..Default::default()
    };
    let part = solve_quadratic(features, dim, &unit, &params)?;
    SuperpointPartition::from_assignment(&part.assignment, positions)
}

/// Most frequent value ignoring `IGNORE`; ties go to the smallest value.
fn mode(values: impl Iterator<Item = u32>) -> u32 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for v in values.filter(|&v| v != IGNORE) {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(IGNORE, |(v, _)| v)
}

/// Sets obj(s), cls(s) and the class of obj(s) from the cloud's ground truth.
pub fn majority_labels(sp: &mut SuperpointPartition, cloud: &PointCloud) -> Result<()> {
    if cloud.len() != sp.point_count() {
        return Err(Error::structural("cloud and superpoint partition sizes differ"));
    }
    let (class, object) = cloud.labels()?;
    let labels: Vec<(u32, u32, u32)> = sp
        .members
        .par_iter()
        .map(|m| {
            let obj = mode(m.iter().map(|&p| object[p as usize]));
            let cls = mode(m.iter().map(|&p| class[p as usize]));
            let obj_cls = if obj == IGNORE {
                IGNORE
            } else {
                mode(m.iter().filter(|&&p| object[p as usize] == obj).map(|&p| class[p as usize]))
            };
            (obj, cls, obj_cls)
        })
        .collect();
    for (s, (obj, cls, obj_cls)) in labels.into_iter().enumerate() {
        sp.majority_object[s] = obj;
        sp.majority_class[s] = cls;
        sp.object_class[s] = obj_cls;
    }
    Ok(())
}

fn overlap(members: &[u32], object: &[u32], target: u32) -> (usize, usize) {
    let mut hit = 0;
    let mut labeled = 0;
    for &p in members {
        let o = object[p as usize];
        if o != IGNORE {
            labeled += 1;
            if o == target {
                hit += 1;
            }
        }
    }
    (hit, labeled)
}

/// True object agreement of two superpoints: the mean of the fraction of `s`
/// inside obj(t) and of `t` inside obj(s). Unlabeled points are left out of
/// both counts. `None` when either majority object is unknown.
pub fn true_agreement(s: usize, t: usize, sp: &SuperpointPartition, cloud: &PointCloud) -> Result<Option<f64>> {
    let (_, object) = cloud.labels()?;
    Ok(agreement_with(s, t, sp, object))
}

fn agreement_with(s: usize, t: usize, sp: &SuperpointPartition, object: &[u32]) -> Option<f64> {
    let (os, ot) = (sp.majority_object[s], sp.majority_object[t]);
    if os == IGNORE || ot == IGNORE {
        return None;
    }
    let (hs, ns) = overlap(&sp.members[s], object, ot);
    let (ht, nt) = overlap(&sp.members[t], object, os);
    Some(0.5 * (hs as f64 / ns as f64 + ht as f64 / nt as f64))
}

/// True agreements of every edge of a superpoint graph.
pub fn superpoint_agreements(sp: &SuperpointPartition, graph: &AdjacencyGraph, cloud: &PointCloud) -> Result<Vec<Option<f64>>> {
    if graph.node_count() != sp.len() {
        return Err(Error::structural("graph and superpoint counts differ"));
    }
    let (_, object) = cloud.labels()?;
    Ok(graph
        .edges()
        .par_iter()
        .map(|&(s, t)| agreement_with(s as usize, t as usize, sp, object))
        .collect())
}

/// 1 when both points belong to the same object, 0 otherwise, `None` if
/// either is unlabeled.
pub fn pointwise_agreement(p: usize, q: usize, cloud: &PointCloud) -> Result<Option<f64>> {
    let (_, object) = cloud.labels()?;
    let (a, b) = (object[p], object[q]);
    Ok((a != IGNORE && b != IGNORE).then_some(if a == b { 1.0 } else { 0.0 }))
}

/// Every point takes the labels of its superpoint.
pub fn propagate_to_points(sp: &SuperpointPartition, labels: &PanopticLabels) -> Result<PanopticLabels> {
    if labels.class.len() != sp.len() || labels.object.len() != sp.len() {
        return Err(Error::structural(format!(
            "{} superpoint labels for {} superpoints",
            labels.class.len(),
            sp.len()
        )));
    }
    let s = &sp.point_to_superpoint;
    Ok(PanopticLabels {
        class: s.iter().map(|&i| labels.class[i as usize]).collect(),
        object: s.iter().map(|&i| labels.object[i as usize]).collect(),
    })
}

/// The superpoint oracle: each superpoint labeled with obj(s) and its class.
pub fn superpoint_oracle(sp: &SuperpointPartition) -> PanopticLabels {
    PanopticLabels {
        class: sp.object_class.clone(),
        object: sp.majority_object.clone(),
    }
}
