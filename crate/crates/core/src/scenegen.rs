//! Deterministic synthetic scenes with panoptic ground truth.
//!
//! Objects are jittered boxes and spheres floating `gap` above a flat stuff
//! ground, laid out on a jittered grid. Per-point jitter is normal with
//! standard deviation `jitter / 2`, truncated at `jitter`, so any gap larger
//! than `2 * jitter` keeps object surfaces and the ground geometrically apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{ClassTable, NodeSignal, PointCloud, IGNORE};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::superpoints::SuperpointPartition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_objects: usize,
    /// Class 0 is the ground and must be stuff.
    pub classes: ClassTable,
    pub min_points_per_object: usize,
    pub max_points_per_object: usize,
    /// Ground points per square meter.
    pub ground_density: f64,
    /// Margin of ground around the object grid, meters.
    pub ground_margin: f64,
    pub jitter: f64,
    pub spacing: f64,
    pub placement_jitter: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub gap: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 10,
            classes: ClassTable::from_pairs([("ground", false), ("chair", true), ("table", true), ("lamp", true), ("crate", true)])
                .expect("default classes"),
            min_points_per_object: 150,
            max_points_per_object: 300,
            ground_density: 60.0,
            ground_margin: 0.5,
            jitter: 0.01,
            spacing: 1.5,
            placement_jitter: 0.1,
            min_size: 0.3,
            max_size: 0.8,
            gap: 0.15,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.spacing) || !finite_pos(self.ground_density) || !finite_pos(self.min_size) {
            return Err(Error::parameter("spacing, ground density and sizes must be positive"));
        }
        if !(self.jitter >= 0.0 && self.placement_jitter >= 0.0 && self.ground_margin >= 0.0) {
            return Err(Error::parameter("jitters and margin must be nonnegative"));
        }
        if self.gap <= 2.0 * self.jitter {
            return Err(Error::parameter(format!("gap {} must exceed twice the jitter {}", self.gap, self.jitter)));
        }
        if self.min_size > self.max_size || self.min_points_per_object == 0 || self.min_points_per_object > self.max_points_per_object {
            return Err(Error::parameter("empty size or point-count range"));
        }
        if self.classes.is_thing(0) {
            return Err(Error::parameter("class 0 must be the stuff ground"));
        }
        if self.n_objects > 0 && !(0..self.classes.num_classes() as u32).any(|c| self.classes.is_thing(c)) {
            return Err(Error::parameter("objects requested but the class table has no thing class"));
        }
        if self.max_size + 2.0 * self.placement_jitter + self.gap > self.spacing {
            return Err(Error::parameter(format!(
                "objects up to {} m with placement jitter {} and gap {} do not fit a {} m grid",
                self.max_size, self.placement_jitter, self.gap, self.spacing
            )));
        }
        Ok(())
    }

    fn grid_side(&self) -> usize {
        (self.n_objects as f64).sqrt().ceil().max(1.0) as usize
    }
}

struct Jitter {
    normal: Normal<f64>,
    bound: f64,
}

impl Jitter {
    fn new(sigma: f64) -> Self {
        Self {
            normal: Normal::new(0.0, sigma / 2.0).expect("finite jitter"),
            bound: sigma,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.bound == 0.0 {
            return 0.0;
        }
        loop {
            let v = self.normal.sample(rng);
            if v.abs() <= self.bound {
                return v;
            }
        }
    }
}

fn hsv_color(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

fn object_color(i: usize) -> [u8; 3] {
    let h = (i as f64 * 0.618_033_988_749_895).fract();
    let v = if i % 2 == 0 { 0.95 } else { 0.7 };
    hsv_color(h, 0.85, v)
}

fn unit_sphere_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn box_surface_point(rng: &mut ChaCha8Rng, half: [f64; 3]) -> [f64; 3] {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 0;
    while axis < 2 && pick >= areas[axis] {
        pick -= areas[axis];
        axis += 1;
    }
    let mut p = [0.0; 3];
    for (a, v) in p.iter_mut().enumerate() {
        *v = if a == axis {
            if rng.random_bool(0.5) { half[a] } else { -half[a] }
        } else {
            rng.random_range(-half[a]..=half[a])
        };
    }
    p
}

/// Generates a labeled scene. Thing objects get ids `C + i`; the ground is
/// stuff class 0 with object id 0.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Jitter::new(spec.jitter);
    let c = spec.classes.num_classes() as u32;
    let things: Vec<u32> = (0..c).filter(|&k| spec.classes.is_thing(k)).collect();
    let side = spec.grid_side();
    let extent = side as f64 * spec.spacing + 2.0 * spec.ground_margin;

    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut semantic = Vec::new();
    let mut object = Vec::new();

    let ground_points = (spec.ground_density * extent * extent).round() as usize;
    for _ in 0..ground_points {
        let x = rng.random_range(0.0..extent) - spec.ground_margin;
        let y = rng.random_range(0.0..extent) - spec.ground_margin;
        positions.push([x, y, jitter.sample(&mut rng)]);
        let shade = 120 + rng.random_range(0..16u8);
        colors.push([shade, shade, shade]);
        semantic.push(0);
        object.push(0);
    }

    for i in 0..spec.n_objects {
        let class = things[rng.random_range(0..things.len())];
        let (gx, gy) = ((i % side) as f64, (i / side) as f64);
        let cx = (gx + 0.5) * spec.spacing + rng.random_range(-1.0..=1.0) * spec.placement_jitter;
        let cy = (gy + 0.5) * spec.spacing + rng.random_range(-1.0..=1.0) * spec.placement_jitter;
        let size = rng.random_range(spec.min_size..=spec.max_size);
        let count = rng.random_range(spec.min_points_per_object..=spec.max_points_per_object);
        let sphere = rng.random_bool(0.5);
        let base = object_color(i);
        let half = if sphere {
            [size / 2.0; 3]
        } else {
            [size / 2.0, rng.random_range(0.5..=1.0) * size / 2.0, rng.random_range(0.5..=1.0) * size / 2.0]
        };
        let cz = spec.gap + half[2];
        for _ in 0..count {
            let local = if sphere {
                unit_sphere_point(&mut rng).map(|v| v * half[0])
            } else {
                box_surface_point(&mut rng, half)
            };
            positions.push([
                cx + local[0] + jitter.sample(&mut rng),
                cy + local[1] + jitter.sample(&mut rng),
                cz + local[2] + jitter.sample(&mut rng),
            ]);
            colors.push(base.map(|v| v.saturating_add(rng.random_range(0..6u8))));
            semantic.push(class);
            object.push(c + i as u32);
        }
    }
    let mut cloud = PointCloud::new(positions);
    cloud.colors = Some(colors);
    cloud.semantic = Some(semantic);
    cloud.object = Some(object);
    Ok(cloud)
}

/// Inputs of the clustering oracle on a labeled superpoint graph.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSignals {
    pub signal: NodeSignal,
    /// Per-edge agreement, unknown pairs set to 0.
    pub agreements: Vec<f64>,
    /// Which edges received a random agreement.
    pub corrupted: Vec<bool>,
}

/// One-hot classes of the majority objects mixed with the uniform
/// distribution by `class_noise`, and true agreements each replaced by a
/// uniform draw with probability `agreement_noise`.
pub fn oracle_signals(
    sp: &SuperpointPartition,
    graph: &AdjacencyGraph,
    true_agreements: &[Option<f64>],
    table: &ClassTable,
    class_noise: f64,
    agreement_noise: f64,
    seed: u64,
) -> Result<OracleSignals> {
    if !(0.0..=1.0).contains(&class_noise) || !(0.0..=1.0).contains(&agreement_noise) {
        return Err(Error::parameter("noise levels must lie in [0, 1]"));
    }
    if graph.node_count() != sp.len() || true_agreements.len() != graph.edge_count() {
        return Err(Error::structural("graph, superpoints and agreements disagree"));
    }
    let c = table.num_classes();
    let mut scores = Vec::with_capacity(sp.len() * c);
    for &class in &sp.object_class {
        let row = (0..c as u32).map(|k| {
            if class == IGNORE {
                1.0 / c as f64
            } else {
                let one_hot = if k == class { 1.0 } else { 0.0 };
                (1.0 - class_noise) * one_hot + class_noise / c as f64
            }
        });
        scores.extend(row);
    }
    let signal = NodeSignal::new(c, scores, sp.centroids.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreements = Vec::with_capacity(graph.edge_count());
    let mut corrupted = Vec::with_capacity(graph.edge_count());
    for a in true_agreements {
        let flip = agreement_noise > 0.0 && rng.random_bool(agreement_noise);
        let draw: f64 = rng.random_range(0.0..=1.0);
        corrupted.push(flip);
        agreements.push(if flip { draw } else { a.unwrap_or(0.0) });
    }
    Ok(OracleSignals { signal, agreements, corrupted })
}

/// Lattice stand-in for a large superpoint graph: a `side³` grid with the
/// 18-neighborhood, cut into cubic blocks of `block` nodes per side, each block
/// an object of a random class. Class rows are noisy one-hots, agreements are
/// 1 inside blocks and 0 across, each perturbed by up to `noise`.
pub fn lattice_instance(side: usize, block: usize, num_classes: usize, noise: f64, seed: u64) -> Result<(NodeSignal, AdjacencyGraph, Vec<f64>)> {
    if side < 2 || block == 0 || num_classes == 0 || !(0.0..=1.0).contains(&noise) {
        return Err(Error::parameter("lattice needs side >= 2, block >= 1, classes >= 1 and noise in [0, 1]"));
    }
    let n = side * side * side;
    if n > u32::MAX as usize {
        return Err(Error::parameter("lattice too large"));
    }
    let id = |x: usize, y: usize, z: usize| ((z * side + y) * side + x) as u32;
    let blocks_per_side = side.div_ceil(block);
    let block_of = |x: usize, y: usize, z: usize| ((z / block) * blocks_per_side + y / block) * blocks_per_side + x / block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_class: Vec<usize> = (0..blocks_per_side.pow(3)).map(|_| rng.random_range(0..num_classes)).collect();

    let mut scores = Vec::with_capacity(n * num_classes);
    let mut positions = Vec::with_capacity(n);
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let class = block_class[block_of(x, y, z)];
                let mut row: Vec<f64> = (0..num_classes).map(|k| if k == class { 1.0 } else { 0.0 }).collect();
                if noise > 0.0 {
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (1.0 - noise) * *v + noise * rng.random::<f64>();
                        total += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= total);
                }
                scores.extend(row);
                positions.push([x as f64, y as f64, z as f64]);
            }
        }
    }
    // forward half of the 18-neighborhood
    let offsets: Vec<[i64; 3]> = (-1..=1i64)
        .flat_map(|dz| (-1..=1i64).flat_map(move |dy| (-1..=1i64).map(move |dx| [dx, dy, dz])))
        .filter(|o| {
            let nonzero = o.iter().filter(|&&v| v != 0).count();
            (1..=2).contains(&nonzero) && (o[2], o[1], o[0]) > (0, 0, 0)
        })
        .collect();
    let mut edges = Vec::with_capacity(n * offsets.len());
    let mut agreements = Vec::with_capacity(n * offsets.len());
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                for o in &offsets {
                    let (nx, ny, nz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= side as i64 || ny >= side as i64 || nz >= side as i64 {
                        continue;
                    }
                    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                    let (u, v) = (id(x, y, z), id(nx, ny, nz));
                    let same = block_of(x, y, z) == block_of(nx, ny, nz);
                    let base = if same { 1.0 } else { 0.0 };
                    let a: f64 = if noise > 0.0 { (base + noise * rng.random_range(-1.0..1.0f64)).clamp(0.0, 1.0) } else { base };
                    edges.push((u.min(v), u.max(v)));
                    agreements.push(a);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_unstable_by_key(|&i| edges[i]);
    let edges: Vec<(u32, u32)> = order.iter().map(|&i| edges[i]).collect();
    let agreements: Vec<f64> = order.iter().map(|&i| agreements[i]).collect();
    let signal = NodeSignal::new(num_classes, scores, positions)?;
    let graph = AdjacencyGraph::from_edges(n, edges)?;
    Ok((signal, graph, agreements))
}
