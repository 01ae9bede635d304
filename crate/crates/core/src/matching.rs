//! Linear assignment and the matching-versus-clustering scalability benchmark.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cutpursuit::solve_gmp;
use crate::domain::{ClusteringParams, NodeSignal};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::panoptic::edge_weight;

/// Cost of pairs the synthetic generator leaves unrelated.
pub const SENTINEL: f64 = 1e6;

/// Dense `rows x cols` cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::parameter("cost matrix needs at least one row and one column"));
        }
        if data.len() != rows * cols {
            return Err(Error::structural(format!("{} costs for a {rows}x{cols} matrix", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite cost {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            data.extend((0..self.rows).map(|i| self.get(i, j)));
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs, ascending by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost matching of size `min(rows, cols)` by shortest augmenting
/// paths with dual potentials.
pub fn hungarian_assign(costs: &CostMatrix) -> Result<Assignment> {
    if costs.rows > costs.cols {
        let t = hungarian_assign(&costs.transposed())?;
        let mut pairs: Vec<(usize, usize)> = t.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(Assignment { pairs, cost: t.cost });
    }
    let (n, m) = (costs.rows, costs.cols);
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let mut shortest = vec![f64::INFINITY; m];
    let mut path = vec![NONE; m];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; m];
    let mut sr = vec![false; n];
    let mut sc = vec![false; m];
    let mut remaining = vec![0usize; m];

    for cur_row in 0..n {
        shortest.fill(f64::INFINITY);
        sr.fill(false);
        sc.fill(false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = m - 1 - it;
        }
        let mut num_remaining = m;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            sr[i] = true;
            let row = &costs.data[i * m..(i + 1) * m];
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            if index == NONE {
                return Err(Error::numeric("assignment is infeasible"));
            }
            let j = remaining[index];
            sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };
        u[cur_row] += min_val;
        for r in 0..n {
            if sr[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..m {
            if sc[c] {
                v[c] -= min_val - shortest[c];
            }
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == cur_row {
                break;
            }
        }
    }
    let pairs: Vec<(usize, usize)> = col4row.iter().enumerate().map(|(i, &j)| (i, j)).collect();
    let cost = pairs.iter().map(|&(i, j)| costs.get(i, j)).sum();
    Ok(Assignment { pairs, cost })
}

/// Each proposal (column) overlaps 1 to 3 random true objects (rows) with a
/// cost uniform in (0, 1]; every other entry is [`SENTINEL`].
pub fn synthetic_cost_matrix(n_true: usize, n_pred: usize, seed: u64) -> Result<CostMatrix> {
    if n_true == 0 || n_pred == 0 {
        return Err(Error::parameter("cost matrix needs at least one row and one column"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![SENTINEL; n_true * n_pred];
    for j in 0..n_pred {
        let k = rng.random_range(1..=3usize).min(n_true);
        for i in sample(&mut rng, n_true, k) {
            data[i * n_pred + j] = 1.0 - rng.random::<f64>();
        }
    }
    CostMatrix::new(n_true, n_pred, data)
}

/// Synthetic superpoint graph of `n_objects` objects laid on a square grid,
/// each a chain of `nodes_per_object` nodes. Agreements are high inside
/// objects and low between neighbors, class rows noisy one-hots.
pub fn object_graph(n_objects: usize, nodes_per_object: usize, seed: u64) -> Result<(NodeSignal, AdjacencyGraph)> {
    if n_objects == 0 || nodes_per_object == 0 {
        return Err(Error::parameter("object graph needs objects and nodes"));
    }
    let c = 8;
    let side = (n_objects as f64).sqrt().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_objects * nodes_per_object;
    let mut scores = Vec::with_capacity(n * c);
    let mut positions = Vec::with_capacity(n);
    let mut edges = Vec::new();
    let mut agreements = Vec::new();
    let node = |o: usize, k: usize| (o * nodes_per_object + k) as u32;
    for o in 0..n_objects {
        let class = rng.random_range(0..c);
        let (gx, gy) = ((o % side) as f64 * 3.0, (o / side) as f64 * 3.0);
        for k in 0..nodes_per_object {
            let mut row: Vec<f64> = (0..c).map(|j| if j == class { 0.8 } else { 0.0 } + 0.2 * rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            scores.extend(row);
            positions.push([gx + 0.1 * k as f64, gy, 0.0]);
            if k > 0 {
                edges.push((node(o, k - 1), node(o, k)));
                agreements.push(rng.random_range(0.9..=1.0));
            }
        }
        let right = (o % side + 1 < side).then_some(o + 1);
        for neighbor in [right, Some(o + side)].into_iter().flatten().filter(|&q| q < n_objects) {
            edges.push((node(o, nodes_per_object - 1), node(neighbor, 0)));
            agreements.push(rng.random_range(0.0..0.1));
        }
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_unstable_by_key(|&i| edges[i]);
    let weights = order.iter().map(|&i| edge_weight(agreements[i], 1e-4)).collect::<Result<Vec<_>>>()?;
    let edges = order.iter().map(|&i| edges[i]).collect();
    Ok((NodeSignal::new(c, scores, positions)?, AdjacencyGraph::with_weights(n, edges, weights)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub n_true: usize,
    pub n_pred: usize,
    pub median_seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Nodes per object in the clustering half of the benchmark.
pub const BENCH_NODES_PER_OBJECT: usize = 10;

/// Median wall time of Hungarian matching on synthetic cost matrices and of
/// the clustering solver on object graphs with the same number of objects.
/// Configurations run one after another.
pub fn bench_matching(sizes: &[(usize, usize)], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::parameter("at least one repeat"));
    }
    let mut rows = Vec::new();
    for (k, &(n_true, n_pred)) in sizes.iter().enumerate() {
        let costs = synthetic_cost_matrix(n_true, n_pred, seed.wrapping_add(k as u64))?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            std::hint::black_box(hungarian_assign(&costs)?);
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            method: "hungarian".into(),
            n_true,
            n_pred,
            median_seconds: median(times),
        });

        let (x, graph) = object_graph(n_true, BENCH_NODES_PER_OBJECT, seed.wrapping_add(k as u64))?;
        let params = ClusteringParams { seed, ..Default::default() };
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            std::hint::black_box(solve_gmp(&x, &graph, &params)?);
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            method: "clustering".into(),
            n_true,
            n_pred,
            median_seconds: median(times),
        });
    }
    Ok(rows)
}
