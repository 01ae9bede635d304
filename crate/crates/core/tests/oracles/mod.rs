//! Independent reference computations for the solver and metric tests.
//!
//! Nothing here calls into the solver's internals: energies are re-summed from
//! first principles and optima are found by exhaustive enumeration.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supercut::{AdjacencyGraph, NodeSignal};

/// Objective of a labeling with optimal (mean) values, computed directly.
pub fn brute_energy(x: &NodeSignal, graph: &AdjacencyGraph, labels: &[u32], lambda: f64, eta: f64) -> f64 {
    let n = x.len();
    let c = x.num_classes();
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut count = vec![0.0f64; k];
    let mut class = vec![vec![0.0f64; c]; k];
    let mut pos = vec![[0.0f64; 3]; k];
    for p in 0..n {
        let l = labels[p] as usize;
        count[l] += 1.0;
        for j in 0..c {
            class[l][j] += x.class_row(p)[j];
        }
        for a in 0..3 {
            pos[l][a] += x.position(p)[a];
        }
    }
    let mut total = 0.0;
    for p in 0..n {
        let l = labels[p] as usize;
        for j in 0..c {
            let xv = x.class_row(p)[j];
            if xv > 0.0 {
                let y = (class[l][j] / count[l]).max(1e-12);
                total -= xv * y.ln();
            }
        }
        for a in 0..3 {
            let d = x.position(p)[a] - pos[l][a] / count[l];
            total += eta * d * d;
        }
    }
    for (&(u, v), &w) in graph.edges().iter().zip(graph.weights()) {
        if labels[u as usize] != labels[v as usize] {
            total += lambda * w;
        }
    }
    total
}

fn blocks_connected(labels: &[u32], k: usize, adj: &[Vec<usize>]) -> bool {
    let n = labels.len();
    let mut seen = vec![false; n];
    let mut blocks_seen = vec![false; k];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let b = labels[start] as usize;
        if blocks_seen[b] {
            return false;
        }
        blocks_seen[b] = true;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] && labels[v] as usize == b {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    true
}

/// Every partition of the nodes into connected blocks, as restricted growth strings.
pub fn connected_partitions(graph: &AdjacencyGraph) -> Vec<Vec<u32>> {
    let n = graph.node_count();
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    let mut out = Vec::new();
    let mut labels = vec![0u32; n];
    fn rec(i: usize, k: u32, labels: &mut Vec<u32>, adj: &[Vec<usize>], out: &mut Vec<Vec<u32>>) {
        let n = labels.len();
        if i == n {
            if blocks_connected(labels, k as usize, adj) {
                out.push(labels.clone());
            }
            return;
        }
        for l in 0..=k {
            labels[i] = l;
            rec(i + 1, if l == k { k + 1 } else { k }, labels, adj, out);
        }
    }
    if n > 0 {
        labels[0] = 0;
        rec(1, 1, &mut labels, &adj, &mut out);
    }
    out
}

/// Global optimum over all connected partitions: `(energy, labels)`.
pub fn global_optimum(x: &NodeSignal, graph: &AdjacencyGraph, lambda: f64, eta: f64) -> (f64, Vec<u32>) {
    connected_partitions(graph)
        .into_iter()
        .map(|l| (brute_energy(x, graph, &l, lambda, eta), l))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Canonical relabeling: blocks numbered by first appearance.
pub fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Minimum of `sum_p d(x_p, y_{b(p)}) + lambda sum w [b(p) != b(q)]` over all
/// binary labelings of the whole graph.
pub fn exhaustive_binary(unary: &[(f64, f64)], graph: &AdjacencyGraph, lambda: f64) -> (f64, Vec<bool>) {
    let n = unary.len();
    let mut best = (f64::INFINITY, vec![false; n]);
    for mask in 0u64..(1 << n) {
        let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let mut e: f64 = labels.iter().zip(unary).map(|(&l, u)| if l { u.1 } else { u.0 }).sum();
        for (&(u, v), &w) in graph.edges().iter().zip(graph.weights()) {
            if labels[u as usize] != labels[v as usize] {
                e += lambda * w;
            }
        }
        if e < best.0 {
            best = (e, labels);
        }
    }
    best
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize, weight: impl Fn(&mut ChaCha8Rng) -> f64) -> AdjacencyGraph {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n as u32 {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for _ in 0..extra {
        let u = rng.random_range(0..n as u32);
        let v = rng.random_range(0..n as u32);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<(u32, u32)> = edges.into_iter().collect();
    let weights = edges.iter().map(|_| weight(rng)).collect();
    AdjacencyGraph::with_weights(n, edges, weights).unwrap()
}

/// Random probability rows (softmax of Gaussian-ish scores) and unit-cube positions.
pub fn random_signal(rng: &mut ChaCha8Rng, n: usize, c: usize) -> NodeSignal {
    let mut scores = Vec::with_capacity(n * c);
    for _ in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = raw.iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        scores.extend(e.iter().map(|v| v / s));
    }
    let pos = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    NodeSignal::new(c, scores, pos).unwrap()
}

/// A "separable" instance: blocks of nodes with one-hot classes and tight
/// positions, strong weights inside blocks and zero weights across them.
/// Returns the signal, graph and ground-truth block labels.
pub struct Separable {
    pub x: NodeSignal,
    pub graph: AdjacencyGraph,
    pub truth: Vec<u32>,
}

pub fn separable_instance(seed: u64, n: usize) -> Separable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    // contiguous blocks of 1..=4 nodes
    let mut truth = Vec::with_capacity(n);
    let mut block = 0u32;
    while truth.len() < n {
        let size = rng.random_range(1..=4).min(n - truth.len());
        truth.extend(std::iter::repeat(block).take(size));
        block += 1;
    }
    let blocks = block as usize;
    let classes: Vec<u32> = (0..blocks).map(|b| (b % c) as u32).collect();
    let centers: Vec<[f64; 3]> = (0..blocks).map(|b| [b as f64 * 2.0, rng.random(), 0.0]).collect();
    let mut pos = Vec::with_capacity(n);
    let mut node_classes = Vec::with_capacity(n);
    for &b in &truth {
        let ctr = centers[b as usize];
        pos.push([ctr[0] + rng.random_range(-0.05..0.05), ctr[1] + rng.random_range(-0.05..0.05), ctr[2]]);
        node_classes.push(classes[b as usize]);
    }
    let x = NodeSignal::one_hot(c, &node_classes, pos).unwrap();
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n as u32 {
        let u = if truth[v as usize] == truth[v as usize - 1] {
            // tree inside the block
            let first = truth.iter().position(|&t| t == truth[v as usize]).unwrap() as u32;
            rng.random_range(first..v)
        } else {
            rng.random_range(0..v)
        };
        edges.insert((u, v));
    }
    for _ in 0..n {
        let u = rng.random_range(0..n as u32);
        let v = rng.random_range(0..n as u32);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<(u32, u32)> = edges.into_iter().collect();
    let weights = edges
        .iter()
        .map(|&(u, v)| if truth[u as usize] == truth[v as usize] { 1e4 } else { 0.0 })
        .collect();
    let graph = AdjacencyGraph::with_weights(n, edges, weights).unwrap();
    Separable { x, graph, truth }
}

/// Connectivity of each block of `labels` in `graph` (BFS).
pub fn components_connected(graph: &AdjacencyGraph, labels: &[u32]) -> bool {
    let n = graph.node_count();
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    blocks_connected(labels, k, &adj)
}
