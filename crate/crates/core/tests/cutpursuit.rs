mod oracles;

use oracles::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supercut::cutpursuit::{binary_split, energy, optimal_component_value, solve_gmp, ComponentValue, Partition};
use supercut::{AdjacencyGraph, ClusteringParams, NodeSignal};

fn params(lambda: f64, eta: f64) -> ClusteringParams {
    ClusteringParams { lambda, eta, ..Default::default() }
}

/// Projected-gradient minimization of the summed cross-entropy over the
/// simplex, an oracle independent of the closed-form mean.
fn simplex_minimizer(rows: &[Vec<f64>]) -> Vec<f64> {
    let c = rows[0].len();
    let mut y = vec![1.0 / c as f64; c];
    for _ in 0..20000 {
        // gradient of -sum_p sum_c x_pc ln y_c
        let g: Vec<f64> = (0..c).map(|j| -rows.iter().map(|r| r[j]).sum::<f64>() / y[j]).collect();
        let step = 1e-3;
        let v: Vec<f64> = (0..c).map(|j| y[j] - step * g[j]).collect();
        y = project_simplex(&v);
        y.iter_mut().for_each(|t| *t = t.max(1e-15));
    }
    y
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[test]
fn component_value_matches_numeric_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_signal(&mut rng, 5, 4);
    let rows: Vec<Vec<f64>> = (0..5).map(|p| x.class_row(p).to_vec()).collect();
    let numeric = simplex_minimizer(&rows);
    let value = optimal_component_value(&[0, 1, 2, 3, 4], &x);
    for (a, b) in value.class.iter().zip(&numeric) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    // centroid minimizes the squared distances: gradient vanishes
    for axis in 0..3 {
        let grad: f64 = (0..5).map(|p| value.position[axis] - x.position(p)[axis]).sum();
        assert!(grad.abs() < 1e-12);
    }
}

#[test]
fn energy_matches_direct_summation() {
    let x = NodeSignal::new(
        2,
        vec![0.9, 0.1, 0.7, 0.3, 0.2, 0.8, 0.4, 0.6],
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.5]],
    )
    .unwrap();
    let g = AdjacencyGraph::with_weights(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)], vec![0.5, 1.5, 2.0, 0.25]).unwrap();
    let p = params(2.0, 0.3);
    for labels in [vec![0, 0, 1, 1], vec![0, 1, 2, 3], vec![0, 0, 0, 0], vec![0, 0, 0, 1]] {
        let part = Partition::from_assignment(labels.clone(), &x).unwrap();
        let e = energy(&part, &x, &g, &p).unwrap();
        let oracle = brute_energy(&x, &g, &labels, 2.0, 0.3);
        assert!((e - oracle).abs() < 1e-12 * oracle.max(1.0), "{labels:?}: {e} vs {oracle}");
    }
}

#[test]
fn binary_split_is_exact_on_six_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..200 {
        let x = random_signal(&mut rng, 6, 3);
        let g = random_connected_graph(&mut rng, 6, 4, |r| r.random_range(0.0..2.0));
        let lambda = rng.random_range(0.0..1.5);
        let eta = rng.random_range(0.0..2.0);
        let y0 = optimal_component_value(&[0, 1, 2], &x);
        let y1 = optimal_component_value(&[3, 4, 5], &x);
        let unary: Vec<(f64, f64)> = (0..6)
            .map(|p| {
                let d = |y: &ComponentValue| supercut::cutpursuit::dissimilarity(x.class_row(p), &x.position(p), y, eta);
                (d(&y0), d(&y1))
            })
            .collect();
        let (best, _) = exhaustive_binary(&unary, &g, lambda);
        let labels = binary_split(&[0, 1, 2, 3, 4, 5], &g, (&y0, &y1), &x, &params(lambda, eta)).unwrap();
        let mut e: f64 = labels.iter().zip(&unary).map(|(&l, u)| if l { u.1 } else { u.0 }).sum();
        for (&(u, v), &w) in g.edges().iter().zip(g.weights()) {
            if labels[u as usize] != labels[v as usize] {
                e += lambda * w;
            }
        }
        assert!((e - best).abs() < 1e-9, "trial {trial}: {e} vs {best}");
    }
}

#[test]
fn eight_node_path_recovers_two_blocks() {
    let classes = [0, 0, 0, 0, 1, 1, 1, 1];
    let pos: Vec<[f64; 3]> = (0..8).map(|i| [if i < 4 { 0.0 } else { 1.0 } + 0.01 * i as f64, 0.0, 0.0]).collect();
    let x = NodeSignal::one_hot(2, &classes, pos).unwrap();
    let g = AdjacencyGraph::from_edges(8, (0..7).map(|i| (i, i + 1)).collect()).unwrap();
    let (lambda, eta) = (1.0, 0.05);
    let part = solve_gmp(&x, &g, &params(lambda, eta)).unwrap();
    let (best, labels) = global_optimum(&x, &g, lambda, eta);
    assert_eq!(canonical(&labels), vec![0, 0, 0, 0, 1, 1, 1, 1]);
    assert_eq!(part.assignment, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    assert!((part.energy - best).abs() < 1e-12 * best.max(1.0));
}

#[test]
fn large_lambda_keeps_one_component_per_connected_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_signal(&mut rng, 60, 4);
    // two connected parts: nodes 0..40 and 40..60
    let a = random_connected_graph(&mut rng, 40, 30, |r| r.random_range(0.1..1.0));
    let b = random_connected_graph(&mut rng, 20, 10, |r| r.random_range(0.1..1.0));
    let mut edges: Vec<(u32, u32)> = a.edges().to_vec();
    let mut weights = a.weights().to_vec();
    edges.extend(b.edges().iter().map(|&(u, v)| (u + 40, v + 40)));
    weights.extend_from_slice(b.weights());
    let g = AdjacencyGraph::with_weights(60, edges, weights).unwrap();
    let eta = 0.5;
    let single_fit = brute_energy(&x, &g, &vec![0; 60], 0.0, eta);
    let min_w = g.weights().iter().copied().fold(f64::INFINITY, f64::min);
    let lambda = 1.01 * single_fit / min_w;
    let part = solve_gmp(&x, &g, &params(lambda, eta)).unwrap();
    assert_eq!(part.len(), 2);
    let labels: Vec<u32> = (0..60).map(|p| if p < 40 { 0 } else { 1 }).collect();
    assert_eq!(part.assignment, labels);
    let expected = brute_energy(&x, &g, &labels, lambda, eta);
    assert!((part.energy - expected).abs() < 1e-9 * expected);
}

#[test]
fn never_worse_than_trivial_partitions_and_never_below_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..60 {
        let n = rng.random_range(2..=8);
        let x = random_signal(&mut rng, n, 3);
        let g = random_connected_graph(&mut rng, n, n, |r| r.random_range(0.0..1.0));
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let eta = rng.random_range(0.0..1.0);
        let p = ClusteringParams { lambda, eta, seed: trial, ..Default::default() };
        let part = solve_gmp(&x, &g, &p).unwrap();
        let singletons: Vec<u32> = (0..n as u32).collect();
        let trivial = brute_energy(&x, &g, &singletons, lambda, eta).min(brute_energy(&x, &g, &vec![0; n], lambda, eta));
        let (best, _) = global_optimum(&x, &g, lambda, eta);
        let tol = 1e-9 * trivial.max(1.0);
        assert!(part.energy <= trivial + tol, "trial {trial}");
        assert!(part.energy >= best - tol, "trial {trial}");
        assert!(components_connected(&g, &part.assignment));
    }
}

#[test]
fn history_is_monotone_and_values_are_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let n = rng.random_range(50..300);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut g = supercut::build_knn_graph(&pts, 5).unwrap();
        let w: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(0.0..1.0)).collect();
        g.set_weights(w).unwrap();
        let x = random_signal(&mut rng, n, 4);
        let x = NodeSignal::new(4, x.class_scores().to_vec(), pts).unwrap();
        let p = ClusteringParams { lambda: 0.5, eta: 1.0, seed: trial, ..Default::default() };
        let part = solve_gmp(&x, &g, &p).unwrap();
        for pair in part.energy_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trial {trial}: {:?}", part.energy_history);
        }
        assert_eq!(*part.energy_history.last().unwrap(), part.energy);
        assert!(components_connected(&g, &part.assignment));
        let refit = Partition::from_assignment(part.assignment.clone(), &x).unwrap();
        let e = energy(&refit, &x, &g, &p).unwrap();
        assert!((e - part.energy).abs() <= 1e-9 * part.energy);
    }
}

#[test]
fn output_is_independent_of_worker_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 2000;
    let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut g = supercut::build_knn_graph(&pts, 6).unwrap();
    let w: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(0.0..1.0)).collect();
    g.set_weights(w).unwrap();
    let x = random_signal(&mut rng, n, 5);
    let x = NodeSignal::new(5, x.class_scores().to_vec(), pts).unwrap();
    let p = ClusteringParams { lambda: 0.2, eta: 2.0, seed: 9, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_gmp(&x, &g, &p).unwrap())
    };
    let a = run(1);
    let b = run(8);
    assert_eq!(a, b);
    assert!(a.len() > 1);
}

#[test]
fn zero_lambda_leaves_only_the_entropy_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_signal(&mut rng, 40, 3);
    let g = random_connected_graph(&mut rng, 40, 40, |r| r.random_range(0.0..1.0));
    let part = solve_gmp(&x, &g, &params(0.0, 1.0)).unwrap();
    assert_eq!(part.len(), 40);
    let floor: f64 = (0..40).map(|p| x.class_row(p).iter().map(|&v| -v * v.ln()).sum::<f64>()).sum();
    assert!((part.energy - floor).abs() < 1e-12 * floor.max(1.0));
}

#[test]
fn separable_instances_recover_truth_on_an_interval() {
    for seed in 0..30 {
        let inst = separable_instance(seed, 9);
        let eta = 0.05;
        let grid: Vec<f64> = (-6..=4).map(|e| 10f64.powi(e)).collect();
        let mut optimal_at = Vec::new();
        for &lambda in &grid {
            let (best, labels) = global_optimum(&inst.x, &inst.graph, lambda, eta);
            let truth_e = brute_energy(&inst.x, &inst.graph, &inst.truth, lambda, eta);
            let truth_is_opt = canonical(&labels) == canonical(&inst.truth) && (truth_e - best).abs() < 1e-12;
            optimal_at.push(truth_is_opt);
            if truth_is_opt {
                let part = solve_gmp(&inst.x, &inst.graph, &params(lambda, eta)).unwrap();
                assert_eq!(canonical(&part.assignment), canonical(&inst.truth), "seed {seed} lambda {lambda}");
            }
        }
        // the set of lambdas where truth is optimal is a nonempty interval of the grid
        let first = optimal_at.iter().position(|&b| b).expect("truth never optimal");
        let last = optimal_at.iter().rposition(|&b| b).unwrap();
        assert!(optimal_at[first..=last].iter().all(|&b| b), "seed {seed}: {optimal_at:?}");
    }
}
