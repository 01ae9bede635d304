use super::*;

fn one_hot_signal(classes: &[u32], c: usize, positions: Vec<[f64; 3]>) -> NodeSignal {
    NodeSignal::one_hot(c, classes, positions).unwrap()
}

fn params(lambda: f64, eta: f64) -> ClusteringParams {
    ClusteringParams {
        lambda,
        eta,
        ..Default::default()
    }
}

#[test]
fn dissimilarity_examples() {
    let y = ComponentValue { class: vec![0.0, 1.0, 0.0], position: vec![1.0, 2.0, 3.0] };
    assert_eq!(dissimilarity(&[0.0, 1.0, 0.0], &[1.0, 2.0, 3.0], &y, 0.05), 0.0);

    let uniform = ComponentValue { class: vec![0.25; 4], position: vec![0.0; 3] };
    let d = dissimilarity(&[1.0, 0.0, 0.0, 0.0], &[0.0; 3], &uniform, 0.0);
    // ln 4 = 1.38629436111989061883...
    assert!((d - 1.386_294_361_119_890_6).abs() < 1e-15);

    let x = [0.2, 0.3, 0.5];
    let y = ComponentValue { class: x.to_vec(), position: vec![1.0, 0.0, 0.0] };
    let entropy: f64 = x.iter().map(|v| -v * v.ln()).sum();
    let d = dissimilarity(&x, &[0.0; 3], &y, 0.05);
    assert!((d - (entropy + 0.05)).abs() < 1e-15);
}

#[test]
fn zero_probability_is_clamped() {
    let y = ComponentValue { class: vec![1.0, 0.0], position: vec![0.0; 3] };
    let d = dissimilarity(&[0.0, 1.0], &[0.0; 3], &y, 0.0);
    assert!((d + 1e-12f64.ln()).abs() < 1e-12);
}

#[test]
fn optimal_value_examples() {
    let x = NodeSignal::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![[0.0; 3], [2.0, 4.0, 6.0]]).unwrap();
    let single = optimal_component_value(&[1], &x);
    assert_eq!(single.class, vec![0.0, 1.0]);
    assert_eq!(single.position, vec![2.0, 4.0, 6.0]);
    let both = optimal_component_value(&[0, 1], &x);
    assert_eq!(both.class, vec![0.5, 0.5]);
    assert_eq!(both.position, vec![1.0, 2.0, 3.0]);
}

#[test]
fn energy_of_trivial_partitions() {
    let pos = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let x = one_hot_signal(&[0, 1, 0], 2, pos);
    let g = AdjacencyGraph::with_weights(3, vec![(0, 1), (1, 2)], vec![0.5, 2.0]).unwrap();
    let p = params(3.0, 0.1);
    let singletons = Partition::from_assignment(vec![0, 1, 2], &x).unwrap();
    assert_eq!(energy(&singletons, &x, &g, &p).unwrap(), 3.0 * 2.5);

    let edgeless = AdjacencyGraph::from_edges(3, vec![]).unwrap();
    let whole = Partition::from_assignment(vec![0, 0, 0], &x).unwrap();
    let mean = optimal_component_value(&[0, 1, 2], &x);
    let expected: f64 = (0..3).map(|i| dissimilarity(x.class_row(i), &x.position(i), &mean, 0.1)).sum();
    assert!((energy(&whole, &x, &edgeless, &p).unwrap() - expected).abs() < 1e-12);

    let short = Partition::from_assignment(vec![0, 0], &one_hot_signal(&[0, 0], 2, vec![[0.0; 3]; 2])).unwrap();
    assert!(matches!(energy(&short, &x, &g, &p), Err(Error::Structural(_))));
}

#[test]
fn split_without_regularization_is_unary() {
    let x = one_hot_signal(&[0, 0, 0], 2, vec![[0.0; 3]; 3]);
    let g = AdjacencyGraph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
    let y0 = ComponentValue { class: vec![0.9, 0.1], position: vec![0.0; 3] };
    let y1 = ComponentValue { class: vec![0.1, 0.9], position: vec![0.0; 3] };
    let labels = binary_split(&[0, 1, 2], &g, (&y0, &y1), &x, &params(0.0, 0.0)).unwrap();
    assert_eq!(labels, vec![false; 3]);
}

#[test]
fn split_ties_take_label_zero() {
    let x = one_hot_signal(&[0, 1], 2, vec![[0.0; 3]; 2]);
    let g = AdjacencyGraph::from_edges(2, vec![]).unwrap();
    let y = ComponentValue { class: vec![0.5, 0.5], position: vec![0.0; 3] };
    let labels = binary_split(&[0, 1], &g, (&y, &y.clone()), &x, &params(1.0, 0.0)).unwrap();
    assert_eq!(labels, vec![false, false]);
}

#[test]
fn split_with_heavy_edge_enumerated() {
    // node 0 prefers y0, node 1 prefers y1; the edge forbids disagreement
    let x = NodeSignal::new(2, vec![0.8, 0.2, 0.1, 0.9], vec![[0.0; 3]; 2]).unwrap();
    let g = AdjacencyGraph::with_weights(2, vec![(0, 1)], vec![1e6]).unwrap();
    let y0 = ComponentValue { class: vec![0.8, 0.2], position: vec![0.0; 3] };
    let y1 = ComponentValue { class: vec![0.1, 0.9], position: vec![0.0; 3] };
    let p = params(1.0, 0.0);
    let u = |i: usize, y: &ComponentValue| dissimilarity(x.class_row(i), &[0.0; 3], y, 0.0);
    let all0 = u(0, &y0) + u(1, &y0);
    let all1 = u(0, &y1) + u(1, &y1);
    let expected = if all1 < all0 { vec![true, true] } else { vec![false, false] };
    assert_eq!(binary_split(&[0, 1], &g, (&y0, &y1), &x, &p).unwrap(), expected);
}

#[test]
fn zero_lambda_gives_runs_of_equal_rows() {
    let pos = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let x = one_hot_signal(&[1, 1, 1, 0], 2, pos);
    let g = AdjacencyGraph::from_edges(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let part = solve_gmp(&x, &g, &params(0.0, 0.05)).unwrap();
    assert_eq!(part.assignment, vec![0, 0, 1, 2]);
    assert_eq!(part.energy, 0.0);
}

#[test]
fn empty_graph_is_rejected() {
    let x = NodeSignal::new(1, vec![], vec![]).unwrap();
    let g = AdjacencyGraph::from_edges(0, vec![]).unwrap();
    assert!(matches!(solve_gmp(&x, &g, &params(1.0, 0.0)), Err(Error::Parameter(_))));
}

#[test]
fn quadratic_solver_separates_disconnected_blobs() {
    let feats = vec![0.0, 0.0, 0.0, 5.0, 5.0, 5.0];
    let g = AdjacencyGraph::from_edges(6, vec![(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
    for lambda in [1e-3, 1.0, 1e3] {
        let p = ClusteringParams { lambda, eta: 1.0, ..Default::default() };
        let part = solve_quadratic(&feats, 1, &g, &p).unwrap();
        assert_eq!(part.assignment, vec![0, 0, 0, 1, 1, 1]);
    }
}
