use proptest::prelude::*;
use supercut::matching::{hungarian_assign, synthetic_cost_matrix, CostMatrix, SENTINEL};

/// Minimum over all injective maps from the smaller side to the larger.
fn brute_force(rows: usize, cols: usize, data: &[f64]) -> f64 {
    fn go(r: usize, rows: usize, cols: usize, used: &mut Vec<bool>, data: &[f64], acc: f64, best: &mut f64) {
        if r == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(r + 1, rows, cols, used, data, acc + data[r * cols + c], best);
                used[c] = false;
            }
        }
    }
    let (rows, cols, data) = if rows <= cols {
        (rows, cols, data.to_vec())
    } else {
        let t = (0..cols).flat_map(|c| (0..rows).map(move |r| data[r * cols + c])).collect();
        (cols, rows, t)
    };
    let mut best = f64::INFINITY;
    go(0, rows, cols, &mut vec![false; cols], &data, 0.0, &mut best);
    best
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-5.0f64..5.0, r * c)))
}

proptest! {
    #[test]
    fn matches_brute_force((rows, cols, data) in matrix()) {
        let best = brute_force(rows, cols, &data);
        let a = hungarian_assign(&CostMatrix::new(rows, cols, data.clone()).unwrap()).unwrap();
        prop_assert_eq!(a.pairs.len(), rows.min(cols));
        let recomputed: f64 = a.pairs.iter().map(|&(r, c)| data[r * cols + c]).sum();
        prop_assert!((recomputed - a.cost).abs() < 1e-9);
        prop_assert!((a.cost - best).abs() < 1e-9, "{} vs {}", a.cost, best);
        let mut rs: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
        let mut cs: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        rs.dedup();
        cs.sort_unstable();
        cs.dedup();
        prop_assert_eq!(rs.len(), a.pairs.len());
        prop_assert_eq!(cs.len(), a.pairs.len());
    }
}

/// Maximum bipartite matching over the non-sentinel entries (Kuhn).
fn max_matching(m: &CostMatrix) -> usize {
    fn augment(r: usize, m: &CostMatrix, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for c in 0..m.cols() {
            if m.get(r, c) < SENTINEL && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, m, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; m.cols()];
    (0..m.rows()).filter(|&r| augment(r, m, &mut vec![false; m.cols()], &mut owner)).count()
}

#[test]
fn synthetic_matrices_use_as_few_sentinels_as_possible() {
    for (seed, n) in [(0, 100), (1, 100), (2, 250)] {
        let m = synthetic_cost_matrix(n, n, seed).unwrap();
        let a = hungarian_assign(&m).unwrap();
        let sentinels = a.pairs.iter().filter(|&&(r, c)| m.get(r, c) >= SENTINEL).count();
        assert_eq!(sentinels, n - max_matching(&m));
        assert!(a.pairs.iter().all(|&(r, c)| m.get(r, c) >= SENTINEL || m.get(r, c) <= 1.0));
    }
}

#[test]
fn rejects_bad_matrices() {
    assert!(CostMatrix::new(0, 3, vec![]).is_err());
    assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
    assert!(CostMatrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
}
