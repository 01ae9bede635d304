use serde::{Deserialize, Serialize};

use crate::numeric::{clamped_ln, LOG_CLAMP};

/// Value of a constant component: a class distribution (possibly empty) and a
/// point in the continuous channels (3D position for node signals, arbitrary
/// feature space for oversegmentation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentValue {
    #[serde(rename = "class_distribution")]
    pub class: Vec<f64>,
    pub position: Vec<f64>,
}

/// Borrowed row-major observations: `class` is `n x c`, `coords` is `n x d`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Observations<'a> {
    pub class: &'a [f64],
    pub c: usize,
    pub coords: &'a [f64],
    pub d: usize,
    pub eta: f64,
    pub n: usize,
}

impl<'a> Observations<'a> {
    pub fn new(class: &'a [f64], c: usize, coords: &'a [f64], d: usize, eta: f64) -> Self {
        let n = if d > 0 { coords.len() / d } else { class.len() / c.max(1) };
        debug_assert_eq!(class.len(), n * c);
        Self { class, c, coords, d, eta, n }
    }

    #[inline]
    pub fn class_row(&self, p: usize) -> &'a [f64] {
        &self.class[p * self.c..(p + 1) * self.c]
    }

    #[inline]
    pub fn coord_row(&self, p: usize) -> &'a [f64] {
        &self.coords[p * self.d..(p + 1) * self.d]
    }

    #[inline]
    pub fn dissimilarity(&self, p: usize, value: &ComponentValue) -> f64 {
        dissimilarity(self.class_row(p), self.coord_row(p), value, self.eta)
    }

    pub fn node_value(&self, p: usize) -> ComponentValue {
        ComponentValue {
            class: self.class_row(p).to_vec(),
            position: self.coord_row(p).to_vec(),
        }
    }

    /// Dissimilarity above the floor `d(x_p, x_p)`: KL divergence plus the
    /// weighted squared distance. Zero iff the value equals the node.
    pub fn excess(&self, p: usize, value: &ComponentValue) -> f64 {
        let mut kl = 0.0;
        for (&x, &y) in self.class_row(p).iter().zip(&value.class) {
            if x > 0.0 {
                kl += x * (clamped_ln(x) - clamped_ln(y));
            }
        }
        let mut sq = 0.0;
        for (&x, &y) in self.coord_row(p).iter().zip(&value.position) {
            sq += (x - y) * (x - y);
        }
        (kl + self.eta * sq).max(0.0)
    }

    pub fn stats(&self) -> Stats {
        Stats::new(self.c, self.d)
    }

    pub fn rows_equal(&self, p: usize, q: usize) -> bool {
        self.class_row(p) == self.class_row(q) && self.coord_row(p) == self.coord_row(q)
    }
}

/// Cross-entropy of the value's class part against the node's, plus the
/// eta-weighted squared distance of the continuous part.
#[inline]
pub fn dissimilarity(x_class: &[f64], x_pos: &[f64], value: &ComponentValue, eta: f64) -> f64 {
    let mut ce = 0.0;
    for (&x, &y) in x_class.iter().zip(&value.class) {
        if x != 0.0 {
            ce -= x * clamped_ln(y);
        }
    }
    let mut sq = 0.0;
    for (&x, &y) in x_pos.iter().zip(&value.position) {
        let diff = x - y;
        sq += diff * diff;
    }
    ce + eta * sq
}

/// Sufficient statistics of a node set.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stats {
    pub count: f64,
    pub class_sum: Vec<f64>,
    pub coord_sum: Vec<f64>,
}

impl Stats {
    pub fn new(c: usize, d: usize) -> Self {
        Self {
            count: 0.0,
            class_sum: vec![0.0; c],
            coord_sum: vec![0.0; d],
        }
    }

    #[inline]
    pub fn add(&mut self, obs: &Observations, p: usize) {
        self.count += 1.0;
        for (s, &x) in self.class_sum.iter_mut().zip(obs.class_row(p)) {
            *s += x;
        }
        for (s, &x) in self.coord_sum.iter_mut().zip(obs.coord_row(p)) {
            *s += x;
        }
    }

    pub fn of(obs: &Observations, members: &[u32]) -> Self {
        let mut s = obs.stats();
        for &p in members {
            s.add(obs, p as usize);
        }
        s
    }

    pub fn merge(&mut self, other: &Stats) {
        self.count += other.count;
        for (a, b) in self.class_sum.iter_mut().zip(&other.class_sum) {
            *a += b;
        }
        for (a, b) in self.coord_sum.iter_mut().zip(&other.coord_sum) {
            *a += b;
        }
    }

    /// Minimizer of the summed dissimilarity: the mean class distribution and
    /// the centroid.
    pub fn value(&self) -> ComponentValue {
        ComponentValue {
            class: self.class_sum.iter().map(|s| s / self.count).collect(),
            position: self.coord_sum.iter().map(|s| s / self.count).collect(),
        }
    }

    /// Class part of the fidelity at the optimal value, from the sums alone.
    pub fn class_fidelity(&self) -> f64 {
        let mut f = 0.0;
        for &s in &self.class_sum {
            if s != 0.0 {
                f -= s * (s / self.count).max(LOG_CLAMP).ln();
            }
        }
        f
    }

    /// Increase of the squared-distance term when two sets share one centroid.
    pub fn merge_spread(&self, other: &Stats) -> f64 {
        let mut sq = 0.0;
        for (a, b) in self.coord_sum.iter().zip(&other.coord_sum) {
            let diff = a / self.count - b / other.count;
            sq += diff * diff;
        }
        self.count * other.count / (self.count + other.count) * sq
    }
}
