//! Split/merge solver for the weighted-cut piecewise-constant approximation.
//!
//! Each outer round tries to split every unsaturated component in two with an
//! exact binary min-cut, keeps the split only when it lowers the energy, then
//! greedily merges adjacent components while that lowers the energy further.
//! Component order, seeds and summation are fixed so that the result does not
//! depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::maxflow::MaxFlow;
use super::observations::{ComponentValue, Observations, Stats};
use crate::domain::ClusteringParams;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyGraph, Csr};
use crate::numeric::{seed_for, ExactSum};

/// Moves are kept only when they lower the local energy by more than this
/// fraction of it, so that rounding never shows up as an energy increase.
const RELATIVE_GAIN: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Segmentation {
    pub assignment: Vec<u32>,
    pub members: Vec<Vec<u32>>,
    pub values: Vec<ComponentValue>,
    pub energy: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Component index of every node and its rank inside the component.
fn index(members: &[Vec<u32>], n: usize) -> (Vec<u32>, Vec<u32>) {
    let mut comp_of = vec![0u32; n];
    let mut local = vec![0u32; n];
    for (c, m) in members.iter().enumerate() {
        for (i, &p) in m.iter().enumerate() {
            comp_of[p as usize] = c as u32;
            local[p as usize] = i as u32;
        }
    }
    (comp_of, local)
}

fn values_of(obs: &Observations, members: &[Vec<u32>]) -> Vec<ComponentValue> {
    members.par_iter().map(|m| Stats::of(obs, m).value()).collect()
}

/// Full objective: fidelity of every node to its component value plus the
/// weighted cut. Summation is exact, hence independent of work splitting.
pub(crate) fn total_energy(
    obs: &Observations,
    comp_of: &[u32],
    values: &[ComponentValue],
    edges: &[(u32, u32)],
    cut_weights: &[f64],
) -> f64 {
    let merge = |mut a: ExactSum, b: ExactSum| {
        a.merge(&b);
        a
    };
    let fidelity = (0..obs.n)
        .into_par_iter()
        .with_min_len(4096)
        .fold(ExactSum::new, |mut s, p| {
            s.add(obs.dissimilarity(p, &values[comp_of[p] as usize]));
            s
        })
        .reduce(ExactSum::new, merge);
    let cut = edges
        .par_iter()
        .zip(cut_weights)
        .with_min_len(4096)
        .fold(ExactSum::new, |mut s, (&(u, v), &w)| {
            if comp_of[u as usize] != comp_of[v as usize] {
                s.add(w);
            }
            s
        })
        .reduce(ExactSum::new, merge);
    let mut total = fidelity;
    total.merge(&cut);
    total.value()
}

enum SplitOutcome {
    Saturated,
    Split(Vec<Vec<u32>>),
}

struct Context<'a> {
    obs: Observations<'a>,
    csr: Csr,
    cut_weights: Vec<f64>,
    params: ClusteringParams,
}

/// Labels `members` (local indices) with the cheaper of two values under unary
/// costs `d(x, y_b)` and the pairwise cut, exactly. `true` means value 1.
pub(crate) fn min_cut_labels(
    obs: &Observations,
    members: &[u32],
    flow: &mut MaxFlow,
    candidates: (&ComponentValue, &ComponentValue),
    terminal: &mut [f64],
) -> Vec<bool> {
    for (t, &p) in terminal.iter_mut().zip(members) {
        let p = p as usize;
        *t = obs.dissimilarity(p, candidates.1) - obs.dissimilarity(p, candidates.0);
    }
    flow.solve(terminal);
    (0..members.len()).map(|i| flow.sink_side(i)).collect()
}

fn refit(obs: &Observations, members: &[u32], labels: &[bool]) -> Option<(ComponentValue, ComponentValue)> {
    let mut s0 = obs.stats();
    let mut s1 = obs.stats();
    for (&p, &l) in members.iter().zip(labels) {
        if l {
            s1.add(obs, p as usize);
        } else {
            s0.add(obs, p as usize);
        }
    }
    if s0.count == 0.0 || s1.count == 0.0 {
        return None;
    }
    Some((s0.value(), s1.value()))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

struct Dsu(Vec<u32>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n as u32).collect())
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            let up = self.0[self.0[x as usize] as usize];
            self.0[x as usize] = up;
            x = up;
        }
        x
    }

    /// Joins two sets under the smaller root.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi as usize] = lo;
        lo
    }
}

impl Context<'_> {
    fn try_split(&self, cid: u32, members: &[u32], comp_of: &[u32], local: &[u32]) -> SplitOutcome {
        let obs = &self.obs;
        let m = members.len();
        if m < 2 {
            return SplitOutcome::Saturated;
        }
        let mut edges: Vec<(u32, u32, f64)> = Vec::new();
        for (i, &p) in members.iter().enumerate() {
            for &(q, e) in self.csr.neighbors(p) {
                if q > p && comp_of[q as usize] == cid {
                    edges.push((i as u32, local[q as usize], self.cut_weights[e as usize]));
                }
            }
        }
        let current = Stats::of(obs, members).value();
        let fid_before: f64 = members.iter().map(|&p| obs.dissimilarity(p as usize, &current)).sum();

        // 2-means++ seeding under the dissimilarity
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&[self.params.seed, members[0] as u64]));
        let first = members[rng.random_range(0..m)] as usize;
        let y0 = obs.node_value(first);
        let weights: Vec<f64> = members.iter().map(|&p| obs.excess(p as usize, &y0)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return SplitOutcome::Saturated;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut second = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                second = Some(i);
                acc += w;
                if acc > target {
                    break;
                }
            }
        }
        let y1 = obs.node_value(members[second.unwrap()] as usize);

        // one unary assignment round turns the two seeds into set means
        let seeded: Vec<bool> = members
            .iter()
            .map(|&p| obs.dissimilarity(p as usize, &y1) < obs.dissimilarity(p as usize, &y0))
            .collect();
        let mut flow = MaxFlow::new(m, &edges);
        let mut best = self.attempt(members, &edges, &mut flow, &seeded, fid_before);

        // the dominant class against everything else
        if obs.c > 0 {
            let dominant = argmax(&current.class);
            let by_class: Vec<bool> = members.iter().map(|&p| argmax(obs.class_row(p as usize)) != dominant).collect();
            if let Some(alt) = self.attempt(members, &edges, &mut flow, &by_class, fid_before) {
                if best.as_ref().is_none_or(|b| alt.0 > b.0) {
                    best = Some(alt);
                }
            }
        }
        match best {
            Some((gain, pieces)) if gain > RELATIVE_GAIN * fid_before.abs() && gain > 0.0 => SplitOutcome::Split(pieces),
            _ => SplitOutcome::Saturated,
        }
    }

    /// Alternates exact binary labeling and refitting from an initial
    /// labeling; returns the energy gain and the connected pieces.
    fn attempt(&self, members: &[u32], edges: &[(u32, u32, f64)], flow: &mut MaxFlow, init: &[bool], fid_before: f64) -> Option<(f64, Vec<Vec<u32>>)> {
        let obs = &self.obs;
        let m = members.len();
        let mut candidates = refit(obs, members, init)?;
        let mut terminal = vec![0.0; m];
        let mut labels = Vec::new();
        for _ in 0..self.params.split_iterations.max(1) {
            labels = min_cut_labels(obs, members, flow, (&candidates.0, &candidates.1), &mut terminal);
            match refit(obs, members, &labels) {
                Some(c) if c.0 != c.1 => candidates = c,
                _ => return None,
            }
        }

        // constant components of the labeling
        let mut dsu = Dsu::new(m);
        let mut cut = 0.0;
        for &(i, j, w) in edges {
            if labels[i as usize] == labels[j as usize] {
                dsu.union(i, j);
            } else {
                cut += w;
            }
        }
        let mut piece_of = vec![u32::MAX; m];
        let mut pieces: Vec<Vec<u32>> = Vec::new();
        for i in 0..m {
            let r = dsu.find(i as u32) as usize;
            if piece_of[r] == u32::MAX {
                piece_of[r] = pieces.len() as u32;
                pieces.push(Vec::new());
            }
            pieces[piece_of[r] as usize].push(members[i]);
        }
        if pieces.len() < 2 {
            return None;
        }
        let fid_after: f64 = pieces
            .iter()
            .map(|piece| {
                let v = Stats::of(obs, piece).value();
                piece.iter().map(|&p| obs.dissimilarity(p as usize, &v)).sum::<f64>()
            })
            .sum();
        Some((fid_before - (fid_after + cut), pieces))
    }

    /// Greedy merging of adjacent components in ascending pair order, repeated
    /// until no pair lowers the energy. Returns the new components (canonical
    /// order), their saturation flags and whether anything merged.
    fn merge(
        &self,
        members: Vec<Vec<u32>>,
        saturated: Vec<bool>,
        comp_of: &[u32],
        edges: &[(u32, u32)],
    ) -> (Vec<Vec<u32>>, Vec<bool>, bool) {
        let obs = &self.obs;
        let k = members.len();
        let mut boundary: Vec<(u32, u32, f64)> = edges
            .par_iter()
            .zip(&self.cut_weights)
            .filter_map(|(&(u, v), &w)| {
                let (a, b) = (comp_of[u as usize], comp_of[v as usize]);
                (a != b && w > 0.0).then(|| (a.min(b), a.max(b), w))
            })
            .collect();
        if boundary.is_empty() {
            return (members, saturated, false);
        }
        boundary.par_sort_by_key(|e| (e.0, e.1));
        let mut adj: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); k];
        for &(a, b, w) in &boundary {
            *adj[a as usize].entry(b).or_insert(0.0) += w;
        }
        drop(boundary);
        for a in 0..k {
            let pairs: Vec<(u32, f64)> = adj[a].iter().map(|(&b, &w)| (b, w)).collect();
            for (b, w) in pairs {
                adj[b as usize].insert(a as u32, w);
            }
        }

        let mut stats: Vec<Stats> = members.par_iter().map(|m| Stats::of(obs, m)).collect();
        let mut class_fid: Vec<f64> = stats.iter().map(Stats::class_fidelity).collect();
        let mut spread: Vec<f64> = members
            .par_iter()
            .zip(&stats)
            .map(|(m, s)| {
                let mean = s.value();
                m.iter()
                    .map(|&p| {
                        obs.coord_row(p as usize)
                            .iter()
                            .zip(&mean.position)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    * obs.eta
            })
            .collect();

        let mut dsu = Dsu::new(k);
        let mut merged_any = false;
        loop {
            let mut pairs: Vec<(u32, u32)> = Vec::new();
            for a in 0..k {
                if dsu.0[a] != a as u32 {
                    continue;
                }
                pairs.extend(adj[a].range(a as u32 + 1..).map(|(&b, _)| (a as u32, b)));
            }
            let mut merged = false;
            for (a, b) in pairs {
                let (ra, rb) = (dsu.find(a), dsu.find(b));
                if ra == rb {
                    continue;
                }
                let Some(&w) = adj[ra as usize].get(&rb) else {
                    continue;
                };
                let (sa, sb) = (&stats[ra as usize], &stats[rb as usize]);
                let mut joined = sa.clone();
                joined.merge(sb);
                let joined_class = joined.class_fidelity();
                let added_spread = obs.eta * sa.merge_spread(sb);
                let increase = joined_class - class_fid[ra as usize] - class_fid[rb as usize] + added_spread;
                let local = class_fid[ra as usize] + class_fid[rb as usize] + spread[ra as usize] + spread[rb as usize];
                let gain = w - increase;
                if !(gain > 0.0 && gain > RELATIVE_GAIN * local.abs()) {
                    continue;
                }
                let root = dsu.union(ra, rb);
                let other = if root == ra { rb } else { ra };
                stats[root as usize] = joined;
                class_fid[root as usize] = joined_class;
                spread[root as usize] = spread[ra as usize] + spread[rb as usize] + added_spread;
                let moved = std::mem::take(&mut adj[other as usize]);
                for (nb, wn) in moved {
                    if nb == root {
                        continue;
                    }
                    adj[nb as usize].remove(&other);
                    *adj[nb as usize].entry(root).or_insert(0.0) += wn;
                    *adj[root as usize].entry(nb).or_insert(0.0) += wn;
                }
                adj[root as usize].remove(&other);
                merged = true;
            }
            if !merged {
                break;
            }
            merged_any = true;
        }
        if !merged_any {
            return (members, saturated, false);
        }

        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for c in 0..k {
            let r = dsu.find(c as u32) as usize;
            groups[r].push(c);
        }
        let mut out_members = Vec::new();
        let mut out_saturated = Vec::new();
        let mut members = members;
        for (r, group) in groups.into_iter().enumerate() {
            match group.len() {
                0 => {}
                1 => {
                    out_members.push(std::mem::take(&mut members[r]));
                    out_saturated.push(saturated[r]);
                }
                _ => {
                    let mut joined: Vec<u32> = group.iter().flat_map(|&c| std::mem::take(&mut members[c])).collect();
                    joined.sort_unstable();
                    out_members.push(joined);
                    out_saturated.push(false);
                }
            }
        }
        (out_members, out_saturated, true)
    }
}

fn group_by_label(labels: &[u32], count: usize) -> Vec<Vec<u32>> {
    let mut members = vec![Vec::new(); count];
    for (p, &l) in labels.iter().enumerate() {
        members[l as usize].push(p as u32);
    }
    members
}

fn finish(obs: &Observations, graph: &AdjacencyGraph, cut_weights: &[f64], members: Vec<Vec<u32>>, history: Vec<f64>, iterations: usize) -> Segmentation {
    let (comp_of, _) = index(&members, obs.n);
    let values = values_of(obs, &members);
    let energy = total_energy(obs, &comp_of, &values, graph.edges(), cut_weights);
    let mut history = history;
    if history.last() != Some(&energy) {
        history.push(energy);
    }
    Segmentation {
        assignment: comp_of,
        members,
        values,
        energy,
        history,
        iterations,
    }
}

pub(crate) fn solve(obs: &Observations, graph: &AdjacencyGraph, params: &ClusteringParams) -> Result<Segmentation> {
    params.validate()?;
    if graph.node_count() == 0 {
        return Err(Error::parameter("cannot cluster an empty graph"));
    }
    if obs.n != graph.node_count() {
        return Err(Error::structural(format!(
            "signal has {} nodes, graph has {}",
            obs.n,
            graph.node_count()
        )));
    }
    let cut_weights: Vec<f64> = graph.weights().iter().map(|w| params.lambda * w).collect();

    if params.lambda == 0.0 {
        // no regularization: the optimum keeps only runs of identical signal
        let mut dsu = Dsu::new(obs.n);
        for &(u, v) in graph.edges() {
            if obs.rows_equal(u as usize, v as usize) {
                dsu.union(u, v);
            }
        }
        let mut label = vec![u32::MAX; obs.n];
        let mut count = 0u32;
        let mut comp = vec![0u32; obs.n];
        for p in 0..obs.n {
            let r = dsu.find(p as u32) as usize;
            if label[r] == u32::MAX {
                label[r] = count;
                count += 1;
            }
            comp[p] = label[r];
        }
        return Ok(finish(obs, graph, &cut_weights, group_by_label(&comp, count as usize), Vec::new(), 0));
    }

    let (labels, count) = graph.connected_components();
    let mut members = group_by_label(&labels, count);
    let ctx = Context {
        obs: *obs,
        csr: graph.csr(),
        cut_weights,
        params: *params,
    };
    let mut saturated = vec![false; members.len()];
    let (mut comp_of, mut local) = index(&members, obs.n);
    let mut energy = total_energy(obs, &comp_of, &values_of(obs, &members), graph.edges(), &ctx.cut_weights);
    let mut history = vec![energy];
    let mut iterations = 0;

    for round in 0..params.max_outer_iterations {
        let outcomes: Vec<Option<SplitOutcome>> = members
            .par_iter()
            .enumerate()
            .map(|(cid, m)| (!saturated[cid]).then(|| ctx.try_split(cid as u32, m, &comp_of, &local)))
            .collect();
        let mut next = Vec::with_capacity(members.len());
        let mut next_saturated = Vec::with_capacity(members.len());
        let mut split_any = false;
        for ((m, outcome), sat) in members.into_iter().zip(outcomes).zip(saturated) {
            match outcome {
                Some(SplitOutcome::Split(pieces)) => {
                    split_any = true;
                    next_saturated.extend(std::iter::repeat(false).take(pieces.len()));
                    next.extend(pieces);
                }
                Some(SplitOutcome::Saturated) => {
                    next.push(m);
                    next_saturated.push(true);
                }
                None => {
                    next.push(m);
                    next_saturated.push(sat);
                }
            }
        }
        // pieces keep their parent's slot; restore ordering by smallest node
        let mut order: Vec<usize> = (0..next.len()).collect();
        order.sort_by_key(|&i| next[i][0]);
        let mut slots: Vec<Option<Vec<u32>>> = next.into_iter().map(Some).collect();
        members = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        saturated = order.iter().map(|&i| next_saturated[i]).collect();
        (comp_of, _) = index(&members, obs.n);

        let (merged_members, merged_saturated, merged_any) = ctx.merge(members, saturated, &comp_of, graph.edges());
        members = merged_members;
        saturated = merged_saturated;
        if !split_any && !merged_any {
            log::debug!("round {round}: all components saturated");
            break;
        }
        (comp_of, local) = index(&members, obs.n);
        let values = values_of(obs, &members);
        let next_energy = total_energy(obs, &comp_of, &values, graph.edges(), &ctx.cut_weights);
        iterations += 1;
        history.push(next_energy);
        log::debug!(
            "round {round}: {} components, energy {next_energy:.6e}",
            members.len()
        );
        let decrease = energy - next_energy;
        let relative = if energy > 0.0 { decrease / energy } else { 0.0 };
        energy = next_energy;
        if relative < params.relative_energy_tolerance {
            break;
        }
    }
    // split heuristics can stall above the all-singleton state on soft signals
    let singletons: Vec<Vec<u32>> = (0..obs.n as u32).map(|p| vec![p]).collect();
    let (single_of, _) = index(&singletons, obs.n);
    let single_energy = total_energy(obs, &single_of, &values_of(obs, &singletons), graph.edges(), &ctx.cut_weights);
    if single_energy < energy {
        log::debug!("restarting from singletons: {single_energy:.6e} < {energy:.6e}");
        let (merged, _, _) = ctx.merge(singletons, vec![false; obs.n], &single_of, graph.edges());
        let (merged_of, _) = index(&merged, obs.n);
        let merged_energy = total_energy(obs, &merged_of, &values_of(obs, &merged), graph.edges(), &ctx.cut_weights);
        members = if merged_energy <= single_energy {
            merged
        } else {
            (0..obs.n as u32).map(|p| vec![p]).collect()
        };
    }
    Ok(finish(obs, graph, &ctx.cut_weights, members, history, iterations))
}
