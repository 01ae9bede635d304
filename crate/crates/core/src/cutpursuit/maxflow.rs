//! Boykov–Kolmogorov augmenting-path max-flow, used for exact binary labeling.
//!
//! The graph is built once from the pairwise capacities; terminal capacities are
//! supplied per call, so the same structure serves every refinement round of a
//! split. Terminal capacity `t > 0` is an arc source→node, `t < 0` an arc
//! node→sink.

use std::collections::VecDeque;

const TERMINAL: u32 = u32::MAX;
const ORPHAN: u32 = u32::MAX - 1;
const NONE: u32 = u32::MAX - 2;
const INFINITE_D: u32 = u32::MAX;

const FREE: u8 = 0;
const SOURCE: u8 = 1;
const SINK: u8 = 2;

pub(crate) struct MaxFlow {
    first: Vec<u32>,
    head: Vec<u32>,
    sister: Vec<u32>,
    cap0: Vec<f64>,
    rcap: Vec<f64>,
    tr_cap: Vec<f64>,
    parent: Vec<u32>,
    tree: Vec<u8>,
    ts: Vec<u32>,
    dist: Vec<u32>,
    time: u32,
    active: VecDeque<u32>,
    in_active: Vec<bool>,
    orphans: VecDeque<u32>,
}

impl MaxFlow {
    /// `edges` holds undirected pairs with a symmetric capacity; zero
    /// capacities are dropped.
    pub(crate) fn new(n: usize, edges: &[(u32, u32, f64)]) -> Self {
        let mut first = vec![0u32; n + 1];
        for &(u, v, c) in edges {
            if c > 0.0 {
                first[u as usize + 1] += 1;
                first[v as usize + 1] += 1;
            }
        }
        for i in 0..n {
            first[i + 1] += first[i];
        }
        let m = first[n] as usize;
        let mut fill: Vec<u32> = first[..n].to_vec();
        let mut head = vec![0u32; m];
        let mut sister = vec![0u32; m];
        let mut cap0 = vec![0.0; m];
        for &(u, v, c) in edges {
            if c <= 0.0 {
                continue;
            }
            let a = fill[u as usize];
            fill[u as usize] += 1;
            let b = fill[v as usize];
            fill[v as usize] += 1;
            head[a as usize] = v;
            head[b as usize] = u;
            sister[a as usize] = b;
            sister[b as usize] = a;
            cap0[a as usize] = c;
            cap0[b as usize] = c;
        }
        Self {
            first,
            head,
            sister,
            rcap: cap0.clone(),
            cap0,
            tr_cap: vec![0.0; n],
            parent: vec![NONE; n],
            tree: vec![FREE; n],
            ts: vec![0; n],
            dist: vec![0; n],
            time: 0,
            active: VecDeque::new(),
            in_active: vec![false; n],
            orphans: VecDeque::new(),
        }
    }

    fn node_count(&self) -> usize {
        self.tr_cap.len()
    }

    #[inline]
    fn arcs(&self, i: u32) -> std::ops::Range<usize> {
        self.first[i as usize] as usize..self.first[i as usize + 1] as usize
    }

    fn set_active(&mut self, i: u32) {
        if !self.in_active[i as usize] {
            self.in_active[i as usize] = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            self.in_active[i as usize] = false;
            if self.parent[i as usize] != NONE {
                return Some(i);
            }
        }
        None
    }

    /// Runs max-flow for the given terminal capacities and returns the flow
    /// value. Afterwards [`Self::sink_side`] tells which nodes ended up
    /// connected to the sink; every other node lies on the source side.
    pub(crate) fn solve(&mut self, terminal: &[f64]) -> f64 {
        let n = self.node_count();
        assert_eq!(terminal.len(), n);
        self.rcap.copy_from_slice(&self.cap0);
        self.tr_cap.copy_from_slice(terminal);
        self.active.clear();
        self.orphans.clear();
        self.time = 0;
        let mut flow = 0.0;
        for i in 0..n {
            self.in_active[i] = false;
            self.ts[i] = 0;
            self.dist[i] = 1;
            let t = terminal[i];
            if t > 0.0 {
                self.tree[i] = SOURCE;
                self.parent[i] = TERMINAL;
                self.set_active(i as u32);
            } else if t < 0.0 {
                self.tree[i] = SINK;
                self.parent[i] = TERMINAL;
                self.set_active(i as u32);
            } else {
                self.tree[i] = FREE;
                self.parent[i] = NONE;
            }
        }

        let mut current: Option<u32> = None;
        loop {
            let i = match current {
                Some(i) => {
                    self.in_active[i as usize] = false;
                    if self.parent[i as usize] == NONE {
                        match self.next_active() {
                            Some(j) => j,
                            None => break,
                        }
                    } else {
                        i
                    }
                }
                None => match self.next_active() {
                    Some(j) => j,
                    None => break,
                },
            };

            // grow the tree of `i`; stop at the first arc reaching the other tree
            let mut bridge: Option<(u32, u32, usize)> = None;
            if self.tree[i as usize] == SOURCE {
                for a in self.arcs(i) {
                    if self.rcap[a] <= 0.0 {
                        continue;
                    }
                    let j = self.head[a];
                    let ju = j as usize;
                    if self.parent[ju] == NONE {
                        self.tree[ju] = SOURCE;
                        self.parent[ju] = self.sister[a];
                        self.ts[ju] = self.ts[i as usize];
                        self.dist[ju] = self.dist[i as usize] + 1;
                        self.set_active(j);
                    } else if self.tree[ju] == SINK {
                        bridge = Some((i, j, a));
                        break;
                    } else if self.ts[ju] <= self.ts[i as usize] && self.dist[ju] > self.dist[i as usize] {
                        self.parent[ju] = self.sister[a];
                        self.ts[ju] = self.ts[i as usize];
                        self.dist[ju] = self.dist[i as usize] + 1;
                    }
                }
            } else {
                for a in self.arcs(i) {
                    let back = self.sister[a] as usize;
                    if self.rcap[back] <= 0.0 {
                        continue;
                    }
                    let j = self.head[a];
                    let ju = j as usize;
                    if self.parent[ju] == NONE {
                        self.tree[ju] = SINK;
                        self.parent[ju] = back as u32;
                        self.ts[ju] = self.ts[i as usize];
                        self.dist[ju] = self.dist[i as usize] + 1;
                        self.set_active(j);
                    } else if self.tree[ju] == SOURCE {
                        bridge = Some((j, i, back));
                        break;
                    } else if self.ts[ju] <= self.ts[i as usize] && self.dist[ju] > self.dist[i as usize] {
                        self.parent[ju] = back as u32;
                        self.ts[ju] = self.ts[i as usize];
                        self.dist[ju] = self.dist[i as usize] + 1;
                    }
                }
            }

            self.time = self.time.wrapping_add(1);
            match bridge {
                Some((s, t, a)) => {
                    self.in_active[i as usize] = true;
                    current = Some(i);
                    flow += self.augment(s, t, a);
                    while let Some(o) = self.orphans.pop_front() {
                        if self.tree[o as usize] == SINK {
                            self.adopt_sink_orphan(o);
                        } else {
                            self.adopt_source_orphan(o);
                        }
                    }
                }
                None => current = None,
            }
        }
        flow
    }

    /// Pushes the bottleneck along source root → `s` → `t` → sink root, where
    /// `a` is the arc `s → t`.
    fn augment(&mut self, s: u32, t: u32, a: usize) -> f64 {
        let mut bottleneck = self.rcap[a];
        let mut i = s as usize;
        loop {
            let pa = self.parent[i];
            if pa == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.rcap[self.sister[pa as usize] as usize]);
            i = self.head[pa as usize] as usize;
        }
        bottleneck = bottleneck.min(self.tr_cap[i]);
        let mut i = t as usize;
        loop {
            let pa = self.parent[i];
            if pa == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.rcap[pa as usize]);
            i = self.head[pa as usize] as usize;
        }
        bottleneck = bottleneck.min(-self.tr_cap[i]);

        self.rcap[self.sister[a] as usize] += bottleneck;
        self.rcap[a] -= bottleneck;

        let mut i = s as usize;
        loop {
            let pa = self.parent[i];
            if pa == TERMINAL {
                break;
            }
            let pa = pa as usize;
            let down = self.sister[pa] as usize;
            self.rcap[pa] += bottleneck;
            self.rcap[down] -= bottleneck;
            let up = self.head[pa] as usize;
            if self.rcap[down] <= 0.0 {
                self.parent[i] = ORPHAN;
                self.orphans.push_front(i as u32);
            }
            i = up;
        }
        self.tr_cap[i] -= bottleneck;
        if self.tr_cap[i] <= 0.0 {
            self.tr_cap[i] = 0.0;
            self.parent[i] = ORPHAN;
            self.orphans.push_front(i as u32);
        }

        let mut i = t as usize;
        loop {
            let pa = self.parent[i];
            if pa == TERMINAL {
                break;
            }
            let pa = pa as usize;
            self.rcap[self.sister[pa] as usize] += bottleneck;
            self.rcap[pa] -= bottleneck;
            let up = self.head[pa] as usize;
            if self.rcap[pa] <= 0.0 {
                self.parent[i] = ORPHAN;
                self.orphans.push_front(i as u32);
            }
            i = up;
        }
        self.tr_cap[i] += bottleneck;
        if self.tr_cap[i] >= 0.0 {
            self.tr_cap[i] = 0.0;
            self.parent[i] = ORPHAN;
            self.orphans.push_front(i as u32);
        }
        bottleneck
    }

    /// Distance from `j` to a terminal through valid parents, or `None` when
    /// the chain ends in an orphan. Uses and refreshes the time-stamp marks.
    fn origin_distance(&mut self, mut j: usize) -> Option<u32> {
        let mut d = 0u32;
        loop {
            if self.ts[j] == self.time {
                d += self.dist[j];
                return Some(d);
            }
            let a = self.parent[j];
            d += 1;
            if a == TERMINAL {
                self.ts[j] = self.time;
                self.dist[j] = 1;
                return Some(d);
            }
            if a == ORPHAN {
                return None;
            }
            j = self.head[a as usize] as usize;
        }
    }

    fn mark_path(&mut self, mut j: usize, mut d: u32) {
        while self.ts[j] != self.time {
            self.ts[j] = self.time;
            self.dist[j] = d;
            d -= 1;
            j = self.head[self.parent[j] as usize] as usize;
        }
    }

    fn adopt_source_orphan(&mut self, i: u32) {
        let mut best: Option<(usize, u32)> = None;
        for a0 in self.arcs(i) {
            if self.rcap[self.sister[a0] as usize] <= 0.0 {
                continue;
            }
            let j = self.head[a0] as usize;
            if self.tree[j] != SOURCE || self.parent[j] == NONE {
                continue;
            }
            if let Some(d) = self.origin_distance(j) {
                if d < best.map_or(INFINITE_D, |b| b.1) {
                    best = Some((a0, d));
                }
                self.mark_path(j, d);
            }
        }
        self.finish_orphan(i, best, SOURCE);
    }

    fn adopt_sink_orphan(&mut self, i: u32) {
        let mut best: Option<(usize, u32)> = None;
        for a0 in self.arcs(i) {
            if self.rcap[a0] <= 0.0 {
                continue;
            }
            let j = self.head[a0] as usize;
            if self.tree[j] != SINK || self.parent[j] == NONE {
                continue;
            }
            if let Some(d) = self.origin_distance(j) {
                if d < best.map_or(INFINITE_D, |b| b.1) {
                    best = Some((a0, d));
                }
                self.mark_path(j, d);
            }
        }
        self.finish_orphan(i, best, SINK);
    }

    fn finish_orphan(&mut self, i: u32, best: Option<(usize, u32)>, side: u8) {
        let iu = i as usize;
        if let Some((a, d)) = best {
            self.parent[iu] = a as u32;
            self.ts[iu] = self.time;
            self.dist[iu] = d + 1;
            return;
        }
        // no valid parent: `i` becomes free, its neighbors may regrow it
        for a0 in self.arcs(i) {
            let j = self.head[a0] as usize;
            if self.tree[j] != side || self.parent[j] == NONE {
                continue;
            }
            let can_reach = if side == SOURCE {
                self.rcap[self.sister[a0] as usize] > 0.0
            } else {
                self.rcap[a0] > 0.0
            };
            if can_reach {
                self.set_active(j as u32);
            }
            let pa = self.parent[j];
            if pa != TERMINAL && pa != ORPHAN && self.head[pa as usize] == i {
                self.parent[j] = ORPHAN;
                self.orphans.push_back(j as u32);
            }
        }
        self.parent[iu] = NONE;
        self.tree[iu] = FREE;
    }

    /// True for nodes that can still reach the sink in the residual graph.
    pub(crate) fn sink_side(&self, i: usize) -> bool {
        self.tree[i] == SINK && self.parent[i] != NONE
    }
}
