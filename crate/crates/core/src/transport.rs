//! Exact quadratic-cost optimal transport between particle measures.
//!
//! The transportation LP on the complete bipartite graph is solved by a
//! primal network simplex with a strongly feasible spanning tree stored as
//! parent / thread / successor-count arrays and block-search pricing. Arcs
//! are implicit: arc `e = i * M + j` joins source `i` to target `j`.

use std::collections::HashMap;

use thiserror::Error;

use crate::measures::{MeasureError, ParticleMeasure};

pub const DEFAULT_MAX_PAIRS: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("measures live in different dimensions ({0} and {1})")]
    DimensionMismatch(usize, usize),
    #[error("{pairs} source/target pairs exceed the cap of {cap}; subsample the measures or raise the cap")]
    TooLarge { pairs: usize, cap: usize },
    #[error("brute-force transport needs equal counts N <= 8 with uniform weights")]
    Unsupported,
    #[error("interpolation parameter {0} is outside [0, 1]")]
    Domain(f64),
    #[error("network simplex failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(source index, target index, mass)` with positive mass.
    pub pairs: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub distance: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl TransportPlan {
    fn from_pairs(pairs: Vec<(usize, usize, f64)>, mu: &ParticleMeasure, nu: &ParticleMeasure) -> Self {
        let cost: f64 = pairs
            .iter()
            .map(|&(i, j, m)| m * sq_dist(mu.position(i), nu.position(j)))
            .sum();
        TransportPlan {
            pairs,
            cost,
            distance: cost.max(0.0).sqrt(),
        }
    }

    /// Largest deviation of a row or column sum from the prescribed weight.
    pub fn marginal_error(&self, mu: &ParticleMeasure, nu: &ParticleMeasure) -> f64 {
        let mut rows = vec![0.0; mu.len()];
        let mut cols = vec![0.0; nu.len()];
        for &(i, j, m) in &self.pairs {
            rows[i] += m;
            cols[j] += m;
        }
        let r = rows.iter().zip(mu.weights()).map(|(a, b)| (a - b).abs());
        let c = cols.iter().zip(nu.weights()).map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransportOptions {
    pub max_pairs: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            max_pairs: DEFAULT_MAX_PAIRS,
        }
    }
}

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

struct NetworkSimplex {
    n_src: usize,
    n_tgt: usize,
    real_arcs: usize,
    root: usize,
    cost: Vec<f64>,
    art_cost: f64,
    // Per arc (real arcs first, then one artificial arc per node).
    flow: Vec<f64>,
    state: Vec<i8>,
    art_source: Vec<usize>,
    art_target: Vec<usize>,
    // Per node (sources, targets, root).
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    // Pivot bookkeeping.
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    tolerance: f64,
}

const NONE: usize = usize::MAX;

impl NetworkSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Self {
        let n_src = supply.len();
        let n_tgt = demand.len();
        let node_num = n_src + n_tgt;
        let real_arcs = n_src * n_tgt;
        let root = node_num;
        let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let total_arcs = real_arcs + node_num;

        let mut s = NetworkSimplex {
            n_src,
            n_tgt,
            real_arcs,
            root,
            cost,
            art_cost,
            flow: vec![0.0; total_arcs],
            state: vec![STATE_LOWER; real_arcs],
            art_source: vec![0; node_num],
            art_target: vec![0; node_num],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
            next_arc: 0,
            block_size: ((real_arcs as f64).sqrt() as usize).max(10),
            tolerance: 1e-12 * max_cost.max(1e-300),
        };
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = real_arcs + u;
            let b = if u < n_src { supply[u] } else { -demand[u - n_src] };
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            if b >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.art_source[u] = u;
                s.art_target[u] = root;
                s.flow[e] = b;
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.art_source[u] = root;
                s.art_target[u] = u;
                s.flow[e] = -b;
            }
        }
        s
    }

    fn source(&self, e: usize) -> usize {
        if e < self.real_arcs {
            e / self.n_tgt
        } else {
            self.art_source[e - self.real_arcs]
        }
    }

    fn target(&self, e: usize) -> usize {
        if e < self.real_arcs {
            self.n_src + e % self.n_tgt
        } else {
            self.art_target[e - self.real_arcs]
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs {
            self.cost[e]
        } else if self.art_source[e - self.real_arcs] == self.root {
            self.art_cost
        } else {
            0.0
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (i, j) = (e / self.n_tgt, self.n_src + e % self.n_tgt);
        self.state[e] as f64 * (self.cost[e] + self.pi[i] - self.pi[j])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.tolerance;
        let mut found = NONE;
        let mut cnt = self.block_size;
        let m = self.real_arcs;
        for k in 0..m {
            let e = (self.next_arc + k) % m;
            let c = self.reduced_cost(e);
            if c < min {
                min = c;
                found = e;
            }
            cnt -= 1;
            if cnt == 0 {
                if found != NONE {
                    break;
                }
                cnt = self.block_size;
            }
        }
        if found == NONE {
            return false;
        }
        self.in_arc = found;
        self.next_arc = found;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        // Entering arcs are always at their lower bound.
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0
    }

    fn change_flow(&mut self) {
        if self.delta > 0.0 {
            let val = self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        if out < self.real_arcs {
            self.state[out] = STATE_LOWER;
            self.flow[out] = 0.0;
        }
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { DIR_UP } else { DIR_DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn solve(&mut self) -> Result<(), TransportError> {
        let max_pivots = 50 * (self.real_arcs + 100) + 1_000_000;
        let mut pivots = 0usize;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(TransportError::Solver("unbounded cycle".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > max_pivots {
                return Err(TransportError::Solver(format!("no convergence after {pivots} pivots")));
            }
        }
        Ok(())
    }
}

/// Optimal plan for `|x - y|²` cost with the default size cap.
pub fn w2_exact(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<TransportPlan, TransportError> {
    w2_exact_with(mu, nu, TransportOptions::default())
}

pub fn w2_exact_with(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    opts: TransportOptions,
) -> Result<TransportPlan, TransportError> {
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let (n, m) = (mu.len(), nu.len());
    let pairs = n.saturating_mul(m);
    if pairs > opts.max_pairs {
        return Err(TransportError::TooLarge {
            pairs,
            cap: opts.max_pairs,
        });
    }
    let supply = mu.weights().to_vec();
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = nu.weights().iter().sum();
    let demand: Vec<f64> = nu.weights().iter().map(|w| w * total_supply / total_demand).collect();
    let mut cost = Vec::with_capacity(pairs);
    for i in 0..n {
        for j in 0..m {
            cost.push(sq_dist(mu.position(i), nu.position(j)));
        }
    }
    let mut solver = NetworkSimplex::new(&supply, &demand, cost);
    solver.solve()?;
    // Pivots leave rounding-level flows on otherwise unused arcs; they carry
    // no mass but their cost survives the square root.
    let floor = (n + m) as f64 * f64::EPSILON * total_supply;
    let mut plan_pairs = Vec::new();
    for e in 0..solver.real_arcs {
        let f = solver.flow[e];
        if f > floor {
            plan_pairs.push((e / m, e % m, f));
        }
    }
    let plan = TransportPlan::from_pairs(plan_pairs, mu, nu);
    if cfg!(debug_assertions) {
        let err = plan.marginal_error(mu, nu);
        assert!(err <= 1e-10, "transport plan violates marginals by {err}");
        assert!(plan.pairs.iter().all(|p| p.2 >= 0.0));
    }
    Ok(plan)
}

/// Minimum over all `N!` matchings; equal counts `N <= 8`, uniform weights.
pub fn w2_brute(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<TransportPlan, TransportError> {
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let n = mu.len();
    let uniform = |p: &ParticleMeasure| p.weights().iter().all(|&w| w == p.weights()[0]);
    if n != nu.len() || n > 8 || !uniform(mu) || !uniform(nu) {
        return Err(TransportError::Unsupported);
    }
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| sq_dist(mu.position(i), nu.position(j)))
            .sum::<f64>()
    };
    // Heap's algorithm, iterative form.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = cost(&perm);
            if v < best_cost {
                best_cost = v;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let w = 1.0 / n as f64;
    let pairs = best.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
    Ok(TransportPlan::from_pairs(pairs, mu, nu))
}

/// The measure `Σ_{(i,j)} m_ij δ_{(1-α) x_i + α y_j}`; points with bitwise
/// identical coordinates are merged.
pub fn displacement_interpolation(
    plan: &TransportPlan,
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    alpha: f64,
) -> Result<ParticleMeasure, TransportError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TransportError::Domain(alpha));
    }
    let d = mu.dim();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut point = vec![0.0; d];
    for &(i, j, m) in &plan.pairs {
        let (x, y) = (mu.position(i), nu.position(j));
        for k in 0..d {
            point[k] = if alpha == 0.0 {
                x[k]
            } else if alpha == 1.0 {
                y[k]
            } else {
                (1.0 - alpha) * x[k] + alpha * y[k]
            };
        }
        let key: Vec<u64> = point.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&slot) => weights[slot] += m,
            None => {
                index.insert(key, weights.len());
                positions.extend_from_slice(&point);
                weights.push(m);
            }
        }
    }
    Ok(ParticleMeasure::normalized(d, positions, weights)?)
}
