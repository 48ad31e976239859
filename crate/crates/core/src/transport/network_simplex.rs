//! Primal network simplex for dense bipartite transportation problems.
//!
//! The spanning tree is stored with the parent / thread / successor-count
//! representation and an artificial root joined to every node. Entering arcs
//! are chosen by block search over the `n * m` real arcs.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;
const NONE: usize = usize::MAX;

pub(crate) struct SimplexSolution {
    /// `n x m` optimal flow.
    pub flow: Matrix,
    pub cost: f64,
    /// Dual potentials with `f_i + g_j <= c_ij`, equality on the support.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

struct Solver<'a> {
    n: usize,
    m: usize,
    costs: &'a Matrix,
    arc_num: usize,
    // Arc data (real arcs first, then one artificial arc per node).
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    // Node data.
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    // Pivot data.
    block_size: usize,
    next_arc: usize,
    eps: f64,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl<'a> Solver<'a> {
    fn new(a: &[f64], b: &[f64], costs: &'a Matrix) -> Self {
        let (n, m) = (a.len(), b.len());
        let node_num = n + m;
        let arc_num = n * m;
        let all_arcs = arc_num + node_num;
        let root = node_num;

        let max_cost = costs.data().iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
        let art_cost = (max_cost + 1.0) * (node_num as f64 + 1.0);

        let mut source = vec![0; all_arcs];
        let mut target = vec![0; all_arcs];
        let mut cost = vec![0.0; all_arcs];
        for i in 0..n {
            for j in 0..m {
                let e = i * m + j;
                source[e] = i;
                target[e] = n + j;
                cost[e] = costs[(i, j)];
            }
        }
        let mut supply = Vec::with_capacity(node_num);
        supply.extend_from_slice(a);
        supply.extend(b.iter().map(|v| -v));

        let mut s = Solver {
            n,
            m,
            costs,
            arc_num,
            source,
            target,
            cost,
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            next_arc: 0,
            eps: 1e-13 * art_cost,
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };

        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if supply[u] >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.source[e] = u;
                s.target[e] = root;
                s.flow[e] = supply[u];
                s.cost[e] = 0.0;
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.source[e] = root;
                s.target[e] = u;
                s.flow[e] = -supply[u];
                s.cost[e] = art_cost;
            }
        }
        s
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.state[e] as f64 * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block_size;
        let ranges = [(self.next_arc, self.arc_num), (0, self.next_arc)];
        for (lo, hi) in ranges {
            for e in lo..hi {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    self.in_arc = e;
                    found = true;
                }
                cnt -= 1;
                if cnt == 0 {
                    if found {
                        self.next_arc = e + 1;
                        if self.next_arc == self.arc_num {
                            self.next_arc = 0;
                        }
                        return true;
                    }
                    cnt = self.block_size;
                }
            }
        }
        if found {
            self.next_arc = self.in_arc;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
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
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc], self.target[self.in_arc])
        } else {
            (self.target[self.in_arc], self.source[self.in_arc])
        };
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let d = if self.pred_dir[u] == DIR_DOWN {
                f64::INFINITY
            } else {
                self.flow[self.pred[u]]
            };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let d = if self.pred_dir[u] == DIR_UP {
                f64::INFINITY
            } else {
                self.flow[self.pred[u]]
            };
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
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
        result != 0
    }

    fn change_flow(&mut self) {
        if self.delta > 0.0 {
            let val = self.state[self.in_arc] as f64 * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
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
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };

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

            // Re-hang the stem nodes between u_in and u_out.
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
                // succ_num[u] - succ_num[p] is negative; track it as a signed sum.
                tmp_sc = (tmp_sc as isize + self.succ_num[u] as isize - self.succ_num[p] as isize)
                    as usize;
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
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
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in]
            - self.pi[u_in]
            - self.pred_dir[u_in] as f64 * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self, max_pivots: usize) -> Result<()> {
        let mut pivots = 0;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::NotConverged("transport problem is unbounded".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NotConverged(format!(
                    "network simplex exceeded {max_pivots} pivots"
                )));
            }
        }
        Ok(())
    }

    /// Potentials of tree components hanging off the root through zero-flow
    /// artificial arcs are only fixed up to a shift. Shift each such component
    /// as close as dual feasibility allows to the mean of the others, so the
    /// returned duals stay on the scale of the costs.
    fn normalize_components(&mut self) {
        let node_num = self.n + self.m;
        let mut comp: Vec<usize> = (0..node_num).collect();
        fn find(c: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while c[r] != r {
                r = c[r];
            }
            let mut y = x;
            while c[y] != r {
                let nx = c[y];
                c[y] = r;
                y = nx;
            }
            r
        }
        for u in 0..node_num {
            let e = self.pred[u];
            if e < self.arc_num {
                let p = self.parent[u];
                let (a, b) = (find(&mut comp, u), find(&mut comp, p));
                if a != b {
                    comp[a.max(b)] = a.min(b);
                }
            }
        }
        let labels: Vec<usize> = (0..node_num).map(|u| find(&mut comp, u)).collect();
        let mut roots: Vec<usize> = labels.clone();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() <= 1 {
            return;
        }
        for &c in roots.iter().skip(1) {
            // Feasible shift interval for component c given every other node.
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut in_sum, mut in_cnt, mut out_sum, mut out_cnt) = (0.0, 0usize, 0.0, 0usize);
            for u in 0..node_num {
                if labels[u] == c {
                    in_sum += self.pi[u];
                    in_cnt += 1;
                } else {
                    out_sum += self.pi[u];
                    out_cnt += 1;
                }
            }
            for i in 0..self.n {
                for j in 0..self.m {
                    let (ci, cj) = (labels[i] == c, labels[self.n + j] == c);
                    if ci == cj {
                        continue;
                    }
                    let rc = self.costs[(i, j)] + self.pi[i] - self.pi[self.n + j];
                    if ci {
                        lo = lo.max(-rc);
                    } else {
                        hi = hi.min(rc);
                    }
                }
            }
            let target = out_sum / out_cnt as f64 - in_sum / in_cnt as f64;
            let shift = target.clamp(lo.min(0.0), hi.max(0.0));
            for u in 0..node_num {
                if labels[u] == c {
                    self.pi[u] += shift;
                }
            }
        }
    }
}

/// Solves `min <C, P>` over couplings of `a` and `b` exactly.
///
/// `a` and `b` must be nonnegative with equal sums.
pub(crate) fn solve(a: &[f64], b: &[f64], costs: &Matrix) -> Result<SimplexSolution> {
    let (n, m) = (a.len(), b.len());
    if costs.shape() != (n, m) {
        return Err(Error::dim(format!(
            "cost matrix is {:?}, expected ({n}, {m})",
            costs.shape()
        )));
    }
    let mut solver = Solver::new(a, b, costs);
    let max_pivots = 50 * (n * m).max(100) + 10_000;
    solver.run(max_pivots)?;
    solver.normalize_components();

    let mut flow = Matrix::zeros(n, m);
    let mut cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = solver.flow[i * m + j];
            if x > 0.0 {
                flow[(i, j)] = x;
                cost += x * costs[(i, j)];
            }
        }
    }
    let f = (0..n).map(|i| -solver.pi[i]).collect();
    let g = (0..m).map(|j| solver.pi[n + j]).collect();
    Ok(SimplexSolution { flow, cost, f, g })
}
