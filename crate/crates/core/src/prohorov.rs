//! Exact Prohorov distance between finite (not necessarily probability)
//! measures supported on a finite metric space.
//!
//! For fixed `ε` the one-sided condition `ν(A) ≤ μ(A^ε) + ε` for all `A` is
//! equivalent to `‖ν‖ − maxflow ≤ ε` on the bipartite graph joining `i` to
//! `j` whenever `d(i, j) < ε` (max-flow/min-cut). The deficiency only changes
//! when `ε` crosses a pairwise distance, so the infimum is found by a binary
//! search over the sorted distances followed by one closed-form step.

use crate::error::{input, Result};

const FLOW_EPS: f64 = 1e-13;

struct FlowEdge {
    to: usize,
    cap: f64,
}

/// Dinic max-flow on real capacities.
struct FlowNetwork {
    edges: Vec<FlowEdge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        FlowNetwork { edges: Vec::new(), adj: vec![Vec::new(); n], level: vec![0; n], iter: vec![0; n] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(FlowEdge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(FlowEdge { to: from, cap: 0.0 });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let FlowEdge { to, cap } = self.edges[e];
                if cap > FLOW_EPS && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.iter[v] < self.adj[v].len() {
            let e = self.adj[v][self.iter[v]];
            let FlowEdge { to, cap } = self.edges[e];
            if cap > FLOW_EPS && self.level[to] == self.level[v] + 1 {
                let d = self.dfs(to, t, pushed.min(cap));
                if d > FLOW_EPS {
                    self.edges[e].cap -= d;
                    self.edges[e ^ 1].cap += d;
                    return d;
                }
            }
            self.iter[v] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= FLOW_EPS {
                    break;
                }
                flow += f;
            }
        }
        flow
    }
}

/// `max_A [from(A) − to(N(A))]` where `N(A)` are the points joined to `A`
/// by a pair with distance at most `threshold` (`None`: only distance-0 pairs).
fn deficiency(metric: &[Vec<f64>], from: &[(usize, f64)], to: &[(usize, f64)], threshold: f64) -> f64 {
    let nf = from.len();
    let nt = to.len();
    let (s, t) = (nf + nt, nf + nt + 1);
    let mut net = FlowNetwork::new(nf + nt + 2);
    let total: f64 = from.iter().map(|a| a.1).sum();
    for (a, &(i, w)) in from.iter().enumerate() {
        net.add_edge(s, a, w);
        for (b, &(j, _)) in to.iter().enumerate() {
            if metric[i][j] <= threshold {
                net.add_edge(a, nf + b, f64::INFINITY);
            }
        }
    }
    for (b, &(_, w)) in to.iter().enumerate() {
        net.add_edge(nf + b, t, w);
    }
    (total - net.max_flow(s, t)).max(0.0)
}

fn validate(metric: &[Vec<f64>], m1: &[f64], m2: &[f64]) -> Result<()> {
    let n = metric.len();
    if m1.len() != n || m2.len() != n {
        return input(format!(
            "support has {n} points but the measures have {} and {} weights",
            m1.len(),
            m2.len()
        ));
    }
    if metric.iter().any(|row| row.len() != n) {
        return input("metric must be a square matrix over the support");
    }
    if m1.iter().chain(m2).any(|w| !(*w >= 0.0 && w.is_finite())) {
        return input("masses must be finite and nonnegative");
    }
    Ok(())
}

/// Prohorov distance between `m1` and `m2` on the finite metric space
/// `(0..n, metric)`. Exact up to the floating-point max-flow tolerance.
pub fn prohorov_distance(metric: &[Vec<f64>], m1: &[f64], m2: &[f64]) -> Result<f64> {
    validate(metric, m1, m2)?;
    let a: Vec<(usize, f64)> = m1.iter().copied().enumerate().filter(|p| p.1 > 0.0).collect();
    let b: Vec<(usize, f64)> = m2.iter().copied().enumerate().filter(|p| p.1 > 0.0).collect();
    if a.is_empty() && b.is_empty() {
        return Ok(0.0);
    }
    let mut dists: Vec<f64> = Vec::new();
    for &(i, _) in &a {
        for &(j, _) in &b {
            let d = metric[i][j];
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    dists.dedup();
    // thresholds s_0 = 0 < s_1 < ... < s_K; on (s_k, s_{k+1}] pairs with d <= s_k are linked
    let mut thresholds = vec![0.0];
    thresholds.extend(dists);
    let k_max = thresholds.len() - 1;
    let defect = |k: usize| {
        let s = thresholds[k];
        deficiency(metric, &a, &b, s).max(deficiency(metric, &b, &a, s))
    };
    let upper = |k: usize| if k == k_max { f64::INFINITY } else { thresholds[k + 1] };
    // smallest k whose interval contains a feasible ε; feasibility is monotone in k
    let (mut lo, mut hi) = (0usize, k_max);
    let mut defect_hi = None;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let d = defect(mid);
        if d <= upper(mid) {
            hi = mid;
            defect_hi = Some(d);
        } else {
            lo = mid + 1;
        }
    }
    let d = defect_hi.unwrap_or_else(|| defect(hi));
    Ok(thresholds[hi].max(d))
}

/// Brute-force check of the Prohorov conditions at a fixed `ε` over all
/// subsets of the support. Exponential; intended for small cross-checks.
pub fn prohorov_feasible_bruteforce(metric: &[Vec<f64>], m1: &[f64], m2: &[f64], eps: f64) -> bool {
    let n = metric.len();
    assert!(n <= 20, "brute force over 2^n subsets");
    for mask in 1u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let near = |j: usize| (0..n).any(|i| inside(i) && metric[i][j] < eps);
        let a1: f64 = (0..n).filter(|&i| inside(i)).map(|i| m1[i]).sum();
        let a2: f64 = (0..n).filter(|&i| inside(i)).map(|i| m2[i]).sum();
        let n1: f64 = (0..n).filter(|&j| near(j)).map(|j| m1[j]).sum();
        let n2: f64 = (0..n).filter(|&j| near(j)).map(|j| m2[j]).sum();
        if n1 + eps < a2 - 1e-12 || n2 + eps < a1 - 1e-12 {
            return false;
        }
    }
    true
}
