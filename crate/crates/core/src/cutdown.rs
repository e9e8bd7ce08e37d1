//! Cutting down a tree: separation times, cut counts and the moment formula.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::measure::{BiMeasureTree, PathMasses, PointSampler};
use crate::pruning::Pruner;
use crate::rng::{self, SimRng};
use crate::stats::MeanVar;
use crate::tree::TreePoint;

/// Events allowed before a run over a non-atomic μ is declared truncated.
pub const MAX_EVENTS: u64 = 10_000_000;
/// Largest `#atomsⁿ` summed exactly by [`theta_moment_exact`].
pub const EXACT_MOMENT_LIMIT: f64 = 1e7;

/// One cutting-down run.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutdownResult {
    /// `∫ μ(du) · (separation time of u)`; `+∞` when some mass is never separated.
    pub theta: f64,
    /// Effective cuts that removed μ-mass.
    pub cut_count: u64,
    /// All effective cuts, including those that removed only ν-mass.
    pub events: u64,
    /// Stopped at the mass tolerance or the event budget rather than at `μ = 0`.
    pub truncated: bool,
}

impl CutdownResult {
    pub fn is_infinite(&self) -> bool {
        self.theta.is_infinite()
    }
}

fn infinite(cut_count: u64, events: u64) -> CutdownResult {
    CutdownResult { theta: f64::INFINITY, cut_count, events, truncated: false }
}

/// Some μ-atom sits on a root path without ν-mass.
fn has_unseparable_atom(x: &BiMeasureTree) -> bool {
    let pm = PathMasses::new(&x.tree, &x.nu);
    x.mu.atoms().iter().any(|(p, w)| *w > 0.0 && pm.path_mass(&x.tree, &x.nu, p) <= 0.0)
}

/// Runs the pruning process until μ is exhausted.
///
/// Θ is accumulated from the event log as `Σ t_k · μ(removed at k)`. For μ
/// with a length part the run stops once the remaining mass is at most
/// `tol · μ(T)`, and the result is marked truncated.
pub fn cutdown_run<R: Rng + ?Sized>(x: &BiMeasureTree, tol: f64, rng: &mut R) -> Result<CutdownResult> {
    if !(tol >= 0.0 && tol < 1.0) {
        return input("tolerance must lie in [0, 1)");
    }
    if has_unseparable_atom(x) {
        return Ok(infinite(0, 0));
    }
    let total = x.mu.total_mass();
    let floor = if x.mu.is_atomic() { 0.0 } else { tol * total };
    let mut state = Pruner::new(x);
    let (mut theta, mut cuts, mut events) = (0.0, 0u64, 0u64);
    loop {
        let left = state.mu_total();
        if left <= floor {
            return Ok(CutdownResult { theta, cut_count: cuts, events, truncated: left > 0.0 });
        }
        if events >= MAX_EVENTS {
            return Ok(CutdownResult { theta: theta + state.time() * left, cut_count: cuts, events, truncated: true });
        }
        match state.step(f64::INFINITY, rng) {
            Some(e) => {
                events += 1;
                if e.removed_mu_mass > 0.0 {
                    cuts += 1;
                    theta += e.time * e.removed_mu_mass;
                }
            }
            None => return Ok(infinite(cuts, events)),
        }
    }
}

/// Θ for one pruning path, `+∞` if some mass is never separated from the root.
pub fn theta_simulate<R: Rng + ?Sized>(x: &BiMeasureTree, rng: &mut R) -> Result<f64> {
    Ok(cutdown_run(x, 1e-9, rng)?.theta)
}

/// Number of effective μ-removing cuts until μ is exhausted; `None` when
/// that never happens.
pub fn cutdown_count<R: Rng + ?Sized>(x: &BiMeasureTree, rng: &mut R) -> Result<Option<u64>> {
    let r = cutdown_run(x, 0.0, rng)?;
    Ok(if r.is_infinite() || r.truncated { None } else { Some(r.cut_count) })
}

/// `P(u_1 ∈ X_{t_1}, …, u_n ∈ X_{t_n})`.
pub fn joint_survival(x: &BiMeasureTree, u: &[TreePoint], t: &[f64]) -> Result<f64> {
    if u.len() != t.len() {
        return input(format!("{} points but {} times", u.len(), t.len()));
    }
    if t.iter().any(|s| !(*s >= 0.0)) {
        return input("survival times must be nonnegative");
    }
    for p in u {
        x.tree.validate_point(p)?;
    }
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    let pm = PathMasses::new(&x.tree, &x.nu);
    let mut exponent = 0.0;
    let mut next_mass = 0.0;
    // nested spans from the innermost (largest time) outwards
    for l in (0..order.len()).rev() {
        let pts: Vec<TreePoint> = order[l..].iter().map(|&k| u[k]).collect();
        let mass = pm.span_mass(&x.tree, &x.nu, &pts);
        let diff = (mass - next_mass).max(0.0);
        if t[order[l]].is_infinite() {
            if diff > 0.0 {
                return Ok(0.0);
            }
        } else {
            exponent += t[order[l]] * diff;
        }
        next_mass = mass;
    }
    Ok((-exponent).exp())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    Exact,
    Mc,
}

/// `E[Θⁿ | x]`; `value` is `+∞` when the formula diverges.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub n: usize,
    pub mode: MomentMode,
    pub value: f64,
    pub stderr: f64,
}

impl MomentValue {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact `n!·Σ μ(u_1)…μ(u_n) ∏_j 1/ν(span(u_1…u_j))` over μ-atoms.
///
/// Each new point joins the previous span at the highest of its branch points
/// with earlier points, so span masses grow by `ν([ρ,u_j]) − max_i ν([ρ,u_i∧u_j])`.
pub fn theta_moment_exact(x: &BiMeasureTree, n: usize) -> Result<MomentValue> {
    if !x.mu.is_atomic() {
        return Err(Error::Mode("exact moments need an atomic μ".into()));
    }
    let atoms: Vec<(TreePoint, f64)> = x.mu.atoms().into_iter().filter(|a| a.1 > 0.0).collect();
    let k = atoms.len();
    if (k as f64).powi(n as i32) > EXACT_MOMENT_LIMIT {
        return Err(Error::Mode(format!("{k}^{n} atom tuples exceed the exact limit")));
    }
    let exact = |value| Ok(MomentValue { n, mode: MomentMode::Exact, value, stderr: 0.0 });
    if n == 0 {
        return exact(1.0);
    }
    if k == 0 {
        return exact(0.0);
    }
    let (t, nu) = (&x.tree, &x.nu);
    let pm = PathMasses::new(t, nu);
    let path: Vec<f64> = atoms.iter().map(|(p, _)| pm.path_mass(t, nu, p)).collect();
    if path.iter().any(|&m| m <= 0.0) {
        return exact(f64::INFINITY);
    }
    let branch: Vec<Vec<f64>> = atoms
        .iter()
        .map(|(a, _)| atoms.iter().map(|(b, _)| pm.path_mass(t, nu, &t.branch_point(a, b))).collect())
        .collect();
    let weights: Vec<f64> = atoms.iter().map(|a| a.1).collect();

    struct Walk<'a> {
        n: usize,
        path: &'a [f64],
        branch: &'a [Vec<f64>],
        weights: &'a [f64],
        chosen: Vec<usize>,
    }
    impl Walk<'_> {
        fn sum(&mut self, span: f64) -> f64 {
            if self.chosen.len() == self.n {
                return 1.0;
            }
            let mut s = 0.0;
            for j in 0..self.path.len() {
                let attach = self.chosen.iter().map(|&i| self.branch[i][j]).fold(0.0, f64::max);
                let grown = span + (self.path[j] - attach).max(0.0);
                self.chosen.push(j);
                s += self.weights[j] / grown * self.sum(grown);
                self.chosen.pop();
            }
            s
        }
    }

    let total: f64 = (0..k)
        .into_par_iter()
        .map(|first| {
            let mut w = Walk { n, path: &path, branch: &branch, weights: &weights, chosen: vec![first] };
            weights[first] / path[first] * w.sum(path[first])
        })
        .sum();
    exact(factorial(n) * total)
}

/// Monte-Carlo version of [`theta_moment_exact`] over `μ°^{⊗n}`.
pub fn theta_moment_mc(x: &BiMeasureTree, n: usize, samples: usize, seed: u64) -> Result<MomentValue> {
    if samples < 2 {
        return input("Monte-Carlo moments need at least two samples");
    }
    let mass = x.mu.total_mass();
    if n == 0 || mass == 0.0 {
        let value = if n == 0 { 1.0 } else { 0.0 };
        return Ok(MomentValue { n, mode: MomentMode::Mc, value, stderr: 0.0 });
    }
    let (t, nu) = (&x.tree, &x.nu);
    let pm = PathMasses::new(t, nu);
    let sampler = PointSampler::new(t, &x.mu)?;
    let scale = factorial(n) * mass.powi(n as i32);
    let draws: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::replicate(seed, i as u64);
            let mut pts = Vec::with_capacity(n);
            let mut prod = scale;
            for _ in 0..n {
                pts.push(sampler.sample(t, &mut r));
                prod /= pm.span_mass(t, nu, &pts);
            }
            prod
        })
        .collect();
    if draws.iter().any(|d| !d.is_finite()) {
        return Ok(MomentValue { n, mode: MomentMode::Mc, value: f64::INFINITY, stderr: 0.0 });
    }
    let mut acc = MeanVar::default();
    draws.iter().for_each(|&d| acc.push(d));
    let e = acc.estimate();
    Ok(MomentValue { n, mode: MomentMode::Mc, value: e.value, stderr: e.stderr })
}

/// Exact moment when μ is atomic and small enough, otherwise Monte-Carlo.
pub fn theta_moment(x: &BiMeasureTree, n: usize, samples: usize, seed: u64) -> Result<MomentValue> {
    match theta_moment_exact(x, n) {
        Err(Error::Mode(_)) => theta_moment_mc(x, n, samples, seed),
        other => other,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutdownRecord {
    pub replicate: usize,
    pub theta: f64,
    pub cut_count: u64,
    pub truncated: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutdownBatch {
    pub seed: u64,
    pub records: Vec<CutdownRecord>,
}

impl CutdownBatch {
    /// Fraction of replicates with infinite Θ.
    pub fn infinite_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.theta.is_infinite()).count() as f64 / self.records.len().max(1) as f64
    }

    /// Mean and standard error of `Θᵏ` over the finite replicates.
    pub fn theta_moment(&self, k: i32) -> (f64, f64) {
        let mut acc = MeanVar::default();
        self.records.iter().filter(|r| r.theta.is_finite()).for_each(|r| acc.push(r.theta.powi(k)));
        let e = acc.estimate();
        (e.value, e.stderr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("replicate,theta,cut_count,seed\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.replicate, r.theta, r.cut_count, r.seed));
        }
        s
    }
}

pub fn moment_table_csv(rows: &[MomentValue]) -> String {
    let mut s = String::from("n,exact_or_mc,value,stderr\n");
    for m in rows {
        let mode = match m.mode {
            MomentMode::Exact => "exact",
            MomentMode::Mc => "mc",
        };
        s.push_str(&format!("{},{},{},{}\n", m.n, mode, m.value, m.stderr));
    }
    s
}

/// Independent cutting-down replicates; replicate `i` draws its instance and
/// its pruning path from stream `(seed, i)`.
pub fn cutdown_batch<G>(generate: G, replicates: usize, tol: f64, seed: u64) -> Result<CutdownBatch>
where
    G: Fn(&mut SimRng) -> Result<BiMeasureTree> + Sync,
{
    let records: Result<Vec<CutdownRecord>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::replicate(seed, i as u64);
            let x = generate(&mut r)?;
            let out = cutdown_run(&x, tol, &mut r)?;
            Ok(CutdownRecord { replicate: i, theta: out.theta, cut_count: out.cut_count, truncated: out.truncated, seed })
        })
        .collect();
    Ok(CutdownBatch { seed, records: records? })
}
