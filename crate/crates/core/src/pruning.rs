//! The pruning process.
//!
//! Cuts arrive as a Poisson process with intensity `dt ⊗ ν`; a cut at `v`
//! removes every point `w` with `v ∈ [ρ, w]`. Only cuts that land in the
//! current tree change the state, so the production simulator thins: it
//! waits an exponential time with rate `ν(current tree)` and places the cut
//! according to ν restricted to the current tree.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::measure::{BiMeasureTree, PointSampler, TreeMeasure};
use crate::rng;
use crate::stats::{Estimate, MeanVar};
use crate::testfn::{check_tuple_limit, for_each_tuple, Gamma, Evaluator, TestFunction};
use crate::tree::{EdgeCover, FiniteRTree, NodeId, PrunedTree, Region, TreePoint};

/// One effective cut.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutEvent {
    #[serde(rename = "t")]
    pub time: f64,
    pub point: TreePoint,
    pub removed_mu_mass: f64,
    pub removed_nu_mass: f64,
}

/// Prefix sums over preorder positions.
#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &v) in values.iter().enumerate() {
            tree[i + 1] += v;
            let j = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if j <= n {
                tree[j] += tree[i + 1];
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.tree.len() - 1;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }

    /// Smallest position whose inclusive prefix sum exceeds `u`.
    fn search(&self, mut u: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum Status {
    Full,
    /// Only offsets below the given one remain.
    Truncated(f64),
    Removed,
}

/// Mutable pruning state over a fixed bi-measure tree.
#[derive(Clone, Debug)]
pub struct Pruner<'a> {
    x: &'a BiMeasureTree,
    status: Vec<Status>,
    nu_w: Vec<f64>,
    mu_w: Vec<f64>,
    fenwick: Fenwick,
    mu_total: f64,
    alive_mu: usize,
    alive_nu: usize,
    root_cut: bool,
    time: f64,
}

impl<'a> Pruner<'a> {
    pub fn new(x: &'a BiMeasureTree) -> Self {
        let tree = &x.tree;
        let n = tree.node_count();
        let slot_mass = |m: &TreeMeasure, v: NodeId| if v == tree.root() { m.node_atom(v) } else { m.slot_mass(v) };
        let nu_w: Vec<f64> = (0..n).map(|v| slot_mass(&x.nu, NodeId(v))).collect();
        let mu_w: Vec<f64> = (0..n).map(|v| slot_mass(&x.mu, NodeId(v))).collect();
        let by_pre: Vec<f64> = tree.preorder().iter().map(|v| nu_w[v.0]).collect();
        Pruner {
            x,
            status: vec![Status::Full; n],
            fenwick: Fenwick::new(&by_pre),
            mu_total: mu_w.iter().sum(),
            alive_mu: mu_w.iter().filter(|&&w| w > 0.0).count(),
            alive_nu: nu_w.iter().filter(|&&w| w > 0.0).count(),
            nu_w,
            mu_w,
            root_cut: false,
            time: 0.0,
        }
    }

    pub fn base(&self) -> &'a BiMeasureTree {
        self.x
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn is_empty(&self) -> bool {
        self.root_cut
    }

    /// `ν` of the current tree; exactly zero once no slot carries ν-mass.
    pub fn nu_total(&self) -> f64 {
        if self.alive_nu == 0 {
            0.0
        } else {
            self.fenwick.total().max(0.0)
        }
    }

    /// `μ` of the current tree; exactly zero once no slot carries μ-mass.
    pub fn mu_total(&self) -> f64 {
        if self.alive_mu == 0 {
            0.0
        } else {
            self.mu_total.max(0.0)
        }
    }

    fn cover_of(&self, c: NodeId) -> EdgeCover {
        if self.root_cut {
            return EdgeCover::Empty;
        }
        match self.status[c.0] {
            Status::Full => EdgeCover::Closed(self.x.tree.edge_length(c)),
            Status::Truncated(o) => EdgeCover::HalfOpen(o),
            Status::Removed => EdgeCover::Empty,
        }
    }

    /// Whether `p` is still in the current tree.
    pub fn contains_point(&self, p: &TreePoint) -> bool {
        self.contains(&self.x.tree, p)
    }

    /// μ restricted to the current tree.
    pub fn mu_state(&self) -> TreeMeasure {
        self.x.mu.restrict(&self.x.tree, self).expect("state belongs to its base tree")
    }

    /// ν restricted to the current tree.
    pub fn nu_state(&self) -> TreeMeasure {
        self.x.nu.restrict(&self.x.tree, self).expect("state belongs to its base tree")
    }

    fn set_weights(&mut self, v: NodeId, mu: f64, nu: f64) {
        let (old_mu, old_nu) = (self.mu_w[v.0], self.nu_w[v.0]);
        if old_mu > 0.0 && mu <= 0.0 {
            self.alive_mu -= 1;
        }
        if old_nu > 0.0 && nu <= 0.0 {
            self.alive_nu -= 1;
        }
        self.mu_w[v.0] = mu;
        self.nu_w[v.0] = nu;
        self.mu_total += mu - old_mu;
        if nu != old_nu {
            self.fenwick.add(self.x.tree.pre_index(v), nu - old_nu);
        }
    }

    /// Draws a point from ν restricted to the current tree. `None` if that is zero.
    pub fn sample_cut<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<TreePoint> {
        let total = self.nu_total();
        if total <= 0.0 {
            return None;
        }
        let tree = &self.x.tree;
        let pre = tree.preorder();
        let mut pos = self.fenwick.search(rng.random::<f64>() * total).min(pre.len() - 1);
        if self.nu_w[pre[pos].0] <= 0.0 {
            // rounding at a boundary: take the nearest slot with mass
            pos = (pos..pre.len())
                .chain((0..pos).rev())
                .find(|&q| self.nu_w[pre[q].0] > 0.0)
                .expect("some slot carries ν-mass");
        }
        let c = pre[pos];
        if c == tree.root() {
            return Some(TreePoint::node(c));
        }
        let cover = self.cover_of(c);
        let nu = &self.x.nu;
        let l = nu.length_part(c);
        let length_mass = l.coeff * cover.length_within(l.extent);
        let node_mass = if cover.contains_offset(tree.edge_length(c)) { nu.node_atom(c) } else { 0.0 };
        let mut u = rng.random::<f64>() * self.nu_w[c.0];
        if u < length_mass {
            let o = u / l.coeff;
            return Some(tree.point_on_edge(c, o.max(f64::MIN_POSITIVE)).expect("offset inside the edge"));
        }
        u -= length_mass;
        let mut last = None;
        for &(o, w) in nu.edge_atoms(c) {
            if !cover.contains_offset(o) {
                break;
            }
            last = Some(TreePoint::OnEdge { edge: c, offset: o });
            if u < w {
                return last;
            }
            u -= w;
        }
        if node_mass > 0.0 {
            return Some(TreePoint::node(c));
        }
        last.or_else(|| Some(tree.point_on_edge(c, cover.length_within(l.extent) * 0.5).expect("inside")))
    }

    /// Cuts at `p`, which must lie in the current tree. Returns the removed
    /// `(μ, ν)` masses.
    pub fn apply_cut(&mut self, p: &TreePoint) -> (f64, f64) {
        let tree = &self.x.tree;
        let (mu0, nu0) = (self.mu_total(), self.nu_total());
        if p.slot() == tree.root() {
            for v in 0..tree.node_count() {
                self.set_weights(NodeId(v), 0.0, 0.0);
                self.status[v] = Status::Removed;
            }
            self.root_cut = true;
            self.mu_total = 0.0;
            return (mu0, nu0);
        }
        let c = p.slot();
        let o = match *p {
            TreePoint::Node { node } => tree.edge_length(node),
            TreePoint::OnEdge { offset, .. } => offset,
        };
        let mut removed_mu = 0.0;
        let mut removed_nu = 0.0;
        let cover = EdgeCover::HalfOpen(o);
        let new_mu = self.x.mu.mass_in_cover(tree, c, cover);
        let new_nu = self.x.nu.mass_in_cover(tree, c, cover);
        removed_mu += self.mu_w[c.0] - new_mu;
        removed_nu += self.nu_w[c.0] - new_nu;
        self.set_weights(c, new_mu, new_nu);
        self.status[c.0] = Status::Truncated(o);
        let pre = tree.preorder();
        let mut pos = tree.pre_index(c) + 1;
        let end = tree.subtree_end(c);
        while pos < end {
            let v = pre[pos];
            if self.status[v.0] == Status::Removed {
                pos = tree.subtree_end(v);
                continue;
            }
            removed_mu += self.mu_w[v.0];
            removed_nu += self.nu_w[v.0];
            self.set_weights(v, 0.0, 0.0);
            self.status[v.0] = Status::Removed;
            pos += 1;
        }
        if self.alive_mu == 0 {
            self.mu_total = 0.0;
        }
        (removed_mu, removed_nu)
    }

    /// Advances by one effective cut, or to `horizon` if the next cut comes
    /// later or ν of the current tree is zero.
    pub fn step<R: Rng + ?Sized>(&mut self, horizon: f64, rng: &mut R) -> Option<CutEvent> {
        let rate = self.nu_total();
        if rate <= 0.0 {
            self.time = horizon;
            return None;
        }
        let wait: f64 = Exp1.sample(rng);
        let t = self.time + wait / rate;
        if t > horizon {
            self.time = horizon;
            return None;
        }
        self.time = t;
        let p = self.sample_cut(rng).expect("positive rate");
        let (removed_mu_mass, removed_nu_mass) = self.apply_cut(&p);
        Some(CutEvent { time: t, point: p, removed_mu_mass, removed_nu_mass })
    }

    /// Runs to `horizon`, reporting every effective cut.
    pub fn run<R: Rng + ?Sized>(&mut self, horizon: f64, rng: &mut R, mut on_event: impl FnMut(&CutEvent)) {
        while let Some(e) = self.step(horizon, rng) {
            on_event(&e);
        }
    }
}

impl Region for Pruner<'_> {
    fn tree_fingerprint(&self) -> u64 {
        self.x.tree.fingerprint()
    }

    fn contains_root(&self) -> bool {
        !self.root_cut
    }

    fn edge_cover(&self, _tree: &FiniteRTree, c: NodeId) -> EdgeCover {
        self.cover_of(c)
    }
}

/// An initial bi-measure tree with its time-ordered effective cuts.
#[derive(Clone, Debug)]
pub struct PruningPath {
    initial: BiMeasureTree,
    events: Vec<CutEvent>,
    horizon: f64,
}

impl PruningPath {
    pub fn initial(&self) -> &BiMeasureTree {
        &self.initial
    }

    pub fn events(&self) -> &[CutEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon) {
            return input(format!("time {t} outside [0, {}]", self.horizon));
        }
        Ok(())
    }

    /// The state after every cut with time `≤ t`.
    pub fn state_at(&self, t: f64) -> Result<PrunedState<'_>> {
        self.check_time(t)?;
        let cuts: Vec<TreePoint> = self.events.iter().take_while(|e| e.time <= t).map(|e| e.point).collect();
        Ok(PrunedState { x: &self.initial, pruned: self.initial.tree.prune_at_set(&cuts)? })
    }

    /// `‖μ_t‖` from the event log.
    pub fn mu_mass_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let removed: f64 = self.events.iter().take_while(|e| e.time <= t).map(|e| e.removed_mu_mass).sum();
        Ok((self.initial.mu.total_mass() - removed).max(0.0))
    }

    /// Whether `u` is still present at time `t`.
    pub fn survives(&self, u: &TreePoint, t: f64) -> bool {
        !self.events.iter().take_while(|e| e.time <= t).any(|e| self.initial.tree.precedes(&e.point, u))
    }

    /// One JSON object per line.
    pub fn events_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }
}

/// The lazy state `(base, cut set)` of a path at some time.
#[derive(Clone, Debug)]
pub struct PrunedState<'a> {
    x: &'a BiMeasureTree,
    pruned: PrunedTree<'a>,
}

impl<'a> PrunedState<'a> {
    pub fn pruned(&self) -> &PrunedTree<'a> {
        &self.pruned
    }

    pub fn is_empty(&self) -> bool {
        self.pruned.is_empty()
    }

    pub fn contains(&self, p: &TreePoint) -> bool {
        self.pruned.contains_point(p)
    }

    pub fn mu(&self) -> TreeMeasure {
        self.x.mu.restrict(&self.x.tree, &self.pruned).expect("same tree")
    }

    pub fn nu(&self) -> TreeMeasure {
        self.x.nu.restrict(&self.x.tree, &self.pruned).expect("same tree")
    }

    /// The state as a standalone bi-measure tree; `None` once the root is cut.
    pub fn materialize(&self) -> Result<Option<BiMeasureTree>> {
        let Some(mat) = self.pruned.materialize() else { return Ok(None) };
        let mu = self.x.mu.onto_materialized(&self.x.tree, &self.pruned, &mat)?;
        let nu = self.x.nu.onto_materialized(&self.x.tree, &self.pruned, &mat)?;
        Ok(Some(BiMeasureTree::new(mat.tree, mu, nu)?))
    }
}

/// Simulates the pruning process on `[0, horizon]` by sequential thinning.
pub fn simulate<R: Rng + ?Sized>(x: &BiMeasureTree, horizon: f64, rng: &mut R) -> Result<PruningPath> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return input(format!("horizon must be finite and nonnegative, got {horizon}"));
    }
    let mut events = Vec::new();
    Pruner::new(x).run(horizon, rng, |e| events.push(*e));
    Ok(PruningPath { initial: x.clone(), events, horizon })
}

/// Reference simulator: draws every atom of the Poisson process on
/// `[0, horizon] × T` and keeps those that land in the current tree.
pub fn simulate_naive<R: Rng + ?Sized>(x: &BiMeasureTree, horizon: f64, rng: &mut R) -> Result<PruningPath> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return input(format!("naive simulation needs a finite horizon, got {horizon}"));
    }
    let total = x.nu.total_mass();
    let lambda = horizon * total;
    let count = if lambda > 0.0 {
        Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut events = Vec::new();
    if count > 0 {
        let sampler = PointSampler::new(&x.tree, &x.nu)?;
        let mut state = Pruner::new(x);
        for t in times {
            let p = sampler.sample(&x.tree, rng);
            if state.contains_point(&p) {
                let (m, n) = state.apply_cut(&p);
                events.push(CutEvent { time: t, point: p, removed_mu_mass: m, removed_nu_mass: n });
            }
        }
    }
    Ok(PruningPath { initial: x.clone(), events, horizon })
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return input(format!("time must be finite and nonnegative, got {t}"));
    }
    Ok(())
}

/// `S_tΨ(x)` exactly, for atomic μ (any μ when `n = 0`).
pub fn semigroup_exact(x: &BiMeasureTree, t: f64, psi: &TestFunction) -> Result<f64> {
    check_time(t)?;
    psi.validate()?;
    match psi.gamma {
        Gamma::One => semigroup_exact_direct(x, t, psi),
        _ => semigroup_exact_subsets(x, t, psi),
    }
}

/// `∫ μ^{⊗n}(du) e^{−t ν(span u)} Φ̃(τⁿ(u))`; requires `γ ≡ 1`.
pub fn semigroup_exact_direct(x: &BiMeasureTree, t: f64, psi: &TestFunction) -> Result<f64> {
    if psi.gamma != Gamma::One {
        return Err(Error::Mode("the direct semigroup formula needs γ ≡ 1".into()));
    }
    let ev = Evaluator::new(&x.tree, &x.nu);
    weighted_tuple_sum(x, psi, &ev, |span| (-t * span).exp())
}

/// `Σ_u μ^{⊗n}(u) w(ν(span u)) Φ̃(u)` over atom tuples.
fn weighted_tuple_sum(x: &BiMeasureTree, psi: &TestFunction, ev: &Evaluator<'_>, w: impl Fn(f64) -> f64) -> Result<f64> {
    if psi.n == 0 {
        return Ok(w(ev.span_mass(&[])) * ev.phi_tilde(psi, &[], None)?);
    }
    if !x.mu.is_atomic() {
        return Err(Error::Mode("exact mode needs an atomic sampling measure".into()));
    }
    let atoms = x.mu.atoms();
    check_tuple_limit(atoms.len(), psi.n)?;
    let mut u = vec![TreePoint::node(x.tree.root()); psi.n];
    let mut sum = 0.0;
    let mut err = None;
    for_each_tuple(atoms.len(), psi.n, |idx| {
        if err.is_some() {
            return;
        }
        let mut weight = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            u[k] = atoms[i].0;
            weight *= atoms[i].1;
        }
        let factor = w(ev.span_mass(&u));
        if factor == 0.0 {
            return;
        }
        match ev.phi_tilde(psi, &u, None) {
            Ok(v) => sum += weight * factor * v,
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(sum),
    }
}

/// Largest atom count for the subset-law semigroup.
pub const SUBSET_ATOM_LIMIT: usize = 20;

/// `S_tΨ(x)` through the exact law of the set of surviving μ-atoms; works
/// for any `γ`.
pub fn semigroup_exact_subsets(x: &BiMeasureTree, t: f64, psi: &TestFunction) -> Result<f64> {
    check_time(t)?;
    if !x.mu.is_atomic() {
        return Err(Error::Mode("exact mode needs an atomic sampling measure".into()));
    }
    let atoms = x.mu.atoms();
    let k = atoms.len();
    if k > SUBSET_ATOM_LIMIT {
        return Err(Error::Mode(format!("{k} atoms exceed the subset-law limit of {SUBSET_ATOM_LIMIT}")));
    }
    check_tuple_limit(k, psi.n)?;
    let ev = Evaluator::new(&x.tree, &x.nu);
    let root_nu = x.nu.node_atom(x.tree.root());
    let full = 1usize << k;
    // f[B] = P(every atom of B survives | the root survives)
    let mut law = vec![0.0; full];
    let mut pts = Vec::with_capacity(k);
    for (mask, slot) in law.iter_mut().enumerate() {
        pts.clear();
        pts.extend((0..k).filter(|i| mask >> i & 1 == 1).map(|i| atoms[i].0));
        let mass = if pts.is_empty() { root_nu } else { ev.span_mass(&pts) };
        *slot = (-t * (mass - root_nu).max(0.0)).exp();
    }
    // Möbius inversion over supersets: P(surviving set = A)
    for i in 0..k {
        for mask in 0..full {
            if mask >> i & 1 == 0 {
                law[mask] -= law[mask | 1 << i];
            }
        }
    }
    // inner[A] = Σ_{u ∈ A^n} μ^{⊗n}(u) Φ̃(u): accumulate per exact index set, then sum over subsets
    let mut inner = vec![0.0; full];
    let mut u = vec![TreePoint::node(x.tree.root()); psi.n];
    let mut err = None;
    for_each_tuple(k, psi.n, |idx| {
        if err.is_some() {
            return;
        }
        let mut w = 1.0;
        let mut mask = 0usize;
        for (j, &i) in idx.iter().enumerate() {
            u[j] = atoms[i].0;
            w *= atoms[i].1;
            mask |= 1 << i;
        }
        match ev.phi_tilde(psi, &u, None) {
            Ok(v) => inner[mask] += w * v,
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    for i in 0..k {
        for mask in 0..full {
            if mask >> i & 1 == 1 {
                inner[mask] += inner[mask ^ 1 << i];
            }
        }
    }
    let mut total = 0.0;
    for mask in 0..full {
        let mu_mass: f64 = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| atoms[i].1).sum();
        total += law[mask] * psi.gamma.eval(mu_mass) * inner[mask];
    }
    Ok((-t * root_nu).exp() * total)
}

/// Monte-Carlo `S_tΨ(x)` over tuples drawn from `μ°`; requires `γ ≡ 1`.
pub fn semigroup_sampled(x: &BiMeasureTree, t: f64, psi: &TestFunction, samples: usize, seed: u64) -> Result<Estimate> {
    check_time(t)?;
    if psi.gamma != Gamma::One {
        return Err(Error::Mode("tuple sampling of the semigroup needs γ ≡ 1; use mc_expectation".into()));
    }
    if samples < 2 {
        return input("at least two samples are needed for a standard error");
    }
    let ev = Evaluator::new(&x.tree, &x.nu);
    let total = x.mu.total_mass();
    if psi.n == 0 || total == 0.0 {
        let mut r = rng::master(seed);
        let v = if psi.n == 0 { (-t * ev.span_mass(&[])).exp() * ev.phi_tilde(psi, &[], Some(&mut r))? } else { 0.0 };
        return Ok(Estimate { value: v, stderr: 0.0, samples });
    }
    let sampler = PointSampler::new(&x.tree, &x.mu)?;
    let values: Result<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::replicate(seed, i as u64);
            let u: Vec<TreePoint> = (0..psi.n).map(|_| sampler.sample(&x.tree, &mut r)).collect();
            let f = (-t * ev.span_mass(&u)).exp();
            Ok(total.powi(psi.n as i32) * f * ev.phi_tilde(psi, &u, Some(&mut r))?)
        })
        .collect();
    Ok(Estimate::from_samples(&values?))
}

/// Exact when possible, otherwise tuple sampling with `samples` draws.
pub fn semigroup_estimate(x: &BiMeasureTree, t: f64, psi: &TestFunction, samples: usize, seed: u64) -> Result<Estimate> {
    match semigroup_exact(x, t, psi) {
        Ok(v) => Ok(Estimate::exact(v)),
        Err(Error::Mode(_)) => semigroup_sampled(x, t, psi, samples, seed),
        Err(e) => Err(e),
    }
}

/// `ΩΨ(x) = −∫ μ^{⊗n}(du) ν(span u) Φ̃(τⁿ(u))`; requires `γ ≡ 1`.
pub fn generator_genpsi(x: &BiMeasureTree, psi: &TestFunction) -> Result<f64> {
    if psi.gamma != Gamma::One {
        return Err(Error::Mode("this form of the generator needs γ ≡ 1".into()));
    }
    psi.validate()?;
    let ev = Evaluator::new(&x.tree, &x.nu);
    Ok(-weighted_tuple_sum(x, psi, &ev, |span| span)?)
}

/// `ΩΨ(x) = ∫ ν(dv) [Ψ(x^v) − Ψ(x)]`, exact for atomic μ and any ν.
///
/// For atomic μ the pruned state `x^v` only depends on which atoms sit above
/// `v`, so the length part of ν is integrated piecewise between atom offsets.
pub fn generator_jump(x: &BiMeasureTree, psi: &TestFunction) -> Result<f64> {
    psi.validate()?;
    if psi.n > 0 && !x.mu.is_atomic() {
        return Err(Error::Mode("the jump form is exact only for atomic sampling measures".into()));
    }
    let tree = &x.tree;
    let ev = Evaluator::new(tree, &x.nu);
    let base = ev.eval_exact(psi, &x.mu, true)?;
    let pruned_value = |v: &TreePoint| -> Result<f64> {
        let pruned = tree.prune_at(v)?;
        let mu = x.mu.restrict(tree, &pruned)?;
        ev.eval_exact(psi, &mu, !pruned.is_empty())
    };
    let mut total = 0.0;
    for (p, w) in x.nu.atoms() {
        total += w * (pruned_value(&p)? - base);
    }
    for c in tree.edges() {
        let l = x.nu.length_part(c);
        if l.mass() <= 0.0 {
            continue;
        }
        let mut cuts: Vec<f64> = vec![0.0];
        cuts.extend(x.mu.edge_atoms(c).iter().map(|a| a.0).filter(|&o| o < l.extent));
        cuts.push(l.extent);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = tree.point_on_edge(c, 0.5 * (a + b))?;
            total += l.coeff * (b - a) * (pruned_value(&mid)? - base);
        }
    }
    Ok(total)
}

/// The generator: the span form when `γ ≡ 1`, the jump form otherwise.
pub fn generator_apply(x: &BiMeasureTree, psi: &TestFunction) -> Result<f64> {
    match psi.gamma {
        Gamma::One => generator_genpsi(x, psi),
        _ => generator_jump(x, psi),
    }
}

/// `Ψ` of the current state of a pruner: exact for small atomic μ, else an
/// unbiased estimate from `draws` sampled tuples.
pub fn eval_state<R: Rng>(ev: &Evaluator<'_>, psi: &TestFunction, state: &Pruner<'_>, draws: usize, rng: &mut R) -> Result<f64> {
    let mu = state.mu_state();
    let alive = !state.is_empty();
    let small = mu.is_atomic() && (mu.atom_count() as f64).powi(psi.n as i32) <= 1e4;
    if small {
        match ev.eval_exact(psi, &mu, alive) {
            Err(Error::Mode(_)) => {}
            other => return other,
        }
    }
    ev.eval_sampled(psi, &mu, alive, draws, rng)
}

/// Average of `Ψ(X_t)` over independent pruning paths. Replicate `i` uses
/// the stream `(seed, i)`, so the result does not depend on thread count.
pub fn mc_expectation(
    x: &BiMeasureTree,
    t: f64,
    psi: &TestFunction,
    replicates: usize,
    seed: u64,
) -> Result<Estimate> {
    check_time(t)?;
    psi.validate()?;
    if replicates < 2 {
        return input("mc_expectation needs at least two replicates");
    }
    let ev = Evaluator::new(&x.tree, &x.nu);
    let values: Result<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::replicate(seed, i as u64);
            let mut state = Pruner::new(x);
            state.run(t, &mut r, |_| {});
            eval_state(&ev, psi, &state, 1, &mut r)
        })
        .collect();
    let values = values?;
    let mut acc = MeanVar::default();
    values.iter().for_each(|&v| acc.push(v));
    Ok(acc.estimate())
}
