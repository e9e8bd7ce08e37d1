//! Polynomial test functions on bi-measure trees.
//!
//! A test function `Ψ^{γ,n,Φ̃}` integrates a bounded functional `Φ̃` of the
//! pointed subtree spanned by `n` sampled points:
//!
//! ```text
//! Ψ(x) = γ(‖μ‖) ∫ μ^{⊗n}(du) Φ̃(τⁿ(u))
//! ```
//!
//! `Φ̃` is a product of factors, one per index subset `I`. A factor sees the
//! subtree spanned by the sublist `u_I`, equipped with ν restricted to it:
//! `γ_I(ν(span u_I)) ∫ (ν|span)^{⊗m}(dv) φ(R(ρ, u_I, v))`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::measure::{PathMasses, PointSampler, TreeMeasure};
use crate::tree::{FiniteRTree, TreePoint};

/// Largest number of tuples summed in exact mode.
pub const EXACT_TUPLE_LIMIT: f64 = 1e7;

/// Bounded function of a distance matrix over `(ρ, u_1.., v_1..)`; index 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phi {
    Const { value: f64 },
    /// `exp(−rate · r_ij)`.
    ExpDist { i: usize, j: usize, rate: f64 },
    /// `1 / (1 + scale · r_ij)`.
    Rational { i: usize, j: usize, scale: f64 },
    Product { factors: Vec<Phi> },
    Sum { terms: Vec<Phi> },
}

impl Phi {
    pub fn one() -> Self {
        Phi::Const { value: 1.0 }
    }

    pub fn eval(&self, r: &dyn Fn(usize, usize) -> f64) -> f64 {
        match self {
            Phi::Const { value } => *value,
            Phi::ExpDist { i, j, rate } => (-rate * r(*i, *j)).exp(),
            Phi::Rational { i, j, scale } => 1.0 / (1.0 + scale * r(*i, *j)),
            Phi::Product { factors } => factors.iter().map(|f| f.eval(r)).product(),
            Phi::Sum { terms } => terms.iter().map(|f| f.eval(r)).sum(),
        }
    }

    /// An upper bound on `sup |φ|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Phi::Const { value } => value.abs(),
            Phi::ExpDist { .. } | Phi::Rational { .. } => 1.0,
            Phi::Product { factors } => factors.iter().map(Phi::sup_bound).product(),
            Phi::Sum { terms } => terms.iter().map(Phi::sup_bound).sum(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Phi::Const { .. } => true,
            Phi::ExpDist { .. } | Phi::Rational { .. } => false,
            Phi::Product { factors } => factors.iter().all(Phi::is_constant),
            Phi::Sum { terms } => terms.iter().all(Phi::is_constant),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Phi::Const { value } => {
                if !value.is_finite() {
                    return input("constant must be finite");
                }
            }
            Phi::ExpDist { i, j, rate: s } | Phi::Rational { i, j, scale: s } => {
                if *i >= dim || *j >= dim {
                    return input(format!("distance index ({i}, {j}) out of range for {dim} points"));
                }
                if !(*s >= 0.0 && s.is_finite()) {
                    return input("rates and scales must be finite and nonnegative");
                }
            }
            Phi::Product { factors: v } | Phi::Sum { terms: v } => {
                for f in v {
                    f.validate(dim)?;
                }
            }
        }
        Ok(())
    }
}

/// Mass damping `γ`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gamma {
    One,
    ExpDamp { c: f64 },
}

impl Gamma {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Gamma::One => 1.0,
            Gamma::ExpDamp { c } => (-c * x).exp(),
        }
    }

    /// `sup_{x ≥ 0} x^k γ(x)`.
    pub fn sup_power(&self, k: usize) -> f64 {
        match *self {
            _ if k == 0 => 1.0,
            Gamma::One => f64::INFINITY,
            Gamma::ExpDamp { c } => {
                let k = k as f64;
                (k / (c * std::f64::consts::E)).powf(k)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Gamma::One => Ok(()),
            Gamma::ExpDamp { c } if c > 0.0 && c.is_finite() => Ok(()),
            Gamma::ExpDamp { c } => input(format!("damping rate must be positive, got {c}")),
        }
    }
}

/// `Φ^{m,φ}`: `m` points sampled from the measure of a pointed space, fed
/// with the marked points into `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    pub m: usize,
    pub phi: Phi,
}

impl PolynomialSpec {
    /// Exact value on a tree with marked points and an atomic measure.
    pub fn eval_exact(&self, tree: &FiniteRTree, marked: &[TreePoint], measure: &TreeMeasure) -> Result<f64> {
        self.phi.validate(1 + marked.len() + self.m)?;
        if self.m == 0 || self.phi.is_constant() {
            let base = self.eval_at(tree, marked, &[]);
            return Ok(if self.m == 0 { base } else { base * measure.total_mass().powi(self.m as i32) });
        }
        if !measure.is_atomic() {
            return Err(Error::Mode("exact polynomial evaluation needs an atomic measure".into()));
        }
        let atoms = measure.atoms();
        if (atoms.len() as f64).powi(self.m as i32) > EXACT_TUPLE_LIMIT {
            return Err(Error::Mode(format!("{}^{} tuples exceed the exact-mode limit", atoms.len(), self.m)));
        }
        let mut total = 0.0;
        for_each_tuple(atoms.len(), self.m, |idx| {
            let vs: Vec<TreePoint> = idx.iter().map(|&i| atoms[i].0).collect();
            let w: f64 = idx.iter().map(|&i| atoms[i].1).product();
            total += w * self.eval_at(tree, marked, &vs);
        });
        Ok(total)
    }

    /// One unbiased draw of the polynomial: `‖m‖^m φ(R(ρ, u, V))` with `V ~ (m°)^{⊗m}`.
    pub fn eval_sampled(
        &self,
        tree: &FiniteRTree,
        marked: &[TreePoint],
        measure: &TreeMeasure,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        if self.m == 0 {
            return Ok(self.eval_at(tree, marked, &[]));
        }
        let total = measure.total_mass();
        if total == 0.0 {
            return Ok(0.0);
        }
        let sampler = PointSampler::new(tree, measure)?;
        let vs: Vec<TreePoint> = (0..self.m).map(|_| sampler.sample(tree, rng)).collect();
        Ok(total.powi(self.m as i32) * self.eval_at(tree, marked, &vs))
    }

    fn eval_at(&self, tree: &FiniteRTree, marked: &[TreePoint], sampled: &[TreePoint]) -> f64 {
        let root = TreePoint::node(tree.root());
        let point = |i: usize| -> TreePoint {
            if i == 0 {
                root
            } else if i <= marked.len() {
                marked[i - 1]
            } else {
                sampled[i - 1 - marked.len()]
            }
        };
        self.phi.eval(&|i, j| tree.distance(&point(i), &point(j)))
    }
}

/// One factor of `Φ̃`, acting on the sublist `u_I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    /// Zero-based positions in the sampled tuple.
    pub subset: Vec<usize>,
    pub gamma: Gamma,
    pub poly: PolynomialSpec,
}

/// `Ψ^{γ,n,Φ̃}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    pub n: usize,
    pub gamma: Gamma,
    pub factors: Vec<Factor>,
}

impl TestFunction {
    pub fn new(id: impl Into<String>, n: usize, gamma: Gamma, factors: Vec<Factor>) -> Result<Self> {
        let f = TestFunction { id: id.into(), n, gamma, factors };
        f.validate()?;
        Ok(f)
    }

    /// `‖μ‖^n`.
    pub fn mass_power(n: usize) -> Self {
        TestFunction { id: format!("mass_pow_{n}"), n, gamma: Gamma::One, factors: Vec::new() }
    }

    /// Single factor over the whole tuple, damped by `γ(‖μ‖)` only.
    pub fn class_f(id: impl Into<String>, n: usize, gamma: Gamma, poly: PolynomialSpec) -> Result<Self> {
        Self::new(id, n, gamma, vec![Factor { subset: (0..n).collect(), gamma: Gamma::One, poly }])
    }

    pub fn validate(&self) -> Result<()> {
        self.gamma.validate()?;
        for f in &self.factors {
            f.gamma.validate()?;
            let mut seen = vec![false; self.n];
            for &i in &f.subset {
                if i >= self.n || seen[i] {
                    return input(format!("factor subset {:?} is not a set of indices below {}", f.subset, self.n));
                }
                seen[i] = true;
            }
            f.poly.phi.validate(1 + f.subset.len() + f.poly.m)?;
        }
        Ok(())
    }

    /// `sup |Ψ|` from the primitive bounds; infinite for undamped `n ≥ 1`.
    pub fn sup_bound(&self) -> f64 {
        let factors: f64 = self.factors.iter().map(|f| f.gamma.sup_power(f.poly.m) * f.poly.phi.sup_bound()).product();
        self.gamma.sup_power(self.n) * factors
    }
}

/// The default suite used by convergence reports and acceptance checks.
pub fn default_suite() -> Vec<TestFunction> {
    let r = |i, j| Phi::ExpDist { i, j, rate: 1.0 };
    let poly0 = |phi| PolynomialSpec { m: 0, phi };
    let nu_damped = |subset: Vec<usize>| Factor { subset, gamma: Gamma::ExpDamp { c: 1.0 }, poly: poly0(Phi::one()) };
    vec![
        TestFunction { id: "damped_const".into(), n: 0, gamma: Gamma::ExpDamp { c: 1.0 }, factors: vec![] },
        TestFunction {
            id: "root_dist_n1".into(),
            n: 1,
            gamma: Gamma::One,
            factors: vec![Factor { subset: vec![0], gamma: Gamma::One, poly: poly0(r(0, 1)) }],
        },
        TestFunction {
            id: "pair_dist_n2".into(),
            n: 2,
            gamma: Gamma::One,
            factors: vec![Factor { subset: vec![0, 1], gamma: Gamma::One, poly: poly0(r(1, 2)) }],
        },
        TestFunction { id: "nu_path_n1".into(), n: 1, gamma: Gamma::One, factors: vec![nu_damped(vec![0])] },
        TestFunction {
            id: "nu_spans_n2".into(),
            n: 2,
            gamma: Gamma::One,
            factors: vec![nu_damped(vec![0]), nu_damped(vec![1]), nu_damped(vec![0, 1])],
        },
    ]
}

/// Calls `f` on every `k`-tuple over `0..n` in lexicographic order.
pub fn for_each_tuple(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; k];
    if k > 0 && n == 0 {
        return;
    }
    loop {
        f(&idx);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Evaluates test functions on states of one base tree with a fixed ν.
///
/// A state is a sub-measure of μ on a subtree containing the root; as long
/// as a sampled tuple is in the state its span and ν on the span are those
/// of the base tree.
pub struct Evaluator<'a> {
    pub tree: &'a FiniteRTree,
    pub nu: &'a TreeMeasure,
    nu_paths: PathMasses,
}

impl<'a> Evaluator<'a> {
    pub fn new(tree: &'a FiniteRTree, nu: &'a TreeMeasure) -> Self {
        Evaluator { tree, nu, nu_paths: PathMasses::new(tree, nu) }
    }

    /// `ν(span(ρ, points))`.
    pub fn span_mass(&self, points: &[TreePoint]) -> f64 {
        if points.is_empty() {
            self.nu.node_atom(self.tree.root())
        } else {
            self.nu_paths.span_mass(self.tree, self.nu, points)
        }
    }

    pub fn path_mass(&self, p: &TreePoint) -> f64 {
        self.nu_paths.path_mass(self.tree, self.nu, p)
    }

    fn factor(&self, f: &Factor, u: &[TreePoint], rng: Option<&mut dyn RngCore>) -> Result<f64> {
        let pts: Vec<TreePoint> = f.subset.iter().map(|&i| u[i]).collect();
        let g = f.gamma.eval(self.span_mass(&pts));
        if g == 0.0 {
            return Ok(0.0);
        }
        if f.poly.m == 0 {
            return Ok(g * f.poly.eval_at(self.tree, &pts, &[]));
        }
        let gen = if pts.is_empty() { vec![TreePoint::node(self.tree.root())] } else { pts.clone() };
        let restricted = self.nu.restrict(self.tree, &self.tree.span(&gen)?)?;
        let value = match rng {
            Some(rng) if !restricted.is_atomic() => f.poly.eval_sampled(self.tree, &pts, &restricted, rng)?,
            _ => f.poly.eval_exact(self.tree, &pts, &restricted)?,
        };
        Ok(g * value)
    }

    /// `Φ̃(τⁿ(u))`. Needs `rng` only for factors that integrate a non-atomic ν.
    pub fn phi_tilde(&self, psi: &TestFunction, u: &[TreePoint], mut rng: Option<&mut dyn RngCore>) -> Result<f64> {
        let mut v = 1.0;
        for f in &psi.factors {
            let r: Option<&mut dyn RngCore> = match &mut rng {
                Some(r) => Some(&mut **r),
                None => None,
            };
            v *= self.factor(f, u, r)?;
            if v == 0.0 {
                break;
            }
        }
        Ok(v)
    }

    /// Exact `Ψ` of the state carrying `mu` (atomic). `root_alive = false` is
    /// the empty state, where every test function vanishes.
    pub fn eval_exact(&self, psi: &TestFunction, mu: &TreeMeasure, root_alive: bool) -> Result<f64> {
        if !root_alive {
            return Ok(0.0);
        }
        let total = mu.total_mass();
        if psi.n == 0 {
            return Ok(psi.gamma.eval(total) * self.phi_tilde(psi, &[], None)?);
        }
        if !mu.is_atomic() {
            return Err(Error::Mode("exact evaluation needs an atomic sampling measure".into()));
        }
        let atoms = mu.atoms();
        check_tuple_limit(atoms.len(), psi.n)?;
        let mut sum = 0.0;
        let mut err = None;
        let mut u = vec![TreePoint::node(self.tree.root()); psi.n];
        for_each_tuple(atoms.len(), psi.n, |idx| {
            if err.is_some() {
                return;
            }
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                u[k] = atoms[i].0;
                w *= atoms[i].1;
            }
            match self.phi_tilde(psi, &u, None) {
                Ok(v) => sum += w * v,
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(psi.gamma.eval(total) * sum)
    }

    /// Unbiased estimate of `Ψ` of the state carrying `mu`, averaging `draws`
    /// independent tuples.
    pub fn eval_sampled(
        &self,
        psi: &TestFunction,
        mu: &TreeMeasure,
        root_alive: bool,
        draws: usize,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        if !root_alive {
            return Ok(0.0);
        }
        let total = mu.total_mass();
        let g = psi.gamma.eval(total);
        if psi.n == 0 {
            return Ok(g * self.phi_tilde(psi, &[], Some(rng))?);
        }
        if total == 0.0 || g == 0.0 {
            return Ok(0.0);
        }
        let sampler = PointSampler::new(self.tree, mu)?;
        let draws = draws.max(1);
        let mut acc = 0.0;
        for _ in 0..draws {
            let u: Vec<TreePoint> = (0..psi.n).map(|_| sampler.sample(self.tree, rng)).collect();
            acc += self.phi_tilde(psi, &u, Some(rng))?;
        }
        Ok(g * total.powi(psi.n as i32) * acc / draws as f64)
    }
}

pub(crate) fn check_tuple_limit(atoms: usize, n: usize) -> Result<()> {
    if (atoms as f64).powi(n as i32) > EXACT_TUPLE_LIMIT {
        return Err(Error::Mode(format!("{atoms}^{n} tuples exceed the exact-mode limit")));
    }
    Ok(())
}
