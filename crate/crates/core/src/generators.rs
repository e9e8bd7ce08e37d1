//! Random and deterministic constructions of bi-measure trees.
//!
//! Conditioned Galton-Watson trees are drawn with the cycle lemma: `N + 1`
//! i.i.d. offspring counts conditioned to sum to `N` are rotated into the
//! unique valid Łukasiewicz path, which is then read as a plane tree in
//! preorder. Node ids of generated trees are preorder positions.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, input, Error, Result};
use crate::measure::{BiMeasureTree, TreeMeasure};
use crate::tree::{FiniteRTree, NodeId, TreePoint};

/// Largest offspring count kept for heavy-tailed laws.
pub const HEAVY_TAIL_KMAX: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OffspringFamily {
    Poisson { lambda: f64 },
    /// `P(k) = p (1 − p)^k`.
    Geometric { p: f64 },
    Binary { p0: f64, p2: f64 },
    /// `P(k) = c k^{−1−α}` for `2 ≤ k ≤ k_max`; `P(0)`, `P(1)` make the law critical.
    HeavyTail { alpha: f64, c: f64 },
    Table { pmf: Vec<f64> },
}

/// An offspring law on the nonnegative integers.
#[derive(Clone, Debug)]
pub struct OffspringDistribution {
    family: OffspringFamily,
    /// Explicit pmf for the table-backed families.
    table: Option<Vec<f64>>,
    cumulative: Option<Vec<f64>>,
    truncated_mass: f64,
}

impl OffspringDistribution {
    pub fn new(family: OffspringFamily) -> Result<Self> {
        let mut truncated_mass = 0.0;
        let table = match &family {
            OffspringFamily::Poisson { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return input(format!("poisson rate must be positive, got {lambda}"));
                }
                None
            }
            OffspringFamily::Geometric { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return input(format!("geometric parameter must be in (0, 1], got {p}"));
                }
                None
            }
            OffspringFamily::Binary { p0, p2 } => {
                if !(*p0 >= 0.0 && *p2 >= 0.0 && ((p0 + p2) - 1.0).abs() < 1e-12) {
                    return input(format!("binary law needs p0 + p2 = 1, got {p0} + {p2}"));
                }
                Some(vec![*p0, 0.0, *p2])
            }
            OffspringFamily::HeavyTail { alpha, c } => {
                let (pmf, tail) = heavy_tail_pmf(*alpha, *c, HEAVY_TAIL_KMAX)?;
                truncated_mass = tail;
                Some(pmf)
            }
            OffspringFamily::Table { pmf } => {
                if pmf.is_empty() || pmf.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return input("offspring table must be a nonempty list of nonnegative numbers");
                }
                let s: f64 = pmf.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return input(format!("offspring table sums to {s}, not 1"));
                }
                Some(pmf.clone())
            }
        };
        let cumulative = table.as_ref().map(|t| {
            let mut acc = 0.0;
            t.iter().map(|p| {
                acc += p;
                acc
            }).collect()
        });
        Ok(OffspringDistribution { family, table, cumulative, truncated_mass })
    }

    pub fn family(&self) -> &OffspringFamily {
        &self.family
    }

    /// Mass dropped by truncating a heavy tail at [`HEAVY_TAIL_KMAX`].
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match &self.family {
            OffspringFamily::Poisson { lambda } => {
                (-lambda + k as f64 * lambda.ln() - ln_factorial(k)).exp()
            }
            OffspringFamily::Geometric { p } => p * (1.0 - p).powi(k as i32),
            _ => self.table.as_ref().unwrap().get(k).copied().unwrap_or(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.family {
            OffspringFamily::Poisson { lambda } => *lambda,
            OffspringFamily::Geometric { p } => (1.0 - p) / p,
            _ => self.table.as_ref().unwrap().iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match &self.family {
            OffspringFamily::Poisson { lambda } => *lambda,
            OffspringFamily::Geometric { p } => (1.0 - p) / (p * p),
            _ => {
                let m = self.mean();
                let t = self.table.as_ref().unwrap();
                t.iter().enumerate().map(|(k, p)| (k as f64 - m).powi(2) * p).sum()
            }
        }
    }

    /// `E[η] ≤ 1`.
    pub fn is_critical_or_subcritical(&self) -> bool {
        self.mean() <= 1.0 + 1e-12
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.family {
            OffspringFamily::Poisson { lambda } => {
                Poisson::new(*lambda).expect("validated rate").sample(rng) as usize
            }
            OffspringFamily::Geometric { p } => {
                Geometric::new(*p).expect("validated parameter").sample(rng) as usize
            }
            _ => {
                let cum = self.cumulative.as_ref().unwrap();
                let u = rng.random::<f64>() * cum.last().unwrap();
                cum.partition_point(|&c| c <= u).min(cum.len() - 1)
            }
        }
    }

    /// Whether `N + 1` offspring counts can sum to `N` at all.
    fn lattice_allows(&self, n: usize) -> bool {
        let Some(t) = &self.table else { return true };
        let support: Vec<usize> = (0..t.len()).filter(|&k| t[k] > 0.0).collect();
        if support.first() != Some(&0) {
            return false;
        }
        let max = *support.last().unwrap();
        if max == 0 || max * (n + 1) < n {
            return false;
        }
        let g = support.iter().fold(0usize, |g, &k| gcd(g, k));
        n % g == 0
    }

    /// `N + 1` offspring counts conditioned to sum to `N`.
    fn conditioned_counts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, max_attempts: usize) -> Result<Vec<usize>> {
        match &self.family {
            // i.i.d. Poisson conditioned on the sum is multinomial with equal cells
            OffspringFamily::Poisson { .. } => {
                let mut counts = vec![0usize; n + 1];
                for _ in 0..n {
                    counts[rng.random_range(0..=n)] += 1;
                }
                Ok(counts)
            }
            // i.i.d. geometric conditioned on the sum is a uniform weak composition
            OffspringFamily::Geometric { .. } => {
                let mut bars = sample_indices(rng, 2 * n, n).into_vec();
                bars.sort_unstable();
                let mut counts = Vec::with_capacity(n + 1);
                let mut prev = 0usize;
                for (i, &b) in bars.iter().enumerate() {
                    counts.push(b - prev - usize::from(i > 0));
                    prev = b;
                }
                counts.push(2 * n - 1 - prev);
                Ok(counts)
            }
            _ => {
                if !self.lattice_allows(n) {
                    return domain(format!("no tree with {n} non-root nodes has positive probability"));
                }
                let mut counts = vec![0usize; n + 1];
                'attempt: for _ in 0..max_attempts {
                    let mut sum = 0usize;
                    for c in counts.iter_mut() {
                        *c = self.sample(rng);
                        sum += *c;
                        if sum > n {
                            continue 'attempt;
                        }
                    }
                    if sum == n {
                        return Ok(counts);
                    }
                }
                domain(format!("rejection budget of {max_attempts} attempts exhausted for N = {n}"))
            }
        }
    }
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            OffspringFamily::Poisson { lambda } => write!(f, "poisson:{lambda}"),
            OffspringFamily::Geometric { p } => write!(f, "geometric:{p}"),
            OffspringFamily::Binary { p0, p2 } => write!(f, "binary:{p0},{p2}"),
            OffspringFamily::HeavyTail { alpha, c } => write!(f, "stable:alpha={alpha},C={c}"),
            OffspringFamily::Table { pmf } => {
                let parts: Vec<String> = pmf.iter().map(|p| p.to_string()).collect();
                write!(f, "table:{}", parts.join(","))
            }
        }
    }
}

/// Parses `poisson:1.0`, `geometric:0.5`, `binary`, `binary:0.3,0.7`,
/// `stable:alpha=1.5,C=0.3` and `table:0.5,0,0.5`.
impl FromStr for OffspringDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.is_empty())
                .map(|a| a.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad number '{a}' in '{s}'"))))
                .collect()
        };
        let family = match name.trim().to_ascii_lowercase().as_str() {
            "poisson" => {
                let v = nums()?;
                OffspringFamily::Poisson { lambda: v.first().copied().unwrap_or(1.0) }
            }
            "geometric" => {
                let v = nums()?;
                OffspringFamily::Geometric { p: v.first().copied().unwrap_or(0.5) }
            }
            "binary" => {
                let v = nums()?;
                match v.as_slice() {
                    [] => OffspringFamily::Binary { p0: 0.5, p2: 0.5 },
                    [p0, p2] => OffspringFamily::Binary { p0: *p0, p2: *p2 },
                    _ => return input(format!("binary takes two probabilities: '{s}'")),
                }
            }
            "stable" | "heavytail" | "heavy_tail" => {
                let mut alpha = None;
                let mut c = None;
                for kv in args.split(',').filter(|a| !a.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::Input(format!("expected key=value in '{s}'")))?;
                    let v: f64 = v.trim().parse().map_err(|_| Error::Input(format!("bad number in '{kv}'")))?;
                    match k.trim() {
                        "alpha" => alpha = Some(v),
                        "C" | "c" => c = Some(v),
                        other => return input(format!("unknown parameter '{other}' in '{s}'")),
                    }
                }
                let alpha = alpha.ok_or_else(|| Error::Input(format!("missing alpha in '{s}'")))?;
                let c = match c {
                    Some(c) => c,
                    None => 0.5 * max_heavy_tail_constant(alpha, HEAVY_TAIL_KMAX)?,
                };
                OffspringFamily::HeavyTail { alpha, c }
            }
            "table" => OffspringFamily::Table { pmf: nums()? },
            other => return input(format!("unknown offspring family '{other}'")),
        };
        OffspringDistribution::new(family)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

fn power_sum(exponent: f64, kmax: usize) -> f64 {
    // summed from the small terms up for accuracy
    (2..=kmax).rev().map(|k| (k as f64).powf(-exponent)).sum()
}

/// Largest tail constant for which the critical heavy-tailed law exists.
pub fn max_heavy_tail_constant(alpha: f64, kmax: usize) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return domain(format!("stable index alpha must lie in (1, 2), got {alpha}"));
    }
    Ok(1.0 / power_sum(alpha, kmax))
}

fn heavy_tail_pmf(alpha: f64, c: f64, kmax: usize) -> Result<(Vec<f64>, f64)> {
    let cmax = max_heavy_tail_constant(alpha, kmax)?;
    if !(c > 0.0 && c <= cmax) {
        return domain(format!(
            "tail constant C = {c} admits no critical law for alpha = {alpha}; choose 0 < C <= {cmax:.6}"
        ));
    }
    let mut pmf = vec![0.0; kmax + 1];
    for (k, p) in pmf.iter_mut().enumerate().skip(2) {
        *p = c * (k as f64).powf(-1.0 - alpha);
    }
    let tail_mean = c * power_sum(alpha, kmax);
    let tail_mass = c * power_sum(1.0 + alpha, kmax);
    pmf[1] = 1.0 - tail_mean;
    pmf[0] = 1.0 - pmf[1] - tail_mass;
    // mass beyond kmax that the untruncated law would carry (integral estimate)
    let truncated = c * (kmax as f64).powf(-alpha) / alpha;
    Ok((pmf, truncated))
}

/// Edge length making conditioned trees with finite offspring variance
/// converge to the Brownian CRT: `σ / √N`.
pub fn crt_scale(n: usize, sigma: f64) -> f64 {
    sigma / (n as f64).sqrt()
}

/// Edge length for offspring laws in the domain of attraction of an
/// α-stable law with tail `η(k) ~ C k^{−1−α}`:
/// `N^{−(1−1/α)} · (α(α−1) / (C Γ(2−α)))^{−1/α}`.
pub fn stable_scale(n: usize, alpha: f64, c: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) || !(c > 0.0) {
        return domain(format!("stable scaling needs 1 < alpha < 2 and C > 0 (got {alpha}, {c})"));
    }
    let bar = 1.0 - 1.0 / alpha;
    let k = alpha * (alpha - 1.0) / (c * gamma(2.0 - alpha));
    Ok((n as f64).powf(-bar) * k.powf(-1.0 / alpha))
}

/// Reads a Łukasiewicz word (child counts in preorder) as a plane tree with unit edges.
pub fn tree_from_lukasiewicz(counts: &[usize]) -> Result<FiniteRTree> {
    let total = counts.len();
    if total == 0 || counts.iter().sum::<usize>() != total - 1 {
        return input("a Łukasiewicz word of length n + 1 must sum to n");
    }
    let mut parents = vec![None; total];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    if counts[0] > 0 {
        stack.push((0, counts[0]));
    }
    for (i, &c) in counts.iter().enumerate().skip(1) {
        let Some(top) = stack.last_mut() else {
            return input("Łukasiewicz path ends before the last letter");
        };
        parents[i] = Some(top.0);
        top.1 -= 1;
        if top.1 == 0 {
            stack.pop();
        }
        if c > 0 {
            stack.push((i, c));
        }
    }
    if !stack.is_empty() {
        return input("Łukasiewicz path does not close");
    }
    FiniteRTree::from_parents(&parents, &vec![1.0; total])
}

/// Child counts in preorder: the plane shape of a tree.
pub fn lukasiewicz_word(tree: &FiniteRTree) -> Vec<usize> {
    tree.preorder().iter().map(|&v| tree.children(v).len()).collect()
}

/// The rotation of `counts` (summing to `len − 1`) whose walk stays
/// nonnegative until the last step.
pub fn cycle_lemma_rotation(counts: &[usize]) -> Vec<usize> {
    let mut s: i64 = 0;
    let mut best = (0i64, 0usize);
    for (k, &c) in counts.iter().enumerate() {
        if s < best.0 {
            best = (s, k);
        }
        s += c as i64 - 1;
    }
    let j = best.1;
    counts[j..].iter().chain(&counts[..j]).copied().collect()
}

/// Galton-Watson tree conditioned on `n` nodes besides the root, unit edges.
pub fn gw_conditioned<R: Rng + ?Sized>(eta: &OffspringDistribution, n: usize, rng: &mut R) -> Result<FiniteRTree> {
    gw_conditioned_with_budget(eta, n, rng, 1_000_000)
}

pub fn gw_conditioned_with_budget<R: Rng + ?Sized>(
    eta: &OffspringDistribution,
    n: usize,
    rng: &mut R,
    max_attempts: usize,
) -> Result<FiniteRTree> {
    if n == 0 {
        return input("conditioned trees need at least one non-root node");
    }
    let counts = eta.conditioned_counts(n, rng, max_attempts)?;
    tree_from_lukasiewicz(&cycle_lemma_rotation(&counts))
}

/// Reference sampler: grow unconditioned trees and keep those of the right size.
pub fn gw_conditioned_by_rejection<R: Rng + ?Sized>(
    eta: &OffspringDistribution,
    n: usize,
    rng: &mut R,
    max_attempts: usize,
) -> Result<FiniteRTree> {
    if n == 0 {
        return input("conditioned trees need at least one non-root node");
    }
    'attempt: for _ in 0..max_attempts {
        let mut counts = Vec::with_capacity(n + 1);
        let mut open: i64 = 1;
        while open > 0 {
            if counts.len() == n + 1 {
                continue 'attempt;
            }
            let c = eta.sample(rng);
            counts.push(c);
            open += c as i64 - 1;
        }
        if counts.len() == n + 1 {
            return tree_from_lukasiewicz(&counts);
        }
    }
    domain(format!("rejection budget of {max_attempts} attempts exhausted for N = {n}"))
}

/// All plane trees with `n` non-root nodes and their conditional probabilities under `eta`.
pub fn enumerate_plane_trees(eta: &OffspringDistribution, n: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(eta: &OffspringDistribution, n: usize, word: &mut Vec<usize>, open: usize, weight: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let placed = word.len();
        if placed == n + 1 {
            if open == 0 {
                out.push((word.clone(), weight));
            }
            return;
        }
        if open == 0 {
            return;
        }
        let remaining = n + 1 - placed;
        for c in 0..remaining {
            // after this letter: open − 1 + c slots must fit the remaining − 1 letters
            let next_open = open - 1 + c;
            if next_open > remaining - 1 {
                break;
            }
            let w = eta.pmf(c);
            if w == 0.0 {
                continue;
            }
            word.push(c);
            rec(eta, n, word, next_open, weight * w, out);
            word.pop();
        }
    }
    let mut out = Vec::new();
    rec(eta, n, &mut Vec::new(), 1, 1.0, &mut out);
    let z: f64 = out.iter().map(|x| x.1).sum();
    for x in &mut out {
        x.1 /= z;
    }
    out
}

/// Piecewise-linear excursion on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    breakpoints: Vec<(f64, f64)>,
}

impl Excursion {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return input("an excursion needs at least two breakpoints");
        }
        let (t0, v0) = breakpoints[0];
        let (t1, v1) = *breakpoints.last().unwrap();
        if t0 != 0.0 || t1 != 1.0 {
            return input("excursion must be defined on [0, 1]");
        }
        if v0 != 0.0 || v1 != 0.0 {
            return input("excursion must start and end at 0");
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return input("excursion times must be strictly increasing");
            }
        }
        if breakpoints.iter().any(|&(_, v)| !(v >= 0.0 && v.is_finite())) {
            return input("excursion values must be finite and nonnegative");
        }
        Ok(Excursion { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,value\n");
        for (t, v) in &self.breakpoints {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }
}

/// Depth-first contour of a tree: `2N + 1` breakpoints at times `k / 2N`
/// carrying the heights of the visited nodes.
pub fn contour(tree: &FiniteRTree) -> Result<Excursion> {
    let n = tree.node_count() - 1;
    if n == 0 {
        return input("contour of a single-node tree");
    }
    let mut heights = Vec::with_capacity(2 * n + 1);
    let mut stack: Vec<(NodeId, usize)> = vec![(tree.root(), 0)];
    heights.push(0.0);
    while let Some((v, next)) = stack.pop() {
        if let Some(&c) = tree.children(v).get(next) {
            stack.push((v, next + 1));
            stack.push((c, 0));
            heights.push(tree.height(c));
        } else if let Some(&(p, _)) = stack.last() {
            heights.push(tree.height(p));
        }
    }
    let steps = (2 * n) as f64;
    Excursion::new(heights.into_iter().enumerate().map(|(k, h)| (k as f64 / steps, h)).collect())
}

/// The glue map: the real tree coded by a piecewise-linear excursion together
/// with the push-forward of Lebesgue measure on `[0, 1]`.
///
/// Each linear piece spreads its duration uniformly over the tree segment it
/// traverses; flat pieces put their duration as an atom on a single point.
pub fn glue(e: &Excursion) -> Result<(FiniteRTree, TreeMeasure)> {
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut height: Vec<f64> = vec![0.0];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut density: Vec<f64> = vec![0.0];
    let mut atom: Vec<f64> = vec![0.0];
    let mut path: Vec<usize> = vec![0];

    for w in e.breakpoints().windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        let dt = t1 - t0;
        let top = *path.last().unwrap();
        if v1 > v0 {
            let id = parent.len();
            parent.push(Some(top));
            height.push(v1);
            children.push(Vec::new());
            children[top].push(id);
            density.push(dt / (v1 - v0));
            atom.push(0.0);
            path.push(id);
        } else if v1 == v0 {
            atom[top] += dt;
        } else {
            let speed_inv = dt / (v0 - v1);
            loop {
                let c = *path.last().unwrap();
                let p = path[path.len() - 2];
                if height[p] > v1 {
                    density[c] += speed_inv;
                    path.pop();
                } else if height[p] == v1 {
                    density[c] += speed_inv;
                    path.pop();
                    break;
                } else {
                    // stop inside the edge (p, c): split it at height v1
                    let id = parent.len();
                    parent.push(Some(p));
                    height.push(v1);
                    children.push(vec![c]);
                    density.push(density[c]);
                    atom.push(0.0);
                    let slot = children[p].iter().position(|&x| x == c).unwrap();
                    children[p][slot] = id;
                    parent[c] = Some(id);
                    density[c] += speed_inv;
                    path.pop();
                    path.push(id);
                    break;
                }
            }
        }
    }
    if path != [0] {
        return input("excursion did not return to the root");
    }

    // relabel in preorder
    let n = parent.len();
    let mut new_id = vec![0usize; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        new_id[v] = order.len();
        order.push(v);
        for &c in children[v].iter().rev() {
            stack.push(c);
        }
    }
    let mut parents = vec![None; n];
    let mut lengths = vec![0.0; n];
    for &v in &order {
        if let Some(p) = parent[v] {
            parents[new_id[v]] = Some(new_id[p]);
            lengths[new_id[v]] = height[v] - height[p];
        }
    }
    let tree = FiniteRTree::from_parents(&parents, &lengths)?;
    let mut coeffs = vec![0.0; n];
    for &v in &order {
        if parent[v].is_some() {
            coeffs[new_id[v]] = density[v];
        }
    }
    let mut mu = TreeMeasure::with_length_coeffs(&tree, &coeffs)?;
    for &v in &order {
        if atom[v] > 0.0 {
            mu.add_atom(&tree, TreePoint::node(NodeId(new_id[v])), atom[v])?;
        }
    }
    Ok((tree, mu))
}

/// `rescale(T, a)`: every edge length multiplied by `a`.
pub fn rescale(tree: &FiniteRTree, a: f64) -> Result<FiniteRTree> {
    tree.rescaled(a)
}

/// `rescale_measure(m, f)`: every mass multiplied by `f`.
pub fn rescale_measure(m: &TreeMeasure, factor: f64) -> Result<TreeMeasure> {
    m.scaled(factor)
}

/// The sampling and pruning measures on a conditioned tree with `n`
/// non-root nodes and edge length `a`.
#[derive(Clone, Debug)]
pub struct StandardMeasures {
    /// Normalized length measure.
    pub mu_ske: TreeMeasure,
    /// Uniform probability on the non-root nodes.
    pub mu_nod: TreeMeasure,
    /// Length measure, `a·N·μ^ske`.
    pub nu_ske: TreeMeasure,
    /// `a·N·μ^nod`.
    pub nu_nod: TreeMeasure,
    /// Atoms `c(v) − 1` on nodes with at least two children.
    pub nu_adh: TreeMeasure,
}

pub fn standard_measures(tree: &FiniteRTree, n: usize, a: f64) -> Result<StandardMeasures> {
    if tree.node_count() != n + 1 {
        return input(format!("tree has {} nodes, expected N + 1 = {}", tree.node_count(), n + 1));
    }
    if !(a > 0.0) || tree.edges().any(|c| (tree.edge_length(c) - a).abs() > 1e-12 * a.max(1.0)) {
        return input(format!("every edge must have length a = {a}"));
    }
    let nf = n as f64;
    let mu_ske = TreeMeasure::length(tree, 1.0 / (nf * a))?;
    let nu_ske = TreeMeasure::length(tree, 1.0)?;
    let mut mu_nod = TreeMeasure::zero(tree);
    let mut nu_nod = TreeMeasure::zero(tree);
    let mut nu_adh = TreeMeasure::zero(tree);
    for v in tree.nodes() {
        let p = TreePoint::node(v);
        if v != tree.root() {
            mu_nod.add_atom(tree, p, 1.0 / nf)?;
            nu_nod.add_atom(tree, p, a)?;
        }
        let c = tree.children(v).len();
        if c >= 2 {
            nu_adh.add_atom(tree, p, (c - 1) as f64)?;
        }
    }
    Ok(StandardMeasures { mu_ske, mu_nod, nu_ske, nu_nod, nu_adh })
}

/// Unit atoms on every non-leaf point at height exactly `h`.
pub fn nu_height(tree: &FiniteRTree, h: f64) -> Result<TreeMeasure> {
    let mut m = TreeMeasure::zero(tree);
    let tol = 1e-12 * tree.max_height().max(1.0);
    for v in tree.nodes() {
        if (tree.height(v) - h).abs() <= tol && !tree.is_leaf(v) {
            m.add_atom(tree, TreePoint::node(v), 1.0)?;
        }
        if let Some(p) = tree.parent(v) {
            let (lo, hi) = (tree.height(p), tree.height(v));
            if lo + tol < h && h < hi - tol {
                m.add_atom(tree, tree.point_on_edge(v, h - lo)?, 1.0)?;
            }
        }
    }
    Ok(m)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuChoice {
    Ske,
    Nod,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuChoice {
    Zero,
    Ske,
    Nod,
    Adh,
    /// Atoms at the given height (in rescaled units).
    Height(f64),
    /// `ν^ske + b·ν^ADH`.
    SkePlusAdh(f64),
}

impl FromStr for MuChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ske" => Ok(MuChoice::Ske),
            "nod" => Ok(MuChoice::Nod),
            _ => input(format!("unknown sampling measure '{s}' (expected ske or nod)")),
        }
    }
}

impl FromStr for NuChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = || arg.parse::<f64>().map_err(|_| Error::Input(format!("bad number in '{s}'")));
        match name {
            "zero" => Ok(NuChoice::Zero),
            "ske" => Ok(NuChoice::Ske),
            "nod" => Ok(NuChoice::Nod),
            "adh" => Ok(NuChoice::Adh),
            "height" => Ok(NuChoice::Height(num()?)),
            "ske+adh" => Ok(NuChoice::SkePlusAdh(num()?)),
            _ => input(format!("unknown pruning measure '{s}'")),
        }
    }
}

/// A conditioned Galton-Watson tree with `n` non-root nodes, rescaled to
/// edge length `a`, equipped with the chosen standard measures. ν-atoms that
/// would sit on μ-leaves are dropped.
pub fn gw_bimeasure<R: Rng + ?Sized>(
    eta: &OffspringDistribution,
    n: usize,
    a: f64,
    mu: MuChoice,
    nu: NuChoice,
    rng: &mut R,
) -> Result<BiMeasureTree> {
    let tree = gw_conditioned(eta, n, rng)?.rescaled(a)?;
    bimeasure_from_tree(tree, n, a, mu, nu)
}

pub fn bimeasure_from_tree(tree: FiniteRTree, n: usize, a: f64, mu: MuChoice, nu: NuChoice) -> Result<BiMeasureTree> {
    let sm = standard_measures(&tree, n, a)?;
    let mu = match mu {
        MuChoice::Ske => sm.mu_ske,
        MuChoice::Nod => sm.mu_nod,
    };
    let nu = match nu {
        NuChoice::Zero => TreeMeasure::zero(&tree),
        NuChoice::Ske => sm.nu_ske,
        NuChoice::Nod => sm.nu_nod,
        NuChoice::Adh => sm.nu_adh,
        NuChoice::Height(h) => nu_height(&tree, h)?,
        NuChoice::SkePlusAdh(b) => {
            let mut m = sm.nu_ske;
            for (p, w) in sm.nu_adh.atoms() {
                m.add_atom(&tree, p, b * w)?;
            }
            m
        }
    };
    BiMeasureTree::new_restricting(tree, mu, nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn parses_family_strings() {
        let p: OffspringDistribution = "poisson:1.0".parse().unwrap();
        assert_eq!(p.mean(), 1.0);
        let g: OffspringDistribution = "geometric:0.5".parse().unwrap();
        assert!((g.mean() - 1.0).abs() < 1e-15);
        let b: OffspringDistribution = "binary".parse().unwrap();
        assert_eq!(b.pmf(2), 0.5);
        assert!("nonsense:1".parse::<OffspringDistribution>().is_err());
        assert!("stable:alpha=1.5,C=1".parse::<OffspringDistribution>().is_err());
        let s: OffspringDistribution = "stable:alpha=1.5,C=0.3".parse().unwrap();
        let total: f64 = (0..=HEAVY_TAIL_KMAX).map(|k| s.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((s.mean() - 1.0).abs() < 1e-9);
        assert!(s.is_critical_or_subcritical());
    }

    #[test]
    fn pmfs_sum_to_one() {
        for f in ["poisson:1.0", "geometric:0.5", "binary:0.3,0.7", "table:0.25,0.5,0.25"] {
            let d: OffspringDistribution = f.parse().unwrap();
            let s: f64 = (0..200).map(|k| d.pmf(k)).sum();
            assert!((s - 1.0).abs() < 1e-12, "{f}: {s}");
        }
    }

    #[test]
    fn single_node_tree() {
        let eta: OffspringDistribution = "poisson:1.0".parse().unwrap();
        let mut r = rng::master(1);
        for _ in 0..10 {
            let t = gw_conditioned(&eta, 1, &mut r).unwrap();
            assert_eq!(t.node_count(), 2);
            assert_eq!(t.edge_length(NodeId(1)), 1.0);
        }
    }

    #[test]
    fn binary_parity_is_a_domain_error() {
        let eta: OffspringDistribution = "binary".parse().unwrap();
        let mut r = rng::master(2);
        assert!(matches!(gw_conditioned(&eta, 3, &mut r), Err(Error::Domain(_))));
        let t = gw_conditioned(&eta, 4, &mut r).unwrap();
        assert_eq!(t.node_count(), 5);
    }

    #[test]
    fn cycle_lemma_gives_valid_words() {
        let mut r = rng::master(3);
        for f in ["poisson:1.0", "geometric:0.5", "table:0.3,0.4,0.3"] {
            let eta: OffspringDistribution = f.parse().unwrap();
            for n in [1, 2, 5, 17, 100] {
                let t = gw_conditioned(&eta, n, &mut r).unwrap();
                assert_eq!(t.node_count(), n + 1);
                assert!(t.edges().all(|c| t.edge_length(c) == 1.0));
                assert_eq!(lukasiewicz_word(&tree_from_lukasiewicz(&lukasiewicz_word(&t)).unwrap()), lukasiewicz_word(&t));
            }
        }
    }

    #[test]
    fn enumeration_counts_are_catalan() {
        let eta: OffspringDistribution = "geometric:0.5".parse().unwrap();
        let catalan = [1, 1, 2, 5, 14, 42];
        for n in 1..=5 {
            let all = enumerate_plane_trees(&eta, n);
            assert_eq!(all.len(), catalan[n]);
            // geometric conditioned trees are uniform over plane trees
            for (_, p) in &all {
                assert!((p - 1.0 / catalan[n] as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_two_node_ratio() {
        // path: counts (1,1,0) weight e^{-3}; cherry off root: (1,2,0,0)? no: N=2 has
        // the path (1,1,0) and the cherry at the root (2,0,0), ratio 1 : 1/2
        let eta: OffspringDistribution = "poisson:1.0".parse().unwrap();
        let all = enumerate_plane_trees(&eta, 2);
        let path = all.iter().find(|(w, _)| w == &vec![1, 1, 0]).unwrap().1;
        let cherry = all.iter().find(|(w, _)| w == &vec![2, 0, 0]).unwrap().1;
        assert!((path - 2.0 / 3.0).abs() < 1e-12);
        assert!((cherry - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn contours() {
        let e = FiniteRTree::single_edge(1.0).unwrap();
        assert_eq!(contour(&e).unwrap().breakpoints(), &[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        let p = FiniteRTree::path(2, 1.0).unwrap();
        let v: Vec<f64> = contour(&p).unwrap().breakpoints().iter().map(|b| b.1).collect();
        assert_eq!(v, vec![0.0, 1.0, 2.0, 1.0, 0.0]);
        let cherry = tree_from_lukasiewicz(&[1, 2, 0, 0]).unwrap();
        let c = contour(&cherry).unwrap();
        let v: Vec<f64> = c.breakpoints().iter().map(|b| b.1).collect();
        assert_eq!(v, vec![0.0, 1.0, 2.0, 1.0, 2.0, 1.0, 0.0]);
        let t: Vec<f64> = c.breakpoints().iter().map(|b| b.0).collect();
        for (k, tk) in t.iter().enumerate() {
            assert!((tk - k as f64 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn glue_tent() {
        let h = 2.5;
        let e = Excursion::new(vec![(0.0, 0.0), (0.5, h), (1.0, 0.0)]).unwrap();
        let (t, mu) = glue(&e).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.edge_length(NodeId(1)), h);
        assert!((mu.total_mass() - 1.0).abs() < 1e-15);
        assert!((mu.length_part(NodeId(1)).coeff - 1.0 / h).abs() < 1e-15);
    }

    #[test]
    fn glue_splits_edges_and_records_flat_pieces() {
        // up to 2, down to 1 (mid-edge), up to 3, down to 0, with a flat stretch at the top
        let e = Excursion::new(vec![
            (0.0, 0.0),
            (0.2, 2.0),
            (0.3, 1.0),
            (0.5, 3.0),
            (0.6, 3.0),
            (1.0, 0.0),
        ])
        .unwrap();
        let (t, mu) = glue(&e).unwrap();
        // root -- b (h=1) -- {leaf h=2, leaf h=3}
        assert_eq!(t.node_count(), 4);
        assert!((mu.total_mass() - 1.0).abs() < 1e-14);
        assert_eq!(mu.atom_count(), 1);
        let leaves: Vec<f64> = t.leaves().iter().map(|l| t.point_height(l)).collect();
        assert_eq!(leaves, vec![2.0, 3.0]);
        assert!(e.breakpoints().len() == 6);
        assert!(Excursion::new(vec![(0.0, 0.0), (0.5, -1.0), (1.0, 0.0)]).is_err());
        assert!(Excursion::new(vec![(0.0, 1.0), (1.0, 0.0)]).is_err());
    }

    #[test]
    fn glue_of_contour_is_skeleton_measure() {
        let t = tree_from_lukasiewicz(&[2, 1, 0, 3, 0, 0, 0]).unwrap();
        let n = t.node_count() - 1;
        let (g, mu) = glue(&contour(&t).unwrap()).unwrap();
        let pts = |tr: &FiniteRTree| tr.nodes().skip(1).map(TreePoint::node).collect::<Vec<_>>();
        assert_eq!(g.distance_matrix(&pts(&g)).unwrap(), t.distance_matrix(&pts(&t)).unwrap());
        for c in g.edges() {
            assert!((mu.slot_mass(c) - 1.0 / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_measure_masses() {
        let eta: OffspringDistribution = "poisson:1.0".parse().unwrap();
        let mut r = rng::master(9);
        let n = 50;
        let a = crt_scale(n, 1.0);
        let t = gw_conditioned(&eta, n, &mut r).unwrap().rescaled(a).unwrap();
        let sm = standard_measures(&t, n, a).unwrap();
        assert!((sm.mu_ske.total_mass() - 1.0).abs() < 1e-12);
        assert!((sm.mu_nod.total_mass() - 1.0).abs() < 1e-12);
        assert!((sm.nu_ske.total_mass() - a * n as f64).abs() < 1e-12);
        assert!((sm.nu_nod.total_mass() - a * n as f64).abs() < 1e-12);
        let leaves = t.leaves().len() as f64;
        assert_eq!(sm.nu_adh.total_mass(), leaves - 1.0);
        assert!(sm.nu_adh.atoms().iter().all(|(p, _)| t.children(p.as_node().unwrap()).len() >= 2));
        assert!(standard_measures(&t, n + 1, a).is_err());
        let beyond = nu_height(&t, t.max_height() + 1.0).unwrap();
        assert_eq!(beyond.total_mass(), 0.0);
    }

    #[test]
    fn height_measure_skips_leaves() {
        // root -- 1 -- {2 (leaf), 3 -- 4}
        let t = FiniteRTree::from_parents(&[None, Some(0), Some(1), Some(1), Some(3)], &[0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = nu_height(&t, 2.0).unwrap();
        assert_eq!(m.atoms(), vec![(TreePoint::node(NodeId(3)), 1.0)]);
        let mid = nu_height(&t, 1.5).unwrap();
        assert_eq!(mid.total_mass(), 2.0);
    }

    #[test]
    fn scalings() {
        assert_eq!(crt_scale(100, 1.0), 0.1);
        let a = stable_scale(1000, 1.5, 0.3).unwrap();
        let expected = 1000f64.powf(-1.0 / 3.0) * (1.5 * 0.5 / (0.3 * gamma(0.5))).powf(-1.0 / 1.5);
        assert!((a - expected).abs() < 1e-15);
        assert!(stable_scale(10, 2.0, 1.0).is_err());
    }
}
