//! Subtree samples, Gromov-Prohorov bounds and convergence reports.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::measure::{BiMeasureTree, MeasureJson, PointSampler, TreeMeasure};
use crate::prohorov::prohorov_distance;
use crate::pruning::{eval_state, Pruner};
use crate::rng::{self, SimRng};
use crate::stats::{Estimate, MeanVar};
use crate::testfn::{Evaluator, PolynomialSpec, TestFunction};
use crate::tree::{FiniteRTree, TreeJson, TreePoint};

/// `τⁿ(u)`: the subtree spanned by the root and `u`, marked at `u`, with ν
/// restricted to it.
#[derive(Clone, Debug)]
pub struct PointedSample {
    pub tree: FiniteRTree,
    pub marked: Vec<TreePoint>,
    pub nu: TreeMeasure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointedSampleJson {
    pub tree: TreeJson,
    pub marked: Vec<TreePoint>,
    pub nu: MeasureJson,
}

impl PointedSample {
    pub fn n(&self) -> usize {
        self.marked.len()
    }

    pub fn to_json(&self) -> PointedSampleJson {
        PointedSampleJson { tree: self.tree.to_json(), marked: self.marked.clone(), nu: self.nu.to_json(&self.tree) }
    }
}

pub fn tau_n(x: &BiMeasureTree, u: &[TreePoint]) -> Result<PointedSample> {
    if u.is_empty() {
        return input("τⁿ needs at least one point");
    }
    let span = x.tree.span(u)?;
    let mat = x.tree.materialize_span(u)?;
    let nu = x.nu.onto_materialized(&x.tree, &span, &mat)?;
    let marked = u.iter().map(|p| mat.map_point(p).expect("marked points lie in their span")).collect();
    Ok(PointedSample { tree: mat.tree, marked, nu })
}

/// Draws `u_1..u_n` i.i.d. from `μ°` and returns `τⁿ(u)`.
pub fn sample_subtree_vector<R: Rng + ?Sized>(x: &BiMeasureTree, n: usize, rng: &mut R) -> Result<PointedSample> {
    if n == 0 {
        return input("subtree vectors need n ≥ 1");
    }
    let sampler = PointSampler::new(&x.tree, &x.mu)?;
    let u: Vec<TreePoint> = (0..n).map(|_| sampler.sample(&x.tree, rng)).collect();
    tau_n(x, &u)
}

/// One draw of `R(ρ, u, v)` with `v_1..v_m` i.i.d. from `μ°`; row 0 is the root.
pub fn distance_matrix_sample<R: Rng + ?Sized>(
    x: &BiMeasureTree,
    marked: &[TreePoint],
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut pts = marked.to_vec();
    if m > 0 {
        let sampler = PointSampler::new(&x.tree, &x.mu)?;
        pts.extend((0..m).map(|_| sampler.sample(&x.tree, rng)));
    }
    x.tree.distance_matrix(&pts)
}

/// `Φ^{m,φ}` of a pointed sample (measure ν), exact for atomic ν.
pub fn eval_polynomial(spec: &PolynomialSpec, s: &PointedSample) -> Result<f64> {
    spec.eval_exact(&s.tree, &s.marked, &s.nu)
}

/// `Φ^{m,φ}` of the measure tree `(T, μ)` without marked points, exact for atomic μ.
pub fn eval_polynomial_tree(spec: &PolynomialSpec, x: &BiMeasureTree) -> Result<f64> {
    spec.eval_exact(&x.tree, &[], &x.mu)
}

/// Monte-Carlo `Φ^{m,φ}` of a pointed sample.
pub fn eval_polynomial_mc(spec: &PolynomialSpec, s: &PointedSample, samples: usize, seed: u64) -> Result<Estimate> {
    let mut acc = MeanVar::default();
    for i in 0..samples {
        let mut r = rng::replicate(seed, i as u64);
        acc.push(spec.eval_sampled(&s.tree, &s.marked, &s.nu, &mut r)?);
    }
    Ok(acc.estimate())
}

/// Bounds on the pointed Gromov-Prohorov distance between two pointed samples.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpBounds {
    /// Best objective over the candidate metrics tried.
    pub upper: f64,
    /// Prohorov distance between the pushforwards under `x ↦ (r(ρ,x), r(u_k,x))`.
    pub lower: f64,
    pub max_segment: f64,
}

/// Position of `x` along the first root path `[ρ, u_k]` that contains it.
fn path_coordinate(t: &FiniteRTree, marked: &[TreePoint], x: &TreePoint) -> Option<(usize, f64)> {
    marked.iter().position(|u| t.precedes(x, u)).map(|k| (k, t.point_height(x)))
}

fn point_on_path(t: &FiniteRTree, u: &TreePoint, h: f64) -> TreePoint {
    let top = t.point_height(u);
    if h >= top {
        *u
    } else if h <= 0.0 {
        TreePoint::node(t.root())
    } else {
        t.point_at_height_above(u.slot(), h).expect("height on the path")
    }
}

#[derive(Copy, Clone)]
enum PathMatch {
    Proportional,
    EqualHeight,
}

fn map_height(m: PathMatch, h: f64, from_top: f64, to_top: f64) -> f64 {
    match m {
        PathMatch::Proportional => {
            if from_top > 0.0 {
                h / from_top * to_top
            } else {
                0.0
            }
        }
        PathMatch::EqualHeight => h.min(to_top),
    }
}

/// Upper and lower bounds on `d_pGP(s1, s2)`.
///
/// Candidate metrics on the disjoint union come from correspondences that
/// match the roots and the marked points and extend along the root paths
/// (proportionally or by equal height). For anchors `(a_k, b_k)` with
/// distortion `dis`, `d(x, y) = min_k r(x, a_k) + dis/2 + r(b_k, y)` extends
/// both metrics. Measures are lumped onto segments of length `max_segment`.
pub fn gp_distance_bounds(s1: &PointedSample, s2: &PointedSample, max_segment: f64) -> Result<GpBounds> {
    if s1.n() != s2.n() {
        return input(format!("pointed samples have {} and {} marked points", s1.n(), s2.n()));
    }
    let (t1, t2) = (&s1.tree, &s2.tree);
    let d1 = s1.nu.discretize(t1, max_segment)?;
    let d2 = s2.nu.discretize(t2, max_segment)?;
    let (p1, w1): (Vec<TreePoint>, Vec<f64>) = d1.into_iter().unzip();
    let (p2, w2): (Vec<TreePoint>, Vec<f64>) = d2.into_iter().unzip();
    let total = p1.len() + p2.len();
    let mut m1 = w1.clone();
    m1.resize(total, 0.0);
    let mut m2 = vec![0.0; p1.len()];
    m2.extend_from_slice(&w2);
    let r1 = TreePoint::node(t1.root());
    let r2 = TreePoint::node(t2.root());
    let n = s1.n();

    let mut upper = f64::INFINITY;
    for matching in [PathMatch::Proportional, PathMatch::EqualHeight] {
        let mut anchors: Vec<(TreePoint, TreePoint)> = vec![(r1, r2)];
        anchors.extend(s1.marked.iter().copied().zip(s2.marked.iter().copied()));
        for x in &p1 {
            if let Some((k, h)) = path_coordinate(t1, &s1.marked, x) {
                let (a, b) = (t1.point_height(&s1.marked[k]), t2.point_height(&s2.marked[k]));
                anchors.push((*x, point_on_path(t2, &s2.marked[k], map_height(matching, h, a, b))));
            }
        }
        for y in &p2 {
            if let Some((k, h)) = path_coordinate(t2, &s2.marked, y) {
                let (a, b) = (t1.point_height(&s1.marked[k]), t2.point_height(&s2.marked[k]));
                anchors.push((point_on_path(t1, &s1.marked[k], map_height(matching, h, b, a)), *y));
            }
        }
        let k = anchors.len();
        let mut dis: f64 = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let a = t1.distance(&anchors[i].0, &anchors[j].0);
                let b = t2.distance(&anchors[i].1, &anchors[j].1);
                dis = dis.max((a - b).abs());
            }
        }
        let delta = 0.5 * dis;
        let to_anchor1: Vec<Vec<f64>> =
            p1.iter().map(|x| anchors.iter().map(|(a, _)| t1.distance(x, a)).collect()).collect();
        let to_anchor2: Vec<Vec<f64>> =
            p2.iter().map(|y| anchors.iter().map(|(_, b)| t2.distance(y, b)).collect()).collect();
        let mut metric = vec![vec![0.0; total]; total];
        for i in 0..p1.len() {
            for j in 0..p1.len() {
                metric[i][j] = t1.distance(&p1[i], &p1[j]);
            }
        }
        for i in 0..p2.len() {
            for j in 0..p2.len() {
                metric[p1.len() + i][p1.len() + j] = t2.distance(&p2[i], &p2[j]);
            }
        }
        for i in 0..p1.len() {
            for j in 0..p2.len() {
                let d = (0..k).map(|a| to_anchor1[i][a] + to_anchor2[j][a]).fold(f64::INFINITY, f64::min) + delta;
                metric[i][p1.len() + j] = d;
                metric[p1.len() + j][i] = d;
            }
        }
        let pr = prohorov_distance(&metric, &m1, &m2)?;
        upper = upper.min(pr + (n as f64 + 1.0) * delta);
    }

    // pushforward to R^{n+1} with the sup norm
    let features = |t: &FiniteRTree, root: &TreePoint, marked: &[TreePoint], pts: &[TreePoint]| -> Vec<Vec<f64>> {
        pts.iter()
            .map(|x| std::iter::once(root).chain(marked).map(|u| t.distance(u, x)).collect())
            .collect()
    };
    let mut f = features(t1, &r1, &s1.marked, &p1);
    f.extend(features(t2, &r2, &s2.marked, &p2));
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let metric: Vec<Vec<f64>> = f.iter().map(|a| f.iter().map(|b| sup(a, b)).collect()).collect();
    let lower = prohorov_distance(&metric, &m1, &m2)?;
    Ok(GpBounds { upper: upper.max(lower), lower, max_segment })
}

/// Upper bound on `d_pGP`, with the grid at `10⁻³` of the larger tree height.
pub fn gp_distance_upper(s1: &PointedSample, s2: &PointedSample) -> Result<f64> {
    let h = s1.tree.max_height().max(s2.tree.max_height()).max(f64::MIN_POSITIVE);
    Ok(gp_distance_bounds(s1, s2, 1e-3 * h)?.upper)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    pub t: f64,
    pub psi_id: String,
    pub mean: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
}

/// `|mean(N) − mean(N')|` for consecutive indices, with its standard error.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendStep {
    pub index: usize,
    pub next_index: usize,
    pub diff: f64,
    pub stderr: f64,
}

impl ConvergenceReport {
    pub fn get(&self, index: usize, t: f64, psi_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.index == index && r.t == t && r.psi_id == psi_id)
    }

    /// The Cauchy-trend sequence for one test function and time.
    pub fn trend(&self, t: f64, psi_id: &str) -> Vec<TrendStep> {
        let mut rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.t == t && r.psi_id == psi_id).collect();
        rows.sort_by_key(|r| r.index);
        rows.windows(2)
            .map(|w| TrendStep {
                index: w[0].index,
                next_index: w[1].index,
                diff: (w[0].mean - w[1].mean).abs(),
                stderr: w[0].stderr.hypot(w[1].stderr),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,t,psi_id,mean,stderr,replicates,seed\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{},{}\n", r.index, r.t, r.psi_id, r.mean, r.stderr, r.replicates, r.seed));
        }
        s
    }
}

/// Monte-Carlo means of `Ψ(X_t)` over random instances and pruning paths.
///
/// Replicate `i` at index `N` draws the instance and its path from the stream
/// `(seed, N, i)`; all times share one path. Each state is evaluated exactly
/// when μ is atomic and small, otherwise with `draws` sampled tuples.
pub fn convergence_report<G>(
    indices: &[usize],
    generate: G,
    psi_set: &[TestFunction],
    times: &[f64],
    replicates: usize,
    draws: usize,
    seed: u64,
) -> Result<ConvergenceReport>
where
    G: Fn(usize, &mut SimRng) -> Result<BiMeasureTree> + Sync,
{
    if psi_set.is_empty() {
        return input("convergence reports need at least one test function");
    }
    if replicates < 2 {
        return input("convergence reports need at least two replicates");
    }
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return input("times must be finite and nonnegative");
    }
    for psi in psi_set {
        psi.validate()?;
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let cells = times.len() * psi_set.len();
    let mut rows = Vec::new();
    for &index in indices {
        let values: Result<Vec<Vec<f64>>> = (0..replicates)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::tagged(seed, index as u64, i as u64);
                let x = generate(index, &mut r)?;
                let ev = Evaluator::new(&x.tree, &x.nu);
                let mut state = Pruner::new(&x);
                let mut out = vec![0.0; cells];
                for &ti in &order {
                    state.run(times[ti], &mut r, |_| {});
                    for (k, psi) in psi_set.iter().enumerate() {
                        out[ti * psi_set.len() + k] = eval_state(&ev, psi, &state, draws, &mut r)?;
                    }
                }
                Ok(out)
            })
            .collect();
        let values = values?;
        for (ti, &t) in times.iter().enumerate() {
            for (k, psi) in psi_set.iter().enumerate() {
                let mut acc = MeanVar::default();
                values.iter().for_each(|v| acc.push(v[ti * psi_set.len() + k]));
                let e = acc.estimate();
                rows.push(ReportRow {
                    index,
                    t,
                    psi_id: psi.id.clone(),
                    mean: e.value,
                    stderr: e.stderr,
                    replicates,
                    seed,
                });
            }
        }
    }
    Ok(ConvergenceReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{gw_bimeasure, MuChoice, NuChoice, OffspringDistribution};
    use crate::testfn::{default_suite, Phi};
    use crate::tree::NodeId;

    fn cherry_x() -> BiMeasureTree {
        let t = FiniteRTree::from_parents(&[None, Some(0), Some(1), Some(1)], &[0.0, 1.0, 1.0, 2.0]).unwrap();
        let mu = TreeMeasure::from_atoms(&t, &[(TreePoint::node(NodeId(2)), 0.5), (TreePoint::node(NodeId(3)), 0.5)])
            .unwrap();
        let mut nu = TreeMeasure::length(&t, 1.0).unwrap();
        nu.add_atom(&t, TreePoint::node(NodeId(1)), 0.3).unwrap();
        BiMeasureTree::new(t, mu, nu).unwrap()
    }

    #[test]
    fn tau_of_a_leaf_keeps_the_path() {
        let x = cherry_x();
        let s = tau_n(&x, &[TreePoint::node(NodeId(3))]).unwrap();
        assert_eq!(s.tree.node_count(), 3);
        assert!((s.nu.total_mass() - 3.3).abs() < 1e-14);
        assert_eq!(s.nu.total_mass(), x.nu.measure_of_span(&x.tree, &[TreePoint::node(NodeId(3))]).unwrap());
        let root = TreePoint::node(x.tree.root());
        let deg = tau_n(&x, &[root, root]).unwrap();
        assert_eq!(deg.tree.node_count(), 1);
        assert_eq!(deg.nu.total_mass(), 0.0);
        assert!(tau_n(&x, &[]).is_err());
    }

    #[test]
    fn tau_of_an_edge_point() {
        let x = cherry_x();
        let p = x.tree.point_on_edge(NodeId(3), 0.5).unwrap();
        let s = tau_n(&x, &[p, TreePoint::node(NodeId(2))]).unwrap();
        assert!((s.nu.total_mass() - x.nu.measure_of_span(&x.tree, &[p, TreePoint::node(NodeId(2))]).unwrap()).abs() < 1e-14);
        assert!((s.tree.total_length() - 2.5).abs() < 1e-14);
        assert!(s.marked[0].as_node().is_some());
    }

    #[test]
    fn subtree_vector_mean_restricted_mass() {
        let x = cherry_x();
        // ∫ μ°(du) ν([ρ, u]) = 0.5·2.3 + 0.5·3.3
        let exact = 0.5 * 2.3 + 0.5 * 3.3;
        let mut r = rng::master(8);
        let mut acc = MeanVar::default();
        for _ in 0..20_000 {
            acc.push(sample_subtree_vector(&x, 1, &mut r).unwrap().nu.total_mass());
        }
        assert!(acc.estimate().agrees_with(exact, 4.0));
    }

    #[test]
    fn distance_matrix_single_edge() {
        let t = FiniteRTree::single_edge(2.0).unwrap();
        let mu = TreeMeasure::dirac(&t, TreePoint::node(NodeId(1))).unwrap();
        let x = BiMeasureTree::new(t.clone(), mu, TreeMeasure::zero(&t)).unwrap();
        let m = distance_matrix_sample(&x, &[], 3, &mut rng::master(1)).unwrap();
        assert_eq!(m[0], vec![0.0, 2.0, 2.0, 2.0]);
        assert_eq!(m[1][2], 0.0);
    }

    #[test]
    fn polynomial_of_constant_is_mass_power() {
        let x = cherry_x();
        let s = tau_n(&x, &[TreePoint::node(NodeId(2))]).unwrap();
        let mut atomic = TreeMeasure::zero(&s.tree);
        atomic.add_atom(&s.tree, s.marked[0], 1.7).unwrap();
        let s = PointedSample { nu: atomic, ..s };
        let p = PolynomialSpec { m: 3, phi: Phi::one() };
        assert!((eval_polynomial(&p, &s).unwrap() - 1.7f64.powi(3)).abs() < 1e-12);
        let q = PolynomialSpec { m: 0, phi: Phi::ExpDist { i: 0, j: 1, rate: 1.0 } };
        assert!((eval_polynomial(&q, &s).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        let pm = PolynomialSpec { m: 1, phi: Phi::Rational { i: 1, j: 2, scale: 1.0 } };
        let mc = eval_polynomial_mc(&pm, &s, 100, 3).unwrap();
        assert_eq!(mc.value, 1.7);
    }

    #[test]
    fn gp_identity_and_symmetry() {
        let x = cherry_x();
        let s = tau_n(&x, &[TreePoint::node(NodeId(3)), TreePoint::node(NodeId(2))]).unwrap();
        let b = gp_distance_bounds(&s, &s, 0.25).unwrap();
        assert!(b.upper <= 1e-6, "{b:?}");
        let y = tau_n(&x, &[TreePoint::node(NodeId(2)), TreePoint::node(NodeId(2))]).unwrap();
        let ab = gp_distance_bounds(&s, &y, 0.25).unwrap();
        let ba = gp_distance_bounds(&y, &s, 0.25).unwrap();
        assert!((ab.upper - ba.upper).abs() < 1e-12);
        assert!(ab.lower <= ab.upper + 1e-12);
        assert!(ab.upper > 0.0);
    }

    #[test]
    fn gp_two_edges() {
        let make = |len: f64| {
            let t = FiniteRTree::single_edge(len).unwrap();
            let leaf = TreePoint::node(NodeId(1));
            let nu = TreeMeasure::dirac(&t, leaf).unwrap();
            PointedSample { tree: t, marked: vec![leaf], nu }
        };
        let delta = 0.05;
        let b = gp_distance_bounds(&make(1.0), &make(1.0 + delta), 0.1).unwrap();
        assert!(b.upper <= 2.0 * delta + 1e-12, "{b:?}");
        assert!(b.lower <= b.upper);
        assert!(gp_distance_bounds(&make(1.0), &tau_n(&cherry_x(), &[TreePoint::node(NodeId(2)); 2]).unwrap(), 0.1).is_err());
    }

    #[test]
    fn report_on_constant_family() {
        let x = cherry_x();
        let suite = default_suite();
        let rep = convergence_report(&[1, 2], |_, _| Ok(x.clone()), &suite, &[0.0, 0.5], 200, 1, 5).unwrap();
        assert_eq!(rep.rows.len(), 2 * 2 * suite.len());
        for psi in &suite {
            let a = rep.get(1, 0.0, &psi.id).unwrap();
            assert_eq!(a.stderr, 0.0);
            let step = rep.trend(0.0, &psi.id);
            assert_eq!(step.len(), 1);
            assert_eq!(step[0].diff, 0.0);
        }
        assert!(rep.to_csv().starts_with("index,t,psi_id,mean,stderr,replicates,seed\n"));
    }

    #[test]
    fn skeleton_mass_is_one_for_every_n() {
        let eta: OffspringDistribution = "poisson:1.0".parse().unwrap();
        let mass = TestFunction::mass_power(1);
        let gen = |n: usize, r: &mut SimRng| gw_bimeasure(&eta, n, 1.0 / (n as f64).sqrt(), MuChoice::Ske, NuChoice::Ske, r);
        let rep = convergence_report(&[10, 40], gen, &[mass], &[0.0], 50, 1, 2).unwrap();
        for row in &rep.rows {
            assert!((row.mean - 1.0).abs() < 1e-12);
        }
    }
}
