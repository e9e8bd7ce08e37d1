//! Finite measures on finite R-trees and bi-measure trees.
//!
//! A [`TreeMeasure`] is a piecewise-constant length density (one coefficient
//! per edge, supported on a prefix `[0, extent]` of the edge) plus finitely
//! many atoms. All integrals over spans and pruned trees are closed-form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, input, Result};
use crate::tree::{EdgeCover, FiniteRTree, MaterializedTree, NodeId, Region, TreePoint};

/// Length density on one edge: `coeff` per unit length on offsets `(0, extent]`.
#[derive(Copy, Clone, Debug, PartialEq, Default)]
pub struct LengthPart {
    pub coeff: f64,
    pub extent: f64,
}

impl LengthPart {
    #[inline]
    pub fn mass(&self) -> f64 {
        self.coeff * self.extent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeMeasure {
    length: Vec<LengthPart>,
    node_atoms: Vec<f64>,
    /// Interior atoms of each edge, sorted by offset.
    edge_atoms: Vec<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomJson {
    pub point: TreePoint,
    pub mass: f64,
}

/// Wire form: `{length_coeff: [per edge], atoms: [{point, mass}]}`.
///
/// `length_coeff` is indexed by node id (the edge above the node; the root
/// entry must be 0). `length_extent` is only present for measures whose
/// density covers a strict prefix of some edge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureJson {
    pub length_coeff: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_extent: Option<Vec<f64>>,
    pub atoms: Vec<AtomJson>,
}

impl TreeMeasure {
    pub fn zero(tree: &FiniteRTree) -> Self {
        let n = tree.node_count();
        TreeMeasure {
            length: vec![LengthPart::default(); n],
            node_atoms: vec![0.0; n],
            edge_atoms: vec![Vec::new(); n],
        }
    }

    /// `coeff` times the length measure of the whole tree.
    pub fn length(tree: &FiniteRTree, coeff: f64) -> Result<Self> {
        let coeffs: Vec<f64> =
            tree.nodes().map(|v| if v == tree.root() { 0.0 } else { coeff }).collect();
        Self::with_length_coeffs(tree, &coeffs)
    }

    pub fn with_length_coeffs(tree: &FiniteRTree, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != tree.node_count() {
            return input(format!(
                "expected {} length coefficients, got {}",
                tree.node_count(),
                coeffs.len()
            ));
        }
        let mut m = Self::zero(tree);
        for v in tree.nodes() {
            let c = coeffs[v.0];
            if !(c >= 0.0 && c.is_finite()) {
                return input(format!("length coefficient {c} on edge {v} is not a finite nonnegative number"));
            }
            if v == tree.root() {
                if c != 0.0 {
                    return input("the root owns no edge; its length coefficient must be 0");
                }
                continue;
            }
            m.length[v.0] = LengthPart { coeff: c, extent: tree.edge_length(v) };
        }
        Ok(m)
    }

    /// Sets a length density on the prefix `(0, extent]` of edge `c`.
    pub fn set_length_part(&mut self, tree: &FiniteRTree, c: NodeId, coeff: f64, extent: f64) -> Result<()> {
        if c.0 >= tree.node_count() || c == tree.root() {
            return input(format!("{c} does not own an edge"));
        }
        if !(coeff >= 0.0 && coeff.is_finite()) || !(0.0..=tree.edge_length(c)).contains(&extent) {
            return input(format!("invalid length part coeff={coeff} extent={extent} on edge {c}"));
        }
        self.length[c.0] = LengthPart { coeff, extent };
        Ok(())
    }

    /// Adds `mass` at `p`; zero masses are not stored.
    pub fn add_atom(&mut self, tree: &FiniteRTree, p: TreePoint, mass: f64) -> Result<()> {
        tree.validate_point(&p)?;
        if !(mass >= 0.0 && mass.is_finite()) {
            return input(format!("atom mass {mass} is not a finite nonnegative number"));
        }
        if mass == 0.0 {
            return Ok(());
        }
        match p {
            TreePoint::Node { node } => self.node_atoms[node.0] += mass,
            TreePoint::OnEdge { edge, offset } => {
                let list = &mut self.edge_atoms[edge.0];
                match list.binary_search_by(|(o, _)| o.partial_cmp(&offset).unwrap()) {
                    Ok(i) => list[i].1 += mass,
                    Err(i) => list.insert(i, (offset, mass)),
                }
            }
        }
        Ok(())
    }

    pub fn from_atoms(tree: &FiniteRTree, atoms: &[(TreePoint, f64)]) -> Result<Self> {
        let mut m = Self::zero(tree);
        for &(p, w) in atoms {
            m.add_atom(tree, p, w)?;
        }
        Ok(m)
    }

    pub fn dirac(tree: &FiniteRTree, p: TreePoint) -> Result<Self> {
        Self::from_atoms(tree, &[(p, 1.0)])
    }

    pub fn node_count(&self) -> usize {
        self.node_atoms.len()
    }

    fn check_tree(&self, tree: &FiniteRTree) -> Result<()> {
        if self.node_count() != tree.node_count() {
            return input(format!(
                "measure lives on a tree with {} nodes, not {}",
                self.node_count(),
                tree.node_count()
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn length_part(&self, c: NodeId) -> LengthPart {
        self.length[c.0]
    }

    #[inline]
    pub fn node_atom(&self, v: NodeId) -> f64 {
        self.node_atoms[v.0]
    }

    #[inline]
    pub fn edge_atoms(&self, c: NodeId) -> &[(f64, f64)] {
        &self.edge_atoms[c.0]
    }

    /// All atoms as `(point, mass)` in node order.
    pub fn atoms(&self) -> Vec<(TreePoint, f64)> {
        let mut out = Vec::new();
        for v in 0..self.node_count() {
            for &(o, w) in &self.edge_atoms[v] {
                out.push((TreePoint::OnEdge { edge: NodeId(v), offset: o }, w));
            }
            if self.node_atoms[v] > 0.0 {
                out.push((TreePoint::node(NodeId(v)), self.node_atoms[v]));
            }
        }
        out
    }

    pub fn atom_count(&self) -> usize {
        self.node_atoms.iter().filter(|&&w| w > 0.0).count()
            + self.edge_atoms.iter().map(Vec::len).sum::<usize>()
    }

    pub fn atom_mass_at(&self, p: &TreePoint) -> f64 {
        match *p {
            TreePoint::Node { node } => self.node_atoms[node.0],
            TreePoint::OnEdge { edge, offset } => self.edge_atoms[edge.0]
                .iter()
                .find(|(o, _)| *o == offset)
                .map_or(0.0, |(_, w)| *w),
        }
    }

    /// True if the measure has no length component.
    pub fn is_atomic(&self) -> bool {
        self.length.iter().all(|l| l.mass() == 0.0)
    }

    /// Total mass of everything stored on edge `c` (interior, density and child node).
    pub fn slot_mass(&self, c: NodeId) -> f64 {
        self.length[c.0].mass()
            + self.edge_atoms[c.0].iter().map(|(_, w)| w).sum::<f64>()
            + self.node_atoms[c.0]
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.node_count()).map(|v| self.slot_mass(NodeId(v))).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return input(format!("mass factor must be finite and nonnegative, got {factor}"));
        }
        let mut m = self.clone();
        for l in &mut m.length {
            l.coeff *= factor;
        }
        for w in &mut m.node_atoms {
            *w *= factor;
        }
        for list in &mut m.edge_atoms {
            for a in list.iter_mut() {
                a.1 *= factor;
            }
            list.retain(|a| a.1 > 0.0);
        }
        Ok(m)
    }

    /// `m / ‖m‖`.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return domain("cannot normalize the zero measure");
        }
        self.scaled(1.0 / total)
    }

    /// The same measure carried to the tree with every edge length multiplied by `a`.
    pub fn under_length_scale(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return input(format!("rescaling factor must be positive, got {a}"));
        }
        let mut m = self.clone();
        for l in &mut m.length {
            l.coeff /= a;
            l.extent *= a;
        }
        for list in &mut m.edge_atoms {
            for at in list.iter_mut() {
                at.0 *= a;
            }
        }
        Ok(m)
    }

    /// Mass of the part of edge `c` described by `cover`.
    #[inline]
    pub fn mass_in_cover(&self, tree: &FiniteRTree, c: NodeId, cover: EdgeCover) -> f64 {
        if cover == EdgeCover::Empty {
            return 0.0;
        }
        let l = self.length[c.0];
        let mut total = l.coeff * cover.length_within(l.extent);
        for &(o, w) in &self.edge_atoms[c.0] {
            if cover.contains_offset(o) {
                total += w;
            } else {
                break;
            }
        }
        if cover.contains_offset(tree.edge_length(c)) {
            total += self.node_atoms[c.0];
        }
        total
    }

    pub fn measure_of_region<R: Region>(&self, tree: &FiniteRTree, region: &R) -> Result<f64> {
        self.check_tree(tree)?;
        if region.tree_fingerprint() != tree.fingerprint() {
            return input("region belongs to a different tree");
        }
        let mut total = if region.contains_root() { self.node_atoms[tree.root().0] } else { 0.0 };
        for c in tree.edges() {
            total += self.mass_in_cover(tree, c, region.edge_cover(tree, c));
        }
        Ok(total)
    }

    /// The measure restricted to `region`. Atoms sitting on an open boundary
    /// (a cut point of a pruned tree) are dropped.
    pub fn restrict<R: Region>(&self, tree: &FiniteRTree, region: &R) -> Result<Self> {
        self.check_tree(tree)?;
        if region.tree_fingerprint() != tree.fingerprint() {
            return input("region belongs to a different tree");
        }
        let mut m = Self::zero(tree);
        let r = tree.root();
        if region.contains_root() {
            m.node_atoms[r.0] = self.node_atoms[r.0];
        }
        for c in tree.edges() {
            let cover = region.edge_cover(tree, c);
            let l = self.length[c.0];
            m.length[c.0] = LengthPart { coeff: l.coeff, extent: cover.length_within(l.extent) };
            m.edge_atoms[c.0] =
                self.edge_atoms[c.0].iter().copied().filter(|&(o, _)| cover.contains_offset(o)).collect();
            if cover.contains_offset(tree.edge_length(c)) {
                m.node_atoms[c.0] = self.node_atoms[c.0];
            }
        }
        Ok(m)
    }

    /// Exact `m(span(points))`.
    pub fn measure_of_span(&self, tree: &FiniteRTree, points: &[TreePoint]) -> Result<f64> {
        let span = tree.span(points)?;
        self.measure_of_region(tree, &span)
    }

    /// The restriction to a region, carried over to its materialization.
    pub fn onto_materialized<R: Region>(&self, tree: &FiniteRTree, region: &R, mat: &MaterializedTree) -> Result<Self> {
        let restricted = self.restrict(tree, region)?;
        let mut m = Self::zero(&mat.tree);
        let r = tree.root();
        m.node_atoms[mat.tree.root().0] = restricted.node_atoms[r.0];
        for c in tree.edges() {
            let Some((nc, len)) = mat.map_edge(c) else { continue };
            m.length[nc.0] = restricted.length[c.0];
            for &(o, w) in &restricted.edge_atoms[c.0] {
                if o < len {
                    m.edge_atoms[nc.0].push((o, w));
                } else {
                    m.node_atoms[nc.0] += w;
                }
            }
            if mat.edge_intact(c) {
                m.node_atoms[nc.0] += restricted.node_atoms[c.0];
            }
        }
        Ok(m)
    }

    /// Draws one point from the normalized measure.
    pub fn sample_point<R: Rng + ?Sized>(&self, tree: &FiniteRTree, rng: &mut R) -> Result<TreePoint> {
        Ok(PointSampler::new(tree, self)?.sample(tree, rng))
    }

    /// Lumps the measure onto finitely many points: the density on each edge
    /// is split into segments of length at most `max_segment` with the mass
    /// placed at the segment midpoints.
    pub fn discretize(&self, tree: &FiniteRTree, max_segment: f64) -> Result<Vec<(TreePoint, f64)>> {
        self.check_tree(tree)?;
        if !(max_segment > 0.0) {
            return input("discretization segment length must be positive");
        }
        let mut out = self.atoms();
        for c in tree.edges() {
            let l = self.length[c.0];
            if l.mass() <= 0.0 {
                continue;
            }
            let k = (l.extent / max_segment).ceil().max(1.0) as usize;
            let seg = l.extent / k as f64;
            for i in 0..k {
                let o = seg * (i as f64 + 0.5);
                out.push((tree.point_on_edge(c, o)?, l.coeff * seg));
            }
        }
        Ok(out)
    }

    pub fn to_json(&self, tree: &FiniteRTree) -> MeasureJson {
        let needs_extent = tree
            .edges()
            .any(|c| self.length[c.0].coeff > 0.0 && self.length[c.0].extent != tree.edge_length(c));
        MeasureJson {
            length_coeff: self.length.iter().map(|l| l.coeff).collect(),
            length_extent: needs_extent.then(|| self.length.iter().map(|l| l.extent).collect()),
            atoms: self.atoms().into_iter().map(|(point, mass)| AtomJson { point, mass }).collect(),
        }
    }

    pub fn from_json(tree: &FiniteRTree, json: &MeasureJson) -> Result<Self> {
        let mut m = Self::with_length_coeffs(tree, &json.length_coeff)?;
        if let Some(ext) = &json.length_extent {
            if ext.len() != tree.node_count() {
                return input("length_extent must have one entry per node");
            }
            for c in tree.edges() {
                let coeff = m.length[c.0].coeff;
                m.set_length_part(tree, c, coeff, ext[c.0])?;
            }
        }
        for a in &json.atoms {
            m.add_atom(tree, a.point, a.mass)?;
        }
        Ok(m)
    }
}

/// Cumulative `m([root, v])` per node, for O(1) path masses and fast span masses.
#[derive(Clone, Debug)]
pub struct PathMasses {
    cum: Vec<f64>,
}

impl PathMasses {
    pub fn new(tree: &FiniteRTree, m: &TreeMeasure) -> Self {
        let mut cum = vec![0.0; tree.node_count()];
        for &v in tree.preorder() {
            cum[v.0] = match tree.parent(v) {
                None => m.node_atom(v),
                Some(p) => cum[p.0] + m.slot_mass(v),
            };
        }
        PathMasses { cum }
    }

    /// `m([root, p])`, closed at both ends.
    #[inline]
    pub fn path_mass(&self, tree: &FiniteRTree, m: &TreeMeasure, p: &TreePoint) -> f64 {
        match *p {
            TreePoint::Node { node } => self.cum[node.0],
            TreePoint::OnEdge { edge, offset } => {
                let parent = tree.parent(edge).unwrap();
                let l = m.length_part(edge);
                let mut s = self.cum[parent.0] + l.coeff * offset.min(l.extent);
                for &(o, w) in m.edge_atoms(edge) {
                    if o <= offset {
                        s += w;
                    } else {
                        break;
                    }
                }
                s
            }
        }
    }

    /// `m(span(points))` via the depth-first telescoping of root paths.
    pub fn span_mass(&self, tree: &FiniteRTree, m: &TreeMeasure, points: &[TreePoint]) -> f64 {
        match points.len() {
            0 => 0.0,
            1 => self.path_mass(tree, m, &points[0]),
            _ => {
                let mut sorted = points.to_vec();
                sorted.sort_by(|a, b| tree.dfs_key(a).partial_cmp(&tree.dfs_key(b)).unwrap());
                let mut total = self.path_mass(tree, m, &sorted[0]);
                for w in sorted.windows(2) {
                    let b = tree.branch_point(&w[0], &w[1]);
                    total += self.path_mass(tree, m, &w[1]) - self.path_mass(tree, m, &b);
                }
                total
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Piece {
    Length { edge: NodeId, extent: f64 },
    Atom(TreePoint),
}

/// Reusable sampler for the normalized measure.
#[derive(Clone, Debug)]
pub struct PointSampler {
    pieces: Vec<Piece>,
    cumulative: Vec<f64>,
}

impl PointSampler {
    pub fn new(tree: &FiniteRTree, m: &TreeMeasure) -> Result<Self> {
        m.check_tree(tree)?;
        let mut pieces = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        let mut push = |p: Piece, w: f64| {
            if w > 0.0 {
                acc += w;
                pieces.push(p);
                cumulative.push(acc);
            }
        };
        for (p, w) in m.atoms() {
            push(Piece::Atom(p), w);
        }
        for c in tree.edges() {
            let l = m.length_part(c);
            push(Piece::Length { edge: c, extent: l.extent }, l.mass());
        }
        if pieces.is_empty() {
            return domain("cannot sample from the zero measure");
        }
        Ok(PointSampler { pieces, cumulative })
    }

    pub fn sample<R: Rng + ?Sized>(&self, tree: &FiniteRTree, rng: &mut R) -> TreePoint {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.pieces.len() - 1);
        match self.pieces[i] {
            Piece::Atom(p) => p,
            Piece::Length { edge, extent } => {
                let o = rng.random::<f64>() * extent;
                tree.point_on_edge(edge, o).expect("offset within the edge")
            }
        }
    }
}

/// Membership in the μ-skeleton of a measure tree.
#[derive(Clone, Debug)]
pub struct Skeleton {
    support_above: Vec<bool>,
    slot_top: Vec<f64>,
}

impl Skeleton {
    pub fn new(tree: &FiniteRTree, mu: &TreeMeasure) -> Self {
        let n = tree.node_count();
        let mut slot_top = vec![0.0f64; n];
        for c in tree.edges() {
            let l = mu.length_part(c);
            let mut top: f64 = if l.coeff > 0.0 { l.extent } else { 0.0 };
            if let Some(&(o, _)) = mu.edge_atoms(c).last() {
                top = top.max(o);
            }
            if mu.node_atom(c) > 0.0 {
                top = tree.edge_length(c);
            }
            slot_top[c.0] = top;
        }
        let mut support_above = vec![false; n];
        for &v in tree.preorder().iter().rev() {
            support_above[v.0] =
                tree.children(v).iter().any(|&c| slot_top[c.0] > 0.0 || support_above[c.0]);
        }
        Skeleton { support_above, slot_top }
    }

    /// `p` lies strictly below some point of the support.
    pub fn strictly_below_support(&self, p: &TreePoint) -> bool {
        match *p {
            TreePoint::Node { node } => self.support_above[node.0],
            TreePoint::OnEdge { edge, offset } => {
                self.slot_top[edge.0] > offset || self.support_above[edge.0]
            }
        }
    }

    pub fn contains(&self, mu: &TreeMeasure, p: &TreePoint) -> bool {
        mu.atom_mass_at(p) > 0.0 || self.strictly_below_support(p)
    }

    /// The μ-leaves: maximal support points that are not atoms.
    pub fn leaves(&self, tree: &FiniteRTree, mu: &TreeMeasure) -> Vec<TreePoint> {
        let mut out = Vec::new();
        for c in tree.edges() {
            let l = mu.length_part(c);
            if l.coeff > 0.0 && l.extent > 0.0 {
                let top = tree.point_on_edge(c, l.extent).expect("extent within the edge");
                if !self.contains(mu, &top) {
                    out.push(top);
                }
            }
        }
        out
    }
}

/// `(T, μ, ν)` with finite μ and ν free of atoms on the μ-leaves.
#[derive(Clone, Debug)]
pub struct BiMeasureTree {
    pub tree: FiniteRTree,
    pub mu: TreeMeasure,
    pub nu: TreeMeasure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiMeasureJson {
    pub tree: crate::tree::TreeJson,
    pub mu: MeasureJson,
    pub nu: MeasureJson,
}

impl BiMeasureTree {
    pub fn new(tree: FiniteRTree, mu: TreeMeasure, nu: TreeMeasure) -> Result<Self> {
        mu.check_tree(&tree)?;
        nu.check_tree(&tree)?;
        if !mu.total_mass().is_finite() || !nu.total_mass().is_finite() {
            return input("measures must have finite total mass");
        }
        let skel = Skeleton::new(&tree, &mu);
        for leaf in skel.leaves(&tree, &mu) {
            if nu.atom_mass_at(&leaf) > 0.0 {
                return input(format!("pruning measure has an atom on the μ-leaf {leaf:?}"));
            }
        }
        Ok(BiMeasureTree { tree, mu, nu })
    }

    /// Like [`new`](Self::new) but drops ν-atoms on μ-leaves instead of
    /// rejecting them; the result is equivalent to the given triple.
    pub fn new_restricting(tree: FiniteRTree, mu: TreeMeasure, mut nu: TreeMeasure) -> Result<Self> {
        mu.check_tree(&tree)?;
        nu.check_tree(&tree)?;
        let skel = Skeleton::new(&tree, &mu);
        for leaf in skel.leaves(&tree, &mu) {
            match leaf {
                TreePoint::Node { node } => nu.node_atoms[node.0] = 0.0,
                TreePoint::OnEdge { edge, offset } => nu.edge_atoms[edge.0].retain(|a| a.0 != offset),
            }
        }
        Self::new(tree, mu, nu)
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton::new(&self.tree, &self.mu)
    }

    pub fn mu_skeleton_contains(&self, p: &TreePoint) -> bool {
        self.skeleton().contains(&self.mu, p)
    }

    pub fn mu_leaves(&self) -> Vec<TreePoint> {
        self.skeleton().leaves(&self.tree, &self.mu)
    }

    pub fn to_json(&self) -> BiMeasureJson {
        BiMeasureJson {
            tree: self.tree.to_json(),
            mu: self.mu.to_json(&self.tree),
            nu: self.nu.to_json(&self.tree),
        }
    }

    pub fn from_json(json: &BiMeasureJson) -> Result<Self> {
        let tree = FiniteRTree::from_json(&json.tree)?;
        let mu = TreeMeasure::from_json(&tree, &json.mu)?;
        let nu = TreeMeasure::from_json(&tree, &json.nu)?;
        Self::new(tree, mu, nu)
    }

    /// The tree rescaled by `a` with μ and ν carried along (masses unchanged).
    pub fn rescaled(&self, a: f64) -> Result<Self> {
        Self::new(self.tree.rescaled(a)?, self.mu.under_length_scale(a)?, self.nu.under_length_scale(a)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cherry() -> FiniteRTree {
        FiniteRTree::from_parents(&[None, Some(0), Some(1), Some(1)], &[0.0, 1.0, 1.0, 1.0]).unwrap()
    }

    fn n(v: usize) -> TreePoint {
        TreePoint::node(NodeId(v))
    }

    #[test]
    fn masses_and_normalization() {
        let t = cherry();
        let d = TreeMeasure::dirac(&t, n(2)).unwrap();
        assert_eq!(d.total_mass(), 1.0);
        assert_eq!(d.normalize().unwrap(), d);
        assert_eq!(TreeMeasure::length(&t, 1.0).unwrap().total_mass(), 3.0);

        let e = FiniteRTree::single_edge(2.0).unwrap();
        let mut m = TreeMeasure::length(&e, 1.0).unwrap();
        m.add_atom(&e, e.point_on_edge(NodeId(1), 0.5).unwrap(), 0.5).unwrap();
        assert_eq!(m.total_mass(), 2.5);
        let nm = m.normalize().unwrap();
        assert!((nm.atoms()[0].1 - 0.2).abs() < 1e-15);
        assert!(TreeMeasure::zero(&e).normalize().is_err());
    }

    #[test]
    fn restriction() {
        let t = cherry();
        let len = TreeMeasure::length(&t, 1.0).unwrap();
        let span = t.span(&[n(2)]).unwrap();
        assert_eq!(len.restrict(&t, &span).unwrap().total_mass(), 2.0);
        let v = t.point_on_edge(NodeId(3), 0.5).unwrap();
        let dv = TreeMeasure::dirac(&t, v).unwrap();
        let pruned = t.prune_at(&v).unwrap();
        assert_eq!(dv.restrict(&t, &pruned).unwrap().total_mass(), 0.0);
        let other = FiniteRTree::single_edge(1.0).unwrap();
        assert!(len.restrict(&t, &other.span(&[n(1)]).unwrap()).is_err());
    }

    #[test]
    fn span_masses() {
        let e = FiniteRTree::single_edge(1.7).unwrap();
        let len = TreeMeasure::length(&e, 1.0).unwrap();
        assert!((len.measure_of_span(&e, &[n(1)]).unwrap() - 1.7).abs() < 1e-15);
        let t = cherry();
        let db = TreeMeasure::dirac(&t, n(1)).unwrap();
        assert_eq!(db.measure_of_span(&t, &[n(2)]).unwrap(), 1.0);
    }

    #[test]
    fn sampling_dirac_is_deterministic() {
        let t = cherry();
        let m = TreeMeasure::dirac(&t, n(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(m.sample_point(&t, &mut rng).unwrap(), n(3));
        }
        assert!(TreeMeasure::zero(&t).sample_point(&t, &mut rng).is_err());
    }

    #[test]
    fn uniform_offset_mean() {
        let l = 2.0;
        let e = FiniteRTree::single_edge(l).unwrap();
        let m = TreeMeasure::length(&e, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|_| e.point_height(&m.sample_point(&e, &mut rng).unwrap()))
            .sum::<f64>()
            / draws as f64;
        let se = l / 12f64.sqrt() / (draws as f64).sqrt();
        assert!((mean - l / 2.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn two_atom_frequencies() {
        let t = cherry();
        let m = TreeMeasure::from_atoms(&t, &[(n(2), 0.25), (n(3), 0.75)]).unwrap();
        let sampler = PointSampler::new(&t, &m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let hits = (0..draws).filter(|_| sampler.sample(&t, &mut rng) == n(2)).count();
        let p = hits as f64 / draws as f64;
        let se = (0.25f64 * 0.75 / draws as f64).sqrt();
        assert!((p - 0.25).abs() < 3.0 * se);
    }

    #[test]
    fn skeleton_and_leaves() {
        let e = FiniteRTree::single_edge(1.0).unwrap();
        let x = BiMeasureTree::new(
            e.clone(),
            TreeMeasure::dirac(&e, n(1)).unwrap(),
            TreeMeasure::zero(&e),
        )
        .unwrap();
        assert!(x.mu_skeleton_contains(&n(1)));
        assert!(x.mu_skeleton_contains(&e.point_on_edge(NodeId(1), 0.5).unwrap()));
        assert!(x.mu_skeleton_contains(&n(0)));
        assert!(x.mu_leaves().is_empty());

        let t = cherry();
        let len = TreeMeasure::length(&t, 1.0).unwrap();
        let y = BiMeasureTree::new(t.clone(), len.clone(), TreeMeasure::zero(&t)).unwrap();
        assert_eq!(y.mu_leaves(), vec![n(2), n(3)]);
        assert!(!y.mu_skeleton_contains(&n(2)));
        assert!(y.mu_skeleton_contains(&n(1)));

        // pruning atom on a μ-leaf is rejected, or dropped on request
        let bad_nu = TreeMeasure::dirac(&t, n(2)).unwrap();
        assert!(BiMeasureTree::new(t.clone(), len.clone(), bad_nu.clone()).is_err());
        let fixed = BiMeasureTree::new_restricting(t, len, bad_nu).unwrap();
        assert_eq!(fixed.nu.total_mass(), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let t = cherry();
        let mut m = TreeMeasure::length(&t, 0.5).unwrap();
        m.add_atom(&t, t.point_on_edge(NodeId(2), 0.3).unwrap(), 2.0).unwrap();
        m.add_atom(&t, n(1), 1.0).unwrap();
        let j = serde_json::to_string(&m.to_json(&t)).unwrap();
        let back = TreeMeasure::from_json(&t, &serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn materialized_restriction_preserves_mass() {
        let t = cherry();
        let mut m = TreeMeasure::length(&t, 1.0).unwrap();
        m.add_atom(&t, n(1), 0.5).unwrap();
        m.add_atom(&t, t.point_on_edge(NodeId(3), 0.2).unwrap(), 0.25).unwrap();
        m.add_atom(&t, t.point_on_edge(NodeId(3), 0.6).unwrap(), 0.25).unwrap();
        let cut = t.point_on_edge(NodeId(3), 0.4).unwrap();
        let p = t.prune_at(&cut).unwrap();
        let mat = p.materialize().unwrap();
        let carried = m.onto_materialized(&t, &p, &mat).unwrap();
        let direct = m.restrict(&t, &p).unwrap().total_mass();
        assert!((carried.total_mass() - direct).abs() < 1e-14);
        assert!((direct - (1.0 + 1.0 + 0.4 + 0.5 + 0.25)).abs() < 1e-14);
    }
}
