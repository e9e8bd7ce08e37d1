//! Finite rooted R-trees.
//!
//! A [`FiniteRTree`] is a rooted combinatorial tree whose edges carry strictly
//! positive lengths. Every non-root node `c` owns the edge from its parent to
//! itself; points of the metric tree are either nodes or interior points of an
//! edge, addressed by the owning child node and the distance from the parent
//! end ([`TreePoint`]).
//!
//! Pruned trees are kept lazily as a base tree plus a cut set ([`PrunedTree`]);
//! they can be materialized into a fresh tree when needed.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A location on a tree.
///
/// Construct edge points through [`FiniteRTree::point_on_edge`], which keeps
/// the offset in the open interval `(0, len)` so that structural equality is
/// point equality.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreePoint {
    Node { node: NodeId },
    OnEdge { edge: NodeId, offset: f64 },
}

impl TreePoint {
    pub fn node(v: NodeId) -> Self {
        TreePoint::Node { node: v }
    }

    /// The node whose parent edge holds this point (the node itself for node points).
    #[inline]
    pub fn slot(&self) -> NodeId {
        match *self {
            TreePoint::Node { node } => node,
            TreePoint::OnEdge { edge, .. } => edge,
        }
    }

    pub fn as_node(&self) -> Option<NodeId> {
        match *self {
            TreePoint::Node { node } => Some(node),
            TreePoint::OnEdge { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub edge_length: f64,
}

/// Wire form of a tree: `{nodes: [{id, parent, edge_length}], root}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<NodeRecord>,
    pub root: usize,
}

/// Immutable rooted tree with positive edge lengths and cached heights.
#[derive(Clone, Debug)]
pub struct FiniteRTree {
    root: NodeId,
    parent: Vec<Option<NodeId>>,
    edge_len: Vec<f64>,
    children: Vec<Vec<NodeId>>,
    height: Vec<f64>,
    depth: Vec<u32>,
    preorder: Vec<NodeId>,
    pre_index: Vec<usize>,
    subtree_end: Vec<usize>,
    fingerprint: u64,
}

impl PartialEq for FiniteRTree {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
            && self.parent == other.parent
            && self.children == other.children
            && self
                .edge_len
                .iter()
                .zip(&other.edge_len)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FiniteRTree {
    /// Builds a tree from a parent table. `parents[v]` is `None` exactly for
    /// the root; `lengths[root]` is ignored and stored as 0. Children keep the
    /// order in which they appear in the table.
    pub fn from_parents(parents: &[Option<usize>], lengths: &[f64]) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return input("tree must have at least one node");
        }
        if lengths.len() != n {
            return input(format!(
                "parent table has {n} entries but {} edge lengths were given",
                lengths.len()
            ));
        }
        let roots: Vec<usize> = (0..n).filter(|&v| parents[v].is_none()).collect();
        if roots.len() != 1 {
            return input(format!("expected exactly one root, found {}", roots.len()));
        }
        let root = NodeId(roots[0]);
        let mut children = vec![Vec::new(); n];
        let mut edge_len = vec![0.0; n];
        for v in 0..n {
            if let Some(p) = parents[v] {
                if p >= n {
                    return input(format!("node {v} has parent {p} outside 0..{n}"));
                }
                if p == v {
                    return input(format!("node {v} is its own parent"));
                }
                let l = lengths[v];
                if !(l > 0.0 && l.is_finite()) {
                    return input(format!("edge above node {v} has non-positive length {l}"));
                }
                edge_len[v] = l;
                children[p].push(NodeId(v));
            }
        }
        let parent: Vec<Option<NodeId>> = parents.iter().map(|p| p.map(NodeId)).collect();

        let mut height = vec![0.0; n];
        let mut depth = vec![0u32; n];
        let mut preorder = Vec::with_capacity(n);
        let mut pre_index = vec![usize::MAX; n];
        let mut subtree_end = vec![0usize; n];
        // iterative DFS; the second stack entry closes the subtree range
        let mut stack: Vec<(NodeId, bool)> = vec![(root, false)];
        while let Some((v, closing)) = stack.pop() {
            if closing {
                subtree_end[v.0] = preorder.len();
                continue;
            }
            if pre_index[v.0] != usize::MAX {
                return input("parent table contains a cycle");
            }
            pre_index[v.0] = preorder.len();
            preorder.push(v);
            stack.push((v, true));
            for &c in children[v.0].iter().rev() {
                height[c.0] = height[v.0] + edge_len[c.0];
                depth[c.0] = depth[v.0] + 1;
                stack.push((c, false));
            }
        }
        if preorder.len() != n {
            return input("parent table is not connected (cycle or detached component)");
        }

        let mut hasher = DefaultHasher::new();
        root.hash(&mut hasher);
        parent.hash(&mut hasher);
        for l in &edge_len {
            l.to_bits().hash(&mut hasher);
        }
        Ok(FiniteRTree {
            root,
            parent,
            edge_len,
            children,
            height,
            depth,
            preorder,
            pre_index,
            subtree_end,
            fingerprint: hasher.finish(),
        })
    }

    /// The tree with a single edge of length `len` (root 0, leaf 1).
    pub fn single_edge(len: f64) -> Result<Self> {
        Self::from_parents(&[None, Some(0)], &[0.0, len])
    }

    /// A path of `k` edges with the given length each; node `i` sits at depth `i`.
    pub fn path(k: usize, len: f64) -> Result<Self> {
        let parents: Vec<Option<usize>> =
            (0..=k).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        Self::from_parents(&parents, &vec![len; k + 1])
    }

    pub fn from_json(json: &TreeJson) -> Result<Self> {
        let n = json.nodes.len();
        let mut parents = vec![None; n];
        let mut lengths = vec![0.0; n];
        let mut seen = vec![false; n];
        for rec in &json.nodes {
            if rec.id >= n || seen[rec.id] {
                return input(format!("node ids must be dense 0..{n} and unique (got {})", rec.id));
            }
            seen[rec.id] = true;
            parents[rec.id] = rec.parent;
            lengths[rec.id] = rec.edge_length;
        }
        if json.root >= n || parents[json.root].is_some() {
            return input(format!("root {} is not a parentless node", json.root));
        }
        Self::from_parents(&parents, &lengths)
    }

    /// Serializes in id order; trees built by this crate number nodes in
    /// preorder, so parents precede children.
    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            nodes: (0..self.node_count())
                .map(|v| NodeRecord {
                    id: v,
                    parent: self.parent[v].map(|p| p.0),
                    edge_length: self.edge_len[v],
                })
                .collect(),
            root: self.root.0,
        }
    }

    #[inline]
    pub fn root(&self) -> NodeId {
        self.root
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).map(NodeId)
    }

    /// Non-root nodes, i.e. the edges of the tree.
    pub fn edges(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&v| v != self.root)
    }

    #[inline]
    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v.0]
    }

    /// Length of the edge above `v` (0 for the root).
    #[inline]
    pub fn edge_length(&self, v: NodeId) -> f64 {
        self.edge_len[v.0]
    }

    #[inline]
    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.0]
    }

    #[inline]
    pub fn height(&self, v: NodeId) -> f64 {
        self.height[v.0]
    }

    #[inline]
    pub fn depth(&self, v: NodeId) -> u32 {
        self.depth[v.0]
    }

    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    #[inline]
    pub fn pre_index(&self, v: NodeId) -> usize {
        self.pre_index[v.0]
    }

    /// One past the last preorder position of the subtree rooted at `v`.
    #[inline]
    pub fn subtree_end(&self, v: NodeId) -> usize {
        self.subtree_end[v.0]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn total_length(&self) -> f64 {
        self.edge_len.iter().sum()
    }

    pub fn max_height(&self) -> f64 {
        self.height.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.children[v.0].is_empty()
    }

    /// Nodes without children. A single-node tree has its root as only leaf.
    pub fn leaves(&self) -> Vec<TreePoint> {
        self.nodes().filter(|&v| self.is_leaf(v)).map(TreePoint::node).collect()
    }

    /// `a` is an ancestor of `b` or equal to it.
    #[inline]
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let pa = self.pre_index[a.0];
        let pb = self.pre_index[b.0];
        pa <= pb && pb < self.subtree_end[a.0]
    }

    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth[a.0] > self.depth[b.0] {
            a = self.parent[a.0].unwrap();
        }
        while self.depth[b.0] > self.depth[a.0] {
            b = self.parent[b.0].unwrap();
        }
        while a != b {
            a = self.parent[a.0].unwrap();
            b = self.parent[b.0].unwrap();
        }
        a
    }

    /// Canonical point at distance `offset` above the parent end of edge `child`.
    pub fn point_on_edge(&self, child: NodeId, offset: f64) -> Result<TreePoint> {
        if child.0 >= self.node_count() || child == self.root {
            return input(format!("{child} does not own an edge"));
        }
        let len = self.edge_len[child.0];
        if !(0.0..=len).contains(&offset) {
            return input(format!("offset {offset} outside [0, {len}] on edge {child}"));
        }
        Ok(if offset == 0.0 {
            TreePoint::node(self.parent[child.0].unwrap())
        } else if offset == len {
            TreePoint::node(child)
        } else {
            TreePoint::OnEdge { edge: child, offset }
        })
    }

    /// The point at the given height on the root path of `v`.
    pub fn point_at_height_above(&self, v: NodeId, h: f64) -> Result<TreePoint> {
        if !(0.0..=self.height(v)).contains(&h) {
            return input(format!("height {h} not on the root path of {v}"));
        }
        let mut c = v;
        while c != self.root {
            let p = self.parent[c.0].unwrap();
            if self.height[p.0] < h {
                // stored heights round differently from parent height + length
                return self.point_on_edge(c, (h - self.height[p.0]).min(self.edge_len[c.0]));
            }
            c = p;
        }
        Ok(TreePoint::node(self.root))
    }

    pub fn validate_point(&self, p: &TreePoint) -> Result<()> {
        match *p {
            TreePoint::Node { node } => {
                if node.0 >= self.node_count() {
                    return input(format!("node {node} out of range"));
                }
            }
            TreePoint::OnEdge { edge, offset } => {
                if edge.0 >= self.node_count() || edge == self.root {
                    return input(format!("{edge} does not own an edge"));
                }
                let len = self.edge_len[edge.0];
                if !(offset > 0.0 && offset < len) {
                    return input(format!(
                        "edge point offset {offset} not in the open interval (0, {len})"
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn point_height(&self, p: &TreePoint) -> f64 {
        match *p {
            TreePoint::Node { node } => self.height[node.0],
            TreePoint::OnEdge { edge, offset } => {
                self.height[self.parent[edge.0].unwrap().0] + offset
            }
        }
    }

    /// Ordering key that lists every point after all of its strict ancestors
    /// and visits subtrees contiguously (depth-first order).
    #[inline]
    pub fn dfs_key(&self, p: &TreePoint) -> (usize, f64) {
        (self.pre_index[p.slot().0], self.point_height(p))
    }

    /// `x` lies on the segment `[root, y]`.
    pub fn precedes(&self, x: &TreePoint, y: &TreePoint) -> bool {
        match *x {
            TreePoint::Node { node: v } => match *y {
                TreePoint::Node { node: w } => self.is_ancestor_or_self(v, w),
                TreePoint::OnEdge { edge: c, .. } => v != c && self.is_ancestor_or_self(v, c),
            },
            TreePoint::OnEdge { edge: c, offset: o } => match *y {
                TreePoint::Node { node: w } => self.is_ancestor_or_self(c, w),
                TreePoint::OnEdge { edge: c2, offset: o2 } => {
                    if c2 == c {
                        o <= o2
                    } else {
                        self.is_ancestor_or_self(c, c2)
                    }
                }
            },
        }
    }

    /// The branch point `x ∧ y`, i.e. the top of `[root, x] ∩ [root, y]`.
    pub fn branch_point(&self, x: &TreePoint, y: &TreePoint) -> TreePoint {
        if self.precedes(x, y) {
            *x
        } else if self.precedes(y, x) {
            *y
        } else {
            TreePoint::node(self.lca(x.slot(), y.slot()))
        }
    }

    #[inline]
    pub fn distance(&self, x: &TreePoint, y: &TreePoint) -> f64 {
        let b = self.branch_point(x, y);
        self.point_height(x) + self.point_height(y) - 2.0 * self.point_height(&b)
    }

    /// Checked variant of [`distance`](Self::distance).
    pub fn try_distance(&self, x: &TreePoint, y: &TreePoint) -> Result<f64> {
        self.validate_point(x)?;
        self.validate_point(y)?;
        Ok(self.distance(x, y))
    }

    /// Distance matrix of `(root, points...)`; row and column 0 belong to the root.
    pub fn distance_matrix(&self, points: &[TreePoint]) -> Result<Vec<Vec<f64>>> {
        for p in points {
            self.validate_point(p)?;
        }
        let mut all = Vec::with_capacity(points.len() + 1);
        all.push(TreePoint::node(self.root));
        all.extend_from_slice(points);
        let k = all.len();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let d = self.distance(&all[i], &all[j]);
                m[i][j] = d;
                m[j][i] = d;
            }
        }
        Ok(m)
    }

    /// The subtree spanned by the root and `points`.
    pub fn span(&self, points: &[TreePoint]) -> Result<Span> {
        if points.is_empty() {
            return input("span of an empty point list");
        }
        let mut covered: BTreeMap<NodeId, f64> = BTreeMap::new();
        for p in points {
            self.validate_point(p)?;
            let mut next = match *p {
                TreePoint::Node { node } => Some(node),
                TreePoint::OnEdge { edge, offset } => {
                    let e = covered.entry(edge).or_insert(0.0);
                    if offset > *e {
                        *e = offset;
                    }
                    self.parent[edge.0]
                }
            };
            while let Some(c) = next {
                if c == self.root {
                    break;
                }
                let len = self.edge_len[c.0];
                let e = covered.entry(c).or_insert(0.0);
                if *e == len {
                    break;
                }
                *e = len;
                next = self.parent[c.0];
            }
        }
        Ok(Span { fingerprint: self.fingerprint, covered, points: points.to_vec() })
    }

    /// The span of `points` as a standalone tree.
    pub fn materialize_span(&self, points: &[TreePoint]) -> Result<MaterializedTree> {
        let span = self.span(points)?;
        Ok(materialize_region(self, &span).expect("spans contain the root"))
    }

    /// The tree pruned at every point of `cuts`.
    pub fn prune_at_set(&self, cuts: &[TreePoint]) -> Result<PrunedTree<'_>> {
        PrunedTree::new(self, cuts)
    }

    /// The tree pruned at `v`: every `w` with `v ∈ [root, w]` is removed.
    pub fn prune_at(&self, v: &TreePoint) -> Result<PrunedTree<'_>> {
        PrunedTree::new(self, std::slice::from_ref(v))
    }

    /// Multiplies every edge length by `a`.
    pub fn rescaled(&self, a: f64) -> Result<FiniteRTree> {
        if !(a > 0.0 && a.is_finite()) {
            return input(format!("rescaling factor must be positive, got {a}"));
        }
        let parents: Vec<Option<usize>> = self.parent.iter().map(|p| p.map(|q| q.0)).collect();
        let lengths: Vec<f64> = self.edge_len.iter().map(|l| l * a).collect();
        Self::from_parents(&parents, &lengths)
    }
}

/// Which part of the edge owned by a node lies in a region. Offsets are
/// measured from the parent end; offset 0 belongs to the parent's slot.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum EdgeCover {
    Empty,
    /// Offsets in `(0, a]`; `a == len` includes the child node.
    Closed(f64),
    /// Offsets in `(0, a)`.
    HalfOpen(f64),
}

impl EdgeCover {
    #[inline]
    pub fn contains_offset(&self, o: f64) -> bool {
        match *self {
            EdgeCover::Empty => false,
            EdgeCover::Closed(a) => o <= a,
            EdgeCover::HalfOpen(a) => o < a,
        }
    }

    /// Lebesgue length of the covered part, clipped to `[0, limit]`.
    #[inline]
    pub fn length_within(&self, limit: f64) -> f64 {
        match *self {
            EdgeCover::Empty => 0.0,
            EdgeCover::Closed(a) | EdgeCover::HalfOpen(a) => a.min(limit),
        }
    }
}

/// A subset of a tree that is closed under taking ancestors, described slot by slot.
pub trait Region {
    fn tree_fingerprint(&self) -> u64;
    fn contains_root(&self) -> bool;
    fn edge_cover(&self, tree: &FiniteRTree, c: NodeId) -> EdgeCover;

    fn contains(&self, tree: &FiniteRTree, p: &TreePoint) -> bool {
        if p.slot() == tree.root() {
            return self.contains_root();
        }
        let offset = match *p {
            TreePoint::Node { node } => tree.edge_length(node),
            TreePoint::OnEdge { offset, .. } => offset,
        };
        self.edge_cover(tree, p.slot()).contains_offset(offset)
    }
}

/// `⋃ [root, v_i]` as a set of covered edge prefixes.
#[derive(Clone, Debug)]
pub struct Span {
    fingerprint: u64,
    covered: BTreeMap<NodeId, f64>,
    points: Vec<TreePoint>,
}

impl Span {
    pub fn points(&self) -> &[TreePoint] {
        &self.points
    }

    /// `(edge, covered prefix length)` for every edge the span touches.
    pub fn segments(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.covered.iter().map(|(&c, &a)| (c, a))
    }

    pub fn total_length(&self) -> f64 {
        self.covered.values().sum()
    }

    pub fn covered(&self, c: NodeId) -> f64 {
        self.covered.get(&c).copied().unwrap_or(0.0)
    }
}

impl Region for Span {
    fn tree_fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn contains_root(&self) -> bool {
        true
    }

    fn edge_cover(&self, _tree: &FiniteRTree, c: NodeId) -> EdgeCover {
        match self.covered.get(&c) {
            Some(&a) if a > 0.0 => EdgeCover::Closed(a),
            _ => EdgeCover::Empty,
        }
    }
}

/// `T^π`: the base tree minus everything at or above a cut point.
#[derive(Clone, Debug)]
pub struct PrunedTree<'a> {
    tree: &'a FiniteRTree,
    cuts: Vec<TreePoint>,
    root_cut: bool,
    covers: Vec<EdgeCover>,
}

impl<'a> PrunedTree<'a> {
    pub fn new(tree: &'a FiniteRTree, cuts: &[TreePoint]) -> Result<Self> {
        for c in cuts {
            tree.validate_point(c)?;
        }
        // keep the minimal cuts only; any other cut is shadowed
        let mut minimal: Vec<TreePoint> = Vec::new();
        for c in cuts {
            if minimal.iter().any(|m| tree.precedes(m, c)) {
                continue;
            }
            minimal.retain(|m| !tree.precedes(c, m));
            minimal.push(*c);
        }
        minimal.sort_by(|a, b| tree.dfs_key(a).partial_cmp(&tree.dfs_key(b)).unwrap());
        let n = tree.node_count();
        let root_cut = minimal.iter().any(|c| c.slot() == tree.root());
        let mut covers: Vec<EdgeCover> = (0..n)
            .map(|v| {
                if root_cut {
                    EdgeCover::Empty
                } else {
                    EdgeCover::Closed(tree.edge_length(NodeId(v)))
                }
            })
            .collect();
        if !root_cut {
            for c in &minimal {
                let (slot, a) = match *c {
                    TreePoint::Node { node } => (node, tree.edge_length(node)),
                    TreePoint::OnEdge { edge, offset } => (edge, offset),
                };
                covers[slot.0] = EdgeCover::HalfOpen(a);
                for pos in tree.pre_index(slot) + 1..tree.subtree_end(slot) {
                    covers[tree.preorder()[pos].0] = EdgeCover::Empty;
                }
            }
        }
        Ok(PrunedTree { tree, cuts: minimal, root_cut, covers })
    }

    pub fn base(&self) -> &'a FiniteRTree {
        self.tree
    }

    /// The effective (pairwise incomparable) cut points, in depth-first order.
    pub fn effective_cuts(&self) -> &[TreePoint] {
        &self.cuts
    }

    pub fn is_empty(&self) -> bool {
        self.root_cut
    }

    /// `w ∈ T^π` iff no cut lies on `[root, w]`.
    pub fn contains_point(&self, w: &TreePoint) -> bool {
        self.contains(self.tree, w)
    }

    /// Total edge length of the remaining tree.
    pub fn total_length(&self) -> f64 {
        self.tree.edges().map(|c| self.covers[c.0].length_within(f64::INFINITY)).sum()
    }

    /// Materializes the remaining tree. Each cut stump `[p, v[` becomes a
    /// closed edge ending in a fresh leaf at `v`. Returns `None` when the root
    /// itself was cut.
    pub fn materialize(&self) -> Option<MaterializedTree> {
        materialize_region(self.tree, self)
    }
}

/// Turns a region into a standalone tree. Partially covered edges become
/// shorter edges ending in a fresh leaf. `None` if the root is not in the region.
pub fn materialize_region<R: Region>(tree: &FiniteRTree, region: &R) -> Option<MaterializedTree> {
    if !region.contains_root() {
        return None;
    }
    let mut parents: Vec<Option<usize>> = Vec::new();
    let mut lengths: Vec<f64> = Vec::new();
    let mut node_map = vec![None; tree.node_count()];
    let mut stump_map = vec![None; tree.node_count()];
    for &v in tree.preorder() {
        if v == tree.root() {
            node_map[v.0] = Some(NodeId(parents.len()));
            parents.push(None);
            lengths.push(0.0);
            continue;
        }
        let p = tree.parent(v).unwrap();
        let Some(np) = node_map[p.0] else { continue };
        let len = tree.edge_length(v);
        let (a, closed) = match region.edge_cover(tree, v) {
            EdgeCover::Empty => continue,
            EdgeCover::Closed(a) => (a, true),
            EdgeCover::HalfOpen(a) => (a, false),
        };
        if closed && a >= len {
            node_map[v.0] = Some(NodeId(parents.len()));
            parents.push(Some(np.0));
            lengths.push(len);
        } else if a > 0.0 {
            stump_map[v.0] = Some(Stump { node: NodeId(parents.len()), length: a, closed });
            parents.push(Some(np.0));
            lengths.push(a);
        }
    }
    let new_tree = FiniteRTree::from_parents(&parents, &lengths).expect("materialized region is a valid tree");
    Some(MaterializedTree { tree: new_tree, node_map, stump_map })
}

#[derive(Copy, Clone, Debug)]
struct Stump {
    node: NodeId,
    length: f64,
    /// The top point belongs to the region.
    closed: bool,
}

impl Region for PrunedTree<'_> {
    fn tree_fingerprint(&self) -> u64 {
        self.tree.fingerprint()
    }

    fn contains_root(&self) -> bool {
        !self.root_cut
    }

    fn edge_cover(&self, _tree: &FiniteRTree, c: NodeId) -> EdgeCover {
        self.covers[c.0]
    }
}

/// A region turned into a standalone tree, with the map from old points.
#[derive(Clone, Debug)]
pub struct MaterializedTree {
    pub tree: FiniteRTree,
    node_map: Vec<Option<NodeId>>,
    stump_map: Vec<Option<Stump>>,
}

impl MaterializedTree {
    /// Image of a point of the base tree, or `None` if it is not in the region.
    pub fn map_point(&self, p: &TreePoint) -> Option<TreePoint> {
        match *p {
            TreePoint::Node { node } => self.node_map[node.0].map(TreePoint::node),
            TreePoint::OnEdge { edge, offset } => {
                if let Some(n) = self.node_map[edge.0] {
                    Some(TreePoint::OnEdge { edge: n, offset })
                } else if let Some(s) = self.stump_map[edge.0] {
                    if offset < s.length {
                        Some(TreePoint::OnEdge { edge: s.node, offset })
                    } else {
                        (offset == s.length && s.closed).then_some(TreePoint::node(s.node))
                    }
                } else {
                    None
                }
            }
        }
    }

    /// New edge owning the (possibly shortened) image of old edge `c`, with its length.
    pub fn map_edge(&self, c: NodeId) -> Option<(NodeId, f64)> {
        if let Some(n) = self.node_map[c.0] {
            Some((n, self.tree.edge_length(n)))
        } else {
            self.stump_map[c.0].map(|s| (s.node, s.length))
        }
    }

    /// Whether old edge `c` survived intact, including its child node.
    pub fn edge_intact(&self, c: NodeId) -> bool {
        self.node_map[c.0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// root 0 -- b 1 (length 1) -- leaves 2, 3 (length 1 each)
    pub(crate) fn cherry() -> FiniteRTree {
        FiniteRTree::from_parents(&[None, Some(0), Some(1), Some(1)], &[0.0, 1.0, 1.0, 1.0])
            .unwrap()
    }

    fn n(v: usize) -> TreePoint {
        TreePoint::node(NodeId(v))
    }

    #[test]
    fn cherry_distances() {
        let t = cherry();
        assert_eq!(t.distance(&n(2), &n(3)), 2.0);
        assert_eq!(t.distance(&n(0), &n(2)), 2.0);
        assert_eq!(t.distance(&n(2), &n(2)), 0.0);
        let x = t.point_on_edge(NodeId(2), 0.25).unwrap();
        assert_eq!(t.distance(&x, &x), 0.0);
        assert!((t.distance(&x, &n(3)) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn branch_points() {
        let t = cherry();
        assert_eq!(t.branch_point(&n(2), &n(3)), n(1));
        let x = t.point_on_edge(NodeId(3), 0.5).unwrap();
        assert_eq!(t.branch_point(&n(0), &x), n(0));
        let e = FiniteRTree::single_edge(1.0).unwrap();
        let a = e.point_on_edge(NodeId(1), 0.3).unwrap();
        let b = e.point_on_edge(NodeId(1), 0.7).unwrap();
        assert_eq!(e.branch_point(&a, &b), a);
        assert_eq!(e.branch_point(&b, &a), a);
    }

    #[test]
    fn canonical_points() {
        let t = cherry();
        assert_eq!(t.point_on_edge(NodeId(2), 0.0).unwrap(), n(1));
        assert_eq!(t.point_on_edge(NodeId(2), 1.0).unwrap(), n(2));
        assert!(t.point_on_edge(NodeId(0), 0.5).is_err());
        assert!(t.point_on_edge(NodeId(2), 1.5).is_err());
        let bad = TreePoint::OnEdge { edge: NodeId(2), offset: 1.0 };
        assert!(t.try_distance(&bad, &n(0)).is_err());
        assert!(t.try_distance(&n(9), &n(0)).is_err());
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(FiniteRTree::from_parents(&[], &[]).is_err());
        assert!(FiniteRTree::from_parents(&[None, None], &[0.0, 0.0]).is_err());
        assert!(FiniteRTree::from_parents(&[None, Some(0)], &[0.0, 0.0]).is_err());
        assert!(FiniteRTree::from_parents(&[None, Some(2), Some(1)], &[0.0, 1.0, 1.0]).is_err());
        assert!(FiniteRTree::from_parents(&[None, Some(5)], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn spans() {
        let t = cherry();
        assert_eq!(t.span(&[n(2), n(3)]).unwrap().total_length(), 3.0);
        let x = t.point_on_edge(NodeId(3), 0.4).unwrap();
        let s = t.span(&[x]).unwrap();
        assert!((s.total_length() - t.distance(&n(0), &x)).abs() < 1e-15);
        assert!(s.contains(&t, &n(1)));
        assert!(s.contains(&t, &x));
        assert!(!s.contains(&t, &n(3)));
        assert!(!s.contains(&t, &n(2)));
        assert!(t.span(&[]).is_err());
    }

    #[test]
    fn leaves_and_matrix() {
        let t = cherry();
        assert_eq!(t.leaves(), vec![n(2), n(3)]);
        let m = t.distance_matrix(&[n(2), n(3)]).unwrap();
        assert_eq!(m, vec![vec![0.0, 2.0, 2.0], vec![2.0, 0.0, 2.0], vec![2.0, 2.0, 0.0]]);
    }

    #[test]
    fn pruning_moves() {
        let t = cherry();
        let at_b = t.prune_at(&n(1)).unwrap();
        assert!((at_b.total_length() - 1.0).abs() < 1e-15);
        assert!(!at_b.contains_point(&n(1)));
        assert!(at_b.contains_point(&t.point_on_edge(NodeId(1), 0.999).unwrap()));
        assert!(!at_b.contains_point(&n(2)));

        let at_leaf = t.prune_at(&n(2)).unwrap();
        assert_eq!(at_leaf.total_length(), 3.0);
        assert!(!at_leaf.contains_point(&n(2)));
        assert!(at_leaf.contains_point(&t.point_on_edge(NodeId(2), 0.999).unwrap()));

        let at_root = t.prune_at(&n(0)).unwrap();
        assert!(at_root.is_empty());
        assert!(!at_root.contains_point(&n(0)));
        assert!(at_root.materialize().is_none());

        let none = t.prune_at_set(&[]).unwrap();
        assert_eq!(none.total_length(), 3.0);
        let shadow = t.prune_at_set(&[n(1), n(3)]).unwrap();
        assert_eq!(shadow.effective_cuts(), &[n(1)]);
    }

    #[test]
    fn materialize_closes_stumps() {
        let t = cherry();
        let x = t.point_on_edge(NodeId(3), 0.25).unwrap();
        let p = t.prune_at(&x).unwrap();
        let m = p.materialize().unwrap();
        assert_eq!(m.tree.node_count(), 4);
        assert!((m.tree.total_length() - 2.25).abs() < 1e-15);
        assert_eq!(m.map_point(&n(3)), None);
        let y = t.point_on_edge(NodeId(3), 0.1).unwrap();
        let my = m.map_point(&y).unwrap();
        assert!((m.tree.distance(&my, &m.map_point(&n(2)).unwrap()) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let t = cherry();
        let j = serde_json::to_string(&t.to_json()).unwrap();
        let back = FiniteRTree::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, t);
        let p: TreePoint = serde_json::from_str(r#"{"edge":2,"offset":0.5}"#).unwrap();
        assert_eq!(p, TreePoint::OnEdge { edge: NodeId(2), offset: 0.5 });
        let q: TreePoint = serde_json::from_str(r#"{"node":3}"#).unwrap();
        assert_eq!(q, n(3));
    }
}
