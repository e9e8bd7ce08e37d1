#![allow(dead_code)]

use rand::Rng;
use treeprune::measure::{BiMeasureTree, TreeMeasure};
use treeprune::tree::{FiniteRTree, NodeId, TreePoint};

/// A random rooted tree with `nodes` nodes and edge lengths in `[0.2, 1.5)`.
pub fn random_tree<R: Rng>(nodes: usize, rng: &mut R) -> FiniteRTree {
    let mut parents = vec![None];
    let mut lengths = vec![0.0];
    for v in 1..nodes {
        parents.push(Some(rng.random_range(0..v)));
        lengths.push(rng.random_range(0.2..1.5));
    }
    FiniteRTree::from_parents(&parents, &lengths).unwrap()
}

/// A node or an interior edge point, uniformly over the non-root slots.
pub fn random_point<R: Rng>(t: &FiniteRTree, rng: &mut R) -> TreePoint {
    let c = NodeId(rng.random_range(1..t.node_count()));
    if rng.random_bool(0.5) {
        TreePoint::node(c)
    } else {
        t.point_on_edge(c, rng.random_range(0.05..0.95) * t.edge_length(c)).unwrap()
    }
}

/// Atomic μ with at most `max_mu_atoms` atoms; ν atomic, or atomic plus a
/// length part when `length_nu`.
pub fn random_instance<R: Rng>(max_mu_atoms: usize, length_nu: bool, rng: &mut R) -> BiMeasureTree {
    let nodes = rng.random_range(3..=7);
    let t = random_tree(nodes, rng);
    let mut mu = TreeMeasure::zero(&t);
    for _ in 0..rng.random_range(1..=max_mu_atoms) {
        mu.add_atom(&t, random_point(&t, rng), rng.random_range(0.1..1.0)).unwrap();
    }
    let mut nu = if length_nu {
        TreeMeasure::length(&t, rng.random_range(0.2..1.0)).unwrap()
    } else {
        TreeMeasure::zero(&t)
    };
    for _ in 0..rng.random_range(2..=5) {
        nu.add_atom(&t, random_point(&t, rng), rng.random_range(0.2..1.5)).unwrap();
    }
    if rng.random_bool(0.3) {
        nu.add_atom(&t, TreePoint::node(t.root()), rng.random_range(0.05..0.3)).unwrap();
    }
    BiMeasureTree::new_restricting(t, mu, nu).unwrap()
}
