//! Simulation of pruning processes on finite bi-measure R-trees.
//!
//! A bi-measure tree `(T, μ, ν)` is a rooted tree with positive edge lengths,
//! a finite sampling measure `μ` and a pruning measure `ν`. The pruning
//! process cuts the tree at the points of a Poisson process with intensity
//! `dt ⊗ ν` and removes everything above each cut.
//!
//! Modules:
//! - [`tree`]: trees, points, spans and pruned trees
//! - [`measure`]: length-plus-atom measures, bi-measure trees
//! - [`prohorov`]: exact Prohorov distance on finite supports
//! - [`generators`]: conditioned Galton-Watson trees, contours, the glue map
//! - [`pruning`]: the pruning process, its semigroup and generator
//! - [`testfn`]: polynomial test functions and subtree samples
//! - [`statistics`]: samplers, Gromov-Prohorov bounds, convergence reports
//! - [`cutdown`]: separation times and cut counts

pub mod cutdown;
pub mod error;
pub mod generators;
pub mod measure;
pub mod prohorov;
pub mod pruning;
pub mod rng;
pub mod stats;
pub mod statistics;
pub mod testfn;
pub mod tree;

pub use error::{Error, Result};
pub use measure::{BiMeasureTree, TreeMeasure};
pub use tree::{FiniteRTree, NodeId, TreePoint};
