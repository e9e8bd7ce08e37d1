//! Criterion benchmarks for the hot paths of `treeprune-core`; see `benches/core.rs`.
