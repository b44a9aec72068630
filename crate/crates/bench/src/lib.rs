//! Criterion micro-benchmarks for the chebgraph numeric kernels.
//!
//! This crate exists only for its `benches/` directory; run them with
//! `cargo bench -p chebgraph-bench`.
