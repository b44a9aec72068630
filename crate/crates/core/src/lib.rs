//! Spectral graph convolution over multigraphs with Chebyshev filters.
//!
//! The crate provides the numeric and learning machinery behind the
//! `chebgraph` command line tool:
//!
//! - [`sparse`]: symmetric sparse matrices in CSR form and the rescaled
//!   graph Laplacian whose spectrum lives in `[−1, 1]`.
//! - [`dense`]: a small row-major dense matrix type used everywhere else.
//! - [`eigen`]: a cyclic Jacobi eigensolver for symmetric matrices.
//! - [`cheb`]: Chebyshev basis projections of node features, including the
//!   two-relation product basis.
//! - [`autodiff`]: a reverse-mode differentiation tape over dense matrices.
//!
//! The most common entry points are re-exported at the crate root.

pub mod analysis;
pub mod autodiff;
pub mod cheb;
pub mod data;
pub mod dense;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod layers;
pub mod model;
pub mod optim;
pub mod sparse;

pub use analysis::{bench_forward, bench_to_csv, eigen_histogram, random_graph, BenchRow, EigenHistogram};
pub use autodiff::{grad_check, pair_concat, pair_scatter, Param, Segments, Tape, Var};
pub use harness::{
    cross_validate, cross_validate_with, fusion_sweep, sweep_to_csv, train_fold, FoldOutcome,
    RunReport, SweepRow, TrainConfig,
};
pub use data::{
    make_batch, parse_tu, stratified_folds, write_tu, Batch, DatasetStats, FoldPlan, GraphRecord,
    TuDataset,
};
pub use layers::{
    global_max_pool, learned_laplacian, BnLayer, ConvLayer, EdgeLearner, FusionMethod, LapRef,
    Linear,
};
pub use model::{Model, ModelConfig};
pub use optim::{Adam, Schedule};
pub use cheb::{project, project_2d, ChebBasis};
pub use dense::DenseMat;
pub use eigen::symmetric_eigen;
pub use error::{Error, Result};
pub use sparse::SparseSym;
