//! Bayesian item response theory for benchmark suites.
//!
//! Benchmark runs are turned into a response matrix (functions as items,
//! algorithms as persons), a two-parameter logistic model is fit by
//! Hamiltonian Monte Carlo, and the fit feeds information curves, adaptive
//! test simulation and reports.

pub mod ingest;
pub mod model;
pub mod sampler;
pub mod information;
pub mod cat;
pub mod report;
pub mod cli;
