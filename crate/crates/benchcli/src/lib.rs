//! Benchmark harness for the consensus transfer-SVM engine.
//!
//! A scenario is one strict JSON config describing a network, data, task
//! placement, and hyperparameters; running it under a seed is fully
//! deterministic and produces a flat CSV of per-round risks and consensus
//! residuals. The shipped `configs/` directory covers the standard
//! experiment suite (convergence, regularization sweeps, unbalanced and
//! mixed placements, online join/leave).
//!
//! - [`config`]: the scenario schema, validation, and the single-task
//!   baseline rewrite.
//! - [`scenario`]: seed fan-out, data preparation, and the mode runners.
//! - [`sweep`]: Cartesian hyperparameter grids with seed-aggregated
//!   summaries.
//! - [`csvout`]: the record schema and CSV writers.

pub mod config;
pub mod csvout;
pub mod scenario;
pub mod sweep;
