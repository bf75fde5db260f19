//! Consensus-based distributed transfer learning with linear SVMs.
//!
//! A network of nodes trains one linear classifier per task. Each task's
//! decision vector is split into a part shared across tasks and a per-task
//! part; nodes agree on their vectors with neighbors through ADMM rounds in
//! which only decision vectors travel over the (simulated) network — never
//! training samples.
//!
//! - [`core`]: shared domain types and the structured selector operators.
//! - [`topology`]: undirected connected graphs and degree metrics.
//! - [`qpbox`]: box-constrained QP solver for the per-(node, task) dual.
//! - [`engine`]: the synchronous consensus engine (rounds, residuals,
//!   online task join/leave).
//! - [`unreduced`]: reference iteration with explicit per-pair auxiliary
//!   variables, used to validate the engine.
//! - [`baselines`]: centralized SVM and centralized transfer solvers.
//! - [`datakit`]: synthetic task generator, IDX loader, PCA, partitioning.

pub mod baselines;
pub mod core;
pub mod datakit;
pub mod engine;
pub mod qpbox;
pub mod topology;
pub mod unreduced;
