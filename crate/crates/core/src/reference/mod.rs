//! Continuous-time oracle and the catalog of built-in example systems.

pub mod catalog;
pub mod convergence;
pub mod oracle;

pub use catalog::{builtin, builtin_systems, BuiltinSystem, BUILTIN_NAMES};
pub use convergence::{convergence_study, loglog_slope, ConvergenceReport, Rung};
pub use oracle::{
    solve_fixed_step, solve_reference, ContinuousSystem, DenseTrajectory, InitialState, KnownInvariant, Node,
};
