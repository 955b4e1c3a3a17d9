//! Variational integrators for time-dependent nonholonomic systems on an
//! extended configuration space `R x Q`.
//!
//! Time is treated as a configuration variable, so the step size of a
//! trajectory is an unknown of each implicit step and the discrete energy is
//! conserved whenever the system is autonomous.

pub mod calculus;
pub mod chaplygin;
pub mod discretize;
pub mod geometry;
pub mod error;
pub mod reference;
pub mod stepper;
pub mod types;
pub mod validate;

pub use error::{Error, Result};
pub use types::*;
