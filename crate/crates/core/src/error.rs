use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("degenerate time interval: t0 = {t0}, t1 = {t1}")]
    DegenerateInterval { t0: f64, t1: f64 },
    #[error("invalid path: {0}")]
    Path(String),
    #[error("non-finite value encountered while evaluating {0}")]
    NonFinite(&'static str),
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("degenerate step equations: {reason}")]
    Degenerate {
        reason: String,
        near_zero_energy: bool,
    },
    #[error("time collapse: next time {t_next} does not exceed current time {t_current}")]
    TimeCollapse { t_current: f64, t_next: f64 },
    #[error("initial pair is not admissible: discrete constraint residual {residual:e}")]
    Admissibility { residual: f64 },
    #[error("discrete Lagrangian is not invariant under the action: pairing mismatch {residual:e}")]
    InvarianceViolation { residual: f64 },
    #[error("section is not compatible with the constraints: residual {residual:e}")]
    Section { residual: f64 },
    #[error("not a Chaplygin system: {0}")]
    NotChaplygin(String),
    #[error("reduction assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("reference solver failure: {0}")]
    Oracle(String),
}

impl Error {
    pub fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }

    /// True for failures of an implicit step solve (as opposed to bad input).
    pub fn is_step_failure(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. } | Error::Degenerate { .. } | Error::TimeCollapse { .. }
        )
    }
}
