//! Batch front end: configuration parsing, simulations, property checks and
//! convergence studies with CSV output.

pub mod commands;
pub mod config;
pub mod output;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STEP: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
/// A property or slope check ran but missed its threshold.
pub const EXIT_CHECK: i32 = 4;

pub const SEED_VAR: &str = "NHVI_SEED";

/// Sampling seed from `NHVI_SEED` (0 when unset).
pub fn seed_from_env() -> Result<u64, config::ConfigError> {
    match std::env::var(SEED_VAR) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| config::ConfigError::new(SEED_VAR, format!("expected a non-negative integer, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(config::ConfigError::new(SEED_VAR, e.to_string())),
    }
}
