//! Global error of the constrained integrator against the oracle over a
//! ladder of initial step sizes.

use crate::error::{Error, Result};
use crate::reference::catalog::BuiltinSystem;
use crate::reference::oracle::{solve_reference, InitialState};
use crate::stepper::step_edla_with_guess;
use crate::types::{ExtendedPair, SolverConfig};

/// Oracle accuracy used for convergence studies.
pub const ORACLE_ACCURACY: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct Rung {
    pub h: f64,
    /// Max over discrete points `t_k <= t_final` of `|q_k - q(t_k)|_∞`.
    pub error: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rungs: Vec<Rung>,
    /// Least-squares slope of `log error` against `log h`.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Config("a slope needs at least two ladder rungs".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Config("log-log fit needs positive step sizes and errors".into()));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("ladder rungs must differ".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Runs the integrator from `init` with each initial step size in `ladder`
/// up to `t_final` and fits the error slope.
pub fn convergence_study(
    b: &BuiltinSystem,
    init: &InitialState,
    ladder: &[f64],
    t_final: f64,
    cfg: &SolverConfig,
) -> Result<ConvergenceReport> {
    if ladder.len() < 2 {
        return Err(Error::Config("the step ladder needs at least two rungs".into()));
    }
    let dense = solve_reference(&b.continuous, init, t_final, ORACLE_ACCURACY)?;
    let mut rungs = Vec::with_capacity(ladder.len());
    for &h in ladder {
        if !(h > 0.0 && init.t + h < t_final) {
            return Err(Error::Config(format!("ladder step {h} must be positive and below the horizon")));
        }
        let mut pair = b.initial_pair(init, h, cfg)?;
        let mut error: f64 = 0.0;
        let mut lambda = None;
        let mut steps = 0;
        loop {
            let (q_ref, _) = dense.state_at(pair.p1.t)?;
            error = error.max((&pair.p1.q - q_ref).amax());
            let step = step_edla_with_guess(&b.system, &pair, lambda.as_ref(), cfg)?;
            if step.next.t > t_final {
                break;
            }
            pair = ExtendedPair::new(pair.p1.clone(), step.next)?;
            lambda = Some(step.lambda);
            steps += 1;
        }
        rungs.push(Rung { h, error, steps });
    }
    let points: Vec<(f64, f64)> = rungs.iter().map(|r| (r.h, r.error)).collect();
    let slope = loglog_slope(&points)?;
    Ok(ConvergenceReport { rungs, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::builtin;
    use std::collections::BTreeMap;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h.powi(2))).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_rung_is_rejected() {
        assert!(matches!(loglog_slope(&[(0.1, 1.0)]), Err(Error::Config(_))));
        let b = builtin("harmonic_oscillator", &BTreeMap::new()).unwrap();
        let err = convergence_study(&b, &b.default_initial, &[0.1], 1.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn oscillator_is_second_order() {
        let b = builtin("harmonic_oscillator", &BTreeMap::new()).unwrap();
        let r = convergence_study(&b, &b.default_initial, &[0.1, 0.05, 0.025], 2.0, &SolverConfig::default()).unwrap();
        assert!((r.slope - 2.0).abs() <= 0.2, "{r:?}");
    }
}
