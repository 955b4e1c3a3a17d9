//! Damped Newton iteration for small dense systems.

use crate::discretize::fd_jacobian;
use crate::error::{Error, Result};
use crate::types::{Matrix, SolverConfig, Vector};

/// Jacobians whose condition estimate exceeds this are reported as degenerate.
pub const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vector,
    pub iterations: usize,
    /// Max-norm of the residual at `x`.
    pub residual_norm: f64,
    /// The last Jacobian factored, if any iteration ran.
    pub jacobian: Option<Matrix>,
}

/// Ratio of extreme singular values (infinite for a singular matrix).
pub fn condition_estimate(j: &Matrix) -> f64 {
    if j.is_empty() {
        return 1.0;
    }
    let sv = j.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Newton with a central-difference Jacobian (steps `fd_step_scale · max(1, |x_i|)`).
pub fn newton_solve(
    residual: &dyn Fn(&Vector) -> Result<Vector>,
    guess: &Vector,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    let scale = cfg.fd_step_scale;
    newton_solve_with_jacobian(residual, &|x: &Vector| fd_jacobian(residual, x, scale), guess, cfg)
}

/// Residual change caused by perturbing every unknown by one unit in the
/// last place: `max_i Σ_j |J_ij| ε max(|x_j|, tiny)`. Residuals below a small
/// multiple of this cannot be resolved in floating point.
pub fn roundoff_floor(j: &Matrix, x: &Vector) -> f64 {
    let ulp = x.map(|v| f64::EPSILON * v.abs().max(f64::MIN_POSITIVE));
    (j.abs() * ulp).amax()
}

/// Damped Newton iteration. Steps are shortened by `cfg.damping` until the
/// natural level function `|J⁻¹ F(x + α dx)|` falls below `|dx|` (invariant
/// under row scaling of `F`). The first iterate whose max-norm residual is at
/// most `cfg.tol`, or at most four times the round-off floor of the last
/// Jacobian, is returned.
pub fn newton_solve_with_jacobian(
    residual: &dyn Fn(&Vector) -> Result<Vector>,
    jacobian: &dyn Fn(&Vector) -> Result<Matrix>,
    guess: &Vector,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let mut x = guess.clone();
    let mut r = residual(&x)?;
    if r.len() != x.len() {
        return Err(Error::dims("Newton residual", x.len(), r.len()));
    }
    let mut last_jac: Option<Matrix> = None;
    let mut iterations = 0;
    loop {
        let norm = r.amax();
        if !norm.is_finite() {
            return Err(Error::NonFinite("Newton residual"));
        }
        let floor = last_jac.as_ref().map_or(0.0, |j| 4.0 * roundoff_floor(j, &x));
        if norm <= cfg.tol.max(floor) {
            return Ok(NewtonOutcome {
                x,
                iterations,
                residual_norm: norm,
                jacobian: last_jac,
            });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: norm,
            });
        }
        let j = jacobian(&x)?;
        let cond = condition_estimate(&j);
        if cond > CONDITION_LIMIT {
            return Err(Error::Degenerate {
                reason: format!("Jacobian condition estimate {cond:e} exceeds {CONDITION_LIMIT:e}"),
                near_zero_energy: false,
            });
        }
        let lu = j.clone().lu();
        let singular = || Error::Degenerate {
            reason: "singular Jacobian".into(),
            near_zero_energy: false,
        };
        let dx = lu.solve(&(-&r)).ok_or_else(singular)?;
        last_jac = Some(j);
        iterations += 1;

        let level = dx.norm();
        let mut alpha = 1.0;
        loop {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = residual(&trial) {
                if rt.iter().all(|v| v.is_finite()) {
                    let simplified = lu.solve(&(-&rt)).ok_or_else(singular)?;
                    if simplified.norm() < level || rt.amax() <= cfg.tol {
                        x = trial;
                        r = rt;
                        break;
                    }
                }
            }
            alpha *= cfg.damping;
            if alpha < cfg.min_step {
                return Err(Error::Convergence {
                    iterations,
                    residual: norm,
                });
            }
        }
    }
}
