//! Implicit one-step maps of the extended discrete Euler-Lagrange (EDEL) and
//! extended discrete Lagrange-d'Alembert (EDLA) equations and the trajectory
//! driver.
//!
//! Given a pair `(t0, q0, t1, q1)` a step solves for `(t2, q2, λ)` with the
//! equations ordered as
//!
//! ```text
//! D1 L_d(p1, p2) + D3 L_d(p0, p1)                    = 0   (time / energy)
//! D2 L_d(p1, p2) + D4 L_d(p0, p1) - λ_a ω^a(t1, q1)  = 0   (n momentum rows)
//! ω_d(p1, p2)                                         = 0   (m constraints)
//! ```
//!
//! The unconstrained EDEL step is the same code path with `m = 0`.

mod newton;

pub use newton::{
    condition_estimate, newton_solve, newton_solve_with_jacobian, roundoff_floor, NewtonOutcome, CONDITION_LIMIT,
};

use std::cell::Cell;
use std::fmt;

use crate::calculus::{energy_minus, energy_plus, theta_plus};
use crate::discretize::fd_jacobian_with_steps;
use crate::error::{Error, Result};
use crate::types::{
    ConstraintSet, DiscreteLagrangian, ExtendedPair, ExtendedPoint, GuessMode, Matrix, NonholonomicSystem,
    PairDiagnostics, Partials, SolverConfig, SolverStats, StepWarning, Trajectory, Vector,
};

/// `|E+|` below this flags a step as near-zero-energy.
pub const NEAR_ZERO_ENERGY: f64 = 1e-8;

/// Normalized distance of the time row from the span of the remaining rows
/// below which the step equations are declared degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

const POLISH_STEPS: usize = 2;

/// One application of the discrete Lagrangian map.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: ExtendedPoint,
    /// Multipliers `λ_a` (empty when unconstrained).
    pub lambda: Vector,
    pub iterations: usize,
    pub residual_norm: f64,
    /// `|E+|` of the incoming pair was below [`NEAR_ZERO_ENERGY`].
    pub near_zero_energy: bool,
    /// Normalized distance of the time row of the Jacobian from the span of
    /// the other rows at the solution.
    pub time_row_distance: f64,
}

fn check_triple(p0: &ExtendedPoint, p1: &ExtendedPoint, p2: &ExtendedPoint) -> Result<()> {
    if !(p0.t < p1.t && p1.t < p2.t) {
        return Err(Error::Path(format!(
            "triple times must increase strictly: {}, {}, {}",
            p0.t, p1.t, p2.t
        )));
    }
    Ok(())
}

/// Residual of the step equations given the partials of the incoming pair.
fn step_residual(
    ld: &DiscreteLagrangian,
    constraints: Option<&ConstraintSet>,
    incoming: &Partials,
    p1: &ExtendedPoint,
    omega1: Option<&Matrix>,
    p2: &ExtendedPoint,
    lambda: &Vector,
) -> Result<Vector> {
    let n = p1.dim();
    let m = constraints.map_or(0, |c| c.count());
    let next = ExtendedPair::new(p1.clone(), p2.clone())?;
    let b = ld.partials(&next)?;
    let mut r = Vector::zeros(n + 1 + m);
    r[0] = b.d1 + incoming.d3;
    let mut momentum = b.d2 + &incoming.d4;
    if let (Some(c), Some(w)) = (constraints, omega1) {
        momentum -= w.transpose() * lambda;
        r.rows_mut(n + 1, m).copy_from(&c.omega_d(&next)?);
    }
    r.rows_mut(1, n).copy_from(&momentum);
    Ok(r)
}

fn residual_impl(
    ld: &DiscreteLagrangian,
    constraints: Option<&ConstraintSet>,
    p0: &ExtendedPoint,
    p1: &ExtendedPoint,
    p2: &ExtendedPoint,
    lambda: &Vector,
) -> Result<Vector> {
    check_triple(p0, p1, p2)?;
    let m = constraints.map_or(0, |c| c.count());
    if lambda.len() != m {
        return Err(Error::dims("multiplier vector", m, lambda.len()));
    }
    let incoming = ld.partials(&ExtendedPair::new(p0.clone(), p1.clone())?)?;
    let omega1 = constraints.map(|c| c.omega(p1.t, &p1.q)).transpose()?;
    step_residual(ld, constraints, &incoming, p1, omega1.as_ref(), p2, lambda)
}

/// EDEL residual `[D1 L_d(p1,p2) + D3 L_d(p0,p1); D2 L_d(p1,p2) + D4 L_d(p0,p1)]`.
pub fn edel_residual(ld: &DiscreteLagrangian, p0: &ExtendedPoint, p1: &ExtendedPoint, p2: &ExtendedPoint) -> Result<Vector> {
    residual_impl(ld, None, p0, p1, p2, &Vector::zeros(0))
}

/// EDLA residual (time row, `n` momentum rows with multiplier forces, `m`
/// discrete constraint rows).
pub fn edla_residual(
    sys: &NonholonomicSystem,
    p0: &ExtendedPoint,
    p1: &ExtendedPoint,
    p2: &ExtendedPoint,
    lambda: &Vector,
) -> Result<Vector> {
    residual_impl(&sys.lagrangian, sys.constraints.as_ref(), p0, p1, p2, lambda)
}

/// Distance of row 0 of `j` from the span of its other rows, after scaling
/// every row to unit length. Zero when row 0 vanishes.
pub fn time_row_dependence(j: &Matrix) -> f64 {
    let rows = j.nrows();
    let mut scaled = j.clone();
    for i in 0..rows {
        let nrm = scaled.row(i).norm();
        if nrm > 0.0 {
            scaled.row_mut(i).scale_mut(1.0 / nrm);
        }
    }
    if j.row(0).norm() == 0.0 {
        return 0.0;
    }
    let r = scaled.row(0).transpose();
    if rows == 1 {
        return r.norm();
    }
    let others = scaled.rows(1, rows - 1).transpose();
    let svd = others.clone().svd(true, true);
    match svd.solve(&r, 1e-13) {
        Ok(c) => (others * c - r).norm(),
        Err(_) => r.norm(),
    }
}

/// Shared implicit-step machinery for EDEL, EDLA and the reduced stepper.
///
/// `residual(p2, λ)` evaluates the step equations; unknowns are stacked as
/// `(t2, q2, λ)`.
pub(crate) fn solve_implicit_step(
    pair: &ExtendedPair,
    m: usize,
    lambda_guess: Option<&Vector>,
    incoming_energy: f64,
    residual: &dyn Fn(&ExtendedPoint, &Vector) -> Result<Vector>,
    cfg: &SolverConfig,
) -> Result<StepResult> {
    let n = pair.dim();
    let (p0, p1) = (&pair.p0, &pair.p1);
    let h_prev = pair.interval();
    if !(h_prev > 0.0) {
        return Err(Error::Path(format!(
            "incoming pair must have t1 > t0 (got {} and {})",
            p0.t, p1.t
        )));
    }
    let near_zero_energy = incoming_energy.abs() < NEAR_ZERO_ENERGY;
    if near_zero_energy {
        log::warn!("near-zero discrete energy {incoming_energy:e} at t = {}", p1.t);
    }
    let flag = |e: Error| match e {
        Error::Degenerate { reason, .. } => Error::Degenerate {
            reason,
            near_zero_energy,
        },
        other => other,
    };

    let mut x0 = Vector::zeros(n + 1 + m);
    match cfg.guess_mode {
        GuessMode::LinearExtrapolation => {
            x0[0] = p1.t + h_prev;
            x0.rows_mut(1, n).copy_from(&(&p1.q * 2.0 - &p0.q));
        }
        GuessMode::CopyPrevious => {
            x0[0] = p1.t + h_prev;
            x0.rows_mut(1, n).copy_from(&p1.q);
        }
    }
    if let Some(l) = lambda_guess {
        if l.len() != m {
            return Err(Error::dims("multiplier guess", m, l.len()));
        }
        x0.rows_mut(n + 1, m).copy_from(l);
    }

    let split = |x: &Vector| (ExtendedPoint::new(x[0], x.rows(1, n).into_owned()), x.rows(n + 1, m).into_owned());
    let scale = cfg.fd_step_scale;
    let rel_steps = |x: &Vector| x.map(|v| scale * v.abs().max(1.0));

    // Predictor: momentum and constraint rows with the step size frozen at
    // the previous one. Its multipliers select the forward solution branch.
    let t_frozen = x0[0];
    let g = |y: &Vector| {
        let p2 = ExtendedPoint::new(t_frozen, y.rows(0, n).into_owned());
        Ok(residual(&p2, &y.rows(n, m).into_owned())?.rows(1, n + m).into_owned())
    };
    let y0 = x0.rows(1, n + m).into_owned();
    let g_jac = |y: &Vector| fd_jacobian_with_steps(&g, y, &rel_steps(y));
    if let Ok(pred) = newton_solve_with_jacobian(&g, &g_jac, &y0, cfg) {
        x0.rows_mut(1, n + m).copy_from(&pred.x);
    }

    // Trial points at or behind t1 are rejected so that the line search
    // cannot cross into the time-reversed branch.
    let earliest = Cell::new(f64::INFINITY);
    let f = |x: &Vector| {
        if !(x[0] > p1.t) {
            earliest.set(earliest.get().min(x[0]));
            return Err(Error::TimeCollapse {
                t_current: p1.t,
                t_next: x[0],
            });
        }
        let (p2, lambda) = split(x);
        residual(&p2, &lambda)
    };
    let steps = |x: &Vector| {
        let mut st = rel_steps(x);
        st[0] = scale * h_prev;
        st
    };
    let jac = |x: &Vector| fd_jacobian_with_steps(&f, x, &steps(x));

    let out = match newton_solve_with_jacobian(&f, &jac, &x0, cfg) {
        Ok(out) => out,
        Err(Error::Convergence { .. }) if earliest.get().is_finite() => {
            return Err(Error::TimeCollapse {
                t_current: p1.t,
                t_next: earliest.get(),
            })
        }
        Err(e) => return Err(flag(e)),
    };
    let j = match out.jacobian {
        Some(j) => j,
        None => jac(&out.x).map_err(flag)?,
    };
    let dependence = time_row_dependence(&j);
    if dependence < DEGENERACY_THRESHOLD {
        return Err(Error::Degenerate {
            reason: format!(
                "time equation is dependent on the momentum and constraint equations (distance {dependence:e})"
            ),
            near_zero_energy,
        });
    }
    // A converged iterate may still carry a residual close to `cfg.tol`,
    // which feeds straight into the energy balance of the step. Simplified
    // Newton corrections with the final Jacobian are kept while they help.
    let (mut x, mut norm) = (out.x, out.residual_norm);
    let lu = j.lu();
    for _ in 0..POLISH_STEPS {
        let Ok(r) = f(&x) else { break };
        let Some(dx) = lu.solve(&(-r)) else { break };
        let trial = &x + dx;
        match f(&trial) {
            Ok(rt) if rt.amax() < norm => {
                norm = rt.amax();
                x = trial;
            }
            _ => break,
        }
    }
    let (next, lambda) = split(&x);
    if !(next.t > p1.t) {
        return Err(Error::TimeCollapse {
            t_current: p1.t,
            t_next: next.t,
        });
    }
    Ok(StepResult {
        next,
        lambda,
        iterations: out.iterations,
        residual_norm: norm,
        near_zero_energy,
        time_row_distance: dependence,
    })
}

fn step_impl(
    ld: &DiscreteLagrangian,
    constraints: Option<&ConstraintSet>,
    pair: &ExtendedPair,
    lambda_guess: Option<&Vector>,
    cfg: &SolverConfig,
) -> Result<StepResult> {
    if pair.dim() != ld.dim() {
        return Err(Error::dims("step pair", ld.dim(), pair.dim()));
    }
    let m = constraints.map_or(0, |c| c.count());
    let incoming = ld.partials(pair)?;
    let omega1 = constraints.map(|c| c.omega(pair.p1.t, &pair.p1.q)).transpose()?;
    let energy = -incoming.d3;
    let p1 = &pair.p1;
    solve_implicit_step(
        pair,
        m,
        lambda_guess,
        energy,
        &|p2, lambda| step_residual(ld, constraints, &incoming, p1, omega1.as_ref(), p2, lambda),
        cfg,
    )
}

/// Advances an unconstrained system by one EDEL step.
pub fn step_edel(ld: &DiscreteLagrangian, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<StepResult> {
    step_impl(ld, None, pair, None, cfg)
}

/// Advances a (possibly constrained) system by one EDLA step with zero initial
/// multipliers.
pub fn step_edla(sys: &NonholonomicSystem, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<StepResult> {
    step_edla_with_guess(sys, pair, None, cfg)
}

/// EDLA step with an explicit initial multiplier guess.
pub fn step_edla_with_guess(
    sys: &NonholonomicSystem,
    pair: &ExtendedPair,
    lambda_guess: Option<&Vector>,
    cfg: &SolverConfig,
) -> Result<StepResult> {
    step_impl(&sys.lagrangian, sys.constraints.as_ref(), pair, lambda_guess, cfg)
}

/// Moves `q1` of `pair` onto the discrete constraint space with a minimum-norm
/// Gauss-Newton correction. Unconstrained systems return the pair unchanged.
pub fn project_to_constraints(sys: &NonholonomicSystem, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<ExtendedPair> {
    let Some(c) = &sys.constraints else {
        return Ok(pair.clone());
    };
    let mut q1 = pair.p1.q.clone();
    let eval = |q: &Vector| c.omega_d(&ExtendedPair::new(pair.p0.clone(), ExtendedPoint::new(pair.p1.t, q.clone()))?);
    for _ in 0..cfg.max_iter {
        let r = eval(&q1)?;
        if r.amax() <= cfg.tol {
            return Ok(ExtendedPair::new(pair.p0.clone(), ExtendedPoint::new(pair.p1.t, q1))?);
        }
        let steps = q1.map(|x| cfg.fd_step_scale * x.abs().max(1.0));
        let j = fd_jacobian_with_steps(&eval, &q1, &steps)?;
        let jjt = &j * j.transpose();
        let y = jjt.lu().solve(&r).ok_or_else(|| Error::Degenerate {
            reason: "discrete constraints are rank deficient".into(),
            near_zero_energy: false,
        })?;
        q1 -= j.transpose() * y;
    }
    Err(Error::Admissibility {
        residual: eval(&q1)?.amax(),
    })
}

/// Diagnostics of one pair: energies, constraint residual and momentum
/// components for each algebra basis element of the system's action.
pub fn pair_diagnostics(sys: &NonholonomicSystem, pair: &ExtendedPair) -> Result<PairDiagnostics> {
    let ld = &sys.lagrangian;
    let momentum = match &sys.action {
        Some(a) => {
            let theta = theta_plus(ld, pair)?;
            (0..a.algebra_dim()).map(|i| theta.pair(&a.generator(i, &pair.p1))).collect()
        }
        None => Vec::new(),
    };
    Ok(PairDiagnostics {
        e_plus: energy_plus(ld, pair)?,
        e_minus: energy_minus(ld, pair)?,
        constraint_residual: sys.constraint_residual(pair)?,
        momentum,
    })
}

/// A failed simulation: the error, the index of the step that failed (if any
/// step was attempted) and the trajectory computed so far.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub error: Error,
    pub step: Option<usize>,
    pub partial: Option<Trajectory>,
}

impl fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(k) => write!(f, "step {k} failed: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for SimulationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl SimulationFailure {
    fn setup(error: Error) -> Self {
        Self {
            error,
            step: None,
            partial: None,
        }
    }
}

/// Runs `steps` EDLA steps from an admissible initial pair, producing
/// `steps + 2` points with per-pair diagnostics. On a step failure the partial
/// trajectory is returned inside the error.
pub fn simulate(
    sys: &NonholonomicSystem,
    initial: &ExtendedPair,
    steps: usize,
    cfg: &SolverConfig,
) -> std::result::Result<Trajectory, SimulationFailure> {
    cfg.validate().map_err(SimulationFailure::setup)?;
    sys.check_dims().map_err(SimulationFailure::setup)?;
    if initial.dim() != sys.dim() {
        return Err(SimulationFailure::setup(Error::dims("initial pair", sys.dim(), initial.dim())));
    }
    if !(initial.interval() > 0.0) {
        return Err(SimulationFailure::setup(Error::Path(format!(
            "initial pair must have t1 > t0 (got {} and {})",
            initial.p0.t, initial.p1.t
        ))));
    }
    let res = sys.constraint_residual(initial).map_err(SimulationFailure::setup)?;
    if res > cfg.tol {
        return Err(SimulationFailure::setup(Error::Admissibility { residual: res }));
    }
    let mut traj = Trajectory::from_pair(initial).map_err(SimulationFailure::setup)?;
    let first = pair_diagnostics(sys, initial).map_err(SimulationFailure::setup)?;
    traj.diagnostics.push(first);

    let mut lambda = Vector::zeros(sys.constraint_count());
    for k in 0..steps {
        let pair = traj.last_pair();
        let fail = |traj: &Trajectory, error: Error| SimulationFailure {
            error,
            step: Some(k),
            partial: Some(traj.clone()),
        };
        let step = match step_edla_with_guess(sys, &pair, Some(&lambda), cfg) {
            Ok(s) => s,
            Err(e) => return Err(fail(&traj, e)),
        };
        if step.near_zero_energy {
            traj.warnings.push(StepWarning::NearZeroEnergy {
                step: k,
                energy: traj.diagnostics.last().map_or(0.0, |d| d.e_plus),
            });
        }
        let new_pair = match ExtendedPair::new(pair.p1.clone(), step.next.clone()) {
            Ok(p) => p,
            Err(e) => return Err(fail(&traj, e)),
        };
        let diag = match pair_diagnostics(sys, &new_pair) {
            Ok(d) => d,
            Err(e) => return Err(fail(&traj, e)),
        };
        if let Err(e) = traj.push_point(step.next.clone()) {
            return Err(fail(&traj, e));
        }
        traj.diagnostics.push(diag);
        traj.solver_stats.push(SolverStats {
            iterations: step.iterations,
            residual_norm: step.residual_norm,
        });
        lambda = step.lambda.clone();
        traj.multipliers.push(step.lambda);
    }
    Ok(traj)
}
