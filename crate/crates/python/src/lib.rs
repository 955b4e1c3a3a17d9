//! Python bindings. Pairs cross the boundary as tuples `(t0, q0, t1, q1)`
//! with `q0`, `q1` lists of floats.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nhvi_core::calculus::{energy_minus, energy_plus};
use nhvi_core::reference::{builtin, convergence_study, BuiltinSystem, InitialState, BUILTIN_NAMES};
use nhvi_core::stepper::{simulate, step_edla};
use nhvi_core::validate::validate_system;
use nhvi_core::{Error, ExtendedPair, ExtendedPoint, GuessMode, SolverConfig, Trajectory, Vector};

create_exception!(nhvi, ConfigError, PyValueError, "Invalid system, pair or solver settings.");
create_exception!(nhvi, StepFailure, PyRuntimeError, "An implicit step could not be solved.");
create_exception!(nhvi, OracleError, PyRuntimeError, "The reference solver failed.");

pub type PairTuple = (f64, Vec<f64>, f64, Vec<f64>);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Oracle(_) => OracleError::new_err(e.to_string()),
        e if e.is_step_failure() || matches!(e, Error::NonFinite(_)) => StepFailure::new_err(e.to_string()),
        e => ConfigError::new_err(e.to_string()),
    }
}

pub fn pair_from((t0, q0, t1, q1): PairTuple) -> Result<ExtendedPair, Error> {
    let pair = ExtendedPair::new(
        ExtendedPoint::new(t0, Vector::from_vec(q0)),
        ExtendedPoint::new(t1, Vector::from_vec(q1)),
    )?;
    pair.p0.check()?;
    pair.p1.check()?;
    Ok(pair)
}

pub fn pair_to(pair: &ExtendedPair) -> PairTuple {
    (pair.p0.t, pair.p0.q.as_slice().to_vec(), pair.p1.t, pair.p1.q.as_slice().to_vec())
}

/// Newton settings; defaults match the command line tool.
#[pyclass(module = "nhvi", name = "SolverConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySolverConfig {
    inner: SolverConfig,
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (tol = 1e-12, max_iter = 50, damping = 0.5, guess_mode = "linear-extrapolation"))]
    fn new(tol: f64, max_iter: usize, damping: f64, guess_mode: &str) -> PyResult<Self> {
        let guess_mode = match guess_mode {
            "linear-extrapolation" => GuessMode::LinearExtrapolation,
            "copy-previous" => GuessMode::CopyPrevious,
            other => return Err(ConfigError::new_err(format!("unknown guess mode {other:?}"))),
        };
        let inner = SolverConfig {
            tol,
            max_iter,
            damping,
            guess_mode,
            ..SolverConfig::default()
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tol(&self) -> f64 {
        self.inner.tol
    }

    #[getter]
    fn max_iter(&self) -> usize {
        self.inner.max_iter
    }

    fn __repr__(&self) -> String {
        format!("SolverConfig(tol={:e}, max_iter={})", self.inner.tol, self.inner.max_iter)
    }
}

fn solver(cfg: Option<PyRef<'_, PySolverConfig>>) -> SolverConfig {
    cfg.map_or_else(SolverConfig::default, |c| c.inner)
}

/// One solved step.
#[pyclass(module = "nhvi", name = "StepResult", frozen, get_all)]
pub struct PyStepResult {
    t: f64,
    q: Vec<f64>,
    multipliers: Vec<f64>,
    iterations: usize,
    residual_norm: f64,
}

#[pymethods]
impl PyStepResult {
    fn __repr__(&self) -> String {
        format!("StepResult(t={}, q={:?}, iterations={})", self.t, self.q, self.iterations)
    }
}

/// A computed discrete trajectory.
#[pyclass(module = "nhvi", name = "Trajectory", frozen)]
pub struct PyTrajectory {
    inner: Trajectory,
    system: BuiltinSystem,
}

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.points().iter().map(|p| p.t).collect()
    }

    #[getter]
    fn configurations(&self) -> Vec<Vec<f64>> {
        self.inner.points().iter().map(|p| p.q.as_slice().to_vec()).collect()
    }

    #[getter]
    fn multipliers(&self) -> Vec<Vec<f64>> {
        self.inner.multipliers.iter().map(|l| l.as_slice().to_vec()).collect()
    }

    /// `E+` of every pair.
    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.inner.diagnostics.iter().map(|d| d.e_plus).collect()
    }

    /// Momentum components of every pair (empty lists without an action).
    #[getter]
    fn momenta(&self) -> Vec<Vec<f64>> {
        self.inner.diagnostics.iter().map(|d| d.momentum.clone()).collect()
    }

    fn max_energy_drift(&self) -> f64 {
        self.inner.max_energy_drift()
    }

    /// The trajectory in the command line CSV format.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        nhvi_cli::output::write_trajectory(&mut buf, &self.system.system, &self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// A built-in system by name, with optional parameter overrides.
#[pyclass(module = "nhvi", name = "System", frozen)]
pub struct PySystem {
    inner: BuiltinSystem,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let inner = builtin(name, &params.unwrap_or_default()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.system.dim()
    }

    #[getter]
    fn constraint_count(&self) -> usize {
        self.inner.system.constraint_count()
    }

    #[getter]
    fn autonomous(&self) -> bool {
        self.inner.system.autonomous
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params.clone()
    }

    /// Admissible pair from the system's default state and step.
    #[pyo3(signature = (solver_config = None))]
    fn default_pair(&self, solver_config: Option<PyRef<'_, PySolverConfig>>) -> PyResult<PairTuple> {
        let pair = self.inner.default_pair(&solver(solver_config)).map_err(to_py)?;
        Ok(pair_to(&pair))
    }

    /// Admissible pair from a continuous state `(t, q, v)` and first step `h`.
    #[pyo3(signature = (q, v, h, t = 0.0, solver_config = None))]
    fn initial_pair(
        &self,
        q: Vec<f64>,
        v: Vec<f64>,
        h: f64,
        t: f64,
        solver_config: Option<PyRef<'_, PySolverConfig>>,
    ) -> PyResult<PairTuple> {
        let init = InitialState {
            t,
            q: Vector::from_vec(q),
            v: Vector::from_vec(v),
        };
        let pair = self.inner.initial_pair(&init, h, &solver(solver_config)).map_err(to_py)?;
        Ok(pair_to(&pair))
    }

    /// `(E+, E-)` of a pair.
    fn energies(&self, pair: PairTuple) -> PyResult<(f64, f64)> {
        let pair = pair_from(pair).map_err(to_py)?;
        let ld = &self.inner.system.lagrangian;
        Ok((energy_plus(ld, &pair).map_err(to_py)?, energy_minus(ld, &pair).map_err(to_py)?))
    }

    /// Solves one constrained step from `pair`.
    #[pyo3(signature = (pair, solver_config = None))]
    fn step(&self, pair: PairTuple, solver_config: Option<PyRef<'_, PySolverConfig>>) -> PyResult<PyStepResult> {
        let pair = pair_from(pair).map_err(to_py)?;
        let s = step_edla(&self.inner.system, &pair, &solver(solver_config)).map_err(to_py)?;
        Ok(PyStepResult {
            t: s.next.t,
            q: s.next.q.as_slice().to_vec(),
            multipliers: s.lambda.as_slice().to_vec(),
            iterations: s.iterations,
            residual_norm: s.residual_norm,
        })
    }

    /// Runs `steps` constrained steps from `pair`.
    #[pyo3(signature = (pair, steps, solver_config = None))]
    fn simulate(
        &self,
        pair: PairTuple,
        steps: usize,
        solver_config: Option<PyRef<'_, PySolverConfig>>,
    ) -> PyResult<PyTrajectory> {
        let pair = pair_from(pair).map_err(to_py)?;
        let traj = simulate(&self.inner.system, &pair, steps, &solver(solver_config)).map_err(|f| match f.step {
            Some(_) => StepFailure::new_err(f.to_string()),
            None => to_py(f.error),
        })?;
        Ok(PyTrajectory {
            inner: traj,
            system: self.inner.clone(),
        })
    }

    /// Sampled structural checks as `(name, passed, worst, threshold)`.
    #[pyo3(signature = (samples = 100, seed = 0))]
    fn validate(&self, samples: usize, seed: u64) -> PyResult<Vec<(String, bool, f64, f64)>> {
        let report = validate_system(&self.inner.system, self.inner.section.as_ref(), samples, seed).map_err(to_py)?;
        Ok(report
            .checks
            .iter()
            .map(|c| (c.name.to_string(), c.passed, c.worst, c.threshold))
            .collect())
    }

    /// Global error against the reference solution over a step ladder,
    /// from the default state. Returns the fitted slope and `(h, error)` rows.
    #[pyo3(signature = (ladder, t_final = 2.0, solver_config = None))]
    fn convergence(
        &self,
        ladder: Vec<f64>,
        t_final: f64,
        solver_config: Option<PyRef<'_, PySolverConfig>>,
    ) -> PyResult<(f64, Vec<(f64, f64)>)> {
        let b = &self.inner;
        let r = convergence_study(b, &b.default_initial, &ladder, t_final, &solver(solver_config)).map_err(to_py)?;
        Ok((r.slope, r.rungs.iter().map(|g| (g.h, g.error)).collect()))
    }

    fn __repr__(&self) -> String {
        format!("System({:?}, dim={})", self.inner.name, self.inner.system.dim())
    }
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    BUILTIN_NAMES.to_vec()
}

#[pymodule]
fn nhvi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PySystem>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyStepResult>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("StepFailure", py.get_type::<StepFailure>())?;
    m.add("OracleError", py.get_type::<OracleError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let t: PairTuple = (0.0, vec![1.0, 2.0], 0.5, vec![1.5, 2.5]);
        assert_eq!(pair_to(&pair_from(t.clone()).unwrap()), t);
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        assert!(pair_from((0.0, vec![1.0], 0.5, vec![1.0, 2.0])).is_err());
        assert!(pair_from((0.0, vec![f64::NAN], 0.5, vec![1.0])).is_err());
    }
}
