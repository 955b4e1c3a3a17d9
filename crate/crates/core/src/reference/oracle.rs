//! Continuous Lagrange-d'Alembert flow of natural systems
//! `L = ½ vᵀ M v - V(t, q)` subject to `ω(t, q) v = 0`.
//!
//! Multipliers are eliminated after differentiating the constraints once;
//! the resulting ODE is integrated with an adaptive Dormand-Prince 5(4) pair,
//! and the velocity is projected back onto `ker ω` after every accepted step.

use std::fmt;
use std::sync::Arc;

use crate::discretize::{ContinuousConstraints, ContinuousLagrangian};
use crate::error::{Error, Result};
use crate::types::{Matrix, Vector};

type ScalarFn = Arc<dyn Fn(f64, &Vector) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

/// A named scalar function of `(t, q, v)` and whether the flow should keep it
/// constant.
#[derive(Clone)]
pub struct KnownInvariant {
    pub name: String,
    pub conserved: bool,
    f: Arc<dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync>,
}

impl KnownInvariant {
    pub fn new<F>(name: &str, conserved: bool, f: F) -> Self
    where
        F: Fn(f64, &Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            conserved,
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, t: f64, q: &Vector, v: &Vector) -> f64 {
        (self.f)(t, q, v)
    }
}

impl fmt::Debug for KnownInvariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnownInvariant")
            .field("name", &self.name)
            .field("conserved", &self.conserved)
            .finish()
    }
}

/// Continuous counterpart of a built-in system.
#[derive(Clone)]
pub struct ContinuousSystem {
    pub lagrangian: ContinuousLagrangian,
    pub constraints: Option<ContinuousConstraints>,
    pub known_invariants: Vec<KnownInvariant>,
    mass: Matrix,
    mass_inv: Matrix,
    potential: ScalarFn,
    potential_gradient: VectorFn,
    potential_rate: Option<ScalarFn>,
}

impl fmt::Debug for ContinuousSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousSystem")
            .field("dim", &self.dim())
            .field("constraints", &self.constraints)
            .field("known_invariants", &self.known_invariants)
            .finish()
    }
}

impl ContinuousSystem {
    /// Natural system with constant mass matrix `mass` and potential `V`.
    /// The Lagrangian (with analytic partials) is derived from these.
    pub fn natural<P, G>(mass: Matrix, potential: P, gradient: G) -> Result<Self>
    where
        P: Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        let n = mass.nrows();
        if mass.ncols() != n || n == 0 {
            return Err(Error::Config("mass matrix must be square and non-empty".into()));
        }
        let mass_inv = mass
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Config("mass matrix is singular".into()))?;
        let mut cs = Self {
            lagrangian: ContinuousLagrangian::new(n, |_, _, _| 0.0),
            constraints: None,
            known_invariants: Vec::new(),
            mass,
            mass_inv,
            potential: Arc::new(potential),
            potential_gradient: Arc::new(gradient),
            potential_rate: None,
        };
        cs.rebuild_lagrangian();
        Ok(cs)
    }

    /// Supplies `∂V/∂t` analytically (otherwise a central difference in `t`).
    pub fn with_potential_rate<F>(mut self, rate: F) -> Self
    where
        F: Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
    {
        self.potential_rate = Some(Arc::new(rate));
        self.rebuild_lagrangian();
        self
    }

    fn rebuild_lagrangian(&mut self) {
        let n = self.dim();
        let (m1, m2) = (self.mass.clone(), self.mass.clone());
        let (v1, g1) = (self.potential.clone(), self.potential_gradient.clone());
        let rate: ScalarFn = match &self.potential_rate {
            Some(r) => r.clone(),
            None => {
                let v2 = self.potential.clone();
                Arc::new(move |t, q| {
                    let s = 1e-6 * (1.0 + t.abs());
                    (v2(t + s, q) - v2(t - s, q)) / (2.0 * s)
                })
            }
        };
        self.lagrangian = ContinuousLagrangian::new(n, move |t, q, v| 0.5 * v.dot(&(&m1 * v)) - v1(t, q)).with_partials(
            move |t, q, _v| -rate(t, q),
            move |t, q, _v| -g1(t, q),
            move |_t, _q, v| &m2 * v,
        );
    }

    pub fn with_constraints(mut self, c: ContinuousConstraints) -> Result<Self> {
        if c.dim() != self.dim() {
            return Err(Error::dims("continuous constraints", self.dim(), c.dim()));
        }
        self.constraints = Some(c);
        Ok(self)
    }

    pub fn with_invariant(mut self, inv: KnownInvariant) -> Self {
        self.known_invariants.push(inv);
        self
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &Matrix {
        &self.mass
    }

    pub fn potential(&self, t: f64, q: &Vector) -> f64 {
        (self.potential)(t, q)
    }

    /// `½ vᵀ M v + V(t, q)`.
    pub fn energy(&self, t: f64, q: &Vector, v: &Vector) -> f64 {
        0.5 * v.dot(&(&self.mass * v)) + self.potential(t, q)
    }

    /// `|ω(t, q) v|_∞` (zero when unconstrained).
    pub fn constraint_residual(&self, t: f64, q: &Vector, v: &Vector) -> f64 {
        match &self.constraints {
            Some(c) => (c.omega(t, q) * v).amax(),
            None => 0.0,
        }
    }

    /// Multipliers of the constrained equations of motion.
    pub fn multipliers(&self, t: f64, q: &Vector, v: &Vector) -> Result<Vector> {
        let Some(c) = &self.constraints else {
            return Ok(Vector::zeros(0));
        };
        let w = c.omega(t, q);
        let a0 = &self.mass_inv * (-(self.potential_gradient)(t, q));
        let rhs = -(c.omega_dot(t, q, v) * v) - &w * a0;
        let s = &w * &self.mass_inv * w.transpose();
        s.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Oracle(format!("constraint matrix lost rank at t = {t}")))
    }

    /// Acceleration `M⁻¹(-∇V + ωᵀ λ)`.
    pub fn acceleration(&self, t: f64, q: &Vector, v: &Vector) -> Result<Vector> {
        let mut f = -(self.potential_gradient)(t, q);
        if let Some(c) = &self.constraints {
            f += c.omega(t, q).transpose() * self.multipliers(t, q, v)?;
        }
        Ok(&self.mass_inv * f)
    }

    /// Euclidean projection of `v` onto `ker ω(t, q)`.
    pub fn project_velocity(&self, t: f64, q: &Vector, v: &Vector) -> Result<Vector> {
        let Some(c) = &self.constraints else {
            return Ok(v.clone());
        };
        let w = c.omega(t, q);
        let y = (&w * w.transpose())
            .lu()
            .solve(&(&w * v))
            .ok_or_else(|| Error::Oracle(format!("velocity projection failed at t = {t}")))?;
        Ok(v - w.transpose() * y)
    }

    fn rhs(&self, t: f64, y: &Vector) -> Result<Vector> {
        let n = self.dim();
        let q = y.rows(0, n).into_owned();
        let v = y.rows(n, n).into_owned();
        let a = self.acceleration(t, &q, &v)?;
        let mut out = Vector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&v);
        out.rows_mut(n, n).copy_from(&a);
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::Oracle(format!("non-finite vector field at t = {t}")));
        }
        Ok(out)
    }
}

/// Continuous initial state `(t, q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub t: f64,
    pub q: Vector,
    pub v: Vector,
}

/// Accepted node of a continuous trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub t: f64,
    pub q: Vector,
    pub v: Vector,
    pub a: Vector,
}

/// Continuous trajectory with quintic Hermite interpolation between nodes.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    nodes: Vec<Node>,
}

impl DenseTrajectory {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn t_start(&self) -> f64 {
        self.nodes[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1].t
    }

    pub fn final_node(&self) -> &Node {
        &self.nodes[self.nodes.len() - 1]
    }

    /// Position and velocity at time `t` in `[t_start, t_end]`.
    pub fn state_at(&self, t: f64) -> Result<(Vector, Vector)> {
        let (t0, t1) = (self.t_start(), self.t_end());
        let slack = 1e-12 * (1.0 + t1.abs());
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(Error::Oracle(format!("time {t} outside the solved interval [{t0}, {t1}]")));
        }
        let k = self.nodes.partition_point(|nd| nd.t <= t).clamp(1, self.nodes.len() - 1);
        let (a, b) = (&self.nodes[k - 1], &self.nodes[k]);
        let h = b.t - a.t;
        let s = ((t - a.t) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let (s4, s5) = (s3 * s, s3 * s * s);
        // quintic Hermite basis and its derivative in s
        let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
        let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
        let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
        let h3 = 0.5 * s3 - s4 + 0.5 * s5;
        let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
        let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
        let d0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
        let d1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
        let d2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
        let d3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
        let d4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
        let d5 = -d0;
        let q = &a.q * h0 + &a.v * (h * h1) + &a.a * (h * h * h2) + &b.a * (h * h * h3) + &b.v * (h * h4) + &b.q * h5;
        let v = (&a.q * d0 + &b.q * d5) / h + &a.v * d1 + &a.a * (h * d2) + &b.a * (h * d3) + &b.v * d4;
        Ok((q, v))
    }

    /// Worst `|ω v|_∞` over the nodes.
    pub fn max_constraint_residual(&self, cs: &ContinuousSystem) -> f64 {
        self.nodes
            .iter()
            .map(|nd| cs.constraint_residual(nd.t, &nd.q, &nd.v))
            .fold(0.0, f64::max)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince step; returns the fifth-order solution and the embedded
/// error estimate.
fn dp_step(cs: &ContinuousSystem, t: f64, y: &Vector, f0: &Vector, h: f64) -> Result<(Vector, Vector)> {
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    k.push(f0.clone());
    for i in 1..7 {
        let mut yi = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if A[i][j] != 0.0 {
                yi += kj * (h * A[i][j]);
            }
        }
        k.push(cs.rhs(t + C[i] * h, &yi)?);
    }
    let mut y_new = y.clone();
    let mut err = Vector::zeros(y.len());
    for i in 0..7 {
        y_new += &k[i] * (h * B[i]);
        err += &k[i] * (h * E[i]);
    }
    Ok((y_new, err))
}

fn check_initial(cs: &ContinuousSystem, init: &InitialState) -> Result<Vector> {
    let n = cs.dim();
    if init.q.len() != n || init.v.len() != n {
        return Err(Error::dims("initial state", n, init.q.len().max(init.v.len())));
    }
    let res = cs.constraint_residual(init.t, &init.q, &init.v);
    if res > 1e-12 {
        return Err(Error::Config(format!("initial velocity violates the constraints by {res:e}")));
    }
    let mut y = Vector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(&init.q);
    y.rows_mut(n, n).copy_from(&init.v);
    Ok(y)
}

fn project(cs: &ContinuousSystem, t: f64, y: &mut Vector) -> Result<()> {
    let n = cs.dim();
    let q = y.rows(0, n).into_owned();
    let v = cs.project_velocity(t, &q, &y.rows(n, n).into_owned())?;
    y.rows_mut(n, n).copy_from(&v);
    Ok(())
}

fn node(cs: &ContinuousSystem, t: f64, y: &Vector) -> Result<Node> {
    let n = cs.dim();
    let q = y.rows(0, n).into_owned();
    let v = y.rows(n, n).into_owned();
    let a = cs.acceleration(t, &q, &v)?;
    Ok(Node { t, q, v, a })
}

/// Adaptive solve from `init` to `t_final` with mixed absolute/relative
/// tolerance `accuracy`.
pub fn solve_reference(
    cs: &ContinuousSystem,
    init: &InitialState,
    t_final: f64,
    accuracy: f64,
) -> Result<DenseTrajectory> {
    if !(accuracy > 0.0) {
        return Err(Error::Config("oracle accuracy must be positive".into()));
    }
    if !(t_final > init.t) {
        return Err(Error::Config(format!(
            "final time {t_final} must exceed the initial time {}",
            init.t
        )));
    }
    let mut y = check_initial(cs, init)?;
    let mut t = init.t;
    let mut nodes = vec![node(cs, t, &y)?];
    let span = t_final - init.t;
    let mut h = (span * 1e-3).min(1e-2);
    let h_min = 1e-14 * (1.0 + t_final.abs());
    while t < t_final {
        let last = t + h >= t_final;
        let step = if last { t_final - t } else { h };
        let f0 = cs.rhs(t, &y)?;
        let (y_new, err) = dp_step(cs, t, &y, &f0, step)?;
        let ratio = err
            .iter()
            .zip(y.iter().zip(y_new.iter()))
            .map(|(e, (a, b))| e.abs() / (accuracy * (1.0 + a.abs().max(b.abs()))))
            .fold(0.0, f64::max);
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        if ratio <= 1.0 {
            t = if last { t_final } else { t + step };
            y = y_new;
            project(cs, t, &mut y)?;
            nodes.push(node(cs, t, &y)?);
            h = step * factor;
        } else {
            h = step * factor.min(1.0);
            if h < h_min {
                return Err(Error::Oracle(format!("step size underflow at t = {t}")));
            }
        }
    }
    Ok(DenseTrajectory { nodes })
}

/// Fixed-step variant (`steps` equal steps, projection after each) used for
/// order studies of the oracle itself.
pub fn solve_fixed_step(cs: &ContinuousSystem, init: &InitialState, t_final: f64, steps: usize) -> Result<Node> {
    if steps == 0 || !(t_final > init.t) {
        return Err(Error::Config("fixed-step solve needs steps ≥ 1 and t_final > t0".into()));
    }
    let mut y = check_initial(cs, init)?;
    let h = (t_final - init.t) / steps as f64;
    let mut t = init.t;
    for k in 0..steps {
        let f0 = cs.rhs(t, &y)?;
        y = dp_step(cs, t, &y, &f0, h)?.0;
        t = init.t + (k + 1) as f64 * h;
        project(cs, t, &mut y)?;
    }
    node(cs, t, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(n: usize) -> ContinuousSystem {
        ContinuousSystem::natural(Matrix::identity(n, n), |_, _| 0.0, move |_, _| Vector::zeros(n)).unwrap()
    }

    #[test]
    fn free_particle_moves_on_a_line() {
        let cs = free(2);
        let init = InitialState {
            t: 0.0,
            q: Vector::from_column_slice(&[1.0, -1.0]),
            v: Vector::from_column_slice(&[0.5, 2.0]),
        };
        let traj = solve_reference(&cs, &init, 3.0, 1e-12).unwrap();
        let (q, v) = traj.state_at(3.0).unwrap();
        assert!((q - Vector::from_column_slice(&[2.5, 5.0])).amax() < 1e-12);
        assert!((v - &init.v).amax() < 1e-12);
        let (q, _) = traj.state_at(1.234).unwrap();
        assert!((q - Vector::from_column_slice(&[1.617, 1.468])).amax() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_matches_cosine() {
        let cs = ContinuousSystem::natural(Matrix::identity(1, 1), |_, q| 0.5 * q[0] * q[0], |_, q| q.clone()).unwrap();
        let init = InitialState {
            t: 0.0,
            q: Vector::from_element(1, 1.0),
            v: Vector::zeros(1),
        };
        let traj = solve_reference(&cs, &init, 10.0, 1e-12).unwrap();
        for &t in &[0.3, 2.71, 7.5, 10.0] {
            let (q, v) = traj.state_at(t).unwrap();
            assert!((q[0] - t.cos()).abs() < 1e-10, "t = {t}");
            assert!((v[0] + t.sin()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn rejects_inadmissible_velocity_and_bad_times() {
        let cs = free(3)
            .with_constraints(ContinuousConstraints::new(3, 1, |_, q| {
                Matrix::from_row_slice(1, 3, &[-q[1], 0.0, 1.0])
            }))
            .unwrap();
        let init = InitialState {
            t: 0.0,
            q: Vector::from_column_slice(&[0.0, 1.0, 0.0]),
            v: Vector::from_column_slice(&[1.0, 0.0, 0.0]),
        };
        assert!(matches!(solve_reference(&cs, &init, 1.0, 1e-10), Err(Error::Config(_))));
        let ok = InitialState {
            v: Vector::from_column_slice(&[1.0, 0.0, 1.0]),
            ..init
        };
        assert!(solve_reference(&cs, &ok, 0.0, 1e-10).is_err());
        let traj = solve_reference(&cs, &ok, 1.0, 1e-10).unwrap();
        assert!(traj.state_at(1.5).is_err());
    }
}
