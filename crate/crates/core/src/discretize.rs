//! Builders turning continuous data `(L, ω)` into discrete Lagrangians and
//! discrete constraints with the midpoint rule, plus the central-difference
//! helpers every other module falls back on.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{ConstraintSet, DiscreteLagrangian, ExtendedPair, Matrix, Vector};

/// `ε^(1/3)` for `f64`, the step scale balancing truncation and roundoff in
/// second-order central differences.
pub const FD_STEP_SCALE: f64 = 6.055454452393343e-6;

/// Central-difference gradient with per-coordinate steps
/// `h_i = scale · max(1, |x_i|)`.
pub fn fd_gradient(f: &dyn Fn(&Vector) -> f64, x: &Vector, scale: f64) -> Result<Vector> {
    let steps = x.map(|xi| scale * xi.abs().max(1.0));
    fd_gradient_with_steps(f, x, &steps)
}

/// Central-difference gradient with explicit per-coordinate steps.
pub fn fd_gradient_with_steps(f: &dyn Fn(&Vector) -> f64, x: &Vector, steps: &Vector) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = steps[i];
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference stencil"));
        }
        // divide by the realized step, which differs from h by rounding
        g[i] = (fp - fm) / ((x[i] + h) - (x[i] - h));
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function with explicit steps.
pub fn fd_jacobian_with_steps(
    f: &dyn Fn(&Vector) -> Result<Vector>,
    x: &Vector,
    steps: &Vector,
) -> Result<Matrix> {
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = steps[i];
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        let col = (fp - fm) / ((x[i] + h) - (x[i] - h));
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("finite-difference Jacobian"));
        }
        cols.push(col);
    }
    let rows = cols.first().map_or(0, |c| c.len());
    let mut jac = Matrix::zeros(rows, x.len());
    for (i, c) in cols.iter().enumerate() {
        jac.set_column(i, c);
    }
    Ok(jac)
}

/// Central-difference Jacobian with steps `scale · max(1, |x_i|)`.
pub fn fd_jacobian(f: &dyn Fn(&Vector) -> Result<Vector>, x: &Vector, scale: f64) -> Result<Matrix> {
    let steps = x.map(|xi| scale * xi.abs().max(1.0));
    fd_jacobian_with_steps(f, x, &steps)
}

type TqvScalar = Arc<dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync>;
type TqvVector = Arc<dyn Fn(f64, &Vector, &Vector) -> Vector + Send + Sync>;

#[derive(Clone)]
struct ContinuousPartials {
    dt: TqvScalar,
    dq: TqvVector,
    dv: TqvVector,
}

/// A continuous Lagrangian `L(t, q, v)` with optional analytic partials.
#[derive(Clone)]
pub struct ContinuousLagrangian {
    dim: usize,
    eval: TqvScalar,
    partials: Option<ContinuousPartials>,
}

impl fmt::Debug for ContinuousLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousLagrangian")
            .field("dim", &self.dim)
            .field("analytic", &self.partials.is_some())
            .finish()
    }
}

impl ContinuousLagrangian {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(f64, &Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
            partials: None,
        }
    }

    pub fn with_partials<Ft, Fq, Fv>(mut self, dt: Ft, dq: Fq, dv: Fv) -> Self
    where
        Ft: Fn(f64, &Vector, &Vector) -> f64 + Send + Sync + 'static,
        Fq: Fn(f64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
        Fv: Fn(f64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        self.partials = Some(ContinuousPartials {
            dt: Arc::new(dt),
            dq: Arc::new(dq),
            dv: Arc::new(dv),
        });
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn eval(&self, t: f64, q: &Vector, v: &Vector) -> f64 {
        (self.eval)(t, q, v)
    }

    fn flat(&self, t: f64, q: &Vector, v: &Vector) -> Vector {
        let n = self.dim;
        let mut x = Vector::zeros(2 * n + 1);
        x[0] = t;
        x.rows_mut(1, n).copy_from(q);
        x.rows_mut(n + 1, n).copy_from(v);
        x
    }

    /// `(∂L/∂t, ∂L/∂q, ∂L/∂v)` by central differences of `eval`.
    pub fn fd_partials(&self, t: f64, q: &Vector, v: &Vector) -> Result<(f64, Vector, Vector)> {
        let n = self.dim;
        let g = fd_gradient(
            &|x: &Vector| (self.eval)(x[0], &x.rows(1, n).into_owned(), &x.rows(n + 1, n).into_owned()),
            &self.flat(t, q, v),
            FD_STEP_SCALE,
        )?;
        Ok((g[0], g.rows(1, n).into_owned(), g.rows(n + 1, n).into_owned()))
    }

    /// `(∂L/∂t, ∂L/∂q, ∂L/∂v)`, analytic when available.
    pub fn partials(&self, t: f64, q: &Vector, v: &Vector) -> Result<(f64, Vector, Vector)> {
        match &self.partials {
            Some(p) => Ok(((p.dt)(t, q, v), (p.dq)(t, q, v), (p.dv)(t, q, v))),
            None => self.fd_partials(t, q, v),
        }
    }
}

/// Continuous constraint one-forms `ω(t, q)` (an `m × n` matrix) with an
/// optional analytic total time derivative `ω̇(t, q, v)` along velocity `v`.
#[derive(Clone)]
pub struct ContinuousConstraints {
    n: usize,
    m: usize,
    omega: Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>,
    omega_dot: Option<Arc<dyn Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync>>,
}

impl fmt::Debug for ContinuousConstraints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousConstraints")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl ContinuousConstraints {
    pub fn new<W>(n: usize, m: usize, omega: W) -> Self
    where
        W: Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            omega: Arc::new(omega),
            omega_dot: None,
        }
    }

    pub fn with_time_derivative<D>(mut self, omega_dot: D) -> Self
    where
        D: Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.omega_dot = Some(Arc::new(omega_dot));
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.m
    }

    pub fn omega(&self, t: f64, q: &Vector) -> Matrix {
        (self.omega)(t, q)
    }

    /// `d/dt ω(t, q(t))` along `q̇ = v`.
    pub fn omega_dot(&self, t: f64, q: &Vector, v: &Vector) -> Matrix {
        if let Some(d) = &self.omega_dot {
            return d(t, q, v);
        }
        let s = FD_STEP_SCALE * (1.0 + v.norm()).recip();
        let qp = q + v * s;
        let qm = q - v * s;
        ((self.omega)(t + s, &qp) - (self.omega)(t - s, &qm)) / (2.0 * s)
    }
}

/// Midpoint discrete Lagrangian
/// `L_d = (t1 - t0) · L((t0+t1)/2, (q0+q1)/2, (q1-q0)/(t1-t0))`.
///
/// Slot derivatives are assembled by the chain rule when `L` carries analytic
/// partials and fall back to central differences otherwise. Evaluation rejects
/// `|t1 - t0| < 1e-10`.
pub fn midpoint_lagrangian(l: &ContinuousLagrangian) -> DiscreteLagrangian {
    let n = l.dim();
    let midpoint = |p: &ExtendedPair| {
        let h = p.interval();
        let tm = 0.5 * (p.p0.t + p.p1.t);
        let qm = (&p.p0.q + &p.p1.q) * 0.5;
        let v = (&p.p1.q - &p.p0.q) / h;
        (h, tm, qm, v)
    };
    let le = l.clone();
    let ld = DiscreteLagrangian::new(n, move |p| {
        let (h, tm, qm, v) = midpoint(p);
        h * le.eval(tm, &qm, &v)
    });
    if !l.has_partials() {
        return ld;
    }
    // (L, ∂L/∂t, ∂L/∂q, ∂L/∂v, h, v) at the midpoint sample
    let sample = {
        let l = l.clone();
        move |p: &ExtendedPair| {
            let (h, tm, qm, v) = midpoint(p);
            let lv = l.eval(tm, &qm, &v);
            let (lt, lq, lvel) = l.partials(tm, &qm, &v).expect("analytic partials do not fail");
            (lv, lt, lq, lvel, h, v)
        }
    };
    let s1 = sample.clone();
    let s2 = sample.clone();
    let s3 = sample.clone();
    let s4 = sample;
    ld.with_partials(
        move |p| {
            let (lv, lt, _, lvel, h, v) = s1(p);
            -lv + 0.5 * h * lt + lvel.dot(&v)
        },
        move |p| {
            let (_, _, lq, lvel, h, _) = s2(p);
            lq * (0.5 * h) - lvel
        },
        move |p| {
            let (lv, lt, _, lvel, h, v) = s3(p);
            lv + 0.5 * h * lt - lvel.dot(&v)
        },
        move |p| {
            let (_, _, lq, lvel, h, _) = s4(p);
            lq * (0.5 * h) + lvel
        },
    )
}

/// Midpoint discrete constraints `ω_d(t0, q0, t1, q1) = ω(t_m, q_m) · (q1 - q0)`,
/// which vanish identically on diagonal pairs.
pub fn midpoint_constraints(c: &ContinuousConstraints) -> ConstraintSet {
    let w = c.omega.clone();
    let wd = c.omega.clone();
    ConstraintSet::new(
        c.dim(),
        c.count(),
        move |t, q| w(t, q),
        move |p: &ExtendedPair| {
            let tm = 0.5 * (p.p0.t + p.p1.t);
            let qm = (&p.p0.q + &p.p1.q) * 0.5;
            wd(tm, &qm) * (&p.p1.q - &p.p0.q)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ExtendedPoint;
    use approx::assert_abs_diff_eq;

    fn free_particle() -> ContinuousLagrangian {
        ContinuousLagrangian::new(1, |_t, _q, v: &Vector| 0.5 * v.norm_squared()).with_partials(
            |_, _, _| 0.0,
            |_, q: &Vector, _| Vector::zeros(q.len()),
            |_, _, v: &Vector| v.clone(),
        )
    }

    fn oscillator() -> ContinuousLagrangian {
        ContinuousLagrangian::new(1, |_t, q: &Vector, v: &Vector| 0.5 * v.norm_squared() - 0.5 * q.norm_squared())
            .with_partials(|_, _, _| 0.0, |_, q: &Vector, _| -q, |_, _, v: &Vector| v.clone())
    }

    fn pair(t0: f64, q0: f64, t1: f64, q1: f64) -> ExtendedPair {
        ExtendedPair::from_slices(t0, &[q0], t1, &[q1]).unwrap()
    }

    #[test]
    fn step_scale_is_cube_root_of_epsilon() {
        assert_abs_diff_eq!(FD_STEP_SCALE, f64::EPSILON.cbrt(), epsilon = 1e-20);
    }

    #[test]
    fn midpoint_free_particle_values() {
        let ld = midpoint_lagrangian(&free_particle());
        assert_abs_diff_eq!(ld.eval(&pair(0.0, 0.0, 1.0, 1.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ld.eval(&pair(0.0, 0.0, 2.0, 1.0)).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_oscillator_at_rest() {
        let ld = midpoint_lagrangian(&oscillator());
        assert_abs_diff_eq!(ld.eval(&pair(0.0, 1.0, 1.0, 1.0)).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_rejects_zero_interval() {
        let ld = midpoint_lagrangian(&free_particle());
        assert!(matches!(
            ld.eval(&pair(1.0, 0.0, 1.0, 1.0)),
            Err(Error::DegenerateInterval { .. })
        ));
        assert!(ld.d3(&pair(1.0, 0.0, 1.0 + 1e-12, 1.0)).is_err());
    }

    #[test]
    fn midpoint_free_particle_partials() {
        let ld = midpoint_lagrangian(&free_particle());
        let p = ld.partials(&pair(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(p.d1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d2[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d3, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d4[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn analytic_and_fd_partials_agree_for_forced_oscillator() {
        let l = ContinuousLagrangian::new(1, |t, q: &Vector, v: &Vector| {
            0.5 * v[0] * v[0] - 0.5 * q[0] * q[0] + q[0] * t.sin()
        })
        .with_partials(
            |t, q: &Vector, _| q[0] * t.cos(),
            |t, q: &Vector, _| Vector::from_element(1, -q[0] + t.sin()),
            |_, _, v: &Vector| v.clone(),
        );
        let ld = midpoint_lagrangian(&l);
        let p = pair(0.3, 0.7, 0.55, 0.9);
        let a = ld.partials(&p).unwrap();
        let f = ld.fd_partials(&p).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-6);
        assert!(rel(a.d1, f.d1) < 1e-7);
        assert!(rel(a.d3, f.d3) < 1e-7);
        assert!(rel(a.d2[0], f.d2[0]) < 1e-7);
        assert!(rel(a.d4[0], f.d4[0]) < 1e-7);
    }

    fn heisenberg() -> ContinuousConstraints {
        ContinuousConstraints::new(3, 1, |_t, q: &Vector| Matrix::from_row_slice(1, 3, &[-q[1], 0.0, 1.0]))
    }

    #[test]
    fn midpoint_constraint_values() {
        let c = midpoint_constraints(&heisenberg());
        let p = ExtendedPair::from_slices(0.0, &[0.0, 0.0, 0.0], 1.0, &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(c.omega_d(&p).unwrap()[0], 2.0, epsilon = 1e-15);
        let p = ExtendedPair::from_slices(0.0, &[0.0, 1.0, 0.0], 1.0, &[2.0, 1.0, 2.0]).unwrap();
        assert_eq!(c.omega_d(&p).unwrap()[0], 0.0);
        let d = ExtendedPoint::from_slice(0.3, &[0.2, -0.7, 5.0]);
        let diag = ExtendedPair::new(d.clone(), d).unwrap();
        assert_eq!(c.omega_d(&diag).unwrap()[0], 0.0);
    }

    #[test]
    fn gradient_examples() {
        let g = fd_gradient(&|x: &Vector| x[0] * x[0], &Vector::from_element(1, 3.0), FD_STEP_SCALE).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-6);
        let g = fd_gradient(
            &|x: &Vector| x[0] * x[1],
            &Vector::from_column_slice(&[2.0, 5.0]),
            FD_STEP_SCALE,
        )
        .unwrap();
        assert_abs_diff_eq!(g[0], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 2.0, epsilon = 1e-6);
        let g = fd_gradient(&|_x: &Vector| 4.2, &Vector::from_column_slice(&[1.0, -7.0, 1e3]), FD_STEP_SCALE)
            .unwrap();
        assert_eq!(g, Vector::zeros(3));
    }

    #[test]
    fn gradient_reports_non_finite() {
        let err = fd_gradient(
            &|x: &Vector| if x[0] > 1.0 { f64::NAN } else { x[0] },
            &Vector::from_element(1, 1.0),
            FD_STEP_SCALE,
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite("finite-difference stencil"));
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let am = a.clone();
        let j = fd_jacobian(&move |x: &Vector| Ok(&am * x), &Vector::from_column_slice(&[0.3, 0.1]), FD_STEP_SCALE)
            .unwrap();
        assert!((j - a).amax() < 1e-9);
    }

    #[test]
    fn omega_dot_fallback_matches_analytic() {
        let c = heisenberg();
        let q = Vector::from_column_slice(&[0.1, 0.4, -0.2]);
        let v = Vector::from_column_slice(&[1.0, 0.7, 0.4]);
        let fd = c.omega_dot(0.0, &q, &v);
        assert_abs_diff_eq!(fd[(0, 0)], -0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(fd[(0, 1)], 0.0, epsilon = 1e-12);
    }
}
