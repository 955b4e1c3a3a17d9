//! Discrete-mechanics calculus on the extended pair space: action sums, the
//! one-forms `Θ±`, the discrete Euler-Lagrange covector, discrete energies and
//! the two-form `Ω = -dΘ+ = -dΘ-`.

use crate::discretize::fd_jacobian_with_steps;
use crate::error::{Error, Result};
use crate::types::{DiscreteLagrangian, ExtendedPair, ExtendedPoint, Matrix, TangentExt, Vector};

/// A covector `(dt, dq)` at an extended point.
#[derive(Clone, Debug, PartialEq)]
pub struct CovectorExt {
    pub dt: f64,
    pub dq: Vector,
}

impl CovectorExt {
    pub fn zeros(n: usize) -> Self {
        Self {
            dt: 0.0,
            dq: Vector::zeros(n),
        }
    }

    /// `⟨(dt, dq), (δt, δq)⟩ = dt·δt + dq·δq`.
    pub fn pair(&self, v: &TangentExt) -> f64 {
        self.dt * v.dt + self.dq.dot(&v.dq)
    }

    pub fn norm_max(&self) -> f64 {
        self.dt.abs().max(self.dq.amax())
    }
}

/// `Σ_k L_d(c(k), c(k+1))` over a path with strictly increasing times.
pub fn action_sum(ld: &DiscreteLagrangian, path: &[ExtendedPoint]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::Path("an action sum needs at least two points".into()));
    }
    let mut sum = 0.0;
    for w in path.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::Path(format!("times must increase: {} then {}", w[0].t, w[1].t)));
        }
        sum += ld.eval(&ExtendedPair::new(w[0].clone(), w[1].clone())?)?;
    }
    Ok(sum)
}

/// `Θ+ = D3 L_d dt1 + D4 L_d dq1`, a covector at `p1`.
pub fn theta_plus(ld: &DiscreteLagrangian, pair: &ExtendedPair) -> Result<CovectorExt> {
    Ok(CovectorExt {
        dt: ld.d3(pair)?,
        dq: ld.d4(pair)?,
    })
}

/// `Θ- = -D1 L_d dt0 - D2 L_d dq0`, a covector at `p0`.
pub fn theta_minus(ld: &DiscreteLagrangian, pair: &ExtendedPair) -> Result<CovectorExt> {
    Ok(CovectorExt {
        dt: -ld.d1(pair)?,
        dq: -ld.d2(pair)?,
    })
}

fn ordered(p_prev: &ExtendedPoint, p: &ExtendedPoint, p_next: &ExtendedPoint) -> Result<()> {
    if !(p_prev.t < p.t && p.t < p_next.t) {
        return Err(Error::Path(format!(
            "triple times must increase strictly: {}, {}, {}",
            p_prev.t, p.t, p_next.t
        )));
    }
    Ok(())
}

/// The discrete Euler-Lagrange covector at the middle point of a triple:
/// `dq = D4 L_d(prev pair) + D2 L_d(next pair)`, `dt = D3 L_d(prev) + D1 L_d(next)`.
pub fn d_del(
    ld: &DiscreteLagrangian,
    p_prev: &ExtendedPoint,
    p: &ExtendedPoint,
    p_next: &ExtendedPoint,
) -> Result<CovectorExt> {
    ordered(p_prev, p, p_next)?;
    let before = ExtendedPair::new(p_prev.clone(), p.clone())?;
    let after = ExtendedPair::new(p.clone(), p_next.clone())?;
    let a = ld.partials(&before)?;
    let b = ld.partials(&after)?;
    Ok(CovectorExt {
        dt: a.d3 + b.d1,
        dq: a.d4 + b.d2,
    })
}

/// `E+ = -D3 L_d`.
pub fn energy_plus(ld: &DiscreteLagrangian, pair: &ExtendedPair) -> Result<f64> {
    Ok(-ld.d3(pair)?)
}

/// `E- = D1 L_d`.
pub fn energy_minus(ld: &DiscreteLagrangian, pair: &ExtendedPair) -> Result<f64> {
    ld.d1(pair)
}

/// Which one-form the two-form is differentiated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneForm {
    Plus,
    Minus,
}

/// `Θ±` as a full covector on the flattened pair space `(t0, q0, t1, q1)`.
pub fn one_form_flat(ld: &DiscreteLagrangian, pair: &ExtendedPair, which: OneForm) -> Result<Vector> {
    let n = pair.dim();
    let p = ld.partials(pair)?;
    let mut out = Vector::zeros(2 * (n + 1));
    match which {
        OneForm::Plus => {
            out[n + 1] = p.d3;
            out.rows_mut(n + 2, n).copy_from(&p.d4);
        }
        OneForm::Minus => {
            out[0] = -p.d1;
            out.rows_mut(1, n).copy_from(&(-p.d2));
        }
    }
    Ok(out)
}

/// Exterior derivative of a one-form field on the flattened pair space as an
/// antisymmetric matrix: `dθ(u, w) = uᵀ (Aᵀ - A) w` with `A_ij = ∂_j θ_i`.
pub fn exterior_derivative(
    form: &dyn Fn(&ExtendedPair) -> Result<Vector>,
    pair: &ExtendedPair,
    steps: &Vector,
) -> Result<Matrix> {
    // jac[(j, i)] = ∂θ_j / ∂x_i
    let jac = fd_jacobian_with_steps(&|x: &Vector| form(&ExtendedPair::from_flat(x)), &pair.to_flat(), steps)?;
    // dθ(e_i, e_j) = ∂_i θ_j - ∂_j θ_i
    Ok(jac.transpose() - jac)
}

/// Matrix of the two-form `Ω = -dΘ±` at `pair` (finite differences of the
/// analytic or FD one-form components).
pub fn two_form_matrix(ld: &DiscreteLagrangian, pair: &ExtendedPair, which: OneForm) -> Result<Matrix> {
    let steps = pair.fd_steps(crate::discretize::FD_STEP_SCALE);
    let d = exterior_derivative(&|p: &ExtendedPair| one_form_flat(ld, p, which), pair, &steps)?;
    Ok(-d)
}

/// `Ω(u, w)` with `Ω = -dΘ+`, for `u`, `w` variations of the whole pair
/// (length `2(n + 1)`).
pub fn omega_two_form(ld: &DiscreteLagrangian, pair: &ExtendedPair, u: &Vector, w: &Vector) -> Result<f64> {
    let d = 2 * (pair.dim() + 1);
    if u.len() != d || w.len() != d {
        return Err(Error::dims("two-form argument", d, u.len().max(w.len())));
    }
    let om = two_form_matrix(ld, pair, OneForm::Plus)?;
    Ok(u.dot(&(&om * w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{midpoint_lagrangian, ContinuousLagrangian};
    use approx::assert_abs_diff_eq;

    fn free() -> DiscreteLagrangian {
        midpoint_lagrangian(
            &ContinuousLagrangian::new(1, |_t, _q, v: &Vector| 0.5 * v.norm_squared()).with_partials(
                |_, _, _| 0.0,
                |_, q: &Vector, _| Vector::zeros(q.len()),
                |_, _, v: &Vector| v.clone(),
            ),
        )
    }

    fn osc() -> DiscreteLagrangian {
        midpoint_lagrangian(
            &ContinuousLagrangian::new(1, |_t, q: &Vector, v: &Vector| 0.5 * v.norm_squared() - 0.5 * q.norm_squared())
                .with_partials(|_, _, _| 0.0, |_, q: &Vector, _| -q, |_, _, v: &Vector| v.clone()),
        )
    }

    fn pt(t: f64, q: f64) -> ExtendedPoint {
        ExtendedPoint::from_slice(t, &[q])
    }

    fn pair(t0: f64, q0: f64, t1: f64, q1: f64) -> ExtendedPair {
        ExtendedPair::new(pt(t0, q0), pt(t1, q1)).unwrap()
    }

    #[test]
    fn action_sum_examples() {
        let path = [pt(0.0, 0.0), pt(1.0, 1.0), pt(2.0, 2.0)];
        assert_abs_diff_eq!(action_sum(&free(), &path).unwrap(), 1.0, epsilon = 1e-15);
        let two = [pt(0.0, 0.3), pt(0.5, 0.9)];
        assert_eq!(
            action_sum(&osc(), &two).unwrap(),
            osc().eval(&pair(0.0, 0.3, 0.5, 0.9)).unwrap()
        );
        let rest = [pt(0.0, 1.0), pt(1.0, 1.0), pt(2.0, 1.0)];
        assert_abs_diff_eq!(action_sum(&osc(), &rest).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn action_sum_rejects_bad_paths() {
        assert!(action_sum(&free(), &[pt(0.0, 0.0)]).is_err());
        assert!(matches!(
            action_sum(&free(), &[pt(0.0, 0.0), pt(1.0, 1.0), pt(0.5, 2.0)]),
            Err(Error::Path(_))
        ));
    }

    #[test]
    fn one_forms_of_free_particle() {
        let p = pair(0.0, 0.0, 1.0, 1.0);
        let tp = theta_plus(&free(), &p).unwrap();
        assert_abs_diff_eq!(tp.dt, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tp.dq[0], 1.0, epsilon = 1e-15);
        let tm = theta_minus(&free(), &p).unwrap();
        assert_abs_diff_eq!(tm.dt, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tm.dq[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn d_del_examples() {
        let c = d_del(&free(), &pt(0.0, 0.0), &pt(1.0, 1.0), &pt(2.0, 2.0)).unwrap();
        assert_abs_diff_eq!(c.dt, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.dq[0], 0.0, epsilon = 1e-15);
        let c = d_del(&free(), &pt(0.0, 0.0), &pt(1.0, 1.0), &pt(2.0, 3.0)).unwrap();
        assert_abs_diff_eq!(c.dq[0], -1.0, epsilon = 1e-15);
        assert!(d_del(&free(), &pt(0.0, 0.0), &pt(2.0, 1.0), &pt(1.0, 3.0)).is_err());
    }

    #[test]
    fn energy_examples() {
        let p = pair(0.0, 0.0, 1.0, 1.0);
        assert_abs_diff_eq!(energy_plus(&free(), &p).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(energy_minus(&free(), &p).unwrap(), 0.5, epsilon = 1e-15);
        let p = pair(0.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(energy_plus(&osc(), &p).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(energy_minus(&osc(), &p).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(energy_plus(&free(), &pair(0.0, 0.0, 2.0, 2.0)).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_form_free_particle() {
        // Θ+ = (q1 - q0)/h dq1 + ... so Ω(∂q0, ∂q1) = -∂_{q0} D4 = 1/h
        let p = pair(0.0, 0.0, 1.0, 1.0);
        let u = Vector::from_column_slice(&[0.0, 1.0, 0.0, 0.0]);
        let w = Vector::from_column_slice(&[0.0, 0.0, 0.0, 1.0]);
        let val = omega_two_form(&free(), &p, &u, &w).unwrap();
        assert_abs_diff_eq!(val, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(omega_two_form(&free(), &p, &u, &u).unwrap(), 0.0, epsilon = 1e-15);
        let back = omega_two_form(&free(), &p, &w, &u).unwrap();
        assert_abs_diff_eq!(back, -val, epsilon = 1e-15);
    }
}
