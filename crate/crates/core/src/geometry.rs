//! Checks of the geometric structure preserved by the discrete flow: momentum
//! maps and their evolution under constraints, and the pull-back of the
//! symplectic two-form by the step map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calculus::{one_form_flat, theta_minus, theta_plus, two_form_matrix, OneForm};
use crate::discretize::{fd_jacobian_with_steps, FD_STEP_SCALE};
use crate::error::{Error, Result};
use crate::stepper::{project_to_constraints, step_edla, step_edla_with_guess};
use crate::types::{
    DiscreteLagrangian, ExtendedPair, ExtendedPoint, GroupActionSpec, Matrix, NonholonomicSystem, SectionSpec,
    SolverConfig, TangentExt, Vector,
};
use crate::validate::{random_pairs, section_residual, SECTION_TOL};

/// `L_d` counts as invariant when every sampled `⟨dL_d, ξ⟩` is at most this.
pub const INVARIANCE_TOL: f64 = 1e-8;
/// Largest tolerated gap between the `Θ+` and `Θ-` momentum pairings.
pub const MOMENTUM_AGREEMENT_TOL: f64 = 1e-8;
/// Relative FD step for differentiating the step map.
pub const STEP_MAP_FD_SCALE: f64 = 1e-6;
/// Smallest time-row distance (see [`crate::stepper::time_row_dependence`])
/// of a step used by the FD checks of the step map. Closer to degeneracy the
/// map varies on scales comparable to any usable FD step.
pub const WELL_CONDITIONED_DISTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceReport {
    pub max_residual: f64,
    pub invariant: bool,
}

fn tangent_flat(a: &TangentExt, b: &TangentExt) -> Vector {
    let n = a.dq.len();
    let mut out = Vector::zeros(2 * n + 2);
    out[0] = a.dt;
    out.rows_mut(1, n).copy_from(&a.dq);
    out[n + 1] = b.dt;
    out.rows_mut(n + 2, n).copy_from(&b.dq);
    out
}

/// `max |⟨dL_d, ξ_{Q̄×Q̄}⟩|` over random pairs and the algebra basis, with the
/// directional derivative taken by central differences of `L_d`.
pub fn lagrangian_invariance(
    ld: &DiscreteLagrangian,
    action: &GroupActionSpec,
    samples: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if action.algebra_dim() == 0 {
        return Err(Error::Config("the action has a zero-dimensional algebra".into()));
    }
    if action.dim() != ld.dim() {
        return Err(Error::dims("group action", ld.dim(), action.dim()));
    }
    let mut worst: f64 = 0.0;
    for pair in random_pairs(ld.dim(), samples, seed) {
        let x = pair.to_flat();
        let s = FD_STEP_SCALE * x.amax().max(1.0);
        for i in 0..action.algebra_dim() {
            let xi = tangent_flat(&action.generator(i, &pair.p0), &action.generator(i, &pair.p1));
            let plus = ld.eval(&ExtendedPair::from_flat(&(&x + &xi * s)))?;
            let minus = ld.eval(&ExtendedPair::from_flat(&(&x - &xi * s)))?;
            worst = worst.max(((plus - minus) / (2.0 * s)).abs());
        }
    }
    Ok(InvarianceReport {
        max_residual: worst,
        invariant: worst <= INVARIANCE_TOL,
    })
}

/// The two pairings `⟨Θ+(pair), ξ(p1)⟩` and `⟨Θ-(pair), ξ(p0)⟩`; they agree
/// when `L_d` is invariant.
pub fn momentum_pairings(
    ld: &DiscreteLagrangian,
    action: &GroupActionSpec,
    pair: &ExtendedPair,
    xi: &Vector,
) -> Result<(f64, f64)> {
    if xi.len() != action.algebra_dim() {
        return Err(Error::dims("algebra element", action.algebra_dim(), xi.len()));
    }
    let plus = theta_plus(ld, pair)?.pair(&action.generator_of(xi, &pair.p1));
    let minus = theta_minus(ld, pair)?.pair(&action.generator_of(xi, &pair.p0));
    Ok((plus, minus))
}

/// Discrete momentum `J(ξ) = ⟨Θ+(pair), ξ(p1)⟩`. Fails with an invariance
/// error when the `Θ-` pairing disagrees by more than
/// [`MOMENTUM_AGREEMENT_TOL`] (relative to `max(1, |J|)`).
pub fn discrete_momentum(
    ld: &DiscreteLagrangian,
    action: &GroupActionSpec,
    pair: &ExtendedPair,
    xi: &Vector,
) -> Result<f64> {
    let (plus, minus) = momentum_pairings(ld, action, pair, xi)?;
    let gap = (plus - minus).abs();
    if gap > MOMENTUM_AGREEMENT_TOL * plus.abs().max(minus.abs()).max(1.0) {
        return Err(Error::InvarianceViolation { residual: gap });
    }
    Ok(plus)
}

fn require_section(sys: &NonholonomicSystem, section: &SectionSpec, p: &ExtendedPoint) -> Result<()> {
    let r = section_residual(sys, section, p)?;
    if r > SECTION_TOL {
        return Err(Error::Section { residual: r });
    }
    Ok(())
}

/// Nonholonomic momentum `⟨Θ+(pair), (ξ̃(p1))(p1)⟩`.
pub fn nonholonomic_momentum(
    sys: &NonholonomicSystem,
    action: &GroupActionSpec,
    pair: &ExtendedPair,
    section: &SectionSpec,
) -> Result<f64> {
    let with_action = sys_with(sys, action)?;
    require_section(&with_action, section, &pair.p1)?;
    let xi = section.at(&pair.p1);
    Ok(theta_plus(&sys.lagrangian, pair)?.pair(&action.generator_of(&xi, &pair.p1)))
}

fn sys_with(sys: &NonholonomicSystem, action: &GroupActionSpec) -> Result<NonholonomicSystem> {
    sys.clone().with_action(action.clone())
}

fn same_point(a: &ExtendedPoint, b: &ExtendedPoint) -> bool {
    let tol = 1e-12;
    (a.t - b.t).abs() <= tol * a.t.abs().max(1.0)
        && a.q.len() == b.q.len()
        && a.q.iter().zip(b.q.iter()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

/// `|J(12) - J(01) - ⟨Θ+(12), (ξ̃(p2) - ξ̃(p1))(p2)⟩|` for consecutive pairs.
/// It vanishes along solutions of the constrained step equations.
pub fn momentum_equation_residual(
    sys: &NonholonomicSystem,
    action: &GroupActionSpec,
    pair01: &ExtendedPair,
    pair12: &ExtendedPair,
    section: &SectionSpec,
) -> Result<f64> {
    if !same_point(&pair01.p1, &pair12.p0) {
        return Err(Error::Path(format!(
            "pairs are not consecutive: first ends at t = {}, second starts at t = {}",
            pair01.p1.t, pair12.p0.t
        )));
    }
    let j01 = nonholonomic_momentum(sys, action, pair01, section)?;
    let j12 = nonholonomic_momentum(sys, action, pair12, section)?;
    let p2 = &pair12.p1;
    let dxi = section.at(p2) - section.at(&pair12.p0);
    let rhs = theta_plus(&sys.lagrangian, pair12)?.pair(&action.generator_of(&dxi, p2));
    Ok((j12 - j01 - rhs).abs())
}

/// One step of the map `Φ(p0, p1) = (p1, p2)` together with `β_d`.
struct StepMap<'a> {
    sys: &'a NonholonomicSystem,
    cfg: SolverConfig,
    lambda: Vector,
}

impl StepMap<'_> {
    fn eval(&self, x: &Vector) -> Result<(ExtendedPair, Vector)> {
        let pair = ExtendedPair::from_flat(x);
        let step = step_edla_with_guess(self.sys, &pair, Some(&self.lambda), &self.cfg)?;
        Ok((ExtendedPair::new(pair.p1.clone(), step.next)?, step.lambda))
    }

    /// `β_d = λ_a ω^a(t1, q1)` on the `q1` slots of the flattened pair.
    fn beta(&self, x: &Vector, lambda: &Vector) -> Result<Vector> {
        let n = self.sys.dim();
        let mut out = Vector::zeros(2 * n + 2);
        if let Some(c) = &self.sys.constraints {
            let p1 = ExtendedPair::from_flat(x).p1;
            out.rows_mut(n + 2, n).copy_from(&(c.omega(p1.t, &p1.q)?.transpose() * lambda));
        }
        Ok(out)
    }

    /// `x ↦ (Φ(x), β_d(x))` stacked.
    fn stacked(&self, x: &Vector) -> Result<Vector> {
        let (next, lambda) = self.eval(x)?;
        let d = x.len();
        let mut out = Vector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&next.to_flat());
        out.rows_mut(d, d).copy_from(&self.beta(x, &lambda)?);
        Ok(out)
    }
}

struct Linearization {
    next: ExtendedPair,
    beta: Vector,
    /// `DΦ` on the flattened pair space.
    dphi: Matrix,
    /// Jacobian of `β_d`, `dbeta[(i, j)] = ∂β_i/∂x_j`.
    dbeta: Matrix,
}

fn linearize(sys: &NonholonomicSystem, pair: &ExtendedPair, cfg: &SolverConfig, fd_scale: f64) -> Result<Linearization> {
    cfg.validate()?;
    let base = step_edla_with_guess(sys, pair, None, cfg)?;
    let map = StepMap {
        sys,
        cfg: cfg.clone().with_tol(cfg.tol / 100.0),
        lambda: base.lambda.clone(),
    };
    let x = pair.to_flat();
    let (next, lambda) = map.eval(&x)?;
    let beta = map.beta(&x, &lambda)?;
    let steps = pair.fd_steps(fd_scale);
    let jac = fd_jacobian_with_steps(&|y: &Vector| map.stacked(y), &x, &steps)?;
    let d = x.len();
    Ok(Linearization {
        next,
        beta,
        dphi: jac.rows(0, d).into_owned(),
        dbeta: jac.rows(d, d).into_owned(),
    })
}

/// `max |Φ*Ω - Ω - dβ_d|` over coordinate basis pairs, with `Ω = -dΘ+`,
/// `Φ*Ω = DΦᵀ Ω(Φ(x)) DΦ` and every derivative by finite differences.
pub fn symplectic_evolution_residual(sys: &NonholonomicSystem, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<f64> {
    symplectic_evolution_residual_with_step(sys, pair, cfg, STEP_MAP_FD_SCALE)
}

/// [`symplectic_evolution_residual`] with an explicit relative FD step for
/// the step map.
pub fn symplectic_evolution_residual_with_step(
    sys: &NonholonomicSystem,
    pair: &ExtendedPair,
    cfg: &SolverConfig,
    fd_scale: f64,
) -> Result<f64> {
    let lin = linearize(sys, pair, cfg, fd_scale)?;
    let ld = &sys.lagrangian;
    let omega_here = two_form_matrix(ld, pair, OneForm::Plus)?;
    let omega_next = two_form_matrix(ld, &lin.next, OneForm::Plus)?;
    let pulled = lin.dphi.transpose() * omega_next * &lin.dphi;
    // dβ(e_i, e_j) = ∂_i β_j - ∂_j β_i
    let dbeta = lin.dbeta.transpose() - &lin.dbeta;
    Ok((pulled - omega_here - dbeta).amax())
}

/// Compares the FD gradient of `S̃(x) = L_d(x) + L_d(Φ(x))` with
/// `β_d + Φ*Θ+ - Θ-` and returns the largest component mismatch.
pub fn restricted_action_check(sys: &NonholonomicSystem, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<f64> {
    restricted_action_check_with_step(sys, pair, cfg, STEP_MAP_FD_SCALE)
}

/// [`restricted_action_check`] with an explicit relative FD step.
pub fn restricted_action_check_with_step(
    sys: &NonholonomicSystem,
    pair: &ExtendedPair,
    cfg: &SolverConfig,
    fd_scale: f64,
) -> Result<f64> {
    let lin = linearize(sys, pair, cfg, fd_scale)?;
    let ld = &sys.lagrangian;
    let base = step_edla_with_guess(sys, pair, None, cfg)?;
    let map = StepMap {
        sys,
        cfg: cfg.clone().with_tol(cfg.tol / 100.0),
        lambda: base.lambda,
    };
    let action_sum = |x: &Vector| -> Result<Vector> {
        let (next, _) = map.eval(x)?;
        Ok(Vector::from_element(1, ld.eval(&ExtendedPair::from_flat(x))? + ld.eval(&next)?))
    };
    let x = pair.to_flat();
    let grad = fd_jacobian_with_steps(&action_sum, &x, &pair.fd_steps(fd_scale))?.row(0).transpose();
    let theta_next = one_form_flat(ld, &lin.next, OneForm::Plus)?;
    let theta_minus_here = one_form_flat(ld, pair, OneForm::Minus)?;
    let predicted = &lin.beta + lin.dphi.transpose() * theta_next - theta_minus_here;
    Ok((grad - predicted).amax())
}

/// `|J(g·pair) - J(pair)|` for an abelian translation `g`, where Ad is trivial.
pub fn equivariance_residual(
    ld: &DiscreteLagrangian,
    action: &GroupActionSpec,
    pair: &ExtendedPair,
    xi: &Vector,
    g: &Vector,
) -> Result<f64> {
    let moved = action.act_pair(g, pair);
    Ok((discrete_momentum(ld, action, &moved, xi)? - discrete_momentum(ld, action, pair, xi)?).abs())
}

/// Random group elements in `[-1, 1]^dim_g`, for sweeps of the equivariance
/// check.
pub fn random_group_elements(dim_g: usize, count: usize, seed: u64) -> Vec<Vector> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Vector::from_fn(dim_g, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Random admissible pairs (drawn by [`random_pairs`], then projected onto
/// the constraints) whose step is well conditioned. Draws at most `50 * count`
/// candidates and reports degeneracy if too few qualify.
pub fn random_admissible_pairs(
    sys: &NonholonomicSystem,
    count: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Vec<ExtendedPair>> {
    let mut out = Vec::with_capacity(count);
    for pair in random_pairs(sys.dim(), 50 * count, seed) {
        if out.len() == count {
            break;
        }
        let Ok(pair) = project_to_constraints(sys, &pair, cfg) else {
            continue;
        };
        if let Ok(step) = step_edla(sys, &pair, cfg) {
            if step.time_row_distance >= WELL_CONDITIONED_DISTANCE {
                out.push(pair);
            }
        }
    }
    if out.len() < count {
        return Err(Error::Degenerate {
            reason: format!(
                "only {} of {count} requested random pairs have a well-conditioned step",
                out.len()
            ),
            near_zero_energy: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::energy_plus;
    use crate::reference::builtin;
    use crate::stepper::simulate;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn system(name: &str) -> crate::reference::BuiltinSystem {
        builtin(name, &BTreeMap::new()).unwrap()
    }

    fn unit_pair() -> ExtendedPair {
        ExtendedPair::from_slices(0.0, &[0.0], 1.0, &[1.0]).unwrap()
    }

    #[test]
    fn free_particle_translation_is_invariant() {
        let b = system("free_particle");
        let action = GroupActionSpec::translation(1, vec![0]);
        let r = lagrangian_invariance(&b.system.lagrangian, &action, 50, 0).unwrap();
        assert!(r.max_residual <= 1e-10, "{}", r.max_residual);
        assert!(r.invariant);
    }

    #[test]
    fn oscillator_translation_is_not_invariant() {
        let b = system("harmonic_oscillator");
        let action = GroupActionSpec::translation(1, vec![0]);
        let r = lagrangian_invariance(&b.system.lagrangian, &action, 50, 0).unwrap();
        assert!(r.max_residual > 1e-2);
        assert!(!r.invariant);
    }

    #[test]
    fn cyclic_particle_is_invariant() {
        let b = system("nonholonomic_particle_cyclic");
        let r = lagrangian_invariance(&b.system.lagrangian, b.system.action.as_ref().unwrap(), 50, 0).unwrap();
        assert!(r.max_residual <= 1e-10, "{}", r.max_residual);
    }

    #[test]
    fn free_particle_momentum() {
        let b = system("free_particle");
        let action = GroupActionSpec::translation(1, vec![0]);
        let j = discrete_momentum(&b.system.lagrangian, &action, &unit_pair(), &v(&[1.0])).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn time_translation_momentum_is_minus_energy() {
        let b = system("free_particle");
        let action = GroupActionSpec::time_translation(1);
        let j = discrete_momentum(&b.system.lagrangian, &action, &unit_pair(), &v(&[1.0])).unwrap();
        assert_abs_diff_eq!(j, -0.5, epsilon = 1e-14);
    }

    #[test]
    fn non_invariant_momentum_is_rejected() {
        let b = system("harmonic_oscillator");
        let action = GroupActionSpec::translation(1, vec![0]);
        let err = discrete_momentum(&b.system.lagrangian, &action, &unit_pair(), &v(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::InvarianceViolation { .. }));
    }

    fn particle_pair() -> (crate::reference::BuiltinSystem, ExtendedPair) {
        let b = system("nonholonomic_particle");
        let pair = b.default_pair(&SolverConfig::default()).unwrap();
        (b, pair)
    }

    #[test]
    fn particle_section_momentum_combines_components() {
        let (b, _) = particle_pair();
        let pair = ExtendedPair::from_slices(0.0, &[0.1, 0.2, 0.3], 0.2, &[0.2, 0.5, 0.4]).unwrap();
        let action = b.system.action.as_ref().unwrap();
        let j = nonholonomic_momentum(&b.system, action, &pair, b.section.as_ref().unwrap()).unwrap();
        let th = theta_plus(&b.system.lagrangian, &pair).unwrap();
        assert_abs_diff_eq!(j, th.dq[0] + 0.5 * th.dq[2], epsilon = 1e-14);
    }

    #[test]
    fn zero_section_gives_zero() {
        let (b, pair) = particle_pair();
        let zero = SectionSpec::constant(v(&[0.0, 0.0]));
        let j = nonholonomic_momentum(&b.system, b.system.action.as_ref().unwrap(), &pair, &zero).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn section_outside_the_constraints_is_rejected() {
        let (b, pair) = particle_pair();
        let bad = SectionSpec::constant(v(&[1.0, 0.0]));
        let err = nonholonomic_momentum(&b.system, b.system.action.as_ref().unwrap(), &pair, &bad).unwrap_err();
        assert!(matches!(err, Error::Section { .. }));
    }

    #[test]
    fn constant_horizontal_section_matches_discrete_momentum() {
        let b = system("nonholonomic_particle_cyclic");
        let pair = b.default_pair(&SolverConfig::default()).unwrap();
        let action = b.system.action.as_ref().unwrap();
        let xi = b.horizontal_symmetries[0].clone();
        let section = SectionSpec::constant(xi.clone());
        let a = nonholonomic_momentum(&b.system, action, &pair, &section).unwrap();
        let c = discrete_momentum(&b.system.lagrangian, action, &pair, &xi).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn momentum_equation_holds_along_a_trajectory() {
        let (b, pair) = particle_pair();
        let cfg = SolverConfig::default();
        let traj = simulate(&b.system, &pair, 100, &cfg).unwrap();
        let action = b.system.action.as_ref().unwrap();
        let section = b.section.as_ref().unwrap();
        let pairs: Vec<_> = traj.pairs().collect();
        let worst = pairs
            .windows(2)
            .map(|w| momentum_equation_residual(&b.system, action, &w[0], &w[1], section).unwrap())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn momentum_equation_is_not_vacuous() {
        let (b, _) = particle_pair();
        let action = b.system.action.as_ref().unwrap();
        let section = b.section.as_ref().unwrap();
        let p0 = ExtendedPoint::from_slice(0.0, &[0.0, 0.0, 0.0]);
        let p1 = ExtendedPoint::from_slice(0.1, &[0.1, 0.3, 0.0]);
        let p2 = ExtendedPoint::from_slice(0.3, &[0.5, 0.1, 0.06]);
        let r = momentum_equation_residual(
            &b.system,
            action,
            &ExtendedPair::new(p0, p1.clone()).unwrap(),
            &ExtendedPair::new(p1, p2).unwrap(),
            section,
        );
        assert!(r.unwrap() > 1e-3);
    }

    #[test]
    fn non_consecutive_pairs_are_rejected() {
        let (b, pair) = particle_pair();
        let other = ExtendedPair::new(pair.p0.time_shifted(5.0), pair.p1.time_shifted(5.0)).unwrap();
        let err = momentum_equation_residual(
            &b.system,
            b.system.action.as_ref().unwrap(),
            &pair,
            &other,
            b.section.as_ref().unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Path(_)));
    }

    #[test]
    fn horizontal_momentum_is_conserved() {
        let b = system("nonholonomic_particle_cyclic");
        let cfg = SolverConfig::default();
        let traj = simulate(&b.system, &b.default_pair(&cfg).unwrap(), 100, &cfg).unwrap();
        let action = b.system.action.as_ref().unwrap();
        let xi = &b.horizontal_symmetries[0];
        let values: Vec<f64> = traj
            .pairs()
            .map(|p| discrete_momentum(&b.system.lagrangian, action, &p, xi).unwrap())
            .collect();
        let spread = values.iter().map(|j| (j - values[0]).abs()).fold(0.0, f64::max);
        assert!(spread <= 1e-11, "{spread}");
    }

    #[test]
    fn time_translation_momentum_tracks_energy_along_a_trajectory() {
        let (b, pair) = particle_pair();
        let cfg = SolverConfig::default();
        let traj = simulate(&b.system, &pair, 50, &cfg).unwrap();
        let action = GroupActionSpec::time_translation(3);
        for p in traj.pairs() {
            let j = discrete_momentum(&b.system.lagrangian, &action, &p, &v(&[1.0])).unwrap();
            assert_abs_diff_eq!(j, -energy_plus(&b.system.lagrangian, &p).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn oscillator_step_map_is_symplectic() {
        let b = system("harmonic_oscillator");
        let pair = b.default_pair(&SolverConfig::default()).unwrap();
        let r = symplectic_evolution_residual(&b.system, &pair, &SolverConfig::default()).unwrap();
        assert!(r <= 1e-5, "{r}");
    }

    #[test]
    fn particle_two_form_law() {
        let (b, pair) = particle_pair();
        let r = symplectic_evolution_residual(&b.system, &pair, &SolverConfig::default()).unwrap();
        assert!(r <= 1e-4, "{r}");
    }

    #[test]
    fn restricted_action_differential() {
        for name in ["harmonic_oscillator", "nonholonomic_particle"] {
            let b = system(name);
            let pair = b.default_pair(&SolverConfig::default()).unwrap();
            let r = restricted_action_check(&b.system, &pair, &SolverConfig::default()).unwrap();
            assert!(r <= 1e-6, "{name}: {r}");
        }
    }

    #[test]
    fn collapsing_step_map_propagates_the_error() {
        let b = system("free_particle");
        let err = symplectic_evolution_residual(&b.system, &unit_pair(), &SolverConfig::default()).unwrap_err();
        assert!(err.is_step_failure(), "{err}");
    }

    #[test]
    fn translated_pairs_have_equal_momentum() {
        let b = system("nonholonomic_particle_cyclic");
        let pair = b.default_pair(&SolverConfig::default()).unwrap();
        let action = b.system.action.as_ref().unwrap();
        let xi = &b.horizontal_symmetries[0];
        for g in random_group_elements(3, 20, 7) {
            let r = equivariance_residual(&b.system.lagrangian, action, &pair, xi, &g).unwrap();
            assert!(r <= 1e-10, "{r}");
        }
    }

    #[test]
    fn sampled_pairs_are_admissible_and_well_conditioned() {
        let b = system("nonholonomic_particle");
        let cfg = SolverConfig::default();
        let pairs = random_admissible_pairs(&b.system, 10, 0, &cfg).unwrap();
        assert_eq!(pairs.len(), 10);
        for p in &pairs {
            assert!(b.system.constraint_residual(p).unwrap() <= cfg.tol);
            let r = symplectic_evolution_residual(&b.system, p, &cfg).unwrap();
            assert!(r <= 1e-4, "{r}");
        }
        let free = system("free_particle");
        assert!(matches!(
            random_admissible_pairs(&free.system, 3, 0, &cfg),
            Err(Error::Degenerate { .. })
        ));
    }
}
