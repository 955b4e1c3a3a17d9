//! Sampled checks of the structural assumptions on a system: consistent slot
//! derivatives, the diagonal condition on `ω_d`, constant rank of the
//! constraints, time-translation invariance, and the action data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{
    DerivativeMode, ExtendedPair, ExtendedPoint, NonholonomicSystem, Partials, SectionSpec, TangentExt, Vector,
};

pub const DERIVATIVE_TOL: f64 = 1e-5;
pub const AUTONOMY_TOL: f64 = 1e-12;
pub const GENERATOR_TOL: f64 = 1e-5;
pub const SECTION_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Outcome of a single sampled check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst residual seen over the samples.
    pub worst: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, worst: f64, threshold: f64) {
        self.checks.push(CheckResult {
            name,
            passed: worst <= threshold,
            worst,
            threshold,
        });
    }
}

/// Random pairs with `t0 ∈ [-1, 1]`, `q0 ∈ [-1, 1]^n`, step in `[0.05, 0.5]`
/// and velocities in `[-1, 1]^n`.
pub fn random_pairs(n: usize, count: usize, seed: u64) -> Vec<ExtendedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t0 = rng.gen_range(-1.0..1.0);
            let h = rng.gen_range(0.05..0.5);
            let q0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let v = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let q1 = &q0 + v * h;
            ExtendedPair {
                p0: ExtendedPoint::new(t0, q0),
                p1: ExtendedPoint::new(t0 + h, q1),
            }
        })
        .collect()
}

fn flat_partials(p: &Partials) -> Vector {
    let n = p.d2.len();
    let mut out = Vector::zeros(2 * n + 2);
    out[0] = p.d1;
    out.rows_mut(1, n).copy_from(&p.d2);
    out[n + 1] = p.d3;
    out.rows_mut(n + 2, n).copy_from(&p.d4);
    out
}

/// Largest relative disagreement between analytic and FD slot partials,
/// measured against the larger of the two and a floor of `1e-3` times the
/// largest FD partial.
fn derivative_mismatch(sys: &NonholonomicSystem, pair: &ExtendedPair) -> Result<f64> {
    let ld = &sys.lagrangian;
    let a = flat_partials(&ld.partials(pair)?);
    let f = flat_partials(&ld.fd_partials(pair)?);
    let floor = 1e-3 * f.amax();
    Ok(a
        .iter()
        .zip(f.iter())
        .map(|(x, y)| {
            let den = x.abs().max(y.abs()).max(floor);
            if den == 0.0 {
                0.0
            } else {
                (x - y).abs() / den
            }
        })
        .fold(0.0, f64::max))
}

/// Runs every check that applies to `sys` on `samples` random pairs drawn
/// from `seed`. A section, when given, is checked against the constraint
/// kernel.
pub fn validate_system(
    sys: &NonholonomicSystem,
    section: Option<&SectionSpec>,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    sys.check_dims()?;
    let n = sys.dim();
    let pairs = random_pairs(n, samples, seed);
    let mut report = ValidationReport::default();

    if sys.lagrangian.derivative_mode() == DerivativeMode::Analytic {
        let mut worst: f64 = 0.0;
        for p in &pairs {
            worst = worst.max(derivative_mismatch(sys, p)?);
        }
        report.push("derivative_consistency", worst, DERIVATIVE_TOL);
    }

    if let Some(c) = &sys.constraints {
        let m = c.count();
        let (mut diag, mut rank): (f64, f64) = (0.0, 0.0);
        for p in &pairs {
            let d = ExtendedPair {
                p0: p.p0.clone(),
                p1: p.p0.clone(),
            };
            diag = diag.max(c.omega_d(&d)?.amax());
            let sv = c.omega(p.p0.t, &p.p0.q)?.singular_values();
            let cut = RANK_TOL * sv.max();
            let numerical_rank = sv.iter().filter(|&&s| s > cut && s > 0.0).count();
            rank = rank.max((m - numerical_rank.min(m)) as f64);
        }
        report.push("diagonal_condition", diag, 0.0);
        // Worst rank deficit `m - rank ω`.
        report.push("constraint_rank", rank, 0.0);
        report.push("fewer_constraints_than_dimension", if m < n { 0.0 } else { 1.0 }, 0.0);
    }

    if sys.autonomous {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut worst: f64 = 0.0;
        for p in &pairs {
            let s = rng.gen_range(-1.0..1.0);
            let shifted = p.time_shifted(s);
            worst = worst.max((sys.lagrangian.eval(&shifted)? - sys.lagrangian.eval(p)?).abs());
            if let Some(c) = &sys.constraints {
                let w = c.omega(p.p0.t, &p.p0.q)? - c.omega(p.p0.t + s, &p.p0.q)?;
                worst = worst.max(w.amax());
                worst = worst.max((c.omega_d(&shifted)? - c.omega_d(p)?).amax());
            }
        }
        report.push("autonomy", worst, AUTONOMY_TOL);
    }

    if let Some(action) = &sys.action {
        let dim_g = action.algebra_dim();
        let (mut gen_err, mut time_err): (f64, f64) = (0.0, 0.0);
        for p in pairs.iter().map(|p| &p.p0) {
            for i in 0..dim_g {
                let g = action.generator(i, p);
                let fd = generator_by_fd(action, i, p);
                let diff = (g.dt - fd.dt).abs().max((&g.dq - &fd.dq).amax());
                let scale = g.dt.abs().max(g.dq.amax()).max(1.0);
                gen_err = gen_err.max(diff / scale);
                if action.is_time_trivial() {
                    time_err = time_err.max(g.dt.abs());
                }
            }
        }
        report.push("generator_matches_action", gen_err, GENERATOR_TOL);
        if action.is_time_trivial() {
            report.push("time_trivial_generators", time_err, 0.0);
        }

        if let Some(sec) = section {
            if sec.algebra_dim() != dim_g {
                return Err(Error::dims("section", dim_g, sec.algebra_dim()));
            }
            let mut worst: f64 = 0.0;
            for p in pairs.iter().map(|p| &p.p0) {
                worst = worst.max(section_residual(sys, sec, p)?);
            }
            report.push("section_in_kernel", worst, SECTION_TOL);
        }
    } else if section.is_some() {
        return Err(Error::Config("a section needs a group action".into()));
    }
    Ok(report)
}

/// Central difference of `ε ↦ act(ε e_i, p)` at the identity.
fn generator_by_fd(action: &crate::types::GroupActionSpec, i: usize, p: &ExtendedPoint) -> TangentExt {
    let s = crate::discretize::FD_STEP_SCALE;
    let mut e = Vector::zeros(action.algebra_dim());
    e[i] = s;
    let plus = action.act(&e, p);
    let minus = action.act(&(-e), p);
    TangentExt {
        dt: (plus.t - minus.t) / (2.0 * s),
        dq: (plus.q - minus.q) / (2.0 * s),
    }
}

/// `|ω(t, q) · (ξ̃(t, q))_Q| / (|ω| |(ξ̃)_Q|)`, zero without constraints or
/// when the generator vanishes.
pub fn section_residual(sys: &NonholonomicSystem, section: &SectionSpec, p: &ExtendedPoint) -> Result<f64> {
    let action = sys
        .action
        .as_ref()
        .ok_or_else(|| Error::Config("a section needs a group action".into()))?;
    let Some(c) = &sys.constraints else { return Ok(0.0) };
    let xi = section.at(p);
    if xi.len() != action.algebra_dim() {
        return Err(Error::dims("section value", action.algebra_dim(), xi.len()));
    }
    let v = action.generator_of(&xi, p).dq;
    let w = c.omega(p.t, &p.q)?;
    let scale = v.norm() * w.norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((w * v).amax() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{midpoint_lagrangian, ContinuousLagrangian};
    use crate::reference::{builtin, builtin_systems};
    use crate::types::{ConstraintSet, DiscreteLagrangian, Matrix};
    use std::collections::BTreeMap;

    fn free_particle_ld() -> DiscreteLagrangian {
        let l = ContinuousLagrangian::new(1, |_, _, v| 0.5 * v.dot(v)).with_partials(
            |_, _, _| 0.0,
            |_, q, _| Vector::zeros(q.len()),
            |_, _, v| v.clone(),
        );
        midpoint_lagrangian(&l)
    }

    #[test]
    fn nonholonomic_particle_passes() {
        let b = builtin("nonholonomic_particle", &BTreeMap::new()).unwrap();
        let r = validate_system(&b.system, b.section.as_ref(), 100, 0).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.get("diagonal_condition").unwrap().worst, 0.0);
        assert!(r.get("section_in_kernel").is_some());
        assert!(r.get("autonomy").is_some());
    }

    #[test]
    fn every_builtin_system_passes() {
        for b in builtin_systems() {
            let r = validate_system(&b.system, b.section.as_ref(), 50, 1).unwrap();
            assert!(r.passed(), "{}: {:?}", b.name, r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn constant_discrete_constraint_fails_diagonal() {
        let c = ConstraintSet::new(
            3,
            1,
            |_, q| Matrix::from_row_slice(1, 3, &[-q[1], 0.0, 1.0]),
            |_| Vector::from_element(1, 1.0),
        );
        let ld = DiscreteLagrangian::new(3, |p| p.interval());
        let sys = NonholonomicSystem::new(ld, Some(c)).unwrap();
        let r = validate_system(&sys, None, 10, 0).unwrap();
        let d = r.get("diagonal_condition").unwrap();
        assert!(!d.passed);
        assert_eq!(d.worst, 1.0);
    }

    #[test]
    fn negated_d3_doubles_the_discrepancy() {
        let good = free_particle_ld();
        let (g1, g2, g3, g4) = (good.clone(), good.clone(), good.clone(), good.clone());
        let bad = DiscreteLagrangian::new(1, move |p| good.eval(p).unwrap()).with_partials(
            move |p| g1.d1(p).unwrap(),
            move |p| g2.d2(p).unwrap(),
            move |p| -g3.d3(p).unwrap(),
            move |p| g4.d4(p).unwrap(),
        );
        let r = validate_system(&NonholonomicSystem::unconstrained(bad), None, 20, 3).unwrap();
        let d = r.get("derivative_consistency").unwrap();
        assert!(!d.passed);
        assert!((d.worst - 2.0).abs() < 1e-4, "{}", d.worst);
    }

    #[test]
    fn rank_deficient_constraints_fail() {
        let c = ConstraintSet::new(3, 1, |_, _| Matrix::zeros(1, 3), |_| Vector::zeros(1));
        let sys = NonholonomicSystem::new(DiscreteLagrangian::new(3, |p| p.interval()), Some(c)).unwrap();
        let r = validate_system(&sys, None, 5, 0).unwrap();
        assert!(!r.get("constraint_rank").unwrap().passed);
    }

    #[test]
    fn time_dependent_system_marked_autonomous_fails() {
        let ld = DiscreteLagrangian::new(1, |p| p.p0.t + p.p1.t);
        let sys = NonholonomicSystem::unconstrained(ld).autonomous(true);
        let r = validate_system(&sys, None, 5, 0).unwrap();
        assert!(!r.get("autonomy").unwrap().passed);
    }

    #[test]
    fn section_outside_the_kernel_fails() {
        let b = builtin("nonholonomic_particle", &BTreeMap::new()).unwrap();
        let wrong = SectionSpec::constant(Vector::from_column_slice(&[1.0, 0.0]));
        let r = validate_system(&b.system, Some(&wrong), 20, 0).unwrap();
        assert!(!r.get("section_in_kernel").unwrap().passed);
    }

    #[test]
    fn section_without_action_is_a_config_error() {
        let sys = NonholonomicSystem::unconstrained(free_particle_ld());
        let s = SectionSpec::constant(Vector::from_element(1, 1.0));
        assert!(matches!(validate_system(&sys, Some(&s), 5, 0), Err(Error::Config(_))));
    }
}
