use std::collections::BTreeMap;

use proptest::prelude::*;

use nhvi_core::calculus::{d_del, energy_minus, energy_plus, one_form_flat, two_form_matrix, OneForm};
use nhvi_core::geometry::{discrete_momentum, equivariance_residual};
use nhvi_core::reference::{builtin, solve_reference, BuiltinSystem, InitialState};
use nhvi_core::stepper::{project_to_constraints, simulate, step_edel, step_edla};
use nhvi_core::validate::validate_system;
use nhvi_core::{
    DerivativeMode, ExtendedPair, ExtendedPoint, GroupActionSpec, NonholonomicSystem, SolverConfig, Vector,
};

const AUTONOMOUS: [&str; 4] = ["harmonic_oscillator", "nonholonomic_particle", "nonholonomic_particle_cyclic", "rolling_disk"];
const STEPPABLE: [&str; 5] = [
    "harmonic_oscillator",
    "forced_oscillator",
    "nonholonomic_particle",
    "nonholonomic_particle_cyclic",
    "rolling_disk",
];
const CONSTRAINED: [&str; 3] = ["nonholonomic_particle", "nonholonomic_particle_cyclic", "rolling_disk"];

fn system(name: &str) -> BuiltinSystem {
    builtin(name, &BTreeMap::new()).unwrap()
}

/// `(t0, h, q0, v)` drawn for dimension up to 4; callers truncate.
fn raw_pair() -> impl Strategy<Value = (f64, f64, Vec<f64>, Vec<f64>)> {
    (
        -2.0..2.0f64,
        0.01..1.0f64,
        prop::collection::vec(-1.5..1.5f64, 4),
        prop::collection::vec(-1.0..1.0f64, 4),
    )
}

fn make_pair(n: usize, (t0, h, q0, v): &(f64, f64, Vec<f64>, Vec<f64>)) -> ExtendedPair {
    let q0 = Vector::from_column_slice(&q0[..n]);
    let q1 = &q0 + Vector::from_column_slice(&v[..n]) * *h;
    ExtendedPair::new(ExtendedPoint::new(*t0, q0), ExtendedPoint::new(t0 + h, q1)).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// A projected random pair whose step converges, if there is one.
fn admissible_step(sys: &NonholonomicSystem, pair: &ExtendedPair) -> Option<(ExtendedPair, nhvi_core::stepper::StepResult)> {
    let cfg = SolverConfig::default();
    let pair = project_to_constraints(sys, pair, &cfg).ok()?;
    let step = step_edla(sys, &pair, &cfg).ok()?;
    Some((pair, step))
}

#[test]
fn most_random_steps_converge() {
    for name in STEPPABLE {
        let sys = system(name).system;
        let pairs = nhvi_core::validate::random_pairs(sys.dim(), 40, 1);
        let ok = pairs.iter().filter(|p| admissible_step(&sys, p).is_some()).count();
        assert!(ok >= 30, "{name}: only {ok} of 40 random steps converged");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn autonomous_lagrangians_are_time_shift_invariant(idx in 0..4usize, raw in raw_pair(), s in -10.0..10.0f64) {
        let b = system(AUTONOMOUS[idx]);
        let ld = &b.system.lagrangian;
        let pair = make_pair(b.system.dim(), &raw);
        let shifted = pair.time_shifted(s);
        prop_assert!((ld.eval(&pair).unwrap() - ld.eval(&shifted).unwrap()).abs() <= 1e-12);
        if let Some(c) = &b.system.constraints {
            prop_assert!((c.omega_d(&pair).unwrap() - c.omega_d(&shifted).unwrap()).amax() <= 1e-12);
        }
    }

    #[test]
    fn analytic_partials_match_finite_differences(idx in 0..5usize, raw in raw_pair()) {
        let b = system(STEPPABLE[idx]);
        let ld = &b.system.lagrangian;
        prop_assume!(ld.derivative_mode() == DerivativeMode::Analytic);
        let pair = make_pair(b.system.dim(), &raw);
        let a = ld.partials(&pair).unwrap();
        let f = ld.fd_partials(&pair).unwrap();
        prop_assert!(rel_err(a.d1, f.d1) <= 1e-5);
        prop_assert!(rel_err(a.d3, f.d3) <= 1e-5);
        let scale = a.d2.amax().max(a.d4.amax()).max(1e-3);
        prop_assert!((&a.d2 - &f.d2).amax() / scale <= 1e-5);
        prop_assert!((&a.d4 - &f.d4).amax() / scale <= 1e-5);
    }

    #[test]
    fn discrete_constraints_vanish_exactly_on_the_diagonal(idx in 0..3usize, raw in raw_pair()) {
        let b = system(CONSTRAINED[idx]);
        let p = make_pair(b.system.dim(), &raw).p0;
        let diag = ExtendedPair { p0: p.clone(), p1: p };
        let w = b.system.constraints.as_ref().unwrap().omega_d(&diag).unwrap();
        prop_assert!(w.iter().all(|&x| x == 0.0), "{w:?}");
    }

    #[test]
    fn differential_splits_into_theta_forms(idx in 0..5usize, raw in raw_pair()) {
        let b = system(STEPPABLE[idx]);
        let ld = &b.system.lagrangian;
        let pair = make_pair(b.system.dim(), &raw);
        let dl = ld.fd_differential(&pair).unwrap();
        let split = one_form_flat(ld, &pair, OneForm::Plus).unwrap() - one_form_flat(ld, &pair, OneForm::Minus).unwrap();
        prop_assert!((&dl - &split).amax() <= 1e-6 * dl.amax().max(1.0));
    }

    #[test]
    fn both_theta_forms_give_the_same_two_form(idx in 0..5usize, raw in raw_pair()) {
        let b = system(STEPPABLE[idx]);
        let ld = &b.system.lagrangian;
        let pair = make_pair(b.system.dim(), &raw);
        let plus = two_form_matrix(ld, &pair, OneForm::Plus).unwrap();
        let minus = two_form_matrix(ld, &pair, OneForm::Minus).unwrap();
        prop_assert!((&plus - &minus).amax() <= 1e-6 * plus.amax().max(1.0));
    }

    #[test]
    fn steps_satisfy_the_lagrange_dalembert_equations(idx in 0..5usize, raw in raw_pair()) {
        let b = system(STEPPABLE[idx]);
        let sys = &b.system;
        let tol = SolverConfig::default().tol;
        let Some((pair, step)) = admissible_step(sys, &make_pair(sys.dim(), &raw)) else { return Ok(()) };
        let del = d_del(&sys.lagrangian, &pair.p0, &pair.p1, &step.next).unwrap();
        prop_assert!(del.dt.abs() <= 10.0 * tol);
        let force = match &sys.constraints {
            Some(c) => c.omega(pair.p1.t, &pair.p1.q).unwrap().transpose() * &step.lambda,
            None => Vector::zeros(sys.dim()),
        };
        prop_assert!((&del.dq - force).amax() <= 10.0 * tol);
        let next = ExtendedPair::new(pair.p1.clone(), step.next.clone()).unwrap();
        prop_assert!(sys.constraint_residual(&next).unwrap() <= tol);
        prop_assert!(step.next.t > pair.p1.t);
    }

    #[test]
    fn discrete_energy_identity_holds_per_step(idx in 0..5usize, raw in raw_pair()) {
        let b = system(STEPPABLE[idx]);
        let sys = &b.system;
        let Some((pair, step)) = admissible_step(sys, &make_pair(sys.dim(), &raw)) else { return Ok(()) };
        let next = ExtendedPair::new(pair.p1.clone(), step.next).unwrap();
        let ep = energy_plus(&sys.lagrangian, &pair).unwrap();
        let em = energy_minus(&sys.lagrangian, &next).unwrap();
        prop_assert!((ep - em).abs() <= 10.0 * SolverConfig::default().tol, "{ep} {em}");
    }

    #[test]
    fn unconstrained_edla_is_edel(idx in 0..3usize, raw in raw_pair()) {
        let name = ["harmonic_oscillator", "forced_oscillator", "free_particle"][idx];
        let b = system(name);
        let pair = make_pair(b.system.dim(), &raw);
        let cfg = SolverConfig::default();
        prop_assert_eq!(step_edla(&b.system, &pair, &cfg), step_edel(&b.system.lagrangian, &pair, &cfg));
    }

    #[test]
    fn time_translation_momentum_is_minus_energy(idx in 0..4usize, raw in raw_pair()) {
        let b = system(AUTONOMOUS[idx]);
        let n = b.system.dim();
        let ld = &b.system.lagrangian;
        let pair = make_pair(n, &raw);
        let j = discrete_momentum(ld, &GroupActionSpec::time_translation(n), &pair, &Vector::from_element(1, 1.0)).unwrap();
        let e = energy_plus(ld, &pair).unwrap();
        prop_assert!((j + e).abs() <= 1e-12 * e.abs().max(1.0));
    }

    #[test]
    fn translation_momenta_are_equivariant(raw in raw_pair(), g in prop::collection::vec(-2.0..2.0f64, 2), xi in prop::collection::vec(-1.0..1.0f64, 2)) {
        let b = system("nonholonomic_particle");
        let action = b.system.action.as_ref().unwrap();
        let pair = make_pair(3, &raw);
        let r = equivariance_residual(&b.system.lagrangian, action, &pair, &Vector::from_vec(xi), &Vector::from_vec(g)).unwrap();
        prop_assert!(r <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trajectories_move_forward_and_conserve_energy(idx in 0..4usize, v in prop::collection::vec(-0.5..0.5f64, 4), h in 0.02..0.2f64) {
        let b = system(AUTONOMOUS[idx]);
        let cfg = SolverConfig::default();
        let n = b.system.dim();
        let raw_v = Vector::from_column_slice(&v[..n]);
        let init = InitialState {
            t: 0.0,
            q: b.default_initial.q.clone(),
            v: b.continuous.project_velocity(0.0, &b.default_initial.q, &raw_v).unwrap(),
        };
        let pair = b.initial_pair(&init, h, &cfg).unwrap();
        prop_assume!(energy_plus(&b.system.lagrangian, &pair).unwrap().abs() > 1e-3);
        let traj = match simulate(&b.system, &pair, 30, &cfg) {
            Ok(t) => t,
            Err(f) => {
                prop_assert!(f.error.is_step_failure(), "{f}");
                f.partial.unwrap()
            }
        };
        prop_assert!(traj.is_time_monotone());
        prop_assert!(traj.diagnostics.iter().all(|d| d.constraint_residual <= cfg.tol));
        prop_assert!(traj.max_energy_drift() <= 10.0 * cfg.tol * traj.diagnostics[0].e_plus.abs().max(1.0));
    }

    #[test]
    fn oracle_respects_the_constraints(v in prop::collection::vec(-1.0..1.0f64, 4)) {
        let b = system("rolling_disk");
        let q = b.default_initial.q.clone();
        let v = b.continuous.project_velocity(0.0, &q, &Vector::from_vec(v)).unwrap();
        let dense = solve_reference(&b.continuous, &InitialState { t: 0.0, q, v }, 2.0, 1e-10).unwrap();
        prop_assert!(dense.max_constraint_residual(&b.continuous) <= 1e-10);
    }

    #[test]
    fn builtins_validate_under_any_seed(seed in any::<u64>()) {
        for b in nhvi_core::reference::builtin_systems() {
            let report = validate_system(&b.system, b.section.as_ref(), 20, seed).unwrap();
            prop_assert!(report.passed(), "{}: {:?}", b.name, report.failures().collect::<Vec<_>>());
        }
    }
}
