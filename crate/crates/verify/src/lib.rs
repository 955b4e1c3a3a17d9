//! The acceptance criteria of the integrators, each as a function returning a
//! verdict with the measured numbers.

use std::collections::BTreeMap;

use nhvi_core::chaplygin::{build_chaplygin, project_and_compare, GroupOps};
use nhvi_core::geometry::{
    momentum_equation_residual, nonholonomic_momentum, random_admissible_pairs, symplectic_evolution_residual,
};
use nhvi_core::reference::{builtin, builtin_systems, convergence_study, BuiltinSystem, InitialState};
use nhvi_core::stepper::{simulate, step_edel, step_edla, SimulationFailure};
use nhvi_core::validate::random_pairs;
use nhvi_core::{Error, ExtendedPair, SectionSpec, SolverConfig, Trajectory, Vector};

pub const ENERGY_STEPS: usize = 10_000;
pub const ENERGY_TOL: f64 = 1e-10;
pub const NONAUTONOMOUS_STEPS: usize = 1_000;
pub const NONAUTONOMOUS_MIN_DRIFT: f64 = 1e-6;
pub const MOMENTUM_TRANSITIONS: usize = 100;
pub const MOMENTUM_TOL: f64 = 1e-10;
pub const HORIZONTAL_STEPS: usize = 1_000;
pub const HORIZONTAL_TOL: f64 = 1e-10;
pub const SYMPLECTIC_PAIRS: usize = 10;
pub const SYMPLECTIC_TOL: f64 = 1e-4;
pub const SYMPLECTIC_TOL_UNCONSTRAINED: f64 = 1e-5;
pub const COHERENCE_STEPS: usize = 100;
pub const ENERGY_IDENTITY_TOL: f64 = 1e-12;
pub const PROJECTION_STEPS: usize = 200;
pub const PROJECTION_TOL: f64 = 1e-9;
pub const LADDER: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
pub const CONVERGENCE_HORIZON: f64 = 2.0;
pub const SLOPE_TARGET: f64 = 2.0;
pub const SLOPE_BAND: f64 = 0.2;

/// Verdict of one criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    /// One entry per system or sub-check.
    pub details: Vec<String>,
}

impl Verdict {
    fn new(id: usize, title: &'static str) -> Self {
        Self {
            id,
            title,
            passed: true,
            details: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, detail: String) {
        self.details.push(format!("skip {detail}"));
    }
}

fn system(name: &str) -> BuiltinSystem {
    builtin(name, &BTreeMap::new()).expect("built-in system")
}

fn state(q: &[f64], v: &[f64]) -> InitialState {
    InitialState {
        t: 0.0,
        q: Vector::from_column_slice(q),
        v: Vector::from_column_slice(v),
    }
}

fn run(b: &BuiltinSystem, init: &InitialState, h: f64, steps: usize, cfg: &SolverConfig) -> Result<Trajectory, String> {
    let pair = b.initial_pair(init, h, cfg).map_err(|e| format!("initial pair: {e}"))?;
    simulate(&b.system, &pair, steps, cfg).map_err(|f: SimulationFailure| {
        let drift = f.partial.as_ref().map_or(0.0, |t| t.max_energy_drift());
        format!("{f} (energy drift {drift:.2e} before the failure)")
    })
}

/// Energy conservation over 10,000 steps for the nonholonomic particle and
/// the rolling disk.
pub fn energy_conservation() -> Verdict {
    let mut v = Verdict::new(1, "energy conservation, 10,000 steps");
    let cfg = SolverConfig::default().with_tol(1e-12);
    for name in ["nonholonomic_particle", "rolling_disk"] {
        let b = system(name);
        match run(&b, &b.default_initial, b.default_step, ENERGY_STEPS, &cfg) {
            Ok(t) => {
                let e0 = t.diagnostics[0].e_plus;
                let drift = t.max_energy_drift();
                v.record(
                    e0.abs() >= 0.1 && drift <= ENERGY_TOL,
                    format!("{name}: |E+_0| = {:.3}, max drift {drift:.2e} (limit {ENERGY_TOL:.0e})", e0.abs()),
                );
            }
            Err(e) => v.record(false, format!("{name}: {e}")),
        }
    }
    v
}

/// The forced oscillator has no time symmetry, so its energy must drift.
pub fn nonautonomous_contrast() -> Verdict {
    let mut v = Verdict::new(2, "nonautonomous energy drift");
    let b = system("forced_oscillator");
    match run(&b, &b.default_initial, b.default_step, NONAUTONOMOUS_STEPS, &SolverConfig::default()) {
        Ok(t) => {
            let drift = t.max_energy_drift();
            v.record(
                drift > NONAUTONOMOUS_MIN_DRIFT,
                format!("forced_oscillator: drift {drift:.3e} over {NONAUTONOMOUS_STEPS} steps (must exceed {NONAUTONOMOUS_MIN_DRIFT:.0e})"),
            );
        }
        Err(e) => v.record(false, format!("forced_oscillator: {e}")),
    }
    v
}

/// Momentum equation along 100 consecutive solution pairs of the particle
/// with section `(1, y)`.
pub fn momentum_equation() -> Verdict {
    let mut v = Verdict::new(3, "discrete momentum equation");
    let b = system("nonholonomic_particle");
    let (Some(action), Some(section)) = (&b.system.action, &b.section) else {
        v.record(false, "particle lacks its action or section".into());
        return v;
    };
    let cfg = SolverConfig::default();
    let traj = match run(&b, &b.default_initial, b.default_step, MOMENTUM_TRANSITIONS, &cfg) {
        Ok(t) => t,
        Err(e) => {
            v.record(false, e);
            return v;
        }
    };
    let pairs: Vec<ExtendedPair> = traj.pairs().collect();
    let mut worst: f64 = 0.0;
    for w in pairs.windows(2) {
        match momentum_equation_residual(&b.system, action, &w[0], &w[1], section) {
            Ok(r) => worst = worst.max(r),
            Err(e) => {
                v.record(false, format!("residual evaluation failed: {e}"));
                return v;
            }
        }
    }
    v.record(
        pairs.len() - 1 == MOMENTUM_TRANSITIONS && worst <= MOMENTUM_TOL,
        format!("nonholonomic_particle: {} transitions, worst residual {worst:.2e} (limit {MOMENTUM_TOL:.0e})", pairs.len() - 1),
    );
    v
}

/// Initial data of the horizontal-symmetry run: a slow sideways drift keeps
/// the step equations well conditioned over the whole run.
pub fn horizontal_initial_state() -> InitialState {
    state(&[0.0, 0.0, 0.0, 0.0], &[0.55, 0.02, 0.0, 0.3])
}

/// Momentum of the horizontal symmetry of the cyclic particle over 1,000
/// steps.
pub fn horizontal_symmetry() -> Verdict {
    let mut v = Verdict::new(4, "horizontal symmetry conservation");
    let b = system("nonholonomic_particle_cyclic");
    let action = b.system.action.as_ref().expect("cyclic particle has an action");
    let traj = match run(&b, &horizontal_initial_state(), 0.1, HORIZONTAL_STEPS, &SolverConfig::default()) {
        Ok(t) => t,
        Err(e) => {
            v.record(false, format!("nonholonomic_particle_cyclic: {e}"));
            return v;
        }
    };
    for xi in &b.horizontal_symmetries {
        let section = SectionSpec::constant(xi.clone());
        let values: Result<Vec<f64>, Error> =
            traj.pairs().map(|p| nonholonomic_momentum(&b.system, action, &p, &section)).collect();
        match values {
            Ok(j) => {
                let spread = j.iter().map(|x| (x - j[0]).abs()).fold(0.0, f64::max);
                v.record(
                    spread <= HORIZONTAL_TOL,
                    format!(
                        "direction {:?}: momentum {:.6} varies by {spread:.2e} over {HORIZONTAL_STEPS} steps (limit {HORIZONTAL_TOL:.0e})",
                        xi.as_slice(),
                        j[0]
                    ),
                );
            }
            Err(e) => v.record(false, format!("momentum evaluation failed: {e}")),
        }
    }
    if b.horizontal_symmetries.is_empty() {
        v.record(false, "no horizontal symmetry registered".into());
    }
    v
}

/// `Φ*Ω = Ω + dβ_d` at random admissible pairs.
pub fn symplectic_law() -> Verdict {
    let mut v = Verdict::new(5, "symplectic evolution law");
    let cfg = SolverConfig::default();
    for (name, tol) in [("nonholonomic_particle", SYMPLECTIC_TOL), ("harmonic_oscillator", SYMPLECTIC_TOL_UNCONSTRAINED)] {
        let b = system(name);
        let pairs = match random_admissible_pairs(&b.system, SYMPLECTIC_PAIRS, 0, &cfg) {
            Ok(p) => p,
            Err(e) => {
                v.record(false, format!("{name}: {e}"));
                continue;
            }
        };
        let r: Result<Vec<f64>, Error> =
            pairs.iter().map(|p| symplectic_evolution_residual(&b.system, p, &cfg)).collect();
        match r {
            Ok(r) => {
                let worst = r.into_iter().fold(0.0, f64::max);
                v.record(
                    worst <= tol,
                    format!("{name}: worst residual {worst:.2e} at {SYMPLECTIC_PAIRS} random pairs (limit {tol:.0e})"),
                );
            }
            Err(e) => v.record(false, format!("{name}: {e}")),
        }
    }
    v
}

/// Unconstrained EDLA steps are the EDEL steps bit for bit, and the energy
/// identity `E+_{k-1,k} = E-_{k,k+1}` holds along runs of every system.
pub fn stepper_coherence() -> Verdict {
    let mut v = Verdict::new(6, "EDEL/EDLA coherence and energy identity");
    let cfg = SolverConfig::default();
    let mut compared = 0;
    let mut identical = 0;
    for (name, count) in [("harmonic_oscillator", 40), ("forced_oscillator", 40), ("free_particle", 20)] {
        let b = system(name);
        for pair in random_pairs(b.system.dim(), count, 11) {
            let a = step_edla(&b.system, &pair, &cfg);
            let e = step_edel(&b.system.lagrangian, &pair, &cfg);
            compared += 1;
            let same = match (&a, &e) {
                (Ok(x), Ok(y)) => {
                    x.next.t.to_bits() == y.next.t.to_bits()
                        && x.next.q.iter().zip(y.next.q.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
                        && x.iterations == y.iterations
                        && x.residual_norm.to_bits() == y.residual_norm.to_bits()
                }
                (Err(x), Err(y)) => x == y,
                _ => false,
            };
            identical += usize::from(same);
        }
    }
    v.record(
        identical == compared,
        format!("m = 0: {identical} of {compared} random steps bitwise identical"),
    );

    for b in builtin_systems() {
        let traj = match b.default_pair(&cfg).map_err(|e| e.to_string()).and_then(|p| {
            simulate(&b.system, &p, COHERENCE_STEPS, &cfg).map_err(|f| f.to_string())
        }) {
            Ok(t) => t,
            Err(e) if e.contains("degenerate") && b.name == "free_particle" => {
                v.note(format!("{}: no step exists, the step equations are degenerate ({e})", b.name));
                continue;
            }
            Err(e) => {
                v.record(false, format!("{}: {e}", b.name));
                continue;
            }
        };
        let worst = traj
            .diagnostics
            .windows(2)
            .map(|d| (d[0].e_plus - d[1].e_minus).abs())
            .fold(0.0, f64::max);
        v.record(
            worst <= ENERGY_IDENTITY_TOL,
            format!("{}: max |E+(k-1,k) - E-(k,k+1)| {worst:.2e} over {COHERENCE_STEPS} steps (limit {ENERGY_IDENTITY_TOL:.0e})", b.name),
        );
    }
    v
}

/// Rolling disk: projected unreduced run against the reduced run, and
/// constancy of the reduced rates.
pub fn chaplygin_projection() -> Verdict {
    let mut v = Verdict::new(7, "Chaplygin projection");
    let b = system("rolling_disk");
    let cfg = SolverConfig::default();
    let chart = b.chaplygin_chart.clone().expect("disk has a chart");
    let spec = match build_chaplygin(&b.system, chart.clone(), GroupOps::abelian(chart.group_dim())) {
        Ok(s) => s,
        Err(e) => {
            v.record(false, format!("reduction failed: {e}"));
            return v;
        }
    };
    let traj = match run(&b, &b.default_initial, b.default_step, PROJECTION_STEPS, &cfg) {
        Ok(t) => t,
        Err(e) => {
            v.record(false, e);
            return v;
        }
    };
    let report = match project_and_compare(&spec, &traj, &cfg) {
        Ok(r) => r,
        Err(e) => {
            v.record(false, format!("reduced run failed: {e}"));
            return v;
        }
    };
    v.record(
        report.max_deviation <= PROJECTION_TOL,
        format!("max base deviation {:.2e} over {PROJECTION_STEPS} steps (limit {PROJECTION_TOL:.0e})", report.max_deviation),
    );
    let rates: Vec<Vector> = report
        .reduced
        .pairs()
        .map(|p| (&p.p1.q - &p.p0.q) / p.interval())
        .collect();
    let spread = rates.iter().map(|r| (r - &rates[0]).amax()).fold(0.0, f64::max);
    v.record(
        spread <= PROJECTION_TOL,
        format!("reduced rates {:?} vary by {spread:.2e} (limit {PROJECTION_TOL:.0e})", rates[0].as_slice()),
    );
    v
}

/// Global error slope against the reference oracle.
pub fn convergence() -> Verdict {
    let mut v = Verdict::new(8, "second-order convergence");
    let cfg = SolverConfig::default();
    for name in ["harmonic_oscillator", "nonholonomic_particle"] {
        let b = system(name);
        match convergence_study(&b, &b.default_initial, &LADDER, CONVERGENCE_HORIZON, &cfg) {
            Ok(r) => {
                let errors: Vec<String> = r.rungs.iter().map(|g| format!("{:.2e}", g.error)).collect();
                v.record(
                    (r.slope - SLOPE_TARGET).abs() <= SLOPE_BAND,
                    format!("{name}: slope {:.4} (errors {})", r.slope, errors.join(", ")),
                );
            }
            Err(e) => v.record(false, format!("{name}: {e}")),
        }
    }
    v
}

/// The free particle's step equations do not determine the time step.
pub fn degeneracy_detection() -> Verdict {
    let mut v = Verdict::new(9, "degeneracy detection");
    let b = system("free_particle");
    let cfg = SolverConfig::default();
    let pair = ExtendedPair::from_slices(0.0, &[0.0], 1.0, &[1.0]).expect("valid pair");
    match step_edel(&b.system.lagrangian, &pair, &cfg) {
        Err(Error::Degenerate { reason, .. }) => v.record(true, format!("pair (0, 0, 1, 1): {reason}")),
        Err(e) => v.record(false, format!("pair (0, 0, 1, 1): wrong error {e}")),
        Ok(s) => v.record(false, format!("pair (0, 0, 1, 1): returned t2 = {}", s.next.t)),
    }
    let pairs = random_pairs(1, 50, 5);
    let flagged = pairs
        .iter()
        .filter(|p| matches!(step_edel(&b.system.lagrangian, p, &cfg), Err(Error::Degenerate { .. })))
        .count();
    v.record(flagged == pairs.len(), format!("{flagged} of {} random pairs reported degenerate", pairs.len()));
    v
}

/// Simulation CSV and check report of one configuration, produced through the
/// command-line library.
pub fn cli_outputs(config_json: &str, seed: u64) -> Result<(Vec<u8>, String), String> {
    use nhvi_cli::commands::{parse_properties, run_checks};
    use nhvi_cli::output::write_trajectory;
    let cfg = nhvi_cli::config::parse(config_json)
        .and_then(|c| c.resolve())
        .map_err(|e| e.to_string())?;
    let pair = cfg.initial_pair().map_err(|e| e.to_string())?;
    let traj = simulate(&cfg.builtin.system, &pair, cfg.steps, &cfg.solver).map_err(|f| f.to_string())?;
    let mut csv = Vec::new();
    write_trajectory(&mut csv, &cfg.builtin.system, &traj).map_err(|e| e.to_string())?;
    let props = parse_properties(&["symplectic".to_string()]).map_err(|e| e.to_string())?;
    let report: Vec<String> = run_checks(&cfg, &props, seed).iter().map(|o| o.to_string()).collect();
    Ok((csv, report.join("\n")))
}

/// Two runs of the same configuration and seed give identical bytes.
pub fn determinism() -> Verdict {
    let mut v = Verdict::new(10, "deterministic CSV output");
    for name in ["nonholonomic_particle", "rolling_disk"] {
        let config = format!(r#"{{"system": {{"name": "{name}"}}, "run": {{"steps": 100}}}}"#);
        match (cli_outputs(&config, 0), cli_outputs(&config, 0)) {
            (Ok(a), Ok(b)) => v.record(
                a == b,
                format!("{name}: {} CSV bytes and check report identical across runs: {}", a.0.len(), a == b),
            ),
            (Err(e), _) | (_, Err(e)) => v.record(false, format!("{name}: {e}")),
        }
    }
    v
}

/// Every criterion, in order.
pub fn all() -> Vec<fn() -> Verdict> {
    vec![
        energy_conservation,
        nonautonomous_contrast,
        momentum_equation,
        horizontal_symmetry,
        symplectic_law,
        stepper_coherence,
        chaplygin_projection,
        convergence,
        degeneracy_detection,
        determinism,
    ]
}
