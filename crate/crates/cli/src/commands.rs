use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nhvi_core::chaplygin::{build_chaplygin, project_and_compare, GroupOps};
use nhvi_core::geometry::{
    momentum_equation_residual, nonholonomic_momentum, random_admissible_pairs, symplectic_evolution_residual,
};
use nhvi_core::reference::convergence_study;
use nhvi_core::stepper::{simulate as run_steps, SimulationFailure};
use nhvi_core::{Error, SectionSpec, Trajectory};

use crate::config::{self, ConfigError, Resolved};
use crate::output::{write_rungs, write_trajectory};
use crate::{EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, EXIT_STEP};

pub const ENERGY_TOL: f64 = 1e-10;
pub const MOMENTUM_TOL: f64 = 1e-10;
pub const HORIZONTAL_TOL: f64 = 1e-10;
pub const SYMPLECTIC_TOL: f64 = 1e-4;
pub const SYMPLECTIC_TOL_UNCONSTRAINED: f64 = 1e-5;
pub const PROJECTION_TOL: f64 = 1e-9;

/// Exit code for a core error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Oracle(_) => EXIT_ORACLE,
        e if e.is_step_failure() => EXIT_STEP,
        Error::NonFinite(_) => EXIT_STEP,
        _ => EXIT_CONFIG,
    }
}

fn config_failure(err: &mut dyn Write, e: &ConfigError) -> i32 {
    let _ = writeln!(err, "error: invalid configuration: {e}");
    EXIT_CONFIG
}

fn core_failure(err: &mut dyn Write, context: &str, e: &Error) -> i32 {
    let _ = writeln!(err, "error: {context}: {e}");
    exit_code(e)
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

/// `simulate`: runs `run.steps` constrained steps and writes the trajectory.
/// On a step failure the points computed so far are still written.
pub fn simulate(config_path: &Path, out_path: &Path, err: &mut dyn Write) -> i32 {
    let cfg = match config::load(config_path) {
        Ok(c) => c,
        Err(e) => return config_failure(err, &e),
    };
    let pair = match cfg.initial_pair() {
        Ok(p) => p,
        Err(e) => return core_failure(err, "initial pair", &e),
    };
    let sys = &cfg.builtin.system;
    let (traj, code) = match run_steps(sys, &pair, cfg.steps, &cfg.solver) {
        Ok(t) => (t, EXIT_OK),
        Err(SimulationFailure {
            error,
            step: Some(k),
            partial: Some(partial),
        }) => {
            let _ = writeln!(err, "error: step {k} failed: {error}");
            (partial, exit_code(&error).max(EXIT_STEP))
        }
        Err(f) => return core_failure(err, "initial pair", &f.error),
    };
    let written = create(out_path).map_err(csv::Error::from).and_then(|w| write_trajectory(w, sys, &traj));
    if let Err(e) = written {
        let _ = writeln!(err, "error: cannot write {}: {e}", out_path.display());
        return EXIT_CONFIG;
    }
    code
}

/// `compare`: convergence study over the configured step ladder; writes
/// `(h, error)` rows and prints the fitted slope.
pub fn compare(config_path: &Path, out_path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match config::load(config_path) {
        Ok(c) => c,
        Err(e) => return config_failure(err, &e),
    };
    let Some(state) = cfg.initial_state() else {
        let e = ConfigError::new("initial", "compare needs a continuous state (t, q, v), not an explicit pair");
        return config_failure(err, &e);
    };
    if cfg.ladder.len() < 2 {
        let e = ConfigError::new("run.ladder", "slope is undefined for fewer than two rungs");
        return config_failure(err, &e);
    }
    let report = match convergence_study(&cfg.builtin, state, &cfg.ladder, cfg.t_final, &cfg.solver) {
        Ok(r) => r,
        Err(e) => return core_failure(err, "convergence study", &e),
    };
    let written = create(out_path).map_err(csv::Error::from).and_then(|w| write_rungs(w, &report.rungs));
    if let Err(e) = written {
        let _ = writeln!(err, "error: cannot write {}: {e}", out_path.display());
        return EXIT_CONFIG;
    }
    let [lo, hi] = cfg.slope_band;
    let inside = report.slope >= lo && report.slope <= hi;
    let _ = writeln!(
        out,
        "slope {:.6} band [{lo}, {hi}] {}",
        report.slope,
        if inside { "PASS" } else { "FAIL" }
    );
    if inside {
        EXIT_OK
    } else {
        EXIT_CHECK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Energy,
    MomentumEq,
    Horizontal,
    Symplectic,
    ChaplyginProjection,
    Convergence,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Energy,
        Property::MomentumEq,
        Property::Horizontal,
        Property::Symplectic,
        Property::ChaplyginProjection,
        Property::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Energy => "energy",
            Property::MomentumEq => "momentum-eq",
            Property::Horizontal => "horizontal",
            Property::Symplectic => "symplectic",
            Property::ChaplyginProjection => "chaplygin-projection",
            Property::Convergence => "convergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Parses a comma-separated property list; `all` selects every property.
/// The result is in canonical order without repeats.
pub fn parse_properties(list: &[String]) -> Result<Vec<Property>, ConfigError> {
    let mut out = Vec::new();
    for item in list.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            out.extend(Property::ALL);
            continue;
        }
        match Property::parse(item) {
            Some(p) => out.push(p),
            None => {
                let names: Vec<&str> = Property::ALL.iter().map(|p| p.name()).collect();
                return Err(ConfigError::new(
                    "properties",
                    format!("unknown property {item:?} (expected all or one of {})", names.join(", ")),
                ));
            }
        }
    }
    if out.is_empty() {
        return Err(ConfigError::new("properties", "no property selected"));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Pass,
    /// Failed; the exit code class of the failure.
    Fail(i32),
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub property: Property,
    pub status: Status,
    pub worst: Option<f64>,
    pub threshold: Option<f64>,
    pub note: String,
}

impl Outcome {
    fn skip(property: Property, reason: impl Into<String>) -> Self {
        Self {
            property,
            status: Status::Skip,
            worst: None,
            threshold: None,
            note: reason.into(),
        }
    }

    fn error(property: Property, e: &Error) -> Self {
        Self {
            property,
            status: Status::Fail(exit_code(e)),
            worst: None,
            threshold: None,
            note: e.to_string(),
        }
    }

    fn measured(property: Property, worst: f64, threshold: f64, note: impl Into<String>) -> Self {
        Self {
            property,
            status: if worst <= threshold { Status::Pass } else { Status::Fail(EXIT_CHECK) },
            worst: Some(worst),
            threshold: Some(threshold),
            note: note.into(),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail(_) => "FAIL",
            Status::Skip => "SKIP",
        };
        write!(f, "{:<21} {status}", self.property.name())?;
        if let (Some(w), Some(t)) = (self.worst, self.threshold) {
            write!(f, "  worst {w:.3e}  threshold {t:.1e}")?;
        }
        if !self.note.is_empty() {
            write!(f, "  ({})", self.note)?;
        }
        Ok(())
    }
}

/// Exit code for a set of outcomes: 0 when nothing failed, otherwise the
/// most specific failure class (step, then oracle, then threshold).
pub fn overall_code(outcomes: &[Outcome]) -> i32 {
    let fails: Vec<i32> = outcomes
        .iter()
        .filter_map(|o| match o.status {
            Status::Fail(c) => Some(c),
            _ => None,
        })
        .collect();
    [EXIT_STEP, EXIT_ORACLE, EXIT_CHECK]
        .into_iter()
        .find(|c| fails.contains(c))
        .unwrap_or(if fails.is_empty() { EXIT_OK } else { EXIT_CHECK })
}

/// Runs the selected property suites on the configured system.
pub fn run_checks(cfg: &Resolved, properties: &[Property], seed: u64) -> Vec<Outcome> {
    let needs_run = properties.iter().any(|p| {
        matches!(
            p,
            Property::Energy | Property::MomentumEq | Property::Horizontal | Property::ChaplyginProjection
        )
    });
    let run: Option<Result<Trajectory, (Option<usize>, Error)>> = needs_run.then(|| {
        let pair = cfg.initial_pair().map_err(|e| (None, e))?;
        run_steps(&cfg.builtin.system, &pair, cfg.steps, &cfg.solver).map_err(|f| (f.step, f.error))
    });
    properties
        .iter()
        .map(|&p| match p {
            Property::Symplectic => check_symplectic(cfg, seed),
            Property::Convergence => check_convergence(cfg),
            _ => match run.as_ref().expect("simulated above") {
                Ok(traj) => check_on_trajectory(cfg, p, traj),
                Err((step, e)) => {
                    let mut o = Outcome::error(p, e);
                    if let Some(k) = step {
                        o.note = format!("step {k} failed: {}", o.note);
                    }
                    o
                }
            },
        })
        .collect()
}

fn check_on_trajectory(cfg: &Resolved, p: Property, traj: &Trajectory) -> Outcome {
    let b = &cfg.builtin;
    let sys = &b.system;
    match p {
        Property::Energy => {
            let drift = traj.max_energy_drift();
            if sys.autonomous {
                Outcome::measured(p, drift, ENERGY_TOL, format!("{} steps", traj.len() - 2))
            } else {
                Outcome {
                    status: Status::Fail(EXIT_CHECK),
                    ..Outcome::measured(
                        p,
                        drift,
                        ENERGY_TOL,
                        "system is nonautonomous: no time-translation symmetry, so no conserved energy",
                    )
                }
            }
        }
        Property::MomentumEq => {
            let (Some(action), Some(section)) = (&sys.action, &b.section) else {
                return Outcome::skip(p, "no section of compatible symmetry directions for this system");
            };
            let pairs: Vec<_> = traj.pairs().collect();
            let mut worst: f64 = 0.0;
            for w in pairs.windows(2) {
                match momentum_equation_residual(sys, action, &w[0], &w[1], section) {
                    Ok(r) => worst = worst.max(r),
                    Err(e) => return Outcome::error(p, &e),
                }
            }
            Outcome::measured(p, worst, MOMENTUM_TOL, format!("{} pair transitions", pairs.len() - 1))
        }
        Property::Horizontal => {
            let Some(action) = &sys.action else {
                return Outcome::skip(p, "system has no symmetry action");
            };
            if b.horizontal_symmetries.is_empty() {
                return Outcome::skip(p, "no symmetry direction lies in the constraint distribution");
            }
            let mut worst: f64 = 0.0;
            for xi in &b.horizontal_symmetries {
                let section = SectionSpec::constant(xi.clone());
                let mut first = None;
                for pair in traj.pairs() {
                    let j = match nonholonomic_momentum(sys, action, &pair, &section) {
                        Ok(j) => j,
                        Err(e) => return Outcome::error(p, &e),
                    };
                    let j0 = *first.get_or_insert(j);
                    worst = worst.max((j - j0).abs());
                }
            }
            Outcome::measured(p, worst, HORIZONTAL_TOL, "max momentum change along the run")
        }
        Property::ChaplyginProjection => {
            let Some(chart) = &b.chaplygin_chart else {
                let reason = if b.section.is_some() || !b.horizontal_symmetries.is_empty() {
                    "not a Chaplygin system: symmetry directions meet the constraint distribution (g^D nontrivial)"
                } else {
                    "no principal bundle chart for this system"
                };
                return Outcome::skip(p, reason);
            };
            let ops = GroupOps::abelian(chart.group_dim());
            let spec = match build_chaplygin(sys, chart.clone(), ops) {
                Ok(s) => s,
                Err(e @ (Error::NotChaplygin(_) | Error::AssumptionViolation(_))) => return Outcome::skip(p, e.to_string()),
                Err(e) => return Outcome::error(p, &e),
            };
            match project_and_compare(&spec, traj, &cfg.solver) {
                Ok(r) => Outcome::measured(p, r.max_deviation, PROJECTION_TOL, "max base deviation from the reduced run"),
                Err(e) => Outcome::error(p, &e),
            }
        }
        Property::Symplectic | Property::Convergence => unreachable!("not a trajectory property"),
    }
}

fn check_symplectic(cfg: &Resolved, seed: u64) -> Outcome {
    let p = Property::Symplectic;
    let sys = &cfg.builtin.system;
    let threshold = if sys.constraint_count() > 0 {
        SYMPLECTIC_TOL
    } else {
        SYMPLECTIC_TOL_UNCONSTRAINED
    };
    let pairs = match random_admissible_pairs(sys, cfg.samples, seed, &cfg.solver) {
        Ok(p) => p,
        Err(Error::Degenerate { reason, .. }) => {
            return Outcome::skip(p, format!("step map is not well defined at sampled pairs: {reason}"))
        }
        Err(e) => return Outcome::error(p, &e),
    };
    let mut worst: f64 = 0.0;
    for pair in &pairs {
        match symplectic_evolution_residual(sys, pair, &cfg.solver) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return Outcome::error(p, &e),
        }
    }
    Outcome::measured(p, worst, threshold, format!("{} random admissible pairs", pairs.len()))
}

fn check_convergence(cfg: &Resolved) -> Outcome {
    let p = Property::Convergence;
    let Some(state) = cfg.initial_state() else {
        return Outcome::skip(p, "needs a continuous initial state (t, q, v), not an explicit pair");
    };
    let [lo, hi] = cfg.slope_band;
    match convergence_study(&cfg.builtin, state, &cfg.ladder, cfg.t_final, &cfg.solver) {
        Ok(r) => {
            let centre = 0.5 * (lo + hi);
            let dev = (r.slope - centre).abs();
            Outcome::measured(p, dev, 0.5 * (hi - lo), format!("slope {:.4}, band [{lo}, {hi}]", r.slope))
        }
        Err(Error::Config(msg)) => Outcome {
            status: Status::Fail(EXIT_CONFIG),
            ..Outcome::skip(p, msg)
        },
        Err(e) => Outcome::error(p, &e),
    }
}

/// `check`: runs the selected properties and prints one line per property.
pub fn check(config_path: &Path, properties: Option<&[String]>, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match config::load(config_path) {
        Ok(c) => c,
        Err(e) => return config_failure(err, &e),
    };
    let list: Vec<String> = match (properties, &cfg.properties) {
        (Some(l), _) => l.to_vec(),
        (None, Some(l)) => l.clone(),
        (None, None) => vec!["all".to_string()],
    };
    let selected = match parse_properties(&list) {
        Ok(s) => s,
        Err(e) => return config_failure(err, &e),
    };
    let outcomes = run_checks(&cfg, &selected, seed);
    let _ = writeln!(out, "system {} (seed {seed})", cfg.builtin.name);
    for o in &outcomes {
        let _ = writeln!(out, "{o}");
    }
    if outcomes.iter().any(|o| o.status == Status::Fail(EXIT_CONFIG)) {
        return EXIT_CONFIG;
    }
    overall_code(&outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_lists() {
        let l = |s: &str| parse_properties(&[s.to_string()]);
        assert_eq!(l("symplectic,energy").unwrap(), vec![Property::Energy, Property::Symplectic]);
        assert_eq!(l("all").unwrap().len(), 6);
        assert_eq!(l("energy, energy").unwrap(), vec![Property::Energy]);
        assert_eq!(l("volume").unwrap_err().field, "properties");
        assert!(l("").is_err());
    }

    #[test]
    fn overall_code_prefers_step_failures() {
        let o = |status| Outcome {
            property: Property::Energy,
            status,
            worst: None,
            threshold: None,
            note: String::new(),
        };
        assert_eq!(overall_code(&[o(Status::Pass), o(Status::Skip)]), EXIT_OK);
        assert_eq!(overall_code(&[o(Status::Fail(EXIT_CHECK)), o(Status::Fail(EXIT_STEP))]), EXIT_STEP);
        assert_eq!(overall_code(&[o(Status::Fail(EXIT_ORACLE))]), EXIT_ORACLE);
        assert_eq!(overall_code(&[o(Status::Fail(EXIT_CHECK))]), EXIT_CHECK);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Oracle("x".into())), EXIT_ORACLE);
        assert_eq!(exit_code(&Error::TimeCollapse { t_current: 1.0, t_next: 0.5 }), EXIT_STEP);
        assert_eq!(exit_code(&Error::Admissibility { residual: 1.0 }), EXIT_CONFIG);
    }
}
