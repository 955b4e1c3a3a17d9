//! Run configuration: a JSON document with `system`, `initial`, `solver` and
//! `run` sections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use nhvi_core::reference::{builtin, BuiltinSystem, InitialState};
use nhvi_core::{Error, ExtendedPair, GuessMode, SolverConfig};

pub const DEFAULT_LADDER: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
pub const DEFAULT_T_FINAL: f64 = 2.0;
pub const DEFAULT_SLOPE_BAND: [f64; 2] = [1.8, 2.2];
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SAMPLES: usize = 10;

/// A configuration problem, carrying the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Either an explicit pair (`t0`, `q0`, `t1`, `q1`) or a continuous state
/// (`t`, `q`, `v`) with a first step `h`. Omitted state fields fall back to
/// the system defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub t0: Option<f64>,
    pub q0: Option<Vec<f64>>,
    pub t1: Option<f64>,
    pub q1: Option<Vec<f64>>,
    pub t: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub min_step: Option<f64>,
    pub fd_step_scale: Option<f64>,
    pub guess_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub steps: Option<usize>,
    pub properties: Option<Vec<String>>,
    pub samples: Option<usize>,
    pub ladder: Option<Vec<f64>>,
    pub t_final: Option<f64>,
    pub slope_band: Option<[f64; 2]>,
}

/// Where the first pair comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Pair(ExtendedPair),
    State { state: InitialState, h: f64 },
}

/// A configuration with every default filled in and every field checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub builtin: BuiltinSystem,
    pub initial: InitialData,
    pub solver: SolverConfig,
    pub steps: usize,
    pub properties: Option<Vec<String>>,
    pub samples: usize,
    pub ladder: Vec<f64>,
    pub t_final: f64,
    pub slope_band: [f64; 2],
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { String::new() } else { field };
        ConfigError::new(field, e.into_inner().to_string())
    })
}

pub fn load(path: &Path) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)?.resolve()
}

fn finite(field: &str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::new(field, "must be finite"))
    }
}

fn vector(field: &str, xs: &[f64], n: usize) -> Result<DVector<f64>, ConfigError> {
    if xs.len() != n {
        return Err(ConfigError::new(field, format!("expected {n} entries, found {}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(ConfigError::new(field, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(xs))
}

fn core_config_error(field: &str, e: Error) -> ConfigError {
    match e {
        Error::Config(msg) => ConfigError::new(field, msg),
        other => ConfigError::new(field, other.to_string()),
    }
}

impl Config {
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let builtin = builtin(&self.system.name, &self.system.params).map_err(|e| {
            let field = if matches!(&e, Error::Config(m) if m.contains("param")) {
                "system.params"
            } else {
                "system.name"
            };
            core_config_error(field, e)
        })?;
        let solver = self.solver.resolve()?;
        let initial = self.initial.resolve(&builtin)?;
        let run = &self.run;
        let samples = run.samples.unwrap_or(DEFAULT_SAMPLES);
        if samples == 0 {
            return Err(ConfigError::new("run.samples", "must be at least 1"));
        }
        let ladder = run.ladder.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec());
        if let Some(bad) = ladder.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(ConfigError::new("run.ladder", format!("step sizes must be positive (got {bad})")));
        }
        let t_final = finite("run.t_final", run.t_final.unwrap_or(DEFAULT_T_FINAL))?;
        let slope_band = run.slope_band.unwrap_or(DEFAULT_SLOPE_BAND);
        if !(slope_band[0].is_finite() && slope_band[1].is_finite() && slope_band[0] <= slope_band[1]) {
            return Err(ConfigError::new("run.slope_band", "expected [low, high] with low <= high"));
        }
        Ok(Resolved {
            builtin,
            initial,
            solver,
            steps: run.steps.unwrap_or(DEFAULT_STEPS),
            properties: run.properties.clone(),
            samples,
            ladder,
            t_final,
            slope_band,
        })
    }
}

impl SolverSection {
    pub fn resolve(&self) -> Result<SolverConfig, ConfigError> {
        let mut cfg = SolverConfig::default();
        if let Some(x) = self.tol {
            cfg.tol = x;
        }
        if let Some(x) = self.max_iter {
            cfg.max_iter = x;
        }
        if let Some(x) = self.damping {
            cfg.damping = x;
        }
        if let Some(x) = self.min_step {
            cfg.min_step = x;
        }
        if let Some(x) = self.fd_step_scale {
            cfg.fd_step_scale = x;
        }
        if let Some(mode) = &self.guess_mode {
            cfg.guess_mode = match mode.as_str() {
                "linear-extrapolation" => GuessMode::LinearExtrapolation,
                "copy-previous" => GuessMode::CopyPrevious,
                other => {
                    return Err(ConfigError::new(
                        "solver.guess_mode",
                        format!("unknown mode {other:?} (expected linear-extrapolation or copy-previous)"),
                    ))
                }
            };
        }
        cfg.validate().map_err(|e| match e {
            // Core messages already name the solver field.
            Error::Config(msg) => match msg.split_once(' ') {
                Some((field, rest)) if field.starts_with("solver.") => ConfigError::new(field, rest),
                _ => ConfigError::new("solver", msg),
            },
            other => ConfigError::new("solver", other.to_string()),
        })?;
        Ok(cfg)
    }
}

impl InitialSection {
    fn pair_mode(&self) -> bool {
        self.t0.is_some() || self.q0.is_some() || self.t1.is_some() || self.q1.is_some()
    }

    pub fn resolve(&self, b: &BuiltinSystem) -> Result<InitialData, ConfigError> {
        let n = b.system.dim();
        if self.pair_mode() {
            for (name, set) in [("t", self.t.is_some()), ("q", self.q.is_some()), ("v", self.v.is_some()), ("h", self.h.is_some())] {
                if set {
                    return Err(ConfigError::new(
                        format!("initial.{name}"),
                        "cannot be combined with an explicit pair (t0, q0, t1, q1)",
                    ));
                }
            }
            let t0 = finite("initial.t0", self.t0.ok_or_else(|| ConfigError::new("initial.t0", "missing"))?)?;
            let t1 = finite("initial.t1", self.t1.ok_or_else(|| ConfigError::new("initial.t1", "missing"))?)?;
            let q0 = vector("initial.q0", self.q0.as_deref().ok_or_else(|| ConfigError::new("initial.q0", "missing"))?, n)?;
            let q1 = vector("initial.q1", self.q1.as_deref().ok_or_else(|| ConfigError::new("initial.q1", "missing"))?, n)?;
            if !(t1 > t0) {
                return Err(ConfigError::new("initial.t1", format!("must exceed initial.t0 (got t0 = {t0}, t1 = {t1})")));
            }
            let pair = ExtendedPair::new(nhvi_core::ExtendedPoint::new(t0, q0), nhvi_core::ExtendedPoint::new(t1, q1))
                .map_err(|e| core_config_error("initial", e))?;
            return Ok(InitialData::Pair(pair));
        }
        let d = &b.default_initial;
        let t = finite("initial.t", self.t.unwrap_or(d.t))?;
        let q = match &self.q {
            Some(q) => vector("initial.q", q, n)?,
            None => d.q.clone(),
        };
        let v = match &self.v {
            Some(v) => vector("initial.v", v, n)?,
            None => d.v.clone(),
        };
        let h = finite("initial.h", self.h.unwrap_or(b.default_step))?;
        if !(h > 0.0) {
            return Err(ConfigError::new("initial.h", format!("must be positive (got {h})")));
        }
        Ok(InitialData::State {
            state: InitialState { t, q, v },
            h,
        })
    }
}

impl Resolved {
    /// The continuous state, when the configuration gives one.
    pub fn initial_state(&self) -> Option<&InitialState> {
        match &self.initial {
            InitialData::State { state, .. } => Some(state),
            InitialData::Pair(_) => None,
        }
    }

    /// The first pair: taken as given, or built from the continuous state.
    /// Errors are core errors so the caller can map oracle failures.
    pub fn initial_pair(&self) -> nhvi_core::Result<ExtendedPair> {
        match &self.initial {
            InitialData::Pair(p) => Ok(p.clone()),
            InitialData::State { state, h } => self.builtin.initial_pair(state, *h, &self.solver),
        }
    }
}
