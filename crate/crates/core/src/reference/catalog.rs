//! Built-in example systems, each with a discrete (midpoint) model, its
//! continuous counterpart for the oracle, and default initial data.

use std::collections::BTreeMap;

use crate::chaplygin::ChaplyginChart;
use crate::discretize::{midpoint_constraints, midpoint_lagrangian, ContinuousConstraints};
use crate::error::{Error, Result};
use crate::reference::oracle::{solve_reference, ContinuousSystem, InitialState, KnownInvariant};
use crate::stepper::project_to_constraints;
use crate::types::{
    ExtendedPair, ExtendedPoint, GroupActionSpec, Matrix, NonholonomicSystem, SectionSpec, SolverConfig, Vector,
};

pub const FREE_PARTICLE: &str = "free_particle";
pub const HARMONIC_OSCILLATOR: &str = "harmonic_oscillator";
pub const FORCED_OSCILLATOR: &str = "forced_oscillator";
pub const NONHOLONOMIC_PARTICLE: &str = "nonholonomic_particle";
pub const NONHOLONOMIC_PARTICLE_CYCLIC: &str = "nonholonomic_particle_cyclic";
pub const ROLLING_DISK: &str = "rolling_disk";

/// Catalog names in catalog order.
pub const BUILTIN_NAMES: [&str; 6] = [
    FREE_PARTICLE,
    HARMONIC_OSCILLATOR,
    FORCED_OSCILLATOR,
    NONHOLONOMIC_PARTICLE,
    NONHOLONOMIC_PARTICLE_CYCLIC,
    ROLLING_DISK,
];

#[derive(Debug, Clone)]
pub struct BuiltinSystem {
    pub name: &'static str,
    /// Which structural property the system is meant to exercise.
    pub exercises: &'static str,
    pub system: NonholonomicSystem,
    pub continuous: ContinuousSystem,
    /// A section of the compatible symmetry directions, when one is known.
    pub section: Option<SectionSpec>,
    /// Algebra elements whose generators lie in the constraint distribution.
    pub horizontal_symmetries: Vec<Vector>,
    pub chaplygin_chart: Option<ChaplyginChart>,
    pub params: BTreeMap<String, f64>,
    pub default_initial: InitialState,
    pub default_step: f64,
}

impl BuiltinSystem {
    /// An admissible initial pair: `q1` from the oracle at `t0 + h`, then
    /// projected onto the discrete constraint set.
    pub fn initial_pair(&self, init: &InitialState, h: f64, cfg: &SolverConfig) -> Result<ExtendedPair> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step size must be positive (got {h})")));
        }
        let dense = solve_reference(&self.continuous, init, init.t + h, 1e-13)?;
        let q1 = dense.final_node().q.clone();
        let pair = ExtendedPair::new(ExtendedPoint::new(init.t, init.q.clone()), ExtendedPoint::new(init.t + h, q1))?;
        project_to_constraints(&self.system, &pair, cfg)
    }

    pub fn default_pair(&self, cfg: &SolverConfig) -> Result<ExtendedPair> {
        self.initial_pair(&self.default_initial, self.default_step, cfg)
    }
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn resolve(name: &str, defaults: &[(&str, f64)], given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = defaults.iter().map(|(k, x)| (k.to_string(), *x)).collect();
    for (k, x) in given {
        if !out.contains_key(k) {
            return Err(Error::Config(format!("unknown parameter '{k}' for system '{name}'")));
        }
        if !x.is_finite() {
            return Err(Error::Config(format!("parameter '{k}' must be finite")));
        }
        out.insert(k.clone(), *x);
    }
    Ok(out)
}

fn energy_invariant(cs: &ContinuousSystem, conserved: bool) -> KnownInvariant {
    let c = cs.clone();
    KnownInvariant::new("energy", conserved, move |t, q, v| c.energy(t, q, v))
}

fn discrete(cs: &ContinuousSystem, autonomous: bool) -> Result<NonholonomicSystem> {
    let ld = midpoint_lagrangian(&cs.lagrangian);
    let c = cs.constraints.as_ref().map(midpoint_constraints);
    Ok(NonholonomicSystem::new(ld, c)?.autonomous(autonomous))
}

fn positive(p: &BTreeMap<String, f64>, keys: &[&str]) -> Result<()> {
    for k in keys {
        if !(p[*k] > 0.0) {
            return Err(Error::Config(format!("parameter '{k}' must be positive")));
        }
    }
    Ok(())
}

fn free_particle(given: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    let params = resolve(FREE_PARTICLE, &[("mass", 1.0)], given)?;
    positive(&params, &["mass"])?;
    let m = params["mass"];
    let cs = ContinuousSystem::natural(Matrix::from_element(1, 1, m), |_, _| 0.0, |_, _| Vector::zeros(1))?
        .with_potential_rate(|_, _| 0.0);
    let cs = cs.clone().with_invariant(energy_invariant(&cs, true));
    Ok(BuiltinSystem {
        name: FREE_PARTICLE,
        exercises: "degenerate time equation",
        system: discrete(&cs, true)?.with_action(GroupActionSpec::translation(1, vec![0]))?,
        continuous: cs,
        section: None,
        horizontal_symmetries: vec![v(&[1.0])],
        chaplygin_chart: None,
        params,
        default_initial: InitialState {
            t: 0.0,
            q: v(&[0.0]),
            v: v(&[1.0]),
        },
        default_step: 0.1,
    })
}

fn oscillator(given: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    let params = resolve(HARMONIC_OSCILLATOR, &[("mass", 1.0), ("stiffness", 1.0)], given)?;
    positive(&params, &["mass", "stiffness"])?;
    let (m, k) = (params["mass"], params["stiffness"]);
    let cs = ContinuousSystem::natural(
        Matrix::from_element(1, 1, m),
        move |_, q| 0.5 * k * q[0] * q[0],
        move |_, q| q * k,
    )?
    .with_potential_rate(|_, _| 0.0);
    let cs = cs.clone().with_invariant(energy_invariant(&cs, true));
    Ok(BuiltinSystem {
        name: HARMONIC_OSCILLATOR,
        exercises: "unconstrained stepping, symplecticity, autonomous energy",
        system: discrete(&cs, true)?,
        continuous: cs,
        section: None,
        horizontal_symmetries: Vec::new(),
        chaplygin_chart: None,
        params,
        default_initial: InitialState {
            t: 0.0,
            q: v(&[1.0]),
            v: v(&[0.0]),
        },
        default_step: 0.1,
    })
}

fn forced_oscillator(given: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    let params = resolve(FORCED_OSCILLATOR, &[("amplitude", 1.0)], given)?;
    let a = params["amplitude"];
    let cs = ContinuousSystem::natural(
        Matrix::identity(1, 1),
        move |t, q| 0.5 * q[0] * q[0] - a * q[0] * t.sin(),
        move |t, q| v(&[q[0] - a * t.sin()]),
    )?
    .with_potential_rate(move |t, q| -a * q[0] * t.cos());
    let cs = cs.clone().with_invariant(energy_invariant(&cs, false));
    Ok(BuiltinSystem {
        name: FORCED_OSCILLATOR,
        exercises: "time-dependent Lagrangian without energy conservation",
        system: discrete(&cs, false)?,
        continuous: cs,
        section: None,
        horizontal_symmetries: Vec::new(),
        chaplygin_chart: None,
        params,
        default_initial: InitialState {
            t: 0.0,
            q: v(&[1.0]),
            v: v(&[0.0]),
        },
        default_step: 0.1,
    })
}

/// `ω = dz - y dx` on `(x, y, z, ...)` padded with zeros to dimension `n`.
fn particle_constraints(n: usize) -> ContinuousConstraints {
    ContinuousConstraints::new(n, 1, move |_, q| {
        let mut w = Matrix::zeros(1, n);
        w[(0, 0)] = -q[1];
        w[(0, 2)] = 1.0;
        w
    })
    .with_time_derivative(move |_, _, qd| {
        let mut w = Matrix::zeros(1, n);
        w[(0, 0)] = -qd[1];
        w
    })
}

fn nonholonomic_particle(given: &BTreeMap<String, f64>, cyclic: bool) -> Result<BuiltinSystem> {
    let name = if cyclic { NONHOLONOMIC_PARTICLE_CYCLIC } else { NONHOLONOMIC_PARTICLE };
    let params = resolve(name, &[], given)?;
    let n = if cyclic { 4 } else { 3 };
    let cs = ContinuousSystem::natural(Matrix::identity(n, n), |_, _| 0.0, move |_, _| Vector::zeros(n))?
        .with_potential_rate(|_, _| 0.0)
        .with_constraints(particle_constraints(n))?;
    let cs = cs.clone().with_invariant(energy_invariant(&cs, true));
    let (coords, section, horizontal, initial) = if cyclic {
        (
            vec![0, 2, 3],
            SectionSpec::new(3, |p| v(&[1.0, p.q[1], 0.0])),
            vec![v(&[0.0, 0.0, 1.0])],
            v(&[0.4, 0.4, 0.0, 0.3]),
        )
    } else {
        (vec![0, 2], SectionSpec::new(2, |p| v(&[1.0, p.q[1]])), Vec::new(), v(&[0.4, 0.4, 0.0]))
    };
    Ok(BuiltinSystem {
        name,
        exercises: if cyclic {
            "horizontal symmetry conservation"
        } else {
            "constrained stepping and the nonholonomic momentum equation"
        },
        system: discrete(&cs, true)?.with_action(GroupActionSpec::translation(n, coords))?,
        continuous: cs,
        section: Some(section),
        horizontal_symmetries: horizontal,
        chaplygin_chart: None,
        params,
        default_initial: InitialState {
            t: 0.0,
            q: Vector::zeros(n),
            v: initial,
        },
        default_step: 0.1,
    })
}

fn rolling_disk(given: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    let params = resolve(
        ROLLING_DISK,
        &[("mass", 1.0), ("inertia", 1.0), ("spin_inertia", 1.0), ("radius", 1.0)],
        given,
    )?;
    positive(&params, &["mass", "inertia", "spin_inertia", "radius"])?;
    let (m, i, j, r) = (params["mass"], params["inertia"], params["spin_inertia"], params["radius"]);
    let mass = Matrix::from_diagonal(&v(&[m, m, i, j]));
    let constraints = ContinuousConstraints::new(4, 2, move |_, q| {
        let (c, s) = (q[3].cos(), q[3].sin());
        Matrix::from_row_slice(2, 4, &[1.0, 0.0, -r * c, 0.0, 0.0, 1.0, -r * s, 0.0])
    })
    .with_time_derivative(move |_, q, qd| {
        let (c, s) = (q[3].cos(), q[3].sin());
        let w = qd[3];
        Matrix::from_row_slice(2, 4, &[0.0, 0.0, r * s * w, 0.0, 0.0, 0.0, -r * c * w, 0.0])
    });
    let cs = ContinuousSystem::natural(mass, |_, _| 0.0, |_, _| Vector::zeros(4))?
        .with_potential_rate(|_, _| 0.0)
        .with_constraints(constraints)?;
    let cs = cs
        .clone()
        .with_invariant(energy_invariant(&cs, true))
        .with_invariant(KnownInvariant::new("roll_rate", true, |_, _, qd| qd[2]))
        .with_invariant(KnownInvariant::new("turn_rate", true, |_, _, qd| qd[3]));
    let rate = 0.3;
    Ok(BuiltinSystem {
        name: ROLLING_DISK,
        exercises: "Chaplygin reduction and constrained energy conservation",
        system: discrete(&cs, true)?.with_action(GroupActionSpec::translation(4, vec![0, 1]))?,
        continuous: cs,
        section: None,
        horizontal_symmetries: Vec::new(),
        chaplygin_chart: Some(ChaplyginChart::new(4, vec![0, 1])?),
        params,
        default_initial: InitialState {
            t: 0.0,
            q: Vector::zeros(4),
            v: v(&[r * rate, 0.0, rate, rate]),
        },
        default_step: 0.1,
    })
}

/// A built-in system by name with parameter overrides.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<BuiltinSystem> {
    match name {
        FREE_PARTICLE => free_particle(params),
        HARMONIC_OSCILLATOR => oscillator(params),
        FORCED_OSCILLATOR => forced_oscillator(params),
        NONHOLONOMIC_PARTICLE => nonholonomic_particle(params, false),
        NONHOLONOMIC_PARTICLE_CYCLIC => nonholonomic_particle(params, true),
        ROLLING_DISK => rolling_disk(params),
        other => Err(Error::Config(format!(
            "unknown system '{other}' (expected one of {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// All built-in systems with default parameters, in catalog order.
pub fn builtin_systems() -> Vec<BuiltinSystem> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n, &BTreeMap::new()).expect("default parameters are valid"))
        .collect()
}
