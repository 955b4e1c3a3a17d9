//! Domain types shared by every module: points of the extended configuration
//! space, discrete Lagrangians, constraint sets, symmetry actions, solver
//! settings and trajectories.
//!
//! Configuration manifolds are represented in a single global chart; angles are
//! unwrapped reals. Constraint one-forms only carry their `Q` components since
//! the time component is identically zero for the constraints handled here.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::discretize::{fd_gradient_with_steps, FD_STEP_SCALE};
use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Smallest admissible `|t1 - t0|` for discrete Lagrangians built from
/// quadrature rules; the velocity `(q1 - q0)/(t1 - t0)` is singular below it.
pub const MIN_INTERVAL: f64 = 1e-10;

/// A point `(t, q)` of the extended configuration space.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedPoint {
    pub t: f64,
    pub q: Vector,
}

impl ExtendedPoint {
    pub fn new(t: f64, q: Vector) -> Self {
        Self { t, q }
    }

    pub fn from_slice(t: f64, q: &[f64]) -> Self {
        Self {
            t,
            q: Vector::from_column_slice(q),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().all(|x| x.is_finite())
    }

    pub fn time_shifted(&self, s: f64) -> Self {
        Self {
            t: self.t + s,
            q: self.q.clone(),
        }
    }

    /// Checks the point invariants (finite entries, non-empty configuration).
    pub fn check(&self) -> Result<()> {
        if self.q.is_empty() {
            return Err(Error::Config("configuration dimension must be at least 1".into()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("extended point"));
        }
        Ok(())
    }
}

/// A point `(t0, q0, t1, q1)` of the extended discrete state space.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedPair {
    pub p0: ExtendedPoint,
    pub p1: ExtendedPoint,
}

impl ExtendedPair {
    pub fn new(p0: ExtendedPoint, p1: ExtendedPoint) -> Result<Self> {
        if p0.dim() != p1.dim() {
            return Err(Error::dims("pair configuration", p0.dim(), p1.dim()));
        }
        Ok(Self { p0, p1 })
    }

    pub fn from_slices(t0: f64, q0: &[f64], t1: f64, q1: &[f64]) -> Result<Self> {
        Self::new(ExtendedPoint::from_slice(t0, q0), ExtendedPoint::from_slice(t1, q1))
    }

    pub fn dim(&self) -> usize {
        self.p0.dim()
    }

    pub fn interval(&self) -> f64 {
        self.p1.t - self.p0.t
    }

    /// Flattened coordinates `(t0, q0, t1, q1)`, length `2(n + 1)`.
    pub fn to_flat(&self) -> Vector {
        let n = self.dim();
        let mut x = Vector::zeros(2 * (n + 1));
        x[0] = self.p0.t;
        x.rows_mut(1, n).copy_from(&self.p0.q);
        x[n + 1] = self.p1.t;
        x.rows_mut(n + 2, n).copy_from(&self.p1.q);
        x
    }

    pub fn from_flat(x: &Vector) -> Self {
        let n = x.len() / 2 - 1;
        Self {
            p0: ExtendedPoint::new(x[0], x.rows(1, n).into_owned()),
            p1: ExtendedPoint::new(x[n + 1], x.rows(n + 2, n).into_owned()),
        }
    }

    pub fn time_shifted(&self, s: f64) -> Self {
        Self {
            p0: self.p0.time_shifted(s),
            p1: self.p1.time_shifted(s),
        }
    }

    /// Finite-difference steps for the flattened coordinates: time slots scale
    /// with the interval, configuration slots with `max(1, |q_i|)`.
    pub fn fd_steps(&self, scale: f64) -> Vector {
        let n = self.dim();
        let h = self.interval().abs().max(MIN_INTERVAL);
        let x = self.to_flat();
        Vector::from_fn(2 * (n + 1), |i, _| {
            if i == 0 || i == n + 1 {
                scale * h
            } else {
                scale * x[i].abs().max(1.0)
            }
        })
    }
}

/// A tangent vector `(δt, δq)` at an extended point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentExt {
    pub dt: f64,
    pub dq: Vector,
}

impl TangentExt {
    pub fn zeros(n: usize) -> Self {
        Self {
            dt: 0.0,
            dq: Vector::zeros(n),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dt: self.dt * s,
            dq: &self.dq * s,
        }
    }

    pub fn add_scaled(&mut self, other: &TangentExt, s: f64) {
        self.dt += s * other.dt;
        self.dq.axpy(s, &other.dq, 1.0);
    }
}

pub(crate) type PairScalarFn = Arc<dyn Fn(&ExtendedPair) -> f64 + Send + Sync>;
pub(crate) type PairVectorFn = Arc<dyn Fn(&ExtendedPair) -> Vector + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone)]
struct PairPartials {
    d1: PairScalarFn,
    d2: PairVectorFn,
    d3: PairScalarFn,
    d4: PairVectorFn,
}

/// The four slot partials of a discrete Lagrangian at one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Partials {
    pub d1: f64,
    pub d2: Vector,
    pub d3: f64,
    pub d4: Vector,
}

/// An extended discrete Lagrangian `L_d(t0, q0, t1, q1)` with its slot
/// derivatives `D1..D4`, either supplied analytically or obtained by central
/// differences of `eval`.
#[derive(Clone)]
pub struct DiscreteLagrangian {
    dim: usize,
    eval: PairScalarFn,
    partials: Option<PairPartials>,
    min_interval: f64,
    fd_step_scale: f64,
}

impl fmt::Debug for DiscreteLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteLagrangian")
            .field("dim", &self.dim)
            .field("mode", &self.derivative_mode())
            .finish()
    }
}

impl DiscreteLagrangian {
    /// A discrete Lagrangian whose partials are obtained by finite differences.
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&ExtendedPair) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
            partials: None,
            min_interval: MIN_INTERVAL,
            fd_step_scale: FD_STEP_SCALE,
        }
    }

    /// Attaches analytic slot derivatives.
    pub fn with_partials<F1, F2, F3, F4>(mut self, d1: F1, d2: F2, d3: F3, d4: F4) -> Self
    where
        F1: Fn(&ExtendedPair) -> f64 + Send + Sync + 'static,
        F2: Fn(&ExtendedPair) -> Vector + Send + Sync + 'static,
        F3: Fn(&ExtendedPair) -> f64 + Send + Sync + 'static,
        F4: Fn(&ExtendedPair) -> Vector + Send + Sync + 'static,
    {
        self.partials = Some(PairPartials {
            d1: Arc::new(d1),
            d2: Arc::new(d2),
            d3: Arc::new(d3),
            d4: Arc::new(d4),
        });
        self
    }

    /// Drops analytic partials so that every derivative goes through finite
    /// differences of `eval`.
    pub fn finite_difference_only(&self) -> Self {
        Self {
            partials: None,
            ..self.clone()
        }
    }

    pub fn with_min_interval(mut self, min_interval: f64) -> Self {
        self.min_interval = min_interval;
        self
    }

    pub fn with_fd_step_scale(mut self, scale: f64) -> Self {
        self.fd_step_scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        if self.partials.is_some() {
            DerivativeMode::Analytic
        } else {
            DerivativeMode::FiniteDifference
        }
    }

    fn check(&self, pair: &ExtendedPair) -> Result<()> {
        if pair.dim() != self.dim {
            return Err(Error::dims("discrete Lagrangian argument", self.dim, pair.dim()));
        }
        if pair.interval().abs() < self.min_interval {
            return Err(Error::DegenerateInterval {
                t0: pair.p0.t,
                t1: pair.p1.t,
            });
        }
        Ok(())
    }

    fn finite(x: f64) -> Result<f64> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFinite("discrete Lagrangian"))
        }
    }

    fn finite_vec(v: Vector) -> Result<Vector> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite("discrete Lagrangian partial"))
        }
    }

    pub fn eval(&self, pair: &ExtendedPair) -> Result<f64> {
        self.check(pair)?;
        Self::finite((self.eval)(pair))
    }

    /// Gradient of `eval` over the flattened pair by central differences.
    pub fn fd_differential(&self, pair: &ExtendedPair) -> Result<Vector> {
        self.check(pair)?;
        let steps = pair.fd_steps(self.fd_step_scale);
        fd_gradient_with_steps(
            &|x: &Vector| (self.eval)(&ExtendedPair::from_flat(x)),
            &pair.to_flat(),
            &steps,
        )
    }

    fn split(&self, g: &Vector) -> Partials {
        let n = self.dim;
        Partials {
            d1: g[0],
            d2: g.rows(1, n).into_owned(),
            d3: g[n + 1],
            d4: g.rows(n + 2, n).into_owned(),
        }
    }

    /// All four slot partials at once.
    pub fn partials(&self, pair: &ExtendedPair) -> Result<Partials> {
        self.check(pair)?;
        match &self.partials {
            Some(p) => Ok(Partials {
                d1: Self::finite((p.d1)(pair))?,
                d2: Self::finite_vec((p.d2)(pair))?,
                d3: Self::finite((p.d3)(pair))?,
                d4: Self::finite_vec((p.d4)(pair))?,
            }),
            None => Ok(self.split(&self.fd_differential(pair)?)),
        }
    }

    /// Partials obtained by central differences regardless of the mode.
    pub fn fd_partials(&self, pair: &ExtendedPair) -> Result<Partials> {
        Ok(self.split(&self.fd_differential(pair)?))
    }

    pub fn d1(&self, pair: &ExtendedPair) -> Result<f64> {
        match &self.partials {
            Some(p) => {
                self.check(pair)?;
                Self::finite((p.d1)(pair))
            }
            None => Ok(self.partials(pair)?.d1),
        }
    }

    pub fn d2(&self, pair: &ExtendedPair) -> Result<Vector> {
        match &self.partials {
            Some(p) => {
                self.check(pair)?;
                Self::finite_vec((p.d2)(pair))
            }
            None => Ok(self.partials(pair)?.d2),
        }
    }

    pub fn d3(&self, pair: &ExtendedPair) -> Result<f64> {
        match &self.partials {
            Some(p) => {
                self.check(pair)?;
                Self::finite((p.d3)(pair))
            }
            None => Ok(self.partials(pair)?.d3),
        }
    }

    pub fn d4(&self, pair: &ExtendedPair) -> Result<Vector> {
        match &self.partials {
            Some(p) => {
                self.check(pair)?;
                Self::finite_vec((p.d4)(pair))
            }
            None => Ok(self.partials(pair)?.d4),
        }
    }
}

pub(crate) type PointMatrixFn = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;

/// Constraint data: `m` one-forms `ω^a` on `Q` (rows of an `m × n` matrix) and
/// `m` discrete constraint functions `ω_d^a` on pairs.
#[derive(Clone)]
pub struct ConstraintSet {
    n: usize,
    m: usize,
    omega: PointMatrixFn,
    omega_d: PairVectorFn,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl ConstraintSet {
    pub fn new<W, D>(n: usize, m: usize, omega: W, omega_d: D) -> Self
    where
        W: Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
        D: Fn(&ExtendedPair) -> Vector + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            omega: Arc::new(omega),
            omega_d: Arc::new(omega_d),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.m
    }

    pub fn omega(&self, t: f64, q: &Vector) -> Result<Matrix> {
        if q.len() != self.n {
            return Err(Error::dims("constraint one-form argument", self.n, q.len()));
        }
        let w = (self.omega)(t, q);
        if w.nrows() != self.m || w.ncols() != self.n {
            return Err(Error::dims("constraint matrix rows", self.m, w.nrows()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("constraint one-forms"));
        }
        Ok(w)
    }

    pub fn omega_d(&self, pair: &ExtendedPair) -> Result<Vector> {
        if pair.dim() != self.n {
            return Err(Error::dims("discrete constraint argument", self.n, pair.dim()));
        }
        let r = (self.omega_d)(pair);
        if r.len() != self.m {
            return Err(Error::dims("discrete constraint values", self.m, r.len()));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("discrete constraints"));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    AbelianTranslation,
    MatrixGroup,
}

type GeneratorFn = Arc<dyn Fn(usize, &ExtendedPoint) -> TangentExt + Send + Sync>;
type ActFn = Arc<dyn Fn(&Vector, &ExtendedPoint) -> ExtendedPoint + Send + Sync>;

/// A Lie group action on the extended configuration space, given by its
/// infinitesimal generators and its finite action map. Group elements are
/// passed around in coordinates (`dim_g` reals, identity at the origin).
#[derive(Clone)]
pub struct GroupActionSpec {
    n: usize,
    dim_g: usize,
    generator: GeneratorFn,
    act: ActFn,
    kind: GroupKind,
    time_trivial: bool,
}

impl fmt::Debug for GroupActionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupActionSpec")
            .field("n", &self.n)
            .field("dim_g", &self.dim_g)
            .field("kind", &self.kind)
            .field("time_trivial", &self.time_trivial)
            .finish()
    }
}

impl GroupActionSpec {
    pub fn new<G, A>(n: usize, dim_g: usize, kind: GroupKind, time_trivial: bool, generator: G, act: A) -> Self
    where
        G: Fn(usize, &ExtendedPoint) -> TangentExt + Send + Sync + 'static,
        A: Fn(&Vector, &ExtendedPoint) -> ExtendedPoint + Send + Sync + 'static,
    {
        Self {
            n,
            dim_g,
            generator: Arc::new(generator),
            act: Arc::new(act),
            kind,
            time_trivial,
        }
    }

    /// Translations of the listed configuration coordinates (`R^k` acting
    /// additively).
    pub fn translation(n: usize, coords: Vec<usize>) -> Self {
        let k = coords.len();
        let gen_coords = coords.clone();
        Self::new(
            n,
            k,
            GroupKind::AbelianTranslation,
            true,
            move |i, _p| {
                let mut v = TangentExt::zeros(n);
                v.dq[gen_coords[i]] = 1.0;
                v
            },
            move |g, p| {
                let mut out = p.clone();
                for (j, &c) in coords.iter().enumerate() {
                    out.q[c] += g[j];
                }
                out
            },
        )
    }

    /// The additive action of `R` on the time component.
    pub fn time_translation(n: usize) -> Self {
        Self::new(
            n,
            1,
            GroupKind::AbelianTranslation,
            false,
            move |_i, _p| TangentExt {
                dt: 1.0,
                dq: Vector::zeros(n),
            },
            |g, p| p.time_shifted(g[0]),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn algebra_dim(&self) -> usize {
        self.dim_g
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn is_time_trivial(&self) -> bool {
        self.time_trivial
    }

    pub fn generator(&self, i: usize, p: &ExtendedPoint) -> TangentExt {
        (self.generator)(i, p)
    }

    /// Infinitesimal generator of the algebra element with coefficients `xi`.
    pub fn generator_of(&self, xi: &Vector, p: &ExtendedPoint) -> TangentExt {
        let mut out = TangentExt::zeros(self.n);
        for i in 0..self.dim_g {
            if xi[i] != 0.0 {
                out.add_scaled(&self.generator(i, p), xi[i]);
            }
        }
        out
    }

    /// `n × dim_g` matrix whose columns are the configuration parts of the
    /// generators at `p`.
    pub fn generator_matrix(&self, p: &ExtendedPoint) -> Matrix {
        let mut v = Matrix::zeros(self.n, self.dim_g);
        for i in 0..self.dim_g {
            v.set_column(i, &self.generator(i, p).dq);
        }
        v
    }

    pub fn act(&self, g: &Vector, p: &ExtendedPoint) -> ExtendedPoint {
        (self.act)(g, p)
    }

    /// Diagonal action on pairs.
    pub fn act_pair(&self, g: &Vector, pair: &ExtendedPair) -> ExtendedPair {
        ExtendedPair {
            p0: self.act(g, &pair.p0),
            p1: self.act(g, &pair.p1),
        }
    }
}

/// A section `ξ̃` of the bundle of symmetry directions compatible with the
/// constraints, given by algebra coefficients at each point.
#[derive(Clone)]
pub struct SectionSpec {
    dim_g: usize,
    xi: Arc<dyn Fn(&ExtendedPoint) -> Vector + Send + Sync>,
}

impl fmt::Debug for SectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectionSpec").field("dim_g", &self.dim_g).finish()
    }
}

impl SectionSpec {
    pub fn new<F>(dim_g: usize, xi: F) -> Self
    where
        F: Fn(&ExtendedPoint) -> Vector + Send + Sync + 'static,
    {
        Self {
            dim_g,
            xi: Arc::new(xi),
        }
    }

    pub fn constant(xi: Vector) -> Self {
        Self::new(xi.len(), move |_| xi.clone())
    }

    pub fn algebra_dim(&self) -> usize {
        self.dim_g
    }

    pub fn at(&self, p: &ExtendedPoint) -> Vector {
        (self.xi)(p)
    }
}

/// An extended discrete nonholonomic system `(L_d, D_d, D)`. Missing
/// constraints mean `D_d` is the whole pair space.
#[derive(Clone, Debug)]
pub struct NonholonomicSystem {
    pub lagrangian: DiscreteLagrangian,
    pub constraints: Option<ConstraintSet>,
    pub action: Option<GroupActionSpec>,
    pub autonomous: bool,
}

impl NonholonomicSystem {
    pub fn unconstrained(lagrangian: DiscreteLagrangian) -> Self {
        Self {
            lagrangian,
            constraints: None,
            action: None,
            autonomous: false,
        }
    }

    pub fn new(lagrangian: DiscreteLagrangian, constraints: Option<ConstraintSet>) -> Result<Self> {
        let sys = Self {
            lagrangian,
            constraints,
            action: None,
            autonomous: false,
        };
        sys.check_dims()?;
        Ok(sys)
    }

    pub fn with_action(mut self, action: GroupActionSpec) -> Result<Self> {
        if action.dim() != self.dim() {
            return Err(Error::dims("group action", self.dim(), action.dim()));
        }
        self.action = Some(action);
        Ok(self)
    }

    pub fn autonomous(mut self, autonomous: bool) -> Self {
        self.autonomous = autonomous;
        self
    }

    pub fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.as_ref().map_or(0, |c| c.count())
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Config("configuration dimension must be at least 1".into()));
        }
        if let Some(c) = &self.constraints {
            if c.dim() != n {
                return Err(Error::dims("constraint set", n, c.dim()));
            }
            if c.count() >= n {
                return Err(Error::Config(format!(
                    "constraint count {} must be smaller than the dimension {n}",
                    c.count()
                )));
            }
        }
        if let Some(a) = &self.action {
            if a.dim() != n {
                return Err(Error::dims("group action", n, a.dim()));
            }
        }
        Ok(())
    }

    /// Discrete constraint residual `|ω_d|_∞` (zero when unconstrained).
    pub fn constraint_residual(&self, pair: &ExtendedPair) -> Result<f64> {
        match &self.constraints {
            Some(c) => Ok(c.omega_d(pair)?.amax()),
            None => Ok(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessMode {
    /// `t_{k+1} = 2 t_k - t_{k-1}`, `q_{k+1} = 2 q_k - q_{k-1}`.
    LinearExtrapolation,
    /// Repeat the previous time step with the configuration held fixed.
    CopyPrevious,
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Max-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor of the line search.
    pub damping: f64,
    /// Smallest line-search step before giving up.
    pub min_step: f64,
    /// Relative step of finite-difference Jacobians.
    pub fd_step_scale: f64,
    pub guess_mode: GuessMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            damping: 0.5,
            min_step: 2f64.powi(-20),
            fd_step_scale: FD_STEP_SCALE,
            guess_mode: GuessMode::LinearExtrapolation,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("solver.max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config("solver.damping must lie in (0, 1)".into()));
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return Err(Error::Config("solver.min_step must lie in (0, 1)".into()));
        }
        if !(self.fd_step_scale > 0.0) {
            return Err(Error::Config("solver.fd_step_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pair diagnostics recorded along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDiagnostics {
    pub e_plus: f64,
    pub e_minus: f64,
    pub constraint_residual: f64,
    /// Discrete momentum components `⟨Θ+, (e_i)_Q⟩`, one per algebra basis
    /// element (empty without an action).
    pub momentum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepWarning {
    /// `|E+|` of the incoming pair fell below the near-zero threshold.
    NearZeroEnergy { step: usize, energy: f64 },
}

/// A discrete path with strictly increasing times. `diagnostics[k]` belongs to
/// the pair `(points[k], points[k+1])`; `multipliers[j]` and `solver_stats[j]`
/// belong to the step that produced `points[j + 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<ExtendedPoint>,
    pub multipliers: Vec<Vector>,
    pub diagnostics: Vec<PairDiagnostics>,
    pub solver_stats: Vec<SolverStats>,
    pub warnings: Vec<StepWarning>,
}

impl Trajectory {
    pub fn from_pair(pair: &ExtendedPair) -> Result<Self> {
        let mut traj = Self {
            points: Vec::new(),
            multipliers: Vec::new(),
            diagnostics: Vec::new(),
            solver_stats: Vec::new(),
            warnings: Vec::new(),
        };
        traj.push_point(pair.p0.clone())?;
        traj.push_point(pair.p1.clone())?;
        Ok(traj)
    }

    /// Appends a point; rejects non-increasing times and dimension changes.
    pub fn push_point(&mut self, p: ExtendedPoint) -> Result<()> {
        p.check()?;
        if let Some(last) = self.points.last() {
            if p.dim() != last.dim() {
                return Err(Error::dims("trajectory point", last.dim(), p.dim()));
            }
            if !(p.t > last.t) {
                return Err(Error::Path(format!(
                    "times must increase strictly: {} follows {}",
                    p.t, last.t
                )));
            }
        }
        self.points.push(p);
        Ok(())
    }

    pub fn points(&self) -> &[ExtendedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pair(&self, k: usize) -> ExtendedPair {
        ExtendedPair {
            p0: self.points[k].clone(),
            p1: self.points[k + 1].clone(),
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = ExtendedPair> + '_ {
        self.points.windows(2).map(|w| ExtendedPair {
            p0: w[0].clone(),
            p1: w[1].clone(),
        })
    }

    pub fn last_pair(&self) -> ExtendedPair {
        self.pair(self.points.len() - 2)
    }

    pub fn is_time_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].t > w[0].t)
    }

    /// Largest `|E+_k - E+_0|` over the recorded pairs.
    pub fn max_energy_drift(&self) -> f64 {
        let Some(first) = self.diagnostics.first() else {
            return 0.0;
        };
        self.diagnostics
            .iter()
            .map(|d| (d.e_plus - first.e_plus).abs())
            .fold(0.0, f64::max)
    }
}
