//! Reduction of Chaplygin systems: symmetry directions everywhere transverse
//! to the constraints, so the dynamics descends to the base `Q̄/G` as an
//! unconstrained system with gyroscopic forces.
//!
//! Configurations are split by a [`ChaplyginChart`] into base coordinates `r`
//! and group coordinates `g`. A base pair `(t0, r0, t1, r1)` is lifted to the
//! unreduced pair `((t0, r0, e), (t1, r1, f))` where the transition `f` solves
//! the discrete constraints; the reduced discrete Lagrangian is the unreduced
//! one evaluated on that lift.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::CovectorExt;
use crate::discretize::{fd_jacobian_with_steps, FD_STEP_SCALE};
use crate::error::{Error, Result};
use crate::stepper::{project_to_constraints, solve_implicit_step, StepResult};
use crate::types::{
    ConstraintSet, DiscreteLagrangian, ExtendedPair, ExtendedPoint, GroupActionSpec, GroupKind, Matrix,
    NonholonomicSystem, Partials, SolverConfig, Trajectory, Vector,
};

/// Singular-value ratio below which `ω V` is treated as rank deficient.
const RANK_TOL: f64 = 1e-8;

/// Which configuration coordinates are group coordinates (the rest are base
/// coordinates, kept in their original order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaplyginChart {
    n: usize,
    group: Vec<usize>,
    base: Vec<usize>,
}

impl ChaplyginChart {
    pub fn new(n: usize, group_coords: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &c in &group_coords {
            if c >= n || seen[c] {
                return Err(Error::Config(format!("invalid group coordinate index {c} for dimension {n}")));
            }
            seen[c] = true;
        }
        if group_coords.is_empty() || group_coords.len() >= n {
            return Err(Error::Config("a chart needs at least one group and one base coordinate".into()));
        }
        let base = (0..n).filter(|i| !seen[*i]).collect();
        Ok(Self {
            n,
            group: group_coords,
            base,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    pub fn group_dim(&self) -> usize {
        self.group.len()
    }

    pub fn group_coords(&self) -> &[usize] {
        &self.group
    }

    pub fn base_coords(&self) -> &[usize] {
        &self.base
    }

    pub fn base_of(&self, q: &Vector) -> Vector {
        Vector::from_iterator(self.base.len(), self.base.iter().map(|&i| q[i]))
    }

    pub fn group_of(&self, q: &Vector) -> Vector {
        Vector::from_iterator(self.group.len(), self.group.iter().map(|&i| q[i]))
    }

    pub fn join(&self, r: &Vector, g: &Vector) -> Vector {
        let mut q = Vector::zeros(self.n);
        for (k, &i) in self.base.iter().enumerate() {
            q[i] = r[k];
        }
        for (k, &i) in self.group.iter().enumerate() {
            q[i] = g[k];
        }
        q
    }

    /// Columns of `m` belonging to the given coordinate list.
    fn columns(m: &Matrix, idx: &[usize]) -> Matrix {
        Matrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
    }

    pub fn project_point(&self, p: &ExtendedPoint) -> ExtendedPoint {
        ExtendedPoint::new(p.t, self.base_of(&p.q))
    }
}

type BinaryFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
type UnaryFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Group operations in group coordinates. `left(f, ξ)` and `right(f, ξ)` are
/// the tangent vectors at `f` of `ε ↦ exp(εξ) f` and `ε ↦ f exp(εξ)`.
#[derive(Clone)]
pub struct GroupOps {
    kind: GroupKind,
    identity: Vector,
    compose: BinaryFn,
    inverse: UnaryFn,
    left: BinaryFn,
    right: BinaryFn,
}

impl fmt::Debug for GroupOps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupOps")
            .field("kind", &self.kind)
            .field("dim", &self.identity.len())
            .finish()
    }
}

impl GroupOps {
    /// `R^k` under addition.
    pub fn abelian(dim: usize) -> Self {
        Self {
            kind: GroupKind::AbelianTranslation,
            identity: Vector::zeros(dim),
            compose: Arc::new(|a, b| a + b),
            inverse: Arc::new(|a| -a),
            left: Arc::new(|_, xi| xi.clone()),
            right: Arc::new(|_, xi| xi.clone()),
        }
    }

    /// A matrix group described by user-supplied operations.
    pub fn matrix_group<C, I, L, R>(identity: Vector, compose: C, inverse: I, left: L, right: R) -> Self
    where
        C: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        I: Fn(&Vector) -> Vector + Send + Sync + 'static,
        L: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        R: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            kind: GroupKind::MatrixGroup,
            identity,
            compose: Arc::new(compose),
            inverse: Arc::new(inverse),
            left: Arc::new(left),
            right: Arc::new(right),
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.identity.len()
    }

    pub fn identity(&self) -> &Vector {
        &self.identity
    }

    pub fn compose(&self, a: &Vector, b: &Vector) -> Vector {
        (self.compose)(a, b)
    }

    pub fn inverse(&self, a: &Vector) -> Vector {
        (self.inverse)(a)
    }

    pub fn left(&self, f: &Vector, xi: &Vector) -> Vector {
        (self.left)(f, xi)
    }

    pub fn right(&self, f: &Vector, xi: &Vector) -> Vector {
        (self.right)(f, xi)
    }
}

/// Unreduced data attached to one base pair.
#[derive(Debug, Clone)]
pub struct BundlePair {
    /// The horizontal lift `((t0, r0, e), (t1, r1, f))`.
    pub lifted: ExtendedPair,
    pub transition: Vector,
    /// Unreduced slot partials at the lift.
    pub partials: Partials,
    /// `∂ℓ_d/∂f`: the group components of `D4 L_d` at the lift.
    pub ell_f: Vector,
    /// `∂f/∂(t0, r0, t1, r1)` (`dim_g × 2(base_dim + 1)`).
    pub transition_jacobian: Matrix,
}

struct Inner {
    sys: NonholonomicSystem,
    chart: ChaplyginChart,
    ops: GroupOps,
}

impl Inner {
    fn constraints(&self) -> &ConstraintSet {
        self.sys.constraints.as_ref().expect("checked at construction")
    }

    fn lift(&self, p: &ExtendedPoint, g: &Vector) -> ExtendedPoint {
        ExtendedPoint::new(p.t, self.chart.join(&p.q, g))
    }

    fn connection(&self, p: &ExtendedPoint) -> Result<Matrix> {
        let q = self.chart.join(&p.q, self.ops.identity());
        let w = self.constraints().omega(p.t, &q)?;
        let w_r = ChaplyginChart::columns(&w, self.chart.base_coords());
        let w_g = ChaplyginChart::columns(&w, self.chart.group_coords());
        w_g.lu().solve(&w_r).ok_or_else(|| Error::NotChaplygin(format!("ω V is singular at t = {}", p.t)))
    }

    fn omega_d_at(&self, pair: &ExtendedPair, g1: &Vector) -> Result<Vector> {
        let lifted = ExtendedPair::new(self.lift(&pair.p0, self.ops.identity()), self.lift(&pair.p1, g1))?;
        self.constraints().omega_d(&lifted)
    }

    fn group_steps(&self, g: &Vector) -> Vector {
        g.map(|x| FD_STEP_SCALE * x.abs().max(1.0))
    }

    fn transition(&self, pair: &ExtendedPair) -> Result<Vector> {
        let h = pair.interval();
        if h.abs() < crate::types::MIN_INTERVAL {
            return Err(Error::DegenerateInterval {
                t0: pair.p0.t,
                t1: pair.p1.t,
            });
        }
        let mid = ExtendedPoint::new(0.5 * (pair.p0.t + pair.p1.t), (&pair.p0.q + &pair.p1.q) * 0.5);
        let a = self.connection(&mid)?;
        let mut g = self.ops.identity() - a * (&pair.p1.q - &pair.p0.q);
        let f = |x: &Vector| self.omega_d_at(pair, x);
        for _ in 0..30 {
            let r = f(&g)?;
            let j = fd_jacobian_with_steps(&f, &g, &self.group_steps(&g))?;
            let dg = j.lu().solve(&r).ok_or_else(|| Error::AssumptionViolation(
                "discrete constraints do not determine the group transition".into(),
            ))?;
            g -= &dg;
            if dg.amax() <= 1e-15 * (1.0 + g.amax()) || r.amax() == 0.0 {
                return Ok(g);
            }
        }
        let r = f(&g)?.amax();
        if r <= 1e-13 {
            Ok(g)
        } else {
            Err(Error::Convergence {
                iterations: 30,
                residual: r,
            })
        }
    }

    fn bundle(&self, pair: &ExtendedPair) -> Result<BundlePair> {
        let f = self.transition(pair)?;
        let lifted = ExtendedPair::new(self.lift(&pair.p0, self.ops.identity()), self.lift(&pair.p1, &f))?;
        let partials = self.sys.lagrangian.partials(&lifted)?;
        let ell_f = self.chart.group_of(&partials.d4);
        let dw_dx = fd_jacobian_with_steps(
            &|x: &Vector| self.omega_d_at(&ExtendedPair::from_flat(x), &f),
            &pair.to_flat(),
            &pair.fd_steps(FD_STEP_SCALE),
        )?;
        let dw_dg = fd_jacobian_with_steps(&|g: &Vector| self.omega_d_at(pair, g), &f, &self.group_steps(&f))?;
        let df = dw_dg
            .lu()
            .solve(&(-dw_dx))
            .ok_or_else(|| Error::AssumptionViolation("transition map is not locally unique".into()))?;
        Ok(BundlePair {
            lifted,
            transition: f,
            partials,
            ell_f,
            transition_jacobian: df,
        })
    }

    /// Reduced slot partials by the chain rule through `f`.
    fn reduced_partials(&self, b: &BundlePair) -> Partials {
        let k = self.chart.base_dim();
        let df = &b.transition_jacobian;
        let p = &b.partials;
        let through = |col: usize| b.ell_f.dot(&df.column(col));
        let through_block = |start: usize| df.columns(start, k).transpose() * &b.ell_f;
        Partials {
            d1: p.d1 + through(0),
            d2: self.chart.base_of(&p.d2) + through_block(1),
            d3: p.d3 + through(k + 1),
            d4: self.chart.base_of(&p.d4) + through_block(k + 2),
        }
    }

    fn forces(&self, pair: &ExtendedPair, b: &BundlePair) -> Result<(CovectorExt, CovectorExt)> {
        let k = self.chart.base_dim();
        let df = &b.transition_jacobian;
        let f = &b.transition;
        let a0 = self.connection(&pair.p0)?;
        let a1 = self.connection(&pair.p1)?;
        let mut minus = CovectorExt::zeros(k);
        let mut plus = CovectorExt::zeros(k);
        minus.dt = b.ell_f.dot(&df.column(0));
        plus.dt = b.ell_f.dot(&df.column(k + 1));
        for i in 0..k {
            let ra = self.ops.right(f, &a0.column(i).into_owned());
            let la = self.ops.left(f, &a1.column(i).into_owned());
            minus.dq[i] = b.ell_f.dot(&(df.column(1 + i) - ra));
            plus.dq[i] = b.ell_f.dot(&(df.column(k + 2 + i) + la));
        }
        Ok((minus, plus))
    }
}

/// A reduced Chaplygin system.
#[derive(Clone)]
pub struct ChaplyginSpec {
    inner: Arc<Inner>,
    /// `L*_d` on base pairs `(t0, r0, t1, r1)`.
    pub reduced_lagrangian: DiscreteLagrangian,
}

impl fmt::Debug for ChaplyginSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChaplyginSpec")
            .field("chart", &self.inner.chart)
            .field("ops", &self.inner.ops)
            .finish()
    }
}

impl ChaplyginSpec {
    pub fn base_dim(&self) -> usize {
        self.inner.chart.base_dim()
    }

    pub fn group_dim(&self) -> usize {
        self.inner.chart.group_dim()
    }

    pub fn chart(&self) -> &ChaplyginChart {
        &self.inner.chart
    }

    pub fn ops(&self) -> &GroupOps {
        &self.inner.ops
    }

    pub fn system(&self) -> &NonholonomicSystem {
        &self.inner.sys
    }

    /// Local connection `A_loc(t, r)` (`dim_g × base_dim`); horizontal
    /// velocities have group part `-A_loc ṙ`.
    pub fn connection_local(&self, p: &ExtendedPoint) -> Result<Matrix> {
        self.check_base(p)?;
        self.inner.connection(p)
    }

    /// Group transition `f` of a base pair.
    pub fn transition(&self, pair: &ExtendedPair) -> Result<Vector> {
        self.check_base(&pair.p0)?;
        self.inner.transition(pair)
    }

    pub fn bundle(&self, pair: &ExtendedPair) -> Result<BundlePair> {
        self.check_base(&pair.p0)?;
        self.inner.bundle(pair)
    }

    /// Reduced slot partials at a base pair.
    pub fn reduced_partials(&self, pair: &ExtendedPair) -> Result<Partials> {
        let b = self.bundle(pair)?;
        Ok(self.inner.reduced_partials(&b))
    }

    /// Projects an unreduced point to base coordinates.
    pub fn project(&self, p: &ExtendedPoint) -> ExtendedPoint {
        self.inner.chart.project_point(p)
    }

    fn check_base(&self, p: &ExtendedPoint) -> Result<()> {
        if p.dim() != self.base_dim() {
            return Err(Error::dims("base point", self.base_dim(), p.dim()));
        }
        Ok(())
    }
}

fn sample_points(n: usize, count: usize, seed: u64) -> Vec<ExtendedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ExtendedPoint::new(rng.gen_range(0.0..2.0), Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))))
        .collect()
}

fn check_transverse(c: &ConstraintSet, action: &GroupActionSpec, points: &[ExtendedPoint]) -> Result<()> {
    for p in points {
        let wv = c.omega(p.t, &p.q)? * action.generator_matrix(p);
        let sv = wv.singular_values();
        let max = sv.max();
        let min = if sv.len() < action.algebra_dim() { 0.0 } else { sv.min() };
        if max == 0.0 || min < RANK_TOL * max {
            return Err(Error::NotChaplygin(format!(
                "a nonzero symmetry direction satisfies the constraints at t = {}, q = {:?}",
                p.t,
                p.q.as_slice()
            )));
        }
    }
    Ok(())
}

/// Builds the reduced system, checking that symmetry directions are
/// transverse to the constraints and that the chart's group coordinates carry
/// the action.
pub fn build_chaplygin(sys: &NonholonomicSystem, chart: ChaplyginChart, ops: GroupOps) -> Result<ChaplyginSpec> {
    sys.check_dims()?;
    let n = sys.dim();
    if chart.dim() != n {
        return Err(Error::dims("Chaplygin chart", n, chart.dim()));
    }
    let Some(c) = &sys.constraints else {
        return Err(Error::NotChaplygin(
            "unconstrained: every symmetry direction is allowed by the constraints".into(),
        ));
    };
    let Some(action) = &sys.action else {
        return Err(Error::NotChaplygin("no group action".into()));
    };
    if !action.is_time_trivial() {
        return Err(Error::AssumptionViolation("the group action must fix time".into()));
    }
    let points = sample_points(n, 16, 0);
    check_transverse(c, action, &points)?;
    let dim_g = action.algebra_dim();
    if c.count() != dim_g {
        return Err(Error::AssumptionViolation(format!(
            "dimension count fails: {} constraints for a {dim_g}-dimensional group",
            c.count()
        )));
    }
    if chart.group_dim() != dim_g || ops.dim() != dim_g {
        return Err(Error::AssumptionViolation(format!(
            "chart has {} group coordinates and the group operations {}, the action {dim_g}",
            chart.group_dim(),
            ops.dim()
        )));
    }
    for p in &points {
        let v = action.generator_matrix(p);
        let base_part = Matrix::from_fn(chart.base_dim(), dim_g, |r, col| v[(chart.base_coords()[r], col)]);
        if base_part.amax() > 1e-12 {
            return Err(Error::AssumptionViolation(
                "symmetry generators move base coordinates of the chart".into(),
            ));
        }
    }
    let inner = Arc::new(Inner {
        sys: sys.clone(),
        chart,
        ops,
    });
    let k = inner.chart.base_dim();
    let nan = move || Vector::from_element(k, f64::NAN);
    let (i0, i1, i2, i3, i4) = (inner.clone(), inner.clone(), inner.clone(), inner.clone(), inner.clone());
    let reduced_lagrangian = DiscreteLagrangian::new(k, move |pair| {
        i0.transition(pair)
            .and_then(|f| {
                let lifted = ExtendedPair::new(i0.lift(&pair.p0, i0.ops.identity()), i0.lift(&pair.p1, &f))?;
                i0.sys.lagrangian.eval(&lifted)
            })
            .unwrap_or(f64::NAN)
    })
    .with_partials(
        move |pair| i1.bundle(pair).map_or(f64::NAN, |b| i1.reduced_partials(&b).d1),
        move |pair| i2.bundle(pair).map_or_else(|_| nan(), |b| i2.reduced_partials(&b).d2),
        move |pair| i3.bundle(pair).map_or(f64::NAN, |b| i3.reduced_partials(&b).d3),
        move |pair| i4.bundle(pair).map_or_else(|_| Vector::from_element(k, f64::NAN), |b| i4.reduced_partials(&b).d4),
    );
    Ok(ChaplyginSpec {
        inner,
        reduced_lagrangian,
    })
}

/// Worst-case residuals of the structural invariants of a reduced system.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaplyginReport {
    /// `|ω · (ṙ, -A_loc ṙ)|` over samples, relative to `|ṙ|`.
    pub horizontality: f64,
    /// `|f(projected pair) - g0⁻¹ g1|` over admissible samples.
    pub reconstruction: f64,
}

impl ChaplyginReport {
    pub fn passed(&self) -> bool {
        self.horizontality <= 1e-10 && self.reconstruction <= 1e-10
    }
}

/// Samples horizontality of the connection and consistency of the transition
/// with admissible unreduced pairs.
pub fn chaplygin_invariants(spec: &ChaplyginSpec, samples: usize, seed: u64) -> Result<ChaplyginReport> {
    let inner = &spec.inner;
    let chart = &inner.chart;
    let n = chart.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut horizontality: f64 = 0.0;
    let mut reconstruction: f64 = 0.0;
    let cfg = SolverConfig::default().with_tol(1e-14);
    for _ in 0..samples {
        let t = rng.gen_range(0.0..2.0);
        let r = Vector::from_fn(chart.base_dim(), |_, _| rng.gen_range(-2.0..2.0));
        let rdot = Vector::from_fn(chart.base_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let base = ExtendedPoint::new(t, r.clone());
        let a = inner.connection(&base)?;
        let q = chart.join(&r, inner.ops.identity());
        let qdot = chart.join(&rdot, &Vector::zeros(chart.group_dim()))
            + spec.system().action.as_ref().expect("checked").generator_matrix(&ExtendedPoint::new(t, q.clone()))
                * (-(&a * &rdot));
        let res = (inner.constraints().omega(t, &q)? * qdot).amax() / rdot.amax().max(1e-300);
        horizontality = horizontality.max(res);

        let q0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let h = rng.gen_range(0.05..0.2);
        let q1 = &q0 + Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)) * h;
        let pair = ExtendedPair::new(ExtendedPoint::new(t, q0), ExtendedPoint::new(t + h, q1))?;
        let pair = project_to_constraints(&inner.sys, &pair, &cfg)?;
        let projected = ExtendedPair::new(chart.project_point(&pair.p0), chart.project_point(&pair.p1))?;
        let f = inner.transition(&projected)?;
        let g0 = chart.group_of(&pair.p0.q);
        let g1 = chart.group_of(&pair.p1.q);
        let expected = inner.ops.compose(&inner.ops.inverse(&g0), &g1);
        reconstruction = reconstruction.max((f - expected).amax());
    }
    Ok(ChaplyginReport {
        horizontality,
        reconstruction,
    })
}

/// Outcome of a right-rigidity search.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidityReport {
    pub passed: bool,
    /// A non-identity group offset keeping a sampled pair admissible.
    pub witness: Option<Vector>,
    pub pairs_checked: usize,
}

/// Grid of group offsets searched by [`rigidity_check`]: `points` values per
/// axis spread uniformly over `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupGrid {
    pub half_width: f64,
    pub points: usize,
}

impl Default for GroupGrid {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            points: 21,
        }
    }
}

/// Searches for group offsets `g ≠ e` with `(p0, g·p1)` admissible for
/// sampled admissible pairs. Only abelian translation actions are supported.
pub fn rigidity_check(
    sys: &NonholonomicSystem,
    action: &GroupActionSpec,
    samples: usize,
    grid: GroupGrid,
    seed: u64,
) -> Result<RigidityReport> {
    if action.kind() != GroupKind::AbelianTranslation {
        return Err(Error::Config("rigidity search needs an abelian translation action".into()));
    }
    if grid.points < 2 || !(grid.half_width > 0.0) {
        return Err(Error::Config("rigidity grid needs at least two points per axis".into()));
    }
    let n = sys.dim();
    let dim_g = action.algebra_dim();
    let cfg = SolverConfig::default().with_tol(1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = 2.0 * grid.half_width / (grid.points - 1) as f64;
    let total = grid.points.pow(dim_g as u32);
    for s in 0..samples {
        let t = rng.gen_range(0.0..2.0);
        let q0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let h = rng.gen_range(0.05..0.2);
        let q1 = &q0 + Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)) * h;
        let pair = ExtendedPair::new(ExtendedPoint::new(t, q0), ExtendedPoint::new(t + h, q1))?;
        let pair = project_to_constraints(sys, &pair, &cfg)?;
        for idx in 0..total {
            let mut rest = idx;
            let g = Vector::from_fn(dim_g, |_, _| {
                let k = rest % grid.points;
                rest /= grid.points;
                -grid.half_width + k as f64 * spacing
            });
            if g.amax() < 0.5 * spacing {
                continue;
            }
            let moved = ExtendedPair::new(pair.p0.clone(), action.act(&g, &pair.p1))?;
            if sys.constraint_residual(&moved)? <= 1e-10 {
                return Ok(RigidityReport {
                    passed: false,
                    witness: Some(g),
                    pairs_checked: s + 1,
                });
            }
        }
    }
    Ok(RigidityReport {
        passed: true,
        witness: None,
        pairs_checked: samples,
    })
}

/// Discrete gyroscopic forces of a base pair `(r_k, r_{k+1})`: `F-` acts at
/// `r_k`, `F+` at `r_{k+1}`. Time components come from the time dependence
/// of the transition and vanish for time-independent constraints.
pub fn discrete_forces(spec: &ChaplyginSpec, pair: &ExtendedPair) -> Result<(CovectorExt, CovectorExt)> {
    let b = spec.bundle(pair)?;
    spec.inner.forces(pair, &b)
}

struct ReducedPair {
    partials: Partials,
    minus: CovectorExt,
    plus: CovectorExt,
}

fn reduced_pair(spec: &ChaplyginSpec, pair: &ExtendedPair) -> Result<ReducedPair> {
    let b = spec.bundle(pair)?;
    let (minus, plus) = spec.inner.forces(pair, &b)?;
    Ok(ReducedPair {
        partials: spec.inner.reduced_partials(&b),
        minus,
        plus,
    })
}

fn redla_from_parts(incoming: &ReducedPair, outgoing: &ReducedPair) -> Vector {
    let k = incoming.partials.d4.len();
    let mut r = Vector::zeros(k + 1);
    r[0] = outgoing.partials.d1 + incoming.partials.d3 - outgoing.minus.dt - incoming.plus.dt;
    let q = &outgoing.partials.d2 + &incoming.partials.d4 - &outgoing.minus.dq - &incoming.plus.dq;
    r.rows_mut(1, k).copy_from(&q);
    r
}

/// Residual of the forced reduced equations at the middle of a base triple:
/// time row `D1 L*_d + D3 L*_d - F-_t - F+_t`, then
/// `D2 L*_d + D4 L*_d - F- - F+`.
pub fn redla_residual(spec: &ChaplyginSpec, p0: &ExtendedPoint, p1: &ExtendedPoint, p2: &ExtendedPoint) -> Result<Vector> {
    if !(p0.t < p1.t && p1.t < p2.t) {
        return Err(Error::Path(format!(
            "triple times must increase strictly: {}, {}, {}",
            p0.t, p1.t, p2.t
        )));
    }
    let a = reduced_pair(spec, &ExtendedPair::new(p0.clone(), p1.clone())?)?;
    let b = reduced_pair(spec, &ExtendedPair::new(p1.clone(), p2.clone())?)?;
    Ok(redla_from_parts(&a, &b))
}

/// Advances the reduced system by one step.
pub fn step_redla(spec: &ChaplyginSpec, pair: &ExtendedPair, cfg: &SolverConfig) -> Result<StepResult> {
    spec.check_base(&pair.p0)?;
    let incoming = reduced_pair(spec, pair)?;
    let energy = -incoming.partials.d3;
    let p1 = &pair.p1;
    solve_implicit_step(
        pair,
        0,
        None,
        energy,
        &|p2, _| {
            let outgoing = reduced_pair(spec, &ExtendedPair::new(p1.clone(), p2.clone())?)?;
            Ok(redla_from_parts(&incoming, &outgoing))
        },
        cfg,
    )
}

/// Result of comparing a projected unreduced trajectory with a reduced run.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    /// Max over points of the largest time or base-coordinate difference.
    pub max_deviation: f64,
    pub projected: Vec<ExtendedPoint>,
    pub reduced: Trajectory,
}

/// Projects an unreduced trajectory to the base and reruns the reduced
/// stepper from its first two projected points.
pub fn project_and_compare(spec: &ChaplyginSpec, traj: &Trajectory, cfg: &SolverConfig) -> Result<ProjectionReport> {
    if traj.len() < 2 {
        return Err(Error::Path("trajectory needs at least two points".into()));
    }
    if traj.points()[0].dim() != spec.chart().dim() {
        return Err(Error::dims("unreduced trajectory", spec.chart().dim(), traj.points()[0].dim()));
    }
    let projected: Vec<ExtendedPoint> = traj.points().iter().map(|p| spec.project(p)).collect();
    let first = ExtendedPair::new(projected[0].clone(), projected[1].clone())?;
    let mut reduced = Trajectory::from_pair(&first)?;
    for _ in 2..projected.len() {
        let step = step_redla(spec, &reduced.last_pair(), cfg)?;
        reduced.push_point(step.next)?;
    }
    let max_deviation = projected
        .iter()
        .zip(reduced.points())
        .map(|(a, b)| (a.t - b.t).abs().max((&a.q - &b.q).amax()))
        .fold(0.0, f64::max);
    Ok(ProjectionReport {
        max_deviation,
        projected,
        reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{midpoint_constraints, midpoint_lagrangian, ContinuousConstraints, ContinuousLagrangian};
    use crate::reference::catalog::{builtin, NONHOLONOMIC_PARTICLE, ROLLING_DISK};
    use std::collections::BTreeMap;

    fn disk() -> (NonholonomicSystem, ChaplyginSpec) {
        let b = builtin(ROLLING_DISK, &BTreeMap::new()).unwrap();
        let spec = build_chaplygin(&b.system, b.chaplygin_chart.clone().unwrap(), GroupOps::abelian(2)).unwrap();
        (b.system, spec)
    }

    fn base_pair(t0: f64, r0: &[f64], t1: f64, r1: &[f64]) -> ExtendedPair {
        ExtendedPair::from_slices(t0, r0, t1, r1).unwrap()
    }

    #[test]
    fn chart_splits_and_joins() {
        let c = ChaplyginChart::new(4, vec![0, 1]).unwrap();
        let q = Vector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.base_of(&q).as_slice(), &[3.0, 4.0]);
        assert_eq!(c.group_of(&q).as_slice(), &[1.0, 2.0]);
        assert_eq!(c.join(&c.base_of(&q), &c.group_of(&q)), q);
        assert!(ChaplyginChart::new(3, vec![0, 0]).is_err());
        assert!(ChaplyginChart::new(2, vec![0, 1]).is_err());
    }

    #[test]
    fn disk_transition_is_midpoint_heading_roll() {
        let (_, spec) = disk();
        let pair = base_pair(0.0, &[0.2, 0.1], 0.1, &[0.5, 0.4]);
        let f = spec.transition(&pair).unwrap();
        let phi_m: f64 = 0.25;
        assert!((f[0] - phi_m.cos() * 0.3).abs() < 1e-14);
        assert!((f[1] - phi_m.sin() * 0.3).abs() < 1e-14);
    }

    #[test]
    fn particle_and_unconstrained_are_not_chaplygin() {
        let b = builtin(NONHOLONOMIC_PARTICLE, &BTreeMap::new()).unwrap();
        let chart = ChaplyginChart::new(3, vec![0, 2]).unwrap();
        let err = build_chaplygin(&b.system, chart.clone(), GroupOps::abelian(2)).unwrap_err();
        assert!(matches!(err, Error::NotChaplygin(_)));
        let free = NonholonomicSystem::unconstrained(b.system.lagrangian.clone())
            .with_action(GroupActionSpec::translation(3, vec![0, 2]))
            .unwrap();
        let err = build_chaplygin(&free, chart, GroupOps::abelian(2)).unwrap_err();
        assert!(matches!(err, Error::NotChaplygin(_)));
    }

    #[test]
    fn dimension_count_is_enforced() {
        // two constraints transverse to a one-dimensional group
        let l = ContinuousLagrangian::new(3, |_, _, v| 0.5 * v.norm_squared());
        let c = ContinuousConstraints::new(3, 2, |_, _| {
            Matrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 1.0, 1.0, 0.0])
        });
        let sys = NonholonomicSystem::new(midpoint_lagrangian(&l), Some(midpoint_constraints(&c)))
            .unwrap()
            .with_action(GroupActionSpec::translation(3, vec![0]))
            .unwrap();
        let err = build_chaplygin(&sys, ChaplyginChart::new(3, vec![0]).unwrap(), GroupOps::abelian(1)).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation(_)));
    }

    #[test]
    fn disk_invariants_hold() {
        let (_, spec) = disk();
        let report = chaplygin_invariants(&spec, 20, 3).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn disk_is_right_rigid() {
        let (sys, _) = disk();
        let action = sys.action.clone().unwrap();
        let report = rigidity_check(&sys, &action, 5, GroupGrid::default(), 0).unwrap();
        assert!(report.passed);
        assert!(report.witness.is_none());
    }

    #[test]
    fn ignored_group_direction_yields_witness() {
        let l = ContinuousLagrangian::new(4, |_, _, v| 0.5 * v.norm_squared());
        let c = ContinuousConstraints::new(4, 1, |_, q| Matrix::from_row_slice(1, 4, &[-q[1], 0.0, 1.0, 0.0]));
        let sys = NonholonomicSystem::new(midpoint_lagrangian(&l), Some(midpoint_constraints(&c))).unwrap();
        let action = GroupActionSpec::translation(4, vec![3]);
        let report = rigidity_check(&sys, &action, 2, GroupGrid::default(), 0).unwrap();
        assert!(!report.passed);
        assert!(report.witness.unwrap()[0].abs() > 0.0);
    }

    #[test]
    fn forces_vanish_without_connection_or_coupling() {
        // constraint ẋ = 0 with G translating x: A_loc = 0 and f = 0
        let l = ContinuousLagrangian::new(2, |_, _, v| 0.5 * v.norm_squared());
        let c = ContinuousConstraints::new(2, 1, |_, _| Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let sys = NonholonomicSystem::new(midpoint_lagrangian(&l), Some(midpoint_constraints(&c)))
            .unwrap()
            .with_action(GroupActionSpec::translation(2, vec![0]))
            .unwrap();
        let spec = build_chaplygin(&sys, ChaplyginChart::new(2, vec![0]).unwrap(), GroupOps::abelian(1)).unwrap();
        let (fm, fp) = discrete_forces(&spec, &base_pair(0.0, &[0.3], 0.2, &[0.7])).unwrap();
        assert!(fm.norm_max() < 1e-14 && fp.norm_max() < 1e-14);
    }

    #[test]
    fn disk_forces_match_direct_differentiation() {
        let (sys, spec) = disk();
        let pair = base_pair(0.0, &[0.2, 0.1], 0.1, &[0.24, 0.13]);
        let (fm, fp) = discrete_forces(&spec, &pair).unwrap();
        // ℓ_d(r0, r1, f) evaluated directly, differentiated by central differences
        let ell = |r0: &Vector, r1: &Vector, f: &Vector| {
            let q0 = spec.chart().join(r0, &Vector::zeros(2));
            let q1 = spec.chart().join(r1, f);
            sys.lagrangian
                .eval(&ExtendedPair::new(ExtendedPoint::new(0.0, q0), ExtendedPoint::new(0.1, q1)).unwrap())
                .unwrap()
        };
        let (r0, r1) = (pair.p0.q.clone(), pair.p1.q.clone());
        let f = spec.transition(&pair).unwrap();
        let h = 1e-6;
        let ell_f = Vector::from_fn(2, |i, _| {
            let mut e = Vector::zeros(2);
            e[i] = h;
            (ell(&r0, &r1, &(&f + &e)) - ell(&r0, &r1, &(&f - &e))) / (2.0 * h)
        });
        let df = |which: usize, i: usize| {
            let mut e = Vector::zeros(2);
            e[i] = h;
            let (pp, pm) = if which == 0 {
                (base_pair(0.0, (&r0 + &e).as_slice(), 0.1, r1.as_slice()), base_pair(0.0, (&r0 - &e).as_slice(), 0.1, r1.as_slice()))
            } else {
                (base_pair(0.0, r0.as_slice(), 0.1, (&r1 + &e).as_slice()), base_pair(0.0, r0.as_slice(), 0.1, (&r1 - &e).as_slice()))
            };
            (spec.transition(&pp).unwrap() - spec.transition(&pm).unwrap()) / (2.0 * h)
        };
        let a0 = spec.connection_local(&pair.p0).unwrap();
        let a1 = spec.connection_local(&pair.p1).unwrap();
        for i in 0..2 {
            let em = ell_f.dot(&(df(0, i) - a0.column(i)));
            let ep = ell_f.dot(&(df(1, i) + a1.column(i)));
            assert!((fm.dq[i] - em).abs() < 1e-6, "{} vs {em}", fm.dq[i]);
            assert!((fp.dq[i] - ep).abs() < 1e-6, "{} vs {ep}", fp.dq[i]);
        }
        assert!(fm.dt.abs() < 1e-9 && fp.dt.abs() < 1e-9);
    }

    #[test]
    fn reduced_partials_match_finite_differences() {
        let (_, spec) = disk();
        let pair = base_pair(0.0, &[0.2, 0.1], 0.1, &[0.23, 0.14]);
        let a = spec.reduced_lagrangian.partials(&pair).unwrap();
        let f = spec.reduced_lagrangian.fd_partials(&pair).unwrap();
        assert!((a.d1 - f.d1).abs() < 1e-6);
        assert!((a.d3 - f.d3).abs() < 1e-6);
        assert!((a.d2 - f.d2).amax() < 1e-6);
        assert!((a.d4 - f.d4).amax() < 1e-6);
    }

    #[test]
    fn random_triple_has_large_residual() {
        let (_, spec) = disk();
        let r = redla_residual(
            &spec,
            &ExtendedPoint::from_slice(0.0, &[0.0, 0.0]),
            &ExtendedPoint::from_slice(0.1, &[0.03, 0.03]),
            &ExtendedPoint::from_slice(0.3, &[0.5, -0.2]),
        )
        .unwrap();
        assert!(r.amax() > 1e-3);
    }

    #[test]
    fn step_from_rest_is_degenerate_with_energy_flag() {
        let (_, spec) = disk();
        let pair = base_pair(0.0, &[0.0, 0.0], 0.1, &[0.0, 0.0]);
        match step_redla(&spec, &pair, &SolverConfig::default()) {
            Err(Error::Degenerate { near_zero_energy, .. }) => assert!(near_zero_energy),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn abelian_ops_are_additive() {
        let g = GroupOps::abelian(2);
        let a = Vector::from_column_slice(&[1.0, -2.0]);
        let b = Vector::from_column_slice(&[0.5, 0.5]);
        assert_eq!(g.compose(&a, &b), &a + &b);
        assert_eq!(g.compose(&a, &g.inverse(&a)), Vector::zeros(2));
        assert_eq!(g.left(&a, &b), b);
    }
}
