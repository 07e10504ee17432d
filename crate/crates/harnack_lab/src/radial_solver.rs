//! Finite-volume solver for the radial problem
//!
//! ```text
//! u_t = eta r^{1-d} (r^{d-1} |u'|^{q-2} u')'   on (0, R) x (0, T)
//! u'(0, t) = 0,  u(R, t) = 0
//! ```
//!
//! Node `j` owns the control volume between the midpoints of its neighbours;
//! the node at `r = 0` owns `[0, r_{1/2}]`. Volumes carry the exact measure
//! `(r_+^d - r_-^d)/d`, so the symmetry condition at the centre needs no
//! special stencil. The gradient coefficient is regularised as
//! `a_eps(g) = (g^2 + eps^2)^{(q-2)/2}`, evaluated through `hypot` so that
//! tiny `eps` does not underflow.

use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equation_core::ExponentTriple;
use crate::error::{Error, Result};

/// Node set: a uniform core `0, h, .., R_core` optionally followed by a
/// geometrically stretched tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    delta_r: f64,
    core_intervals: usize,
}

impl RadialGrid {
    pub fn uniform(intervals: usize, radius: f64) -> Result<Self> {
        if intervals < 2 || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "uniform grid needs at least 2 intervals and R > 0 (got {intervals}, {radius})"
            )));
        }
        let h = radius / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|j| j as f64 * h).collect();
        nodes[intervals] = radius;
        Ok(Self { nodes, delta_r: h, core_intervals: intervals })
    }

    /// Uniform core on `[0, core_radius]`, then cells growing by `growth`
    /// until `outer_radius` is passed. The last node is moved onto `outer_radius`.
    pub fn stretched(core_intervals: usize, core_radius: f64, outer_radius: f64, growth: f64) -> Result<Self> {
        if !(growth > 1.0 && outer_radius > core_radius) {
            return Err(Error::InvalidParameter(format!(
                "stretched grid needs growth > 1 and outer radius beyond the core (got {growth}, {outer_radius})"
            )));
        }
        let mut g = Self::uniform(core_intervals, core_radius)?;
        let mut h = g.delta_r;
        let mut last = core_radius;
        while last < outer_radius {
            h *= growth;
            last += h;
            g.nodes.push(last);
        }
        let n = g.nodes.len();
        if n >= 2 && g.nodes[n - 1] - outer_radius > 0.5 * (g.nodes[n - 1] - g.nodes[n - 2]) {
            g.nodes.pop();
        }
        *g.nodes.last_mut().expect("non-empty grid") = outer_radius;
        Ok(g)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Spacing of the uniform core.
    pub fn delta_r(&self) -> f64 {
        self.delta_r
    }

    pub fn radius(&self) -> f64 {
        *self.nodes.last().expect("non-empty grid")
    }

    pub fn core_intervals(&self) -> usize {
        self.core_intervals
    }

    pub fn is_uniform(&self) -> bool {
        self.nodes.len() == self.core_intervals + 1
    }
}

/// A radial function sampled on the nodes of a [`RadialGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {j}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    /// Uniform grid with `intervals` cells on `[0, radius]`.
    pub fn uniform(intervals: usize, radius: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(Arc::new(RadialGrid::uniform(intervals, radius)?), f)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn delta_r(&self) -> f64 {
        self.grid.delta_r()
    }

    pub fn radius(&self) -> f64 {
        self.grid.radius()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * lambda).collect() }
    }

    /// Linear interpolation in `r`; zero beyond the outer radius.
    pub fn sample(&self, r: f64) -> f64 {
        let r = r.abs();
        let nodes = self.grid.nodes();
        if r >= self.radius() {
            return 0.0;
        }
        let j = nodes.partition_point(|&x| x <= r).saturating_sub(1);
        let (r0, r1) = (nodes[j], nodes[j + 1]);
        let w = (r - r0) / (r1 - r0);
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }

    /// Restriction to the uniform core.
    pub fn core(&self) -> Result<Self> {
        if self.grid.is_uniform() {
            return Ok(self.clone());
        }
        let m = self.grid.core_intervals();
        let grid = Arc::new(RadialGrid::uniform(m, self.grid.nodes()[m])?);
        Self::new(grid, self.values[..=m].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SnapshotCadence {
    /// `count` times spaced geometrically from `first_fraction * T` to `T`.
    Geometric { count: usize, first_fraction: f64 },
    /// `count` equally spaced times ending at `T`.
    Uniform { count: usize },
    Times { times: Vec<f64> },
}

impl Default for SnapshotCadence {
    fn default() -> Self {
        SnapshotCadence::Geometric { count: 64, first_fraction: 1e-3 }
    }
}

impl SnapshotCadence {
    /// Strictly increasing positive output times in `(0, T]`, always ending at `T`.
    pub fn times(&self, t_end: f64) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = match self {
            SnapshotCadence::Geometric { count, first_fraction } => {
                if *count == 0 || !(*first_fraction > 0.0 && *first_fraction <= 1.0) {
                    return Err(Error::InvalidParameter("geometric cadence needs count >= 1 and 0 < first_fraction <= 1".into()));
                }
                if *count == 1 {
                    vec![t_end]
                } else {
                    let ratio = (1.0 / first_fraction).powf(1.0 / (*count - 1) as f64);
                    (0..*count).map(|k| t_end * first_fraction * ratio.powi(k as i32)).collect()
                }
            }
            SnapshotCadence::Uniform { count } => {
                if *count == 0 {
                    return Err(Error::InvalidParameter("uniform cadence needs count >= 1".into()));
                }
                (1..=*count).map(|k| t_end * k as f64 / *count as f64).collect()
            }
            SnapshotCadence::Times { times } => times.iter().copied().filter(|&t| t > 0.0 && t < t_end).collect(),
        };
        out.sort_by(f64::total_cmp);
        out.dedup();
        if let Some(last) = out.last_mut() {
            if (*last - t_end).abs() <= 1e-12 * t_end {
                *last = t_end;
            }
        }
        if out.last() != Some(&t_end) {
            out.push(t_end);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TimeScheme {
    /// Forward Euler with the monotonicity time-step bound.
    Explicit,
    /// Backward Euler with the gradient coefficient frozen at the old level.
    /// Each step is one tridiagonal M-matrix solve; the step is sized so that
    /// no value moves by more than `tol * max|u|`.
    LinearlyImplicit { tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Absolute gradient regularisation; `None` means `1e-8 max(u0)/R`.
    pub eps_grad: Option<f64>,
    pub cfl: f64,
    pub cadence: SnapshotCadence,
    pub scheme: TimeScheme,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { eps_grad: None, cfl: 0.4, cadence: SnapshotCadence::default(), scheme: TimeScheme::Explicit }
    }
}

impl SolverParams {
    pub fn resolved_eps(&self, u0: &RadialField) -> f64 {
        self.eps_grad.unwrap_or_else(|| 1e-8 * u0.max().abs().max(f64::MIN_POSITIVE) / u0.radius())
    }
}

/// Parameters actually used by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub eps_grad: f64,
    pub cfl: f64,
    pub cadence: SnapshotCadence,
    pub scheme: TimeScheme,
    pub steps: u64,
    pub rejected_steps: u64,
    pub min_dt: f64,
    pub max_dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub field: RadialField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub exponents: ExponentTriple,
    pub solver: SolverRecord,
}

impl Trajectory {
    /// A trajectory from given snapshots, e.g. an exact solution sampled on a grid.
    /// Times must start at 0 and increase; all fields must share one grid.
    pub fn from_snapshots(snapshots: Vec<Snapshot>, exponents: ExponentTriple) -> Result<Self> {
        let first = snapshots.first().ok_or_else(|| Error::InvalidParameter("no snapshots".into()))?;
        if first.t != 0.0 {
            return Err(Error::InvalidParameter("the first snapshot must be at t = 0".into()));
        }
        for w in snapshots.windows(2) {
            if !(w[1].t > w[0].t) || !Arc::ptr_eq(w[0].field.grid(), w[1].field.grid()) {
                return Err(Error::InvalidParameter("snapshot times must increase on a shared grid".into()));
            }
        }
        let times = snapshots.iter().map(|s| s.t).collect();
        let solver = SolverRecord {
            eps_grad: 0.0,
            cfl: 0.0,
            cadence: SnapshotCadence::Times { times },
            scheme: TimeScheme::Explicit,
            steps: 0,
            rejected_steps: 0,
            min_dt: 0.0,
            max_dt: 0.0,
        };
        Ok(Self { snapshots, exponents, solver })
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn final_field(&self) -> &RadialField {
        &self.snapshots.last().expect("trajectory has at least the initial snapshot").field
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.snapshots[0].field.grid()
    }

    pub fn t_end(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.t)
    }

    /// Values multiplied by `lambda`; time stamps unchanged.
    pub fn scaled(&self, lambda: f64) -> Self {
        let snapshots =
            self.snapshots.iter().map(|s| Snapshot { t: s.t, field: s.field.scaled(lambda) }).collect();
        Self { snapshots, exponents: self.exponents, solver: self.solver.clone() }
    }

    /// The solution `lambda u(x, lambda^{q-2} t)`: values times `lambda`, time stamps
    /// times `lambda^{2-q}`.
    pub fn intrinsic_rescale(&self, lambda: f64) -> Self {
        let k = lambda.powf(2.0 - self.exponents.q());
        let snapshots =
            self.snapshots.iter().map(|s| Snapshot { t: s.t * k, field: s.field.scaled(lambda) }).collect();
        Self { snapshots, exponents: self.exponents, solver: self.solver.clone() }
    }

    /// Bilinear lookup: linear in `r` within each snapshot, linear in time between them.
    /// `x` is a signed coordinate on a line through the origin.
    pub fn value_at_point(&self, x: f64, t: f64) -> Result<f64> {
        let (k, w) = self.bracket(t)?;
        let a = self.snapshots[k].field.sample(x);
        if w == 0.0 {
            return Ok(a);
        }
        Ok(a + w * (self.snapshots[k + 1].field.sample(x) - a))
    }

    /// Gap between the snapshots bracketing `t`; zero at a snapshot time.
    pub fn snapshot_gap(&self, t: f64) -> Result<f64> {
        let (k, w) = self.bracket(t)?;
        if w == 0.0 {
            return Ok(0.0);
        }
        Ok(self.snapshots[k + 1].t - self.snapshots[k].t)
    }

    /// Value at node `j` and time `t`, linear in time between bracketing snapshots.
    pub fn value_at(&self, j: usize, t: f64) -> Result<f64> {
        let (k, w) = self.bracket(t)?;
        let a = self.snapshots[k].field.values()[j];
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.snapshots[k + 1].field.values()[j];
        Ok(a + w * (b - a))
    }

    /// Index `k` and weight `w` with `t = (1-w) t_k + w t_{k+1}`.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let times = &self.snapshots;
        let last = times.len() - 1;
        if !(t >= 0.0 && t <= times[last].t) {
            return Err(Error::Geometry(format!("time {t} outside the trajectory span [0, {}]", times[last].t)));
        }
        if t == times[last].t {
            return Ok((last, 0.0));
        }
        let k = times.partition_point(|s| s.t <= t) - 1;
        let w = (t - times[k].t) / (times[k + 1].t - times[k].t);
        Ok((k, w))
    }

    /// Whole field at time `t` by linear interpolation between snapshots.
    pub fn field_at(&self, t: f64) -> Result<RadialField> {
        let (k, w) = self.bracket(t)?;
        let a = &self.snapshots[k].field;
        if w == 0.0 {
            return Ok(a.clone());
        }
        let b = &self.snapshots[k + 1].field;
        let values = a.values().iter().zip(b.values()).map(|(x, y)| x + w * (y - x)).collect();
        RadialField::new(a.grid().clone(), values)
    }
}

/// Geometric quantities of the finite-volume discretisation.
struct Stencil {
    /// Measure `(r_+^d - r_-^d)/d` of the control volume of each free node.
    vol: Vec<f64>,
    /// `r_{j+1/2}^{d-1} / h_{j+1/2}` for each face.
    face: Vec<f64>,
    /// Node spacing across each face.
    h: Vec<f64>,
}

impl Stencil {
    fn new(nodes: &[f64], d: f64) -> Self {
        let m = nodes.len() - 1;
        let mids: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let h: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let vol = (0..m)
            .map(|j| {
                let lo = if j == 0 { 0.0 } else { mids[j - 1] };
                (mids[j].powf(d) - lo.powf(d)) / d
            })
            .collect();
        let face = mids.iter().zip(&h).map(|(rm, hh)| rm.powf(d - 1.0) / hh).collect();
        Self { vol, face, h }
    }
}

fn a_eps(g: f64, eps: f64, q: f64) -> f64 {
    if q == 2.0 {
        1.0
    } else {
        g.hypot(eps).powf(q - 2.0)
    }
}

/// Per-run state for one solve.
struct Stepper {
    eta: f64,
    q: f64,
    eps: f64,
    cfl: f64,
    st: Stencil,
    /// conductance `eta r^{d-1} a / h` per face
    k: Vec<f64>,
    flux: Vec<f64>,
    work: Vec<f64>,
    cprime: Vec<f64>,
}

impl Stepper {
    fn new(nodes: &[f64], e: &ExponentTriple, eps: f64, cfl: f64) -> Self {
        let st = Stencil::new(nodes, e.d());
        let m = nodes.len() - 1;
        Self {
            eta: e.eta(),
            q: e.q(),
            eps,
            cfl,
            st,
            k: vec![0.0; m],
            flux: vec![0.0; m],
            work: vec![0.0; m],
            cprime: vec![0.0; m],
        }
    }

    fn conductances(&mut self, u: &[f64]) {
        for (f, kf) in self.k.iter_mut().enumerate() {
            let g = (u[f + 1] - u[f]) / self.st.h[f];
            *kf = self.eta * self.st.face[f] * a_eps(g, self.eps, self.q);
        }
    }

    /// Largest forward Euler step keeping the update monotone, times `cfl`.
    fn explicit_dt(&self) -> f64 {
        let slope = if self.q > 2.0 { self.q - 1.0 } else { 1.0 };
        let m = self.st.vol.len();
        let mut dt = f64::INFINITY;
        for j in 0..m {
            let left = if j == 0 { 0.0 } else { self.k[j - 1] };
            let denom = slope * (self.k[j] + left);
            if denom > 0.0 {
                dt = dt.min(self.cfl * self.st.vol[j] / denom);
            }
        }
        dt
    }

    fn explicit_step(&mut self, u: &mut [f64], dt: f64) {
        let m = self.st.vol.len();
        for f in 0..m {
            self.flux[f] = self.k[f] * (u[f + 1] - u[f]);
        }
        for j in 0..m {
            let left = if j == 0 { 0.0 } else { self.flux[j - 1] };
            u[j] += dt * (self.flux[j] - left) / self.st.vol[j];
        }
    }

    /// Solves `(V/dt + A(u_old)) u_new = V/dt u_old` into `out`.
    ///
    /// Thomas elimination written for the M-matrix structure: with
    /// `s_j = V_j/dt + k_{j-1} s_{j-1}/(s_{j-1} + k_{j-1})` every pivot is
    /// `s_j + k_j` and no subtraction occurs, so conductances many orders of
    /// magnitude above `V/dt` lose no accuracy.
    fn implicit_solve(&mut self, u: &[f64], dt: f64, out: &mut [f64]) {
        let m = self.st.vol.len();
        let k = &self.k;
        let piv = &mut self.work;
        let rhs = &mut self.cprime;
        let mut s_prev = 0.0;
        for j in 0..m {
            let vj = self.st.vol[j] / dt;
            let s = if j == 0 { vj } else { vj + k[j - 1] * s_prev / (s_prev + k[j - 1]) };
            // the last free node couples to the Dirichlet node through k[m-1]
            piv[j] = s + k[j];
            let carried = if j == 0 { 0.0 } else { k[j - 1] * rhs[j - 1] / piv[j - 1] };
            rhs[j] = vj * u[j] + carried;
            s_prev = s;
        }
        out[m - 1] = rhs[m - 1] / piv[m - 1];
        for j in (0..m - 1).rev() {
            out[j] = (rhs[j] + k[j] * out[j + 1]) / piv[j];
        }
        out[m] = 0.0;
    }
}

/// Conservative right-hand side `eta r^{1-d}(r^{d-1} a_eps(u') u')'` at each free node.
pub fn conservative_rhs(u: &RadialField, e: &ExponentTriple, eps: f64) -> Vec<f64> {
    let mut s = Stepper::new(u.nodes(), e, eps, 1.0);
    s.conductances(u.values());
    let m = s.st.vol.len();
    let v = u.values();
    let mut out = vec![0.0; m + 1];
    for j in 0..m {
        let right = s.k[j] * (v[j + 1] - v[j]);
        let left = if j == 0 { 0.0 } else { s.k[j - 1] * (v[j] - v[j - 1]) };
        out[j] = (right - left) / s.st.vol[j];
    }
    out
}

/// Non-divergence stencil `eta a_eps(u')((q-1)u'' + (d-1)/r u')` on a uniform grid,
/// with the ghost value `u_{-1} = u_1` and `(d-1)/r u'` replaced by `(d-1)u''` at `r = 0`.
pub fn non_divergence_rhs(u: &RadialField, e: &ExponentTriple, eps: f64) -> Result<Vec<f64>> {
    if !u.grid().is_uniform() {
        return Err(Error::InvalidParameter("non-divergence stencil needs a uniform grid".into()));
    }
    let h = u.delta_r();
    let v = u.values();
    let m = v.len() - 1;
    let (q, d, eta) = (e.q(), e.d(), e.eta());
    let mut out = vec![0.0; m + 1];
    for j in 0..m {
        let (um, up) = if j == 0 { (v[1], v[1]) } else { (v[j - 1], v[j + 1]) };
        let g = (up - um) / (2.0 * h);
        let urr = (up - 2.0 * v[j] + um) / (h * h);
        let radial = if j == 0 { (d - 1.0) * urr } else { (d - 1.0) / (j as f64 * h) * g };
        out[j] = eta * a_eps(g, eps, q) * ((q - 1.0) * urr + radial);
    }
    Ok(out)
}

/// State handed to a step observer after every accepted step.
pub struct StepView<'a> {
    pub t: f64,
    pub dt: f64,
    pub values: &'a [f64],
    pub grid: &'a RadialGrid,
}

/// Solves on `[0, T]` recording the snapshots of `params.cadence`.
pub fn solve(u0: &RadialField, e: &ExponentTriple, t_end: f64, params: &SolverParams) -> Result<Trajectory> {
    solve_observed(u0, e, t_end, params, |_| ControlFlow::Continue(()))
}

/// As [`solve`], calling `observe` after each accepted step. Breaking out of the
/// observer ends the run early; the current state is then stored as the last snapshot.
pub fn solve_observed(
    u0: &RadialField,
    e: &ExponentTriple,
    t_end: f64,
    params: &SolverParams,
    mut observe: impl FnMut(&StepView) -> ControlFlow<()>,
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("final time {t_end} must be positive")));
    }
    if u0.min() < 0.0 {
        return Err(Error::InvalidParameter("initial data must be nonnegative".into()));
    }
    if *u0.values().last().expect("non-empty") != 0.0 {
        return Err(Error::InvalidParameter("initial data must vanish at r = R".into()));
    }
    if !(params.cfl > 0.0 && params.cfl <= 1.0) {
        return Err(Error::InvalidParameter(format!("cfl = {} must lie in (0, 1]", params.cfl)));
    }
    let eps = params.resolved_eps(u0);
    if !(eps > 0.0) && e.q() < 2.0 {
        return Err(Error::InvalidParameter("eps_grad must be positive when q < 2".into()));
    }
    let out_times = params.cadence.times(t_end)?;
    let grid = u0.grid().clone();
    let umax0 = u0.max();
    let blow_up = 1e3 * umax0;
    let bound_tol = 1e-12 * umax0;

    let mut record = SolverRecord {
        eps_grad: eps,
        cfl: params.cfl,
        cadence: params.cadence.clone(),
        scheme: params.scheme,
        steps: 0,
        rejected_steps: 0,
        min_dt: f64::INFINITY,
        max_dt: 0.0,
    };
    let mut snapshots = vec![Snapshot { t: 0.0, field: u0.clone() }];
    let mut u = u0.values().to_vec();
    let mut trial = u.clone();
    let mut t = 0.0;
    let mut next_out = 0;
    let mut stepper = Stepper::new(grid.nodes(), e, eps, params.cfl);
    let mut dt_guess = match params.scheme {
        TimeScheme::Explicit => 0.0,
        TimeScheme::LinearlyImplicit { .. } => 1e-6 * t_end,
    };

    if umax0 == 0.0 {
        for &to in &out_times {
            snapshots.push(Snapshot { t: to, field: u0.clone() });
        }
        return Ok(Trajectory { snapshots, exponents: *e, solver: record });
    }

    let mut stopped = false;
    while next_out < out_times.len() {
        let target = out_times[next_out];
        stepper.conductances(&u);
        let mut dt = match params.scheme {
            TimeScheme::Explicit => stepper.explicit_dt(),
            TimeScheme::LinearlyImplicit { .. } => dt_guess,
        };
        let lands = dt >= target - t;
        if lands {
            dt = target - t;
        }
        if dt < 1e-16 * t_end && !lands {
            return Err(Error::NonConvergence { t, dt });
        }
        match params.scheme {
            TimeScheme::Explicit => stepper.explicit_step(&mut u, dt),
            TimeScheme::LinearlyImplicit { tol } => {
                stepper.implicit_solve(&u, dt, &mut trial);
                let scale = u.iter().copied().fold(0.0, f64::max);
                let change = u.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if change > tol * scale {
                    record.rejected_steps += 1;
                    dt_guess = 0.5 * dt;
                    if dt_guess < 1e-16 * t_end {
                        return Err(Error::NonConvergence { t, dt: dt_guess });
                    }
                    continue;
                }
                if change < tol * scale / 3.0 {
                    dt_guess = 1.5 * dt;
                } else if !lands {
                    dt_guess = dt;
                }
                std::mem::swap(&mut u, &mut trial);
            }
        }
        t = if lands { target } else { t + dt };
        record.steps += 1;
        record.min_dt = record.min_dt.min(dt);
        record.max_dt = record.max_dt.max(dt);

        for v in u.iter_mut() {
            if *v > blow_up || !v.is_finite() {
                return Err(Error::BlowUp { t, value: *v, limit: blow_up });
            }
            if *v < -bound_tol || *v > umax0 + bound_tol {
                return Err(Error::Internal(format!(
                    "maximum principle violated at t = {t}: value {v:e} outside [0, {umax0:e}]"
                )));
            }
            *v = v.clamp(0.0, umax0);
        }
        let last = u.len() - 1;
        u[last] = 0.0;

        let view = StepView { t, dt, values: &u, grid: &grid };
        if observe(&view).is_break() {
            stopped = true;
        }
        if lands || stopped {
            snapshots.push(Snapshot { t, field: RadialField::new(grid.clone(), u.clone())? });
            if lands {
                next_out += 1;
            }
        }
        if stopped {
            break;
        }
    }
    if record.steps == 0 {
        record.min_dt = 0.0;
    }
    Ok(Trajectory { snapshots, exponents: *e, solver: record })
}

/// `(int_0^R |u|^s r^{d-1} dr)^{1/s}` by the composite trapezoid rule.
///
/// Exponents below 1 are accepted for diagnostic use; the result is then not a norm.
pub fn weighted_norm(u: &RadialField, s: f64, d: f64) -> f64 {
    weighted_norm_values(u.nodes(), u.values(), s, d)
}

pub(crate) fn weighted_norm_values(nodes: &[f64], values: &[f64], s: f64, d: f64) -> f64 {
    let f = |j: usize| -> f64 {
        let v = values[j].abs();
        if v == 0.0 {
            0.0
        } else {
            v.powf(s) * weight(nodes[j], d)
        }
    };
    let mut acc = 0.0;
    let mut prev = f(0);
    for j in 1..nodes.len() {
        let cur = f(j);
        acc += 0.5 * (nodes[j] - nodes[j - 1]) * (prev + cur);
        prev = cur;
    }
    acc.powf(1.0 / s)
}

/// `r^{d-1}` with the value at `r = 0` taken exactly.
pub(crate) fn weight(r: f64, d: f64) -> f64 {
    if r == 0.0 {
        if d == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        r.powf(d - 1.0)
    }
}

/// A smooth test function with its support box, used by [`weak_form_residual`].
pub trait TestFunction {
    /// `(r_max, t_lo, t_hi)`: support inside `[0, r_max) x (t_lo, t_hi)`.
    fn support(&self) -> (f64, f64, f64);
    fn value(&self, r: f64, t: f64) -> f64;
    fn dt(&self, r: f64, t: f64) -> f64;
    fn dr(&self, r: f64, t: f64) -> f64;
}

/// Product of standard bumps `exp(-1/(1-x^2))` in `r/width` and `(t - center)/half_span`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub width: f64,
    pub t_center: f64,
    pub half_span: f64,
}

fn bump1(x: f64) -> (f64, f64) {
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - x * x;
    let b = (-1.0 / s).exp();
    (b, b * (-2.0 * x / (s * s)))
}

impl TestFunction for Bump {
    fn support(&self) -> (f64, f64, f64) {
        (self.width, self.t_center - self.half_span, self.t_center + self.half_span)
    }
    fn value(&self, r: f64, t: f64) -> f64 {
        bump1(r / self.width).0 * bump1((t - self.t_center) / self.half_span).0
    }
    fn dt(&self, r: f64, t: f64) -> f64 {
        bump1(r / self.width).0 * bump1((t - self.t_center) / self.half_span).1 / self.half_span
    }
    fn dr(&self, r: f64, t: f64) -> f64 {
        bump1(r / self.width).1 / self.width * bump1((t - self.t_center) / self.half_span).0
    }
}

/// Relative residual of the weak formulation
/// `int int u phi_t - eta |u'|^{q-2} u' phi' r^{d-1} dr dt = 0` over `[t1, t2]`.
///
/// Space uses the trapezoid rule with one-sided cell gradients averaged to the
/// nodes; time uses the trapezoid rule over the stored snapshots in `[t1, t2]`.
/// The result is divided by the integral of the absolute values of both terms.
pub fn weak_form_residual(traj: &Trajectory, phi: &dyn TestFunction, t1: f64, t2: f64) -> Result<f64> {
    let (r_max, lo, hi) = phi.support();
    let radius = traj.grid().radius();
    if !(r_max < radius) || lo < t1 || hi > t2 || !(t1 < t2) {
        return Err(Error::SupportViolation(format!(
            "support [0,{r_max}) x ({lo},{hi}) must lie strictly inside (-{radius},{radius}) x ({t1},{t2})"
        )));
    }
    if t1 < 0.0 || t2 > traj.t_end() {
        return Err(Error::SupportViolation(format!("[{t1},{t2}] outside the trajectory span")));
    }
    let e = &traj.exponents;
    let (q, d, eta) = (e.q(), e.d(), e.eta());
    let nodes = traj.grid().nodes();
    let slice = |t: f64, vals: &[f64]| -> (f64, f64) {
        let mut acc = 0.0;
        let mut mag = 0.0;
        let m = nodes.len();
        let mut prev: Option<(f64, f64)> = None;
        for j in 0..m {
            let r = nodes[j];
            let g = if j == 0 {
                0.0
            } else if j == m - 1 {
                (vals[j] - vals[j - 1]) / (r - nodes[j - 1])
            } else {
                (vals[j + 1] - vals[j - 1]) / (nodes[j + 1] - nodes[j - 1])
            };
            let flux = if q == 2.0 { g } else { g.abs().powf(q - 2.0) * g };
            let w = weight(r, d);
            let a = vals[j] * phi.dt(r, t) * w;
            let b = eta * flux * phi.dr(r, t) * w;
            let cur = (a - b, a.abs() + b.abs());
            if let Some(p) = prev {
                let h = r - nodes[j - 1];
                acc += 0.5 * h * (p.0 + cur.0);
                mag += 0.5 * h * (p.1 + cur.1);
            }
            prev = Some(cur);
        }
        (acc, mag)
    };
    let snaps: Vec<&Snapshot> = traj.snapshots.iter().filter(|s| s.t >= t1 && s.t <= t2).collect();
    if snaps.len() < 3 {
        return Err(Error::InvalidParameter("fewer than three snapshots inside [t1, t2]".into()));
    }
    let mut total = 0.0;
    let mut scale = 0.0;
    let mut prev = slice(snaps[0].t, snaps[0].field.values());
    for w in snaps.windows(2) {
        let cur = slice(w[1].t, w[1].field.values());
        let h = w[1].t - w[0].t;
        total += 0.5 * h * (prev.0 + cur.0);
        scale += 0.5 * h * (prev.1 + cur.1);
        prev = cur;
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(total / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(n: u32, p: f64, q: f64) -> ExponentTriple {
        ExponentTriple::new(n, p, q).unwrap()
    }

    #[test]
    fn norm_examples() {
        let u = RadialField::uniform(200, 2.0, |_| 1.0).unwrap();
        for (s, d) in [(1.0, 1.0), (2.0, 3.0), (1.5, 2.5)] {
            let exact = (2f64.powf(d) / d).powf(1.0 / s);
            let got = weighted_norm(&u, s, d);
            // trapezoid error for r^{d-1} is O(h^2)
            assert!((got - exact).abs() / exact < 1e-3, "{s} {d}: {got} vs {exact}");
        }
        let z = RadialField::uniform(50, 1.0, |_| 0.0).unwrap();
        assert_eq!(weighted_norm(&z, 2.0, 3.0), 0.0);
        let u = RadialField::uniform(4000, 1.0, |r| (1.0 - r).max(0.0)).unwrap();
        assert!((weighted_norm(&u, 1.0, 3.0) - 1.0 / 12.0).abs() < 1e-6);
    }

    #[test]
    fn zero_data_stays_zero() {
        let u0 = RadialField::uniform(50, 1.0, |_| 0.0).unwrap();
        for q in [1.5, 2.0, 3.0] {
            let traj = solve(&u0, &triple(3, 2.0, q), 1.0, &SolverParams::default()).unwrap();
            assert!(traj.snapshots.iter().all(|s| s.field.values().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn snapshots_land_on_requested_times() {
        let u0 = RadialField::uniform(40, 2.0, |r| (1.0 - r * r).max(0.0)).unwrap();
        let params = SolverParams { cadence: SnapshotCadence::Times { times: vec![0.01, 0.02, 0.05] }, ..Default::default() };
        let traj = solve(&u0, &triple(2, 2.0, 2.0), 0.1, &params).unwrap();
        assert_eq!(traj.times(), vec![0.0, 0.01, 0.02, 0.05, 0.1]);
        for s in &traj.snapshots {
            assert_eq!(*s.field.values().last().unwrap(), 0.0);
        }
    }

    #[test]
    fn cadence_times() {
        let t = SnapshotCadence::Geometric { count: 5, first_fraction: 1e-4 }.times(2.0).unwrap();
        assert_eq!(t.len(), 5);
        assert!((t[0] - 2e-4).abs() < 1e-18);
        assert_eq!(*t.last().unwrap(), 2.0);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        let t = SnapshotCadence::Uniform { count: 4 }.times(1.0).unwrap();
        assert_eq!(t, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let e = triple(2, 2.0, 2.0);
        let u0 = RadialField::uniform(10, 1.0, |r| 1.0 - r).unwrap();
        assert!(solve(&u0, &e, 0.0, &SolverParams::default()).is_err());
        let bad = RadialField::uniform(10, 1.0, |_| 1.0).unwrap();
        assert!(solve(&bad, &e, 1.0, &SolverParams::default()).is_err());
        let neg = RadialField::uniform(10, 1.0, |r| r - 1.0).unwrap();
        assert!(solve(&neg, &e, 1.0, &SolverParams::default()).is_err());
        assert!(RadialField::uniform(10, 1.0, |_| f64::NAN).is_err());
    }

    #[test]
    fn centre_cell_matches_ghost_node_for_heat() {
        // for q = 2 both stencils reduce to d*2(u1-u0)/h^2 at the centre
        let e = triple(3, 2.0, 2.0);
        let u = RadialField::uniform(100, 1.0, |r| (1.0 - r * r).powi(2)).unwrap();
        let a = conservative_rhs(&u, &e, 0.0);
        let b = non_divergence_rhs(&u, &e, 0.0).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 * b[0].abs());
    }

    #[test]
    fn stretched_grid_shape() {
        let g = RadialGrid::stretched(100, 2.0, 1e6, 1.05).unwrap();
        assert_eq!(g.nodes()[100], 2.0);
        assert_eq!(g.radius(), 1e6);
        assert!(!g.is_uniform());
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        let f = RadialField::from_fn(Arc::new(g), |r| (-r).exp()).unwrap();
        let c = f.core().unwrap();
        assert_eq!(c.values().len(), 101);
        assert_eq!(c.radius(), 2.0);
    }

    #[test]
    fn implicit_step_keeps_bounds_and_decays() {
        let e = triple(3, 1.4, 1.3);
        let u0 = RadialField::uniform(100, 3.0, |r| (1.0 - r * r).max(0.0).powi(2)).unwrap();
        let params = SolverParams {
            scheme: TimeScheme::LinearlyImplicit { tol: 0.02 },
            eps_grad: Some(1e-20),
            ..Default::default()
        };
        let traj = solve(&u0, &e, 0.05, &params).unwrap();
        let maxes: Vec<f64> = traj.snapshots.iter().map(|s| s.field.max()).collect();
        assert!(maxes.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(*maxes.last().unwrap() < 1.0);
    }
}
