//! Finite-time extinction below the range threshold, the radial Sobolev
//! inequality, and the numerical form of the Harnack counterexample.
//!
//! Whole-space runs are emulated on a uniform core (the grid of the initial
//! data) followed by a geometrically stretched tail out to a far radius. A run
//! is repeated over increasing far radii until two consecutive radii agree on
//! the verdict and, when both extinguish, on the extinction time.

use std::ops::ControlFlow;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equation_core::{check_range, ExponentTriple, Regime};
use crate::error::{Error, Result};
use crate::harnack_verifier::{ball_extremum, least_squares};
use crate::radial_solver::{
    solve, solve_observed, weighted_norm, weighted_norm_values, RadialField, RadialGrid, SnapshotCadence, SolverParams,
    TimeScheme, Trajectory,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtinctionParams {
    /// Far radii tried in order.
    pub outer_radii: Vec<f64>,
    /// Cell growth factor of the stretched tail.
    pub growth: f64,
    /// Gradient regularisation as a fraction of `max u0`.
    pub eps_fraction: f64,
    /// Step-size control of the linearly implicit scheme.
    pub tol: f64,
    /// Extinction floor as a fraction of `v(0)`.
    pub floor_fraction: f64,
    /// `T_max = budget * v(0)^{2-q}`.
    pub budget: f64,
    /// Relative agreement of extinction times between consecutive far radii.
    pub agreement: f64,
}

impl Default for ExtinctionParams {
    fn default() -> Self {
        Self {
            outer_radii: vec![1e8, 1e12, 1e16],
            growth: 1.05,
            eps_fraction: 1e-150,
            tol: 0.02,
            floor_fraction: 1e-6,
            budget: 20.0,
            agreement: 0.05,
        }
    }
}

/// One solve at a fixed far radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarRadiusRun {
    pub outer_radius: f64,
    pub nodes: usize,
    pub extinct: bool,
    pub extinction_time: Option<f64>,
    /// `v` at the end of the run over `v(0)`.
    pub v_end_ratio: f64,
    pub steps: u64,
    pub rejected_steps: u64,
    /// Steps where `v` rose by more than `1e-6 v(0)`.
    pub monotone_violations: usize,
    /// Largest single-step increase of `v`, over `v(0)`.
    pub max_increase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fit window `[0, T_ext / 2]`.
    pub window: (f64, f64),
    /// Minus the fitted slope of `v^{2-q}(t)`; positive when it decreases.
    pub decay_slope: f64,
    pub intercept: f64,
    /// Largest deviation from the line over the range of `v^{2-q}` in the window.
    pub residual_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundChecks {
    /// `s > 1`; always required below the threshold.
    pub s_above_one: bool,
    /// `v` never rose by more than `1e-6 v(0)` in one step.
    pub nonincreasing: bool,
    pub decay_slope_positive: bool,
    /// Fit residual at most 10% of the range.
    pub fit_residual_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionReport {
    pub e: ExponentTriple,
    pub in_range: bool,
    pub threshold: f64,
    pub d: f64,
    /// Norm exponent `d(2-q)/q`, or 1 when `q >= 2`.
    pub s: f64,
    pub v0: f64,
    pub floor: f64,
    pub t_max: f64,
    pub params: ExtinctionParams,
    /// One entry per far radius actually solved.
    pub r_sequence: Vec<FarRadiusRun>,
    pub converged: bool,
    pub extinct: bool,
    /// `(t, v(t))` of the last run, one point per accepted step.
    pub norm_curve: Vec<(f64, f64)>,
    pub extinction_time_emp: Option<f64>,
    /// `T_ext / v(0)^{2-q}`.
    pub c_emp: Option<f64>,
    pub decay: Option<DecayFit>,
    pub bound_check: Option<BoundChecks>,
}

impl ExtinctionReport {
    pub fn bounds_ok(&self) -> bool {
        self.bound_check
            .as_ref()
            .is_some_and(|b| b.s_above_one && b.nonincreasing && b.decay_slope_positive && b.fit_residual_ok)
    }
}

/// Exponent of the tracked norm.
pub fn norm_exponent(e: &ExponentTriple) -> f64 {
    if e.q() < 2.0 {
        e.d() * (2.0 - e.q()) / e.q()
    } else {
        1.0
    }
}

/// The initial data on a uniform core, extended by zero to a stretched tail.
pub fn extend_to(u0: &RadialField, outer_radius: f64, growth: f64) -> Result<RadialField> {
    if !u0.grid().is_uniform() {
        return Err(Error::InvalidParameter("initial data must live on a uniform grid".into()));
    }
    if outer_radius <= u0.radius() {
        return Ok(u0.clone());
    }
    let grid = RadialGrid::stretched(u0.grid().core_intervals(), u0.radius(), outer_radius, growth)?;
    let mut values = u0.values().to_vec();
    values.resize(grid.len(), 0.0);
    RadialField::new(Arc::new(grid), values)
}

fn solver_params(params: &ExtinctionParams, u0: &RadialField, cadence: SnapshotCadence) -> SolverParams {
    SolverParams {
        eps_grad: Some(params.eps_fraction * u0.max()),
        cfl: 0.4,
        cadence,
        scheme: TimeScheme::LinearlyImplicit { tol: params.tol },
    }
}

struct CurveRun {
    summary: FarRadiusRun,
    curve: Vec<(f64, f64)>,
}

fn run_far(u0: &RadialField, e: &ExponentTriple, outer: f64, s: f64, v0: f64, t_max: f64, p: &ExtinctionParams) -> Result<CurveRun> {
    let field = extend_to(u0, outer, p.growth)?;
    let d = e.d();
    let floor = p.floor_fraction * v0;
    let mut curve = vec![(0.0, v0)];
    let mut extinction_time = None;
    let mut violations = 0;
    let mut max_increase: f64 = 0.0;
    let params = solver_params(p, &field, SnapshotCadence::Uniform { count: 1 });
    let traj = solve_observed(&field, e, t_max, &params, |view| {
        let v = weighted_norm_values(view.grid.nodes(), view.values, s, d);
        let last = curve.last().map_or(v0, |c| c.1);
        let inc = (v - last) / v0;
        max_increase = max_increase.max(inc);
        if inc > 1e-6 {
            violations += 1;
        }
        curve.push((view.t, v));
        if v < floor {
            extinction_time = Some(view.t);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    let v_end = curve.last().map_or(v0, |c| c.1);
    Ok(CurveRun {
        summary: FarRadiusRun {
            outer_radius: outer,
            nodes: field.grid().len(),
            extinct: extinction_time.is_some(),
            extinction_time,
            v_end_ratio: v_end / v0,
            steps: traj.solver.steps,
            rejected_steps: traj.solver.rejected_steps,
            monotone_violations: violations,
            max_increase,
        },
        curve,
    })
}

fn agree(a: &FarRadiusRun, b: &FarRadiusRun, tol: f64) -> bool {
    match (a.extinction_time, b.extinction_time) {
        (Some(x), Some(y)) => (x - y).abs() <= tol * y,
        (None, None) => true,
        _ => false,
    }
}

/// Linear fit of `v^{2-q}` on `[0, T/2]`, resampled (linearly in `v^{2-q}`) at 201 equally spaced times.
pub fn fit_decay(curve: &[(f64, f64)], q: f64, t_ext: f64) -> Result<DecayFit> {
    let hi = 0.5 * t_ext;
    let k = 200;
    let mut pts = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let t = hi * i as f64 / k as f64;
        let j = curve.partition_point(|c| c.0 <= t).clamp(1, curve.len() - 1);
        let (t0, y0) = (curve[j - 1].0, curve[j - 1].1.powf(2.0 - q));
        let (t1, y1) = (curve[j].0, curve[j].1.powf(2.0 - q));
        let y = if t1 > t0 { y0 + (t - t0) / (t1 - t0) * (y1 - y0) } else { y0 };
        pts.push((t, y));
    }
    let (slope, intercept) = least_squares(&pts)?;
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let range = ymax - ymin;
    if !(range > 0.0) {
        return Err(Error::DegenerateFit("v^{2-q} is constant on the fit window".into()));
    }
    let dev = pts.iter().map(|&(t, y)| (y - (slope * t + intercept)).abs()).fold(0.0, f64::max);
    Ok(DecayFit { window: (0.0, hi), decay_slope: -slope, intercept, residual_fraction: dev / range })
}

/// Runs the far-radius sequence without requiring extinction. Used directly for
/// supercritical controls and sweeps.
pub fn explore_extinction(u0: &RadialField, e: &ExponentTriple, params: &ExtinctionParams) -> Result<ExtinctionReport> {
    if u0.min() < 0.0 || *u0.values().last().expect("non-empty") != 0.0 {
        return Err(Error::InvalidParameter("initial data must be nonnegative and vanish at its outer radius".into()));
    }
    if params.outer_radii.is_empty() {
        return Err(Error::InvalidParameter("no far radii given".into()));
    }
    let verdict = check_range(e);
    let q = e.q();
    let d = e.d();
    let s = norm_exponent(e);
    let v0 = weighted_norm(u0, s, d);
    let floor = params.floor_fraction * v0;
    let t_max = params.budget * v0.powf(2.0 - q);
    let mut report = ExtinctionReport {
        e: *e,
        in_range: verdict.in_range,
        threshold: verdict.threshold,
        d,
        s,
        v0,
        floor,
        t_max,
        params: params.clone(),
        r_sequence: Vec::new(),
        converged: false,
        extinct: false,
        norm_curve: vec![(0.0, v0)],
        extinction_time_emp: None,
        c_emp: None,
        decay: None,
        bound_check: None,
    };
    if v0 == 0.0 {
        report.converged = true;
        report.extinct = true;
        report.extinction_time_emp = Some(0.0);
        report.c_emp = Some(0.0);
        return Ok(report);
    }
    let mut last_curve = Vec::new();
    for &outer in &params.outer_radii {
        let run = run_far(u0, e, outer, s, v0, t_max, params)?;
        let done = report.r_sequence.last().is_some_and(|prev| agree(prev, &run.summary, params.agreement));
        report.r_sequence.push(run.summary);
        last_curve = run.curve;
        if done {
            report.converged = true;
            break;
        }
    }
    let last = report.r_sequence.last().expect("at least one run");
    report.extinct = last.extinct;
    report.extinction_time_emp = last.extinction_time;
    report.c_emp = last.extinction_time.map(|t| t / v0.powf(2.0 - q));
    let nonincreasing = last.monotone_violations == 0;
    report.norm_curve = last_curve;
    if let Some(t_ext) = report.extinction_time_emp {
        let fit = fit_decay(&report.norm_curve, q, t_ext)?;
        report.bound_check = Some(BoundChecks {
            s_above_one: s > 1.0,
            nonincreasing,
            decay_slope_positive: fit.decay_slope > 0.0,
            fit_residual_ok: fit.residual_fraction <= 0.1,
        });
        report.decay = Some(fit);
    }
    Ok(report)
}

/// Extinction below the threshold: the regime is checked first and a run
/// without extinction before `T_max` is an error.
pub fn run_extinction(u0: &RadialField, e: &ExponentTriple, params: &ExtinctionParams) -> Result<ExtinctionReport> {
    let verdict = check_range(e);
    if e.q() >= 2.0 || verdict.in_range {
        return Err(Error::Regime(format!(
            "extinction needs q < 2 below the threshold {} (q = {})",
            verdict.threshold,
            e.q()
        )));
    }
    let s = norm_exponent(e);
    if !(s > 1.0) {
        return Err(Error::Internal(format!("s = {s} <= 1 below the threshold")));
    }
    let report = explore_extinction(u0, e, params)?;
    if !report.extinct {
        let v_end = report.norm_curve.last().map_or(report.v0, |c| c.1);
        return Err(Error::NoExtinction { v_end, floor: report.floor, t_max: report.t_max });
    }
    Ok(report)
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub q: f64,
    pub threshold: f64,
    pub in_range: bool,
    pub regime: Regime,
    pub extinct: bool,
    pub converged: bool,
    pub extinction_time: Option<f64>,
    pub c_emp: Option<f64>,
    pub v_end_ratio: f64,
    /// Extinction exactly when the range condition fails; `None` at the threshold
    /// itself, where `s = 1` and neither side applies.
    pub dichotomy_ok: Option<bool>,
}

/// Independent runs over `q_values` at fixed `n`, `p` and data, in parallel.
pub fn regime_sweep(u0: &RadialField, n: u32, p: f64, q_values: &[f64], params: &ExtinctionParams) -> Result<Vec<RegimeRow>> {
    q_values
        .par_iter()
        .map(|&q| {
            let e = ExponentTriple::new(n, p, q)?;
            let rep = explore_extinction(u0, &e, params)?;
            let v_end_ratio = rep.norm_curve.last().map_or(1.0, |c| c.1 / rep.v0);
            Ok(RegimeRow {
                q,
                threshold: rep.threshold,
                in_range: rep.in_range,
                regime: e.regime(),
                extinct: rep.extinct,
                converged: rep.converged,
                extinction_time: rep.extinction_time_emp,
                c_emp: rep.c_emp,
                v_end_ratio,
                dichotomy_ok: if (q - rep.threshold).abs() <= 1e-12 * rep.threshold {
                    None
                } else {
                    Some(rep.converged && rep.extinct != rep.in_range)
                },
            })
        })
        .collect()
}

// ---------------------------------------------------------------- Sobolev

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    pub d: f64,
    pub q: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Both sides vanish; the ratio is set to 0.
    pub degenerate: bool,
}

/// `(int |v|^{dq/(d-q)} r^{d-1})^{(d-q)/(dq)} / (int |v'|^q r^{d-1})^{1/q}` with `v'` by
/// central differences (one-sided at the ends) and trapezoid quadrature.
pub fn sobolev_check(v: &RadialField, e: &ExponentTriple) -> Result<SobolevReport> {
    let (d, q) = (e.d(), e.q());
    if !(q >= 1.0 && q < d) {
        return Err(Error::Exponent(format!("the radial Sobolev inequality needs 1 <= q < d (q = {q}, d = {d})")));
    }
    let x = v.nodes();
    let y = v.values();
    let m = y.len();
    let mut dv = vec![0.0; m];
    for j in 0..m {
        dv[j] = if j == 0 {
            (y[1] - y[0]) / (x[1] - x[0])
        } else if j == m - 1 {
            (y[j] - y[j - 1]) / (x[j] - x[j - 1])
        } else {
            (y[j + 1] - y[j - 1]) / (x[j + 1] - x[j - 1])
        };
    }
    let star = d * q / (d - q);
    let lhs = weighted_norm_values(x, y, star, d);
    let rhs = weighted_norm_values(x, &dv, q, d);
    if lhs == 0.0 && rhs == 0.0 {
        return Ok(SobolevReport { d, q, lhs, rhs, ratio: 0.0, degenerate: true });
    }
    Ok(SobolevReport { d, q, lhs, rhs, ratio: lhs / rhs, degenerate: false })
}

// ---------------------------------------------------------------- counterexample

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackConstants {
    pub c: f64,
    pub sigma: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleQuery {
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
    pub center_value: f64,
    pub inf_at_reference: f64,
    /// `c u(x0,t0)^{2-q} r^q - (T_ref - t0)`, zero up to roundoff.
    pub inversion_error: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRecord {
    pub e: ExponentTriple,
    pub constants: HarnackConstants,
    /// Extinction time of a subcritical run, or the horizon of a control.
    pub reference_time: f64,
    /// Pointwise floor `1e-6 max u0`.
    pub floor: f64,
    /// Queries with `T_ref - t0 < t0 / sigma^q` and a centre value above the floor.
    pub admissible: usize,
    pub violations: usize,
    /// The violation with the largest centre value, if any.
    pub witness: Option<CounterexampleQuery>,
    pub queries: Vec<CounterexampleQuery>,
}

/// Pointwise floor for the counterexample, as a fraction of `max u0`.
pub const POINT_FLOOR: f64 = 1e-6;

/// Scans base points `(x0, t0)` over the core nodes and snapshot times with
/// `T_ref - t0 < t0 / sigma^q`, sets `r` from `c u(x0,t0)^{2-q} r^q = T_ref - t0`, and
/// flags a violation when `u(x0,t0) > floor` and `u(x0,t0) > gamma inf_{B_r(x0)} u(., T_ref)`.
/// With `gamma` from a supercritical sweep this is the numerical form of the
/// contradiction `0 < u(x0,t0) <= gamma inf u(., T*) = 0`.
pub fn counterexample_scan(traj: &Trajectory, reference_time: f64, k: HarnackConstants, stride: usize) -> Result<CounterexampleRecord> {
    if !(k.c > 0.0 && k.sigma >= 1.0 && k.gamma >= 1.0) {
        return Err(Error::InvalidParameter(format!("Harnack constants need c > 0, sigma >= 1, gamma >= 1: {k:?}")));
    }
    let q = traj.exponents.q();
    let floor = POINT_FLOOR * traj.snapshots[0].field.max();
    let core = traj.grid().core_intervals();
    let nodes = traj.grid().nodes();
    let radius = traj.grid().radius();
    let mut queries = Vec::new();
    for snap in &traj.snapshots {
        let t0 = snap.t;
        let gap = reference_time - t0;
        if !(gap > 0.0 && gap < t0 / k.sigma.powf(q)) {
            continue;
        }
        for j in (0..=core).step_by(stride.max(1)) {
            let x0 = nodes[j];
            let u = snap.field.values()[j];
            if !(u > floor) {
                continue;
            }
            let r = (gap / (k.c * u.powf(2.0 - q))).powf(1.0 / q);
            if x0 + k.sigma * r >= radius {
                continue;
            }
            let (inf, _) = ball_extremum(traj, x0, r, reference_time, true)?;
            let inversion_error = k.c * u.powf(2.0 - q) * r.powf(q) - gap;
            queries.push(CounterexampleQuery {
                x0,
                t0,
                r,
                center_value: u,
                inf_at_reference: inf,
                inversion_error,
                violation: u > k.gamma * inf,
            });
        }
    }
    let violations = queries.iter().filter(|x| x.violation).count();
    let witness = queries
        .iter()
        .filter(|x| x.violation && x.inf_at_reference < floor)
        .max_by(|a, b| a.center_value.total_cmp(&b.center_value))
        .copied();
    Ok(CounterexampleRecord {
        e: traj.exponents,
        constants: k,
        reference_time,
        floor,
        admissible: queries.len(),
        violations,
        witness,
        queries,
    })
}

/// The counterexample on a subcritical run: re-solves with dense snapshots up to the
/// observed extinction time and scans for a violation at `T*`. A selection error
/// is returned if no admissible base point exists.
pub fn counterexample_demo(
    u0: &RadialField,
    e: &ExponentTriple,
    report: &ExtinctionReport,
    k: HarnackConstants,
) -> Result<CounterexampleRecord> {
    let t_star = report
        .extinction_time_emp
        .ok_or_else(|| Error::InvalidParameter("counterexample needs an observed extinction".into()))?;
    let outer = report.r_sequence.last().map_or(u0.radius(), |r| r.outer_radius);
    let traj = dense_run(u0, e, outer, t_star, &report.params)?;
    let rec = counterexample_scan(&traj, t_star, k, 1)?;
    if rec.admissible == 0 {
        return Err(Error::Selection("no admissible (x0, t0) on the grid".into()));
    }
    Ok(rec)
}

/// Solve with 400 uniform snapshots on `[0, t_end]`, on the grid extended to `outer`.
pub fn dense_run(u0: &RadialField, e: &ExponentTriple, outer: f64, t_end: f64, params: &ExtinctionParams) -> Result<Trajectory> {
    let field = extend_to(u0, outer, params.growth)?;
    solve(&field, e, t_end, &solver_params(params, &field, SnapshotCadence::Uniform { count: 400 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(j: usize) -> RadialField {
        RadialField::uniform(j, 4.0, |r| (1.0 - r * r).max(0.0).powi(2)).unwrap()
    }

    fn quick() -> ExtinctionParams {
        ExtinctionParams { outer_radii: vec![1e8, 1e12], ..Default::default() }
    }

    #[test]
    fn zero_data_is_extinct_at_once() {
        let e = ExponentTriple::new(3, 1.4, 1.3).unwrap();
        let u0 = RadialField::uniform(40, 4.0, |_| 0.0).unwrap();
        let rep = run_extinction(&u0, &e, &quick()).unwrap();
        assert_eq!(rep.extinction_time_emp, Some(0.0));
        assert!(rep.r_sequence.is_empty());
    }

    #[test]
    fn doubling_data_scales_extinction_time() {
        let e = ExponentTriple::new(3, 1.4, 1.4).unwrap();
        let u0 = bump(60);
        let a = run_extinction(&u0, &e, &quick()).unwrap();
        let b = run_extinction(&u0.scaled(2.0), &e, &quick()).unwrap();
        let ratio = b.extinction_time_emp.unwrap() / a.extinction_time_emp.unwrap();
        let want = 2f64.powf(2.0 - e.q());
        assert!((ratio / want - 1.0).abs() < 0.15, "ratio {ratio} vs {want}");
        assert!(a.bounds_ok(), "{:?}", a.bound_check);
    }

    #[test]
    fn in_range_is_rejected() {
        let e = ExponentTriple::new(3, 1.4, 1.7).unwrap();
        assert!(matches!(run_extinction(&bump(20), &e, &quick()), Err(Error::Regime(_))));
    }

    #[test]
    fn sobolev_trivial_and_homogeneous() {
        let e = ExponentTriple::new(3, 2.0, 2.0).unwrap();
        let z = RadialField::uniform(50, 2.0, |_| 0.0).unwrap();
        let rep = sobolev_check(&z, &e).unwrap();
        assert!(rep.degenerate && rep.ratio == 0.0);
        let v = RadialField::uniform(400, 2.0, |r| (1.0 - r).max(0.0)).unwrap();
        let a = sobolev_check(&v, &e).unwrap().ratio;
        for lambda in [0.5, 4.0, 1e3] {
            let b = sobolev_check(&v.scaled(lambda), &e).unwrap().ratio;
            assert!((a - b).abs() <= 1e-14 * a, "{a} {b}");
        }
    }

    #[test]
    fn sobolev_dilation_and_refinement() {
        let e = ExponentTriple::new(3, 2.0, 2.0).unwrap();
        let ratio = |j: usize, lam: f64| {
            let v = RadialField::uniform(j, 4.0, |r| (1.0 - r / lam).max(0.0)).unwrap();
            sobolev_check(&v, &e).unwrap().ratio
        };
        let base = ratio(800, 1.0);
        assert!((ratio(800, 2.0) / base - 1.0).abs() < 0.01);
        let levels: Vec<f64> = [200, 400, 800].iter().map(|&j| ratio(j, 1.0)).collect();
        assert!((levels[1] / levels[2] - 1.0).abs() < 0.01 && (levels[0] / levels[2] - 1.0).abs() < 0.01, "{levels:?}");
    }

    #[test]
    fn sobolev_needs_q_below_d() {
        let e = ExponentTriple::new(1, 2.0, 2.0).unwrap();
        let v = RadialField::uniform(10, 2.0, |r| (1.0 - r).max(0.0)).unwrap();
        assert!(matches!(sobolev_check(&v, &e), Err(Error::Exponent(_))));
    }

    #[test]
    fn decay_fit_is_exact_on_a_line() {
        let q: f64 = 1.5;
        let curve: Vec<(f64, f64)> = (0..=50).map(|i| {
            let t = i as f64 * 0.02;
            (t, (1.0 - t).max(0.0).powf(1.0 / (2.0 - q)))
        }).collect();
        let fit = fit_decay(&curve, q, 1.0).unwrap();
        assert!((fit.decay_slope - 1.0).abs() < 1e-9 && fit.residual_fraction < 1e-9, "{fit:?}");
    }
}
