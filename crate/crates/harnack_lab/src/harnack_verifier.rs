//! Empirical checks of the intrinsic Harnack inequality on computed trajectories.
//!
//! Trajectories are radial, so a spatial point is a signed coordinate `x` on a
//! line through the origin and `u(x,t)` means `u(|x|,t)`. The ball `B_r(x)`
//! meets the radii `|y|` with `||y| - |x|| < r`, which is the set sampled for
//! infima and suprema. The spatial domain is the ball of the trajectory's grid
//! and the time domain is `[0, T]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equation_core::ExponentTriple;
use crate::error::{Error, Result};
use crate::radial_solver::Trajectory;

/// Queries with `u(x0,t0)` below this fraction of `max u0` are rejected.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

/// Largest snapshot gap near a probe time, as a fraction of `theta r^q`.
pub const MAX_GAP_FRACTION: f64 = 1.0 / 50.0;

/// Relative tolerance of the chain soundness lookup.
pub const CHAIN_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackQuery {
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
    pub c: f64,
    pub mu: f64,
    /// Spatial and temporal slack of the probe cylinder `Q_{sigma r}(theta)`.
    #[serde(default = "one")]
    pub sigma: f64,
    pub direction: Direction,
}

fn one() -> f64 {
    1.0
}

impl HarnackQuery {
    pub fn forward(x0: f64, t0: f64, r: f64, c: f64, mu: f64) -> Self {
        Self { x0, t0, r, c, mu, sigma: 1.0, direction: Direction::Forward }
    }

    pub fn backward(x0: f64, t0: f64, r: f64, c: f64, mu: f64) -> Self {
        Self { x0, t0, r, c, mu, sigma: 1.0, direction: Direction::Backward }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0 && self.c > 0.0 && self.mu >= 1.0 && self.sigma >= 1.0;
        if !ok || !self.x0.is_finite() || !self.t0.is_finite() {
            return Err(Error::InvalidParameter(format!("query needs r > 0, c > 0, mu >= 1, sigma >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub query: HarnackQuery,
    pub theta: f64,
    /// `t0 + theta r^q` (forward) or `t0 - theta r^q` (backward).
    pub probe_time: f64,
    pub probe_value: f64,
    pub extremum: f64,
    pub extremum_radius: f64,
    pub empirical_mu: f64,
    /// Snapshot gap at the probe time.
    pub snapshot_gap: f64,
    /// Containment held and the snapshot gap is at most `theta r^q / 50`.
    pub geometry_ok: bool,
    pub pass: bool,
}

/// Max of the initial data, the reference for the positivity floor.
fn data_scale(traj: &Trajectory) -> f64 {
    traj.snapshots[0].field.max()
}

/// Extremum of `u(., t)` over the grid nodes inside `B_r(x)`, the centre and the two
/// interpolated edge radii `|x| +- r` (the extremum over the open ball equals the one
/// over its closure). Returns the value and the radius where it is attained.
pub fn ball_extremum(traj: &Trajectory, x: f64, r: f64, t: f64, inf: bool) -> Result<(f64, f64)> {
    let (k, w) = traj.bracket(t)?;
    let a = traj.snapshots[k].field.values();
    let b = if w > 0.0 { Some(traj.snapshots[k + 1].field.values()) } else { None };
    let nodes = traj.grid().nodes();
    let mut best = (traj.value_at_point(x, t)?, x.abs());
    for y in [x.abs() + r, (x.abs() - r).abs()] {
        let v = traj.value_at_point(y, t)?;
        if (inf && v < best.0) || (!inf && v > best.0) {
            best = (v, y);
        }
    }
    let lo = (x.abs() - r).max(0.0);
    let hi = x.abs() + r;
    let start = nodes.partition_point(|&y| y < lo);
    for (j, &y) in nodes.iter().enumerate().skip(start) {
        if y >= hi {
            break;
        }
        if (y - x.abs()).abs() >= r {
            continue;
        }
        let v = match b {
            Some(b) => a[j] + w * (b[j] - a[j]),
            None => a[j],
        };
        if (inf && v < best.0) || (!inf && v > best.0) {
            best = (v, y);
        }
    }
    Ok(best)
}

fn contained(traj: &Trajectory, x: f64, t: f64, l: f64, half: f64) -> std::result::Result<(), String> {
    let radius = traj.grid().radius();
    let t_end = traj.t_end();
    if x.abs() + l >= radius {
        return Err(format!("space: |x| + {l} = {} reaches the outer radius {radius}", x.abs() + l));
    }
    if t - half < 0.0 {
        return Err(format!("past: t - {half} = {} is before 0", t - half));
    }
    if t + half > t_end {
        return Err(format!("future: t + {half} = {} is after T = {t_end}", t + half));
    }
    Ok(())
}

fn check(traj: &Trajectory, q: &HarnackQuery) -> Result<HarnackReport> {
    q.validate()?;
    let qq = traj.exponents.q();
    let u0 = traj.value_at_point(q.x0, q.t0)?;
    let floor = POSITIVITY_FLOOR * data_scale(traj);
    if !(u0 > floor) {
        return Err(Error::DeadPoint { value: u0, floor });
    }
    let theta = q.c * u0.powf(2.0 - qq);
    let span = theta * q.r.powf(qq);
    contained(traj, q.x0, q.t0, q.sigma * q.r, theta * (q.sigma * q.r).powf(qq)).map_err(Error::Geometry)?;
    let (probe_time, inf) = match q.direction {
        Direction::Forward => (q.t0 + span, true),
        Direction::Backward => (q.t0 - span, false),
    };
    let (extremum, extremum_radius) = ball_extremum(traj, q.x0, q.r, probe_time, inf)?;
    let empirical_mu = match q.direction {
        Direction::Forward if extremum > 0.0 => u0 / extremum,
        Direction::Forward => f64::INFINITY,
        Direction::Backward => extremum / u0,
    };
    let snapshot_gap = traj.snapshot_gap(probe_time)?;
    let geometry_ok = snapshot_gap <= MAX_GAP_FRACTION * span;
    Ok(HarnackReport {
        query: *q,
        theta,
        probe_time,
        probe_value: u0,
        extremum,
        extremum_radius,
        empirical_mu,
        snapshot_gap,
        geometry_ok,
        pass: empirical_mu <= q.mu && geometry_ok,
    })
}

/// `u(x0,t0) <= mu inf_{B_r(x0)} u(., t0 + theta r^q)` with `theta = c u(x0,t0)^{2-q}`.
pub fn forward_check(traj: &Trajectory, q: &HarnackQuery) -> Result<HarnackReport> {
    if q.direction != Direction::Forward {
        return Err(Error::InvalidParameter("forward_check needs a forward query".into()));
    }
    check(traj, q)
}

/// `sup_{B_r(x0)} u(., t0 - theta r^q) <= mu u(x0,t0)`.
pub fn backward_check(traj: &Trajectory, q: &HarnackQuery) -> Result<HarnackReport> {
    if q.direction != Direction::Backward {
        return Err(Error::InvalidParameter("backward_check needs a backward query".into()));
    }
    check(traj, q)
}

pub fn harnack_check(traj: &Trajectory, q: &HarnackQuery) -> Result<HarnackReport> {
    check(traj, q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub direction: Direction,
    pub x0: f64,
    pub t0: f64,
    pub r: f64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMax {
    pub direction: Direction,
    pub r: f64,
    /// Largest empirical mu over admissible base points; NaN if none was admissible.
    pub max_mu: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSweep {
    pub c: f64,
    pub rows: Vec<HarnackReport>,
    pub skipped: Vec<SkippedQuery>,
    pub maxima: Vec<SweepMax>,
}

impl MuSweep {
    /// Largest entry over all radii and both directions.
    pub fn overall_max(&self) -> f64 {
        self.maxima.iter().map(|m| m.max_mu).filter(|m| !m.is_nan()).fold(f64::NAN, f64::max)
    }

    pub fn overall_max_for(&self, direction: Direction) -> f64 {
        self.maxima
            .iter()
            .filter(|m| m.direction == direction)
            .map(|m| m.max_mu)
            .filter(|m| !m.is_nan())
            .fold(f64::NAN, f64::max)
    }
}

/// Forward and backward checks for every base point and radius, with `mu = inf`.
/// Inadmissible queries are kept as skipped rows with their reason.
pub fn empirical_mu_sweep(traj: &Trajectory, base_points: &[(f64, f64)], radii: &[f64], c: f64) -> Result<MuSweep> {
    let mut queries = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        for &r in radii {
            for &(x0, t0) in base_points {
                let q = HarnackQuery { x0, t0, r, c, mu: f64::INFINITY, sigma: 1.0, direction: dir };
                q.validate()?;
                queries.push(q);
            }
        }
    }
    let results: Vec<_> = queries.par_iter().map(|q| (q, check(traj, q))).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (q, res) in results {
        match res {
            Ok(rep) => rows.push(rep),
            Err(e @ (Error::Geometry(_) | Error::DeadPoint { .. })) => skipped.push(SkippedQuery {
                direction: q.direction,
                x0: q.x0,
                t0: q.t0,
                r: q.r,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let mut maxima = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        for &r in radii {
            let sel: Vec<f64> = rows
                .iter()
                .filter(|x| x.query.direction == dir && x.query.r == r)
                .map(|x| x.empirical_mu)
                .collect();
            let max_mu = sel.iter().copied().fold(f64::NAN, f64::max);
            maxima.push(SweepMax { direction: dir, r, max_mu, count: sel.len() });
        }
    }
    Ok(MuSweep { c, rows, skipped, maxima })
}

// ---------------------------------------------------------------- chains

/// Constants `(c, mu, sigma)` of a basic forward Harnack inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConstants {
    pub c: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub q: f64,
    pub sigma_t: f64,
    pub base: BaseConstants,
    /// False when `sigma_t >= base.sigma` and the base constants are returned unchanged.
    pub reduced: bool,
    pub kappa: f64,
    pub kappa_ceil: u32,
    pub alpha: f64,
    pub sigma_x: f64,
    /// Waiting-time coefficient of the time-covered inequality.
    pub c: f64,
    /// Its constant `base.mu^{ceil(kappa)+1}`.
    pub mu: f64,
    /// `rho_i / r` for `i = 0..=ceil(kappa)`.
    pub rho_factors: Vec<f64>,
    /// `(sigma_t - 1) / sigma_x`; the space chain uses `rho = varrho r`.
    pub varrho: f64,
    /// Waiting-time coefficient of the space-covered inequality.
    pub space_c: f64,
    /// Bound `ceil((alpha varrho)^{-1}) + 1` on the space chain length.
    pub space_steps: u32,
}

/// Constants of the time covering, and of the space covering built on top of it
/// with total slack `sigma = sigma_t`.
pub fn chain_constants(sigma_t: f64, base: BaseConstants, e: &ExponentTriple) -> Result<ChainParams> {
    if !(sigma_t > 1.0) || !(base.c > 0.0) || !(base.mu >= 1.0) || !(base.sigma > 1.0) {
        return Err(Error::InvalidParameter(format!("chain constants need sigma_t > 1 and valid base constants: {base:?}")));
    }
    let q = e.q();
    let (reduced, kappa, kappa_ceil, alpha, sigma_x, c, mu, rho_factors) = if sigma_t >= base.sigma {
        (false, 1.0, 1, 1.0, base.sigma, base.c, base.mu, vec![1.0])
    } else {
        let kappa = (base.sigma.powf(q) - 1.0) / (sigma_t.powf(q) - 1.0);
        let kc = kappa.ceil();
        let alpha = kappa.powf(-1.0 / q);
        let sigma_x = alpha * (base.sigma * 1f64.max(base.mu.powf((2.0 - q) / q * kc)) + 1.0);
        let c = base.c * (kc + 1.0) / kappa;
        let rho: Vec<f64> = (0..=kc as u32).map(|i| base.mu.powf((2.0 - q) * f64::from(i) / q) * alpha).collect();
        (true, kappa, kc as u32, alpha, sigma_x, c, base.mu.powf(kc + 1.0), rho)
    };
    let varrho = (sigma_t - 1.0) / sigma_x;
    let space_steps = (1.0 / (alpha * varrho)).ceil() as u32 + 1;
    let space_c = c * varrho.powf(q) * (1..=space_steps).map(|k| mu.powf((q - 2.0) * f64::from(k - 1))).sum::<f64>();
    Ok(ChainParams {
        q,
        sigma_t,
        base,
        reduced,
        kappa,
        kappa_ceil,
        alpha,
        sigma_x,
        c,
        mu,
        rho_factors,
        varrho,
        space_c,
        space_steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainMode {
    /// Iterates the base inequality at a fixed point with radii `rho_i`.
    Time,
    /// Iterates the time-covered inequality with the fixed radius `varrho r`.
    Space,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub index: u32,
    /// Point the step starts from.
    pub x: f64,
    pub t: f64,
    pub u: f64,
    /// Radius of the Harnack application.
    pub radius: f64,
    /// Landing point of the application.
    pub x_star: f64,
    pub t_star: f64,
    pub harnack_pass: bool,
    pub empirical_mu: f64,
    /// Snapshot gap at the landing time was at most `theta r^q / 50`.
    pub interpolation_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPoint {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub mode: ChainMode,
    pub start: ChainPoint,
    pub target: ChainPoint,
    pub r: f64,
    /// Constant of each application.
    pub step_mu: f64,
    pub steps: Vec<ChainStep>,
    /// Points `(x_i, t_i)` with `u(x_{i-1},t_{i-1}) = step_mu u(x_i,t_i)`.
    pub points: Vec<ChainPoint>,
    /// Applications used; bounded by `step_bound`.
    pub applications: u32,
    pub step_bound: u32,
    /// Space mode: applications until `x_i` equals the target point.
    pub space_index: Option<u32>,
    pub space_bound: Option<u32>,
    /// The iteration stopped before the last application because the path stayed above level.
    pub ended_early: bool,
    /// Every application passed its forward check.
    pub harnack_ok: bool,
    /// Every link satisfies `u(prev) <= step_mu u(next)` up to `CHAIN_TOLERANCE`.
    pub sound: bool,
    /// `u(start) / u(target)`, compared with `step_mu^applications`.
    pub ratio: f64,
    pub certified: bool,
}

/// Walks along the right-angled path `(xs,ts) -> (xh,ts) -> (xh,th)` and returns the first
/// point where `u` falls to `level`, or `None` if it stays above.
fn first_hit(traj: &Trajectory, xs: f64, ts: f64, xh: f64, th: f64, level: f64) -> Result<Option<(f64, f64)>> {
    let u_start = traj.value_at_point(xs, ts)?;
    if u_start <= level {
        return Ok(Some((xs, ts)));
    }
    // space leg, whole grid cells
    if xs != xh {
        let h = traj.grid().delta_r();
        let dir = (xh - xs).signum();
        let dist = (xh - xs).abs();
        let cells = (dist / h).ceil() as usize;
        let mut prev = (xs, u_start);
        for i in 1..=cells {
            let x = if i == cells { xh } else { xs + dir * h * i as f64 };
            let v = traj.value_at_point(x, ts)?;
            if v <= level {
                // linear root between prev and x on the piecewise-linear profile
                let (xa, va) = prev;
                let s = (va - level) / (va - v);
                let xr = xa + s * (x - xa);
                return Ok(Some((xr, ts)));
            }
            prev = (x, v);
        }
    }
    // time leg: piecewise linear between snapshots
    let mut tp = ts;
    let mut vp = traj.value_at_point(xh, ts)?;
    let times = traj.times();
    let start = times.partition_point(|&s| s <= ts);
    for &s in times[start..].iter().take_while(|&&s| s < th).chain(std::iter::once(&th)) {
        let v = traj.value_at_point(xh, s)?;
        if v <= level {
            let w = (vp - level) / (vp - v);
            return Ok(Some((xh, tp + w * (s - tp))));
        }
        tp = s;
        vp = v;
    }
    Ok(None)
}

/// Executes a Harnack chain from `start` to `target` (points `(x, t)`).
///
/// The radius `r` of the covered inequality is recovered from the target time,
/// `t_hat = t0 + c u(x0,t0)^{2-q} r^q`, with `c = params.c` in time mode and
/// `params.space_c` in space mode. Each application is a forward check, and the
/// path search follows the right-angled path towards the target.
pub fn run_chain(
    traj: &Trajectory,
    start: (f64, f64),
    target: (f64, f64),
    params: &ChainParams,
    mode: ChainMode,
) -> Result<ChainTrace> {
    let q = traj.exponents.q();
    if (q - params.q).abs() > 1e-12 {
        return Err(Error::InvalidParameter("chain constants computed for another q".into()));
    }
    let (x0, t0) = start;
    let (xh, th) = target;
    let u0 = traj.value_at_point(x0, t0)?;
    let floor = POSITIVITY_FLOOR * data_scale(traj);
    if !(u0 > floor) {
        return Err(Error::DeadPoint { value: u0, floor });
    }
    let uh = traj.value_at_point(xh, th)?;
    let start_pt = ChainPoint { x: x0, t: t0, u: u0 };
    let target_pt = ChainPoint { x: xh, t: th, u: uh };
    let (c_cov, step_c, step_mu, ball_a, sigma_space, sigma_time) = match mode {
        ChainMode::Time => (params.c, params.base.c, params.base.mu, 1.0, params.base.sigma, params.base.sigma),
        ChainMode::Space => (params.space_c, params.c, params.mu, params.alpha, params.sigma_x, params.sigma_t),
    };
    let step_bound = match mode {
        ChainMode::Time => params.kappa_ceil + 1,
        ChainMode::Space => params.space_steps,
    };
    let mut trace = ChainTrace {
        mode,
        start: start_pt.clone(),
        target: target_pt,
        r: 0.0,
        step_mu,
        steps: Vec::new(),
        points: vec![start_pt],
        applications: 0,
        step_bound,
        space_index: None,
        space_bound: None,
        ended_early: false,
        harnack_ok: true,
        sound: true,
        ratio: if uh > 0.0 { u0 / uh } else { f64::INFINITY },
        certified: false,
    };
    if x0 == xh && t0 == th {
        trace.certified = true;
        return Ok(trace);
    }
    if !(th > t0) {
        return Err(Error::Geometry(format!("target time {th} is not after the start time {t0}")));
    }
    let r = ((th - t0) / (c_cov * u0.powf(2.0 - q))).powf(1.0 / q);
    trace.r = r;
    let reach = match mode {
        ChainMode::Time => params.alpha * r,
        ChainMode::Space => r,
    };
    if (xh - x0).abs() > reach * (1.0 + 1e-12) {
        return Err(Error::Geometry(format!("target is {} away, beyond the reach {reach}", (xh - x0).abs())));
    }
    if mode == ChainMode::Space {
        trace.space_bound = Some((1.0 / (params.alpha * params.varrho)).ceil() as u32);
    }
    let t_tol = 1e-12 * th.abs().max(1.0);

    let (mut x, mut t, mut u) = (x0, t0, u0);
    let mut i: u32 = 0;
    loop {
        let nominal = match mode {
            ChainMode::Time => {
                let k = (i as usize).min(params.rho_factors.len() - 1);
                params.rho_factors[k] * r
            }
            ChainMode::Space => params.varrho * r,
        };
        let theta = step_c * u.powf(2.0 - q);
        let mut radius = nominal;
        let mut t_star = t + theta * radius.powf(q);
        let last = t_star >= th - t_tol;
        if last {
            // shrink the radius to land exactly on the target time
            radius = ((th - t) / theta).powf(1.0 / q).min(nominal);
            t_star = th;
        }
        if trace.applications >= step_bound {
            // the bound only holds while every application is certified
            if trace.harnack_ok {
                return Err(Error::Internal(format!(
                    "chain needs more than {step_bound} applications (mode {mode:?}, x = {x}, t = {t})"
                )));
            }
            break;
        }
        contained(traj, x, t, sigma_space * radius, theta * (sigma_time * radius).powf(q))
            .map_err(|m| Error::Room(format!("application {} at (x={x}, t={t}), radius {radius}: {m}", i + 1)))?;
        let ball = ball_a * radius;
        let x_star = if (xh - x).abs() <= ball { xh } else { x + (xh - x).signum() * ball };
        let query = HarnackQuery { x0: x, t0: t, r: ball, c: step_c / ball_a.powf(q), mu: step_mu, sigma: 1.0, direction: Direction::Forward };
        let rep = check(traj, &query)?;
        trace.applications += 1;
        trace.harnack_ok &= rep.empirical_mu <= step_mu;
        trace.steps.push(ChainStep {
            index: i + 1,
            x,
            t,
            u,
            radius,
            x_star,
            t_star,
            harnack_pass: rep.empirical_mu <= step_mu,
            empirical_mu: rep.empirical_mu,
            interpolation_ok: rep.geometry_ok,
        });
        if mode == ChainMode::Space && trace.space_index.is_none() && x_star == xh {
            trace.space_index = Some(trace.applications);
        }
        let level = u / step_mu;
        if last {
            if x_star != xh {
                if trace.harnack_ok {
                    return Err(Error::Internal("last application does not reach the target point".into()));
                }
                break;
            }
            let v = traj.value_at_point(xh, th)?;
            trace.sound &= u <= step_mu * v * (1.0 + CHAIN_TOLERANCE);
            trace.points.push(ChainPoint { x: xh, t: th, u: v });
            break;
        }
        match first_hit(traj, x_star, t_star, xh, th, level)? {
            None => {
                let v = traj.value_at_point(xh, th)?;
                trace.sound &= u <= step_mu * v * (1.0 + CHAIN_TOLERANCE);
                trace.points.push(ChainPoint { x: xh, t: th, u: v });
                trace.ended_early = true;
                if mode == ChainMode::Space && trace.space_index.is_none() {
                    trace.space_index = Some(trace.applications);
                }
                break;
            }
            Some((xn, tn)) => {
                let v = traj.value_at_point(xn, tn)?;
                trace.sound &= u <= step_mu * v * (1.0 + CHAIN_TOLERANCE);
                trace.points.push(ChainPoint { x: xn, t: tn, u: v });
                if mode == ChainMode::Space && trace.space_index.is_none() && xn == xh {
                    trace.space_index = Some(trace.applications);
                }
                x = xn;
                t = tn;
                u = v;
                i += 1;
            }
        }
    }
    if let (Some(ix), Some(bound)) = (trace.space_index, trace.space_bound) {
        if ix > bound && trace.harnack_ok {
            return Err(Error::Internal(format!("space index {ix} exceeds its bound {bound}")));
        }
    }
    let reached = trace.points.last().is_some_and(|p| p.x == xh && p.t == th);
    trace.certified = trace.harnack_ok
        && reached
        && trace.sound
        && trace.ratio <= step_mu.powf(f64::from(trace.applications)) * (1.0 + CHAIN_TOLERANCE);
    Ok(trace)
}

// ---------------------------------------------------------------- oscillation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationFit {
    pub center: (f64, f64),
    pub r_base: f64,
    /// `(rho, osc over B_rho)`.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_positive: bool,
}

/// Oscillation of `u(., t)` over the closed ball of radius `rho` about `x`.
pub fn oscillation(traj: &Trajectory, x: f64, rho: f64, t: f64) -> Result<f64> {
    let (lo, _) = ball_extremum(traj, x, rho, t, true)?;
    let (hi, _) = ball_extremum(traj, x, rho, t, false)?;
    Ok(hi - lo)
}

/// Least-squares fit of `log osc` against `log(rho / R_base)`.
pub fn oscillation_decay(traj: &Trajectory, center: (f64, f64), r_base: f64, rho_list: &[f64]) -> Result<OscillationFit> {
    let (x, t) = center;
    if rho_list.len() < 2 {
        return Err(Error::DegenerateFit("need at least two radii".into()));
    }
    let radius = traj.grid().radius();
    let mut samples = Vec::with_capacity(rho_list.len());
    for &rho in rho_list {
        if !(rho > 0.0 && rho <= r_base) || x.abs() + rho > radius {
            return Err(Error::Geometry(format!("ball of radius {rho} about {x} is not nested in B_{r_base} within the domain")));
        }
        let osc = oscillation(traj, x, rho, t)?;
        if !(osc > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateFit(format!("oscillation {osc:e} over radius {rho}")));
        }
        samples.push((rho, osc));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(r, o)| ((r / r_base).ln(), o.ln())).collect();
    let (slope, intercept) = least_squares(&pts)?;
    Ok(OscillationFit { center, r_base, samples, slope, intercept, slope_positive: slope > 0.0 })
}

/// Ordinary least squares line `y = slope x + intercept`.
pub fn least_squares(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_solver::{RadialField, RadialGrid, Snapshot};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn sampled(e: ExponentTriple, times: &[f64], intervals: usize, radius: f64, f: impl Fn(f64, f64) -> f64) -> Trajectory {
        let grid = Arc::new(RadialGrid::uniform(intervals, radius).unwrap());
        let snapshots = times
            .iter()
            .map(|&t| Snapshot { t, field: RadialField::from_fn(grid.clone(), |r| f(r, t)).unwrap() })
            .collect();
        Trajectory::from_snapshots(snapshots, e).unwrap()
    }

    fn heat_kernel() -> Trajectory {
        let e = ExponentTriple::new(3, 2.0, 2.0).unwrap();
        let times: Vec<f64> = (0..=2000).map(|i| 0.2 * i as f64 / 2000.0).collect();
        sampled(e, &times, 400, 2.0, |r, t| {
            let s = t + 0.05;
            (-r * r / (4.0 * s)).exp() / s.powf(1.5)
        })
    }

    #[test]
    fn constant_slice_gives_unit_mu() {
        let e = ExponentTriple::new(2, 2.0, 1.5).unwrap();
        let times: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let traj = sampled(e, &times, 100, 1.0, |_, _| 3.0);
        let f = forward_check(&traj, &HarnackQuery::forward(0.3, 0.4, 0.2, 1.0, 1.0)).unwrap();
        let b = backward_check(&traj, &HarnackQuery::backward(0.3, 0.4, 0.2, 1.0, 1.0)).unwrap();
        assert_eq!(f.empirical_mu, 1.0);
        assert_eq!(b.empirical_mu, 1.0);
        assert!(f.pass && b.pass);
        let sweep = empirical_mu_sweep(&traj, &[(0.1, 0.3), (0.4, 0.5)], &[0.1, 0.2], 1.0).unwrap();
        assert!(sweep.maxima.iter().all(|m| m.max_mu == 1.0), "{:?}", sweep.maxima);
    }

    #[test]
    fn doubling_r_scales_the_waiting_time() {
        let traj = heat_kernel();
        let a = forward_check(&traj, &HarnackQuery::forward(0.2, 0.05, 0.05, 2.0, 10.0)).unwrap();
        let b = forward_check(&traj, &HarnackQuery::forward(0.2, 0.05, 0.1, 2.0, 10.0)).unwrap();
        let q = traj.exponents.q();
        assert_eq!(a.theta, b.theta);
        let ratio = (b.probe_time - 0.05) / (a.probe_time - 0.05);
        assert!((ratio - 2f64.powf(q)).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_forward_mu_matches_closed_form() {
        let traj = heat_kernel();
        let (x0, t0, r, c) = (0.3, 0.05, 0.1, 1.0);
        let rep = forward_check(&traj, &HarnackQuery::forward(x0, t0, r, c, 100.0)).unwrap();
        let g = |x: f64, t: f64| {
            let s = t + 0.05;
            (-x * x / (4.0 * s)).exp() / s.powf(1.5)
        };
        // inf of the decreasing kernel over B_r(x0) sits at the outer edge
        let t1 = t0 + c * r * r;
        let exact = g(x0, t0) / g(x0 + r, t1);
        assert!(rep.pass);
        assert!((rep.empirical_mu - exact).abs() / exact < 2e-3, "{} vs {exact}", rep.empirical_mu);
    }

    #[test]
    fn rejects_dead_points_and_bad_geometry() {
        let e = ExponentTriple::new(2, 2.0, 1.5).unwrap();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let traj = sampled(e, &times, 100, 1.0, |r, _| (0.5 - r).max(0.0));
        assert!(matches!(
            forward_check(&traj, &HarnackQuery::forward(0.8, 0.5, 0.05, 1.0, 2.0)),
            Err(Error::DeadPoint { .. })
        ));
        assert!(matches!(
            forward_check(&traj, &HarnackQuery::forward(0.1, 0.5, 0.95, 1.0, 2.0)),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            forward_check(&traj, &HarnackQuery::backward(0.1, 0.5, 0.05, 1.0, 2.0)),
            Err(Error::InvalidParameter(_))
        ));
        let sweep = empirical_mu_sweep(&traj, &[(0.8, 0.5), (0.1, 0.5)], &[0.05], 0.1).unwrap();
        assert_eq!(sweep.skipped.len(), 2);
        assert_eq!(sweep.rows.len(), 2);
    }

    // d/dc log(u(x0,t0)/u(x0+r,t0+c r^2)) has the sign of 2n s - (x0+r)^2 for the kernel
    // with time offset s, so a shorter wait weakens the infimum only in the far field
    #[test]
    fn shorter_wait_weakens_the_infimum_in_the_far_field() {
        let traj = heat_kernel();
        let far = [(0.9, 0.05), (1.1, 0.05), (1.3, 0.06)];
        let mut last = 0.0;
        for c in [2.0, 1.0, 0.5, 0.25, 0.1] {
            let s = empirical_mu_sweep(&traj, &far, &[0.1], c).unwrap();
            let m = s.overall_max_for(Direction::Forward);
            assert!(m >= last, "{c}: {m} < {last}");
            last = m;
        }
        let centre = |c| empirical_mu_sweep(&traj, &[(0.0, 0.05)], &[0.1], c).unwrap().overall_max();
        assert!(centre(2.0) > centre(0.25));
    }

    #[test]
    fn chain_constant_identities() {
        let e = ExponentTriple::new(3, 2.0, 1.5).unwrap();
        let base = BaseConstants { c: 0.7, mu: 3.0, sigma: 2.0 };
        let p = chain_constants(2.0, base, &e).unwrap();
        assert_eq!((p.kappa, p.alpha, p.rho_factors[0]), (1.0, 1.0, 1.0));
        assert!(!p.reduced);
        let p = chain_constants(1.3, base, &e).unwrap();
        assert!(p.reduced && p.kappa > 1.0);
        let e2 = ExponentTriple::new(3, 2.0, 2.0).unwrap();
        let p2 = chain_constants(1.5, base, &e2).unwrap();
        assert!(p2.rho_factors.iter().all(|&f| f == p2.alpha));
        let sum: f64 = (0..=p2.kappa_ceil).map(|i| base.c * base.mu.powf(0.0 * f64::from(i)) / p2.kappa).sum();
        assert!((sum - p2.c).abs() < 1e-12 * p2.c);
    }

    #[test]
    fn chain_to_itself_is_trivial() {
        let traj = heat_kernel();
        let e = traj.exponents;
        let p = chain_constants(1.5, BaseConstants { c: 0.5, mu: 5.0, sigma: 2.0 }, &e).unwrap();
        let tr = run_chain(&traj, (0.2, 0.08), (0.2, 0.08), &p, ChainMode::Time).unwrap();
        assert!(tr.certified && tr.steps.is_empty());
    }

    #[test]
    fn heat_chains_respect_step_bounds() {
        let traj = heat_kernel();
        let e = traj.exponents;
        let base = BaseConstants { c: 0.5, mu: 20.0, sigma: 2.0 };
        let p = chain_constants(1.5, base, &e).unwrap();
        let (x0, t0) = (0.1, 0.08);
        let r = 0.3;
        let th = t0 + p.c * r * r;
        let tr = run_chain(&traj, (x0, t0), (x0 + 0.9 * p.alpha * r, th), &p, ChainMode::Time).unwrap();
        assert!(tr.applications <= p.kappa_ceil + 1);
        assert!(tr.sound && tr.harnack_ok && tr.certified, "{tr:?}");
        let ths = t0 + p.space_c * r * r;
        let ts = run_chain(&traj, (x0, t0), (x0 + r, ths), &p, ChainMode::Space).unwrap();
        assert!(ts.applications <= p.space_steps);
        assert!(ts.space_index.unwrap() <= ts.space_bound.unwrap());
        assert!(ts.sound, "{ts:?}");
    }

    #[test]
    fn chain_reports_the_side_without_room() {
        let traj = heat_kernel();
        let p = chain_constants(1.5, BaseConstants { c: 0.5, mu: 20.0, sigma: 2.0 }, &traj.exponents).unwrap();
        let err = run_chain(&traj, (1.8, 0.08), (1.8, 0.08 + p.c * 0.09), &p, ChainMode::Time).unwrap_err();
        assert!(matches!(&err, Error::Room(m) if m.contains("space")), "{err}");
    }

    #[test]
    fn affine_profile_has_unit_slope() {
        let e = ExponentTriple::new(2, 2.0, 1.5).unwrap();
        let traj = sampled(e, &[0.0, 1.0], 200, 1.0, |r, _| 2.0 * r);
        for x in [0.0, 0.5] {
            let fit = oscillation_decay(&traj, (x, 0.5), 0.4, &[0.0123, 0.05, 0.1, 0.2, 0.37]).unwrap();
            assert!((fit.slope - 1.0).abs() < 1e-12, "{}", fit.slope);
        }
        let flat = sampled(e, &[0.0, 1.0], 200, 1.0, |_, _| 2.0);
        assert!(matches!(oscillation_decay(&flat, (0.3, 0.5), 0.2, &[0.05, 0.1]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn heat_oscillation_slope_is_stable() {
        let e = ExponentTriple::new(3, 2.0, 2.0).unwrap();
        let f = |r: f64, t: f64| {
            let s = t + 0.05;
            (-r * r / (4.0 * s)).exp() / s.powf(1.5)
        };
        let rhos = [0.02, 0.04, 0.08, 0.16];
        let a = oscillation_decay(&sampled(e, &[0.0, 0.1], 200, 2.0, f), (0.3, 0.1), 0.2, &rhos).unwrap();
        let b = oscillation_decay(&sampled(e, &[0.0, 0.1], 400, 2.0, f), (0.3, 0.1), 0.2, &rhos).unwrap();
        assert!(a.slope > 0.0 && a.slope <= 2.0);
        assert!((a.slope - b.slope).abs() / b.slope < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn intrinsic_scaling_covariance(k in 0usize..3, x0 in 0.0f64..0.5, t0 in 0.2f64..0.5, r in 0.05f64..0.2, c in 0.2f64..1.0) {
            let lambda = [0.5, 2.0, 10.0][k];
            let e = ExponentTriple::new(3, 1.8, 1.5).unwrap();
            let times: Vec<f64> = (0..=400).map(|i| 2.0 * i as f64 / 400.0).collect();
            let traj = sampled(e, &times, 200, 1.0, |r, t| (1.0 + t) * (1.2 - r * r) + 0.3 * (3.0 * r).sin() * t);
            let scaled = traj.intrinsic_rescale(lambda);
            let s = lambda.powf(2.0 - e.q());
            for dir in [Direction::Forward, Direction::Backward] {
                let q = HarnackQuery { x0, t0, r, c, mu: 10.0, sigma: 1.0, direction: dir };
                let qs = HarnackQuery { t0: t0 * s, ..q };
                let a = harnack_check(&traj, &q).unwrap();
                let b = harnack_check(&scaled, &qs).unwrap();
                prop_assert!((b.theta / a.theta - s).abs() < 1e-12 * s);
                prop_assert!((b.empirical_mu - a.empirical_mu).abs() <= 1e-10 * a.empirical_mu);
            }
        }
    }
}
