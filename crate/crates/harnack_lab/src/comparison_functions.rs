//! The explicit comparison subsolutions Phi, G and Psi.
//!
//! Each function comes with its constant selection, a pointwise evaluator,
//! closed-form derivatives and a grid certificate that evaluates the radial
//! residual at every node of its validity domain.
//!
//! ```text
//! Phi(r,t) = kappa rho^{q xi} / R^xi (1 - (r^q/R)^{1/(q-1)})_+^2,      R = eta kappa^{q-2} t + rho^q
//! G(r,t)   = kappa rho^{nu/lam} / S^nu (1 - (r/S^lam)^{q/(q-1)})_+^{q/(q-1)},
//!            S = eta kappa^{q-2} rho^{(q-2)nu/lam} t + rho^{1/lam},  lam = (1 - nu(q-2))/q
//! Psi(r,t) = k (1-r^2)_+^{q/(q-1)} (1 + k^{(2-q)/(q-1)} zeta (r^q/(eta t))^{1/(q-1)})^{-(q-1)/(2-q)}
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equation_core::{check_range, residual_npq, ExponentTriple};
use crate::error::{Error, Result};

/// Residual bound, after normalising to unit amplitude and unit length scale.
pub const CERTIFY_TOLERANCE: f64 = 1e-9;

/// Rounding factor applied to the closed-form lower bounds for xi and zeta.
pub const MARGIN: f64 = 1.1;

/// Value and first derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub t: f64,
    pub r: f64,
    pub rr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    pub kappa: f64,
    pub rho: f64,
    pub xi: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GSpec {
    pub kappa: f64,
    pub rho: f64,
    pub nu: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub k: f64,
    pub nu_hole: f64,
    pub constants: PsiConstants,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiConstants {
    pub zeta: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    #[serde(rename = "Z")]
    pub z_threshold: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "lowercase")]
pub enum ComparisonSpec {
    Phi(PhiSpec),
    G(GSpec),
    Psi(PsiSpec),
}

impl ComparisonSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ComparisonSpec::Phi(_) => "phi",
            ComparisonSpec::G(_) => "g",
            ComparisonSpec::Psi(_) => "psi",
        }
    }
}

fn require_singular_in_range(e: &ExponentTriple) -> Result<()> {
    if e.q() >= 2.0 {
        return Err(Error::Regime(format!("q = {} must be below 2", e.q())));
    }
    let v = check_range(e);
    if !v.in_range {
        return Err(Error::Regime(format!("q = {} is not above the range threshold {}", e.q(), v.threshold)));
    }
    Ok(())
}

// ---------------------------------------------------------------- Phi

fn phi_delta_ok(c: f64, q: f64, delta: f64) -> bool {
    c - q / delta < 0.0 && 2.0 / (q - 1.0) + (2.0 * q / (q - 1.0)).powf(q - 1.0) * (c - q / delta) < 0.0
}

/// Returns `(delta, xi)` for Phi.
///
/// delta is halved from 1/2 until both defining inequalities hold. xi is
/// `MARGIN` times the lower bound
/// `[2/(q-1) + (2q/(q-1))^{q-1} (e/delta)^{2-q} C] / delta`, `C = (n-1)/eta + 1`,
/// which controls the `F^2` part of the time derivative by the diffusion term.
pub fn select_phi_constants(e: &ExponentTriple) -> Result<(f64, f64)> {
    require_singular_in_range(e)?;
    let q = e.q();
    let c = f64::from(e.n() - 1) / e.eta() + 1.0;
    let mut delta = 0.5;
    let mut found = false;
    for _ in 0..60 {
        if phi_delta_ok(c, q, delta) {
            found = true;
            break;
        }
        delta *= 0.5;
    }
    if !found {
        return Err(Error::Selection("no delta found within 60 halvings".into()));
    }
    let bound = (2.0 / (q - 1.0)
        + (2.0 * q / (q - 1.0)).powf(q - 1.0) * (std::f64::consts::E / delta).powf(2.0 - q) * c)
        / delta;
    let xi = (MARGIN * bound).max(1.0 + 1e-12);
    Ok((delta, xi))
}

impl PhiSpec {
    pub fn select(kappa: f64, rho: f64, e: &ExponentTriple) -> Result<Self> {
        let (delta, xi) = select_phi_constants(e)?;
        Ok(Self { kappa, rho, xi, delta })
    }

    fn big_r(&self, t: f64, e: &ExponentTriple) -> f64 {
        e.eta() * self.kappa.powf(e.q() - 2.0) * t + self.rho.powf(e.q())
    }

    /// Support radius `R(t)^{1/q}`.
    pub fn support_radius(&self, t: f64, e: &ExponentTriple) -> f64 {
        self.big_r(t, e).powf(1.0 / e.q())
    }

    /// End of the validity window `kappa^{2-q} rho^q / (eta xi)`.
    pub fn window_end(&self, e: &ExponentTriple) -> f64 {
        self.kappa.powf(2.0 - e.q()) * self.rho.powf(e.q()) / (e.eta() * self.xi)
    }

    pub fn jet(&self, r: f64, t: f64, e: &ExponentTriple) -> Jet {
        let q = e.q();
        let eta = e.eta();
        let big_r = self.big_r(t, e);
        let z = r.powf(q) / big_r;
        if z >= 1.0 {
            return Jet { value: 0.0, t: 0.0, r: 0.0, rr: 0.0 };
        }
        let zz = z.powf(1.0 / (q - 1.0));
        let f = 1.0 - zz;
        let log_c = self.rho.ln() * q * self.xi;
        let a = (self.kappa.ln() + log_c - self.xi * big_r.ln()).exp();
        let bt = eta * (self.kappa.ln() * (q - 1.0) + log_c - (self.xi + 1.0) * big_r.ln()).exp();
        let value = a * f * f;
        let (dr, drr) = if r > 0.0 {
            (
                -2.0 * a * f * q / (q - 1.0) * zz / r,
                2.0 * a * q / ((q - 1.0) * (q - 1.0)) * (q * zz - f) * zz / (r * r),
            )
        } else {
            (0.0, f64::NAN)
        };
        let dt = -self.xi * bt * f * f + bt * f * 2.0 / (q - 1.0) * zz;
        Jet { value, t: dt, r: dr, rr: drr }
    }
}

pub fn eval_phi(spec: &PhiSpec, x_norm: f64, t: f64, e: &ExponentTriple) -> f64 {
    spec.jet(x_norm.abs(), t, e).value
}

// ---------------------------------------------------------------- G

/// `q(nu) = 4(1+2nu)/(1+4nu)`.
pub fn q_of_nu(nu: f64) -> f64 {
    4.0 * (1.0 + 2.0 * nu) / (1.0 + 4.0 * nu)
}

/// `lambda(nu) = (1 - nu(q-2))/q`.
pub fn lambda_of_nu(nu: f64, q: f64) -> f64 {
    (1.0 - nu * (q - 2.0)) / q
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GNuSelection {
    pub nu: f64,
    pub q_nu: f64,
    /// Open interval of q on which G is used.
    pub interval: (f64, f64),
}

/// Number of q-samples in the maximisation defining nu.
pub const NU_GRID: usize = 10_000;

/// nu for G: the maximum over `q in [8/5, 7/3]` of
/// `a_hat (7/8 + C1/eta) (C2/(2(C1+C2)))^{-q/(q-1)}`. Only `n` and `p` of `e` matter.
///
/// The interval is `(4 - q(nu), min(q(nu), 7/3))`: beyond `q(nu)` the exponent
/// lambda drops below 1/4.
pub fn select_g_nu(e: &ExponentTriple) -> GNuSelection {
    let n = f64::from(e.n());
    let p = e.p();
    let (lo, hi) = (8.0 / 5.0, 7.0 / 3.0);
    let mut nu = f64::NEG_INFINITY;
    for i in 0..NU_GRID {
        let q = lo + (hi - lo) * i as f64 / (NU_GRID - 1) as f64;
        let eta = (p - 1.0) / (q - 1.0);
        let a = (q / (q - 1.0)).powi(2);
        let a_hat = a.max(a.powf(q - 1.0));
        let c1 = ((n - 1.0) * (q - 1.0) + p - 1.0) / (q - 1.0);
        let c2 = q * (p - 1.0) / ((q - 1.0) * (q - 1.0));
        let val = a_hat * (7.0 / 8.0 + c1 / eta) * (c2 / (2.0 * (c1 + c2))).powf(-q / (q - 1.0));
        nu = nu.max(val);
    }
    let q_nu = q_of_nu(nu);
    GNuSelection { nu, q_nu, interval: (4.0 - q_nu, q_nu.min(7.0 / 3.0)) }
}

impl GSpec {
    pub fn new(kappa: f64, rho: f64, nu: f64, e: &ExponentTriple) -> Result<Self> {
        let q_nu = q_of_nu(nu);
        let (lo, hi) = (4.0 - q_nu, q_nu.min(7.0 / 3.0));
        if !(e.q() > lo && e.q() < hi) {
            return Err(Error::Regime(format!("q = {} outside the admissible interval ({lo}, {hi})", e.q())));
        }
        Ok(Self { kappa, rho, nu, lambda: lambda_of_nu(nu, e.q()) })
    }

    pub fn select(kappa: f64, rho: f64, e: &ExponentTriple) -> Result<Self> {
        Self::new(kappa, rho, select_g_nu(e).nu, e)
    }

    fn log_sigma(&self, t: f64, e: &ExponentTriple) -> f64 {
        let q = e.q();
        let l0 = self.rho.ln() / self.lambda;
        let slope = e.eta().ln() + (q - 2.0) * self.kappa.ln() + (q - 2.0) * self.nu * self.rho.ln() / self.lambda;
        // ln(exp(slope) t + exp(l0)) without overflow
        if t <= 0.0 {
            return l0;
        }
        let a = slope + t.ln();
        let m = a.max(l0);
        m + ((a - m).exp() + (l0 - m).exp()).ln()
    }

    pub fn support_radius(&self, t: f64, e: &ExponentTriple) -> f64 {
        (self.lambda * self.log_sigma(t, e)).exp()
    }

    /// Time at which `Sigma = rho^{1/lambda} (1 + 1/nu)`; the certificate window.
    pub fn window_end(&self, e: &ExponentTriple) -> f64 {
        let q = e.q();
        let slope = e.eta() * self.kappa.powf(q - 2.0);
        let ln_t = self.rho.ln() / self.lambda - self.nu.ln() - slope.ln()
            - (q - 2.0) * self.nu * self.rho.ln() / self.lambda;
        ln_t.exp()
    }

    pub fn jet(&self, r: f64, t: f64, e: &ExponentTriple) -> Result<Jet> {
        let q = e.q();
        let q_nu = q_of_nu(self.nu);
        if !(q > 4.0 - q_nu && q < q_nu.min(7.0 / 3.0)) {
            return Err(Error::Regime(format!("q = {q} outside the admissible interval")));
        }
        let eta = e.eta();
        let lam = self.lambda;
        let ls = self.log_sigma(t, e);
        let sl = (lam * ls).exp();
        let z = r / sl;
        let qq = q / (q - 1.0);
        if z >= 1.0 {
            return Ok(Jet { value: 0.0, t: 0.0, r: 0.0, rr: 0.0 });
        }
        let f = 1.0 - z.powf(qq);
        let log_amp = self.kappa.ln() + self.nu / lam * self.rho.ln();
        let a_coef = (log_amp - self.nu * ls).exp();
        let a = qq * qq;
        let value = a_coef * f.powf(qq);
        let p1 = 1.0 / (q - 1.0);
        let (dr, drr) = if r > 0.0 {
            (
                -a_coef * a * f.powf(p1) * z.powf(p1) / sl,
                a_coef * a / (q - 1.0) * (qq * z.powf(qq) - f) * z.powf(p1 - 1.0) * f.powf(p1 - 1.0) / (sl * sl),
            )
        } else {
            (0.0, f64::NAN)
        };
        let bt = ((q - 1.0) * log_amp - (self.nu + 1.0) * ls).exp();
        let dt = bt * (-self.nu * eta * f.powf(qq) + a * lam * eta * f.powf(p1) * z.powf(qq));
        Ok(Jet { value, t: dt, r: dr, rr: drr })
    }
}

pub fn eval_g(spec: &GSpec, x_norm: f64, t: f64, e: &ExponentTriple) -> Result<f64> {
    Ok(spec.jet(x_norm.abs(), t, e)?.value)
}

// ---------------------------------------------------------------- Psi

/// Constants for Psi.
///
/// `K1 = ((n-1)/(p-1))(2-q)/(2q)`, `K2 = (1 + (n-1)/(p-1))(2-q)/(3q)`, `Z = K/(1-K)`,
/// `lambda = q - d(2-q)`, `C1 = q/(2-q) + 2q/(q-1)`, `C2 = eta (q/(2-q)) lambda/2`,
/// zeta = `MARGIN` times the least value with `C1^{2-q} eta / zeta^{q-1} <= C2`,
/// `Theta = (zeta^{q-1}/eta) min{(lambda/(2q))^{q-1}, Z^{-(q-1)}}`.
pub fn select_psi_constants(e: &ExponentTriple) -> Result<PsiConstants> {
    require_singular_in_range(e)?;
    let (n, p, q) = (f64::from(e.n()), e.p(), e.q());
    let eta = e.eta();
    let k1 = (n - 1.0) / (p - 1.0) * (2.0 - q) / (2.0 * q);
    let k2 = (1.0 + (n - 1.0) / (p - 1.0)) * (2.0 - q) / (3.0 * q);
    let k = k1.max(k2);
    if k >= 1.0 {
        return Err(Error::Internal(format!("K = {k} >= 1 although the range condition holds")));
    }
    let z_threshold = k / (1.0 - k);
    let lambda = e.lambda_psi();
    if lambda <= 0.0 {
        return Err(Error::Internal(format!("lambda = {lambda} <= 0 although the range condition holds")));
    }
    let c1 = q / (2.0 - q) + 2.0 * q / (q - 1.0);
    let c2 = eta * q / (2.0 - q) * lambda / 2.0;
    let zeta = MARGIN * (c1.powf(2.0 - q) * eta / c2).powf(1.0 / (q - 1.0));
    let theta = zeta.powf(q - 1.0) / eta * (lambda / (2.0 * q)).powf(q - 1.0).min(z_threshold.powf(-(q - 1.0)));
    Ok(PsiConstants { zeta, theta, z_threshold, lambda, c1, c2, k1, k2 })
}

/// `E(r)`; nonnegative whenever `z >= Z`.
pub fn psi_e_function(r: f64, z: f64, e: &ExponentTriple) -> f64 {
    let (n, p, q) = (f64::from(e.n()), e.p(), e.q());
    2.0 * q * (p - 1.0) / (2.0 - q) * z / (1.0 + z) / r + 2.0 * (p - 1.0) / (q - 1.0) * r * r / (1.0 - r * r) - p - n
        + 2.0
}

impl PsiSpec {
    pub fn select(k: f64, nu_hole: f64, e: &ExponentTriple) -> Result<Self> {
        if !(nu_hole > 0.0 && nu_hole < 1.0) {
            return Err(Error::InvalidParameter(format!("inner radius {nu_hole} must lie in (0,1)")));
        }
        Ok(Self { k, nu_hole, constants: select_psi_constants(e)? })
    }

    /// Length `nu_hole^q k^{2-q} Theta` of the validity interval.
    pub fn window_end(&self, e: &ExponentTriple) -> f64 {
        let q = e.q();
        self.nu_hole.powf(q) * self.k.powf(2.0 - q) * self.constants.theta
    }

    pub fn z_of(&self, r: f64, t: f64, e: &ExponentTriple) -> f64 {
        let q = e.q();
        self.k.powf((2.0 - q) / (q - 1.0)) * self.constants.zeta * (r.powf(q) / (e.eta() * t)).powf(1.0 / (q - 1.0))
    }

    pub fn jet(&self, r: f64, t: f64, e: &ExponentTriple) -> Jet {
        let q = e.q();
        if r >= 1.0 || t <= 0.0 {
            return Jet { value: 0.0, t: 0.0, r: 0.0, rr: 0.0 };
        }
        let z = self.z_of(r, t, e);
        let f = 1.0 + z;
        // w = k F^{-(q-1)/(2-q)} in log form: F can be huge for small t
        let w = self.k * (-(q - 1.0) / (2.0 - q) * f.ln()).exp();
        let om = 1.0 - r * r;
        let v = om.powf(q / (q - 1.0));
        let vp = -2.0 * r * q / (q - 1.0) * om.powf(1.0 / (q - 1.0));
        let vpp = 4.0 * r * r * q / ((q - 1.0) * (q - 1.0)) * om.powf((2.0 - q) / (q - 1.0))
            - 2.0 * q / (q - 1.0) * om.powf(1.0 / (q - 1.0));
        let zf = z / f;
        let wp = -q / (2.0 - q) * w * zf / r;
        let wpp = q * q / ((2.0 - q) * (2.0 - q) * (q - 1.0)) * w * zf * zf / (r * r)
            - q / ((2.0 - q) * (q - 1.0)) * w * zf / (r * r);
        Jet {
            value: v * w,
            t: v * w * zf / ((2.0 - q) * t),
            r: wp * v + w * vp,
            rr: wpp * v + 2.0 * wp * vp + w * vpp,
        }
    }
}

pub fn eval_psi(spec: &PsiSpec, x_norm: f64, t: f64, e: &ExponentTriple) -> f64 {
    spec.jet(x_norm.abs(), t, e).value
}

// ---------------------------------------------------------------- certificates

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridResolution {
    pub nr: usize,
    pub nt: usize,
    /// Cells dropped next to `r = 0` and next to the support edge.
    pub margin: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self { nr: 400, nt: 400, margin: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub function: String,
    pub exponents: ExponentTriple,
    pub constants: ComparisonSpec,
    pub grid: GridResolution,
    pub window: (f64, f64),
    pub points: usize,
    /// Largest residual times `rho^q / kappa^{q-1}` (or `1/k^{q-1}` for Psi).
    pub max_residual: f64,
    pub argmax_location: (f64, f64),
    pub tolerance: f64,
    /// Psi only: least `E(r)` over grid nodes with `z >= Z`.
    pub e_min: Option<f64>,
    pub pass: bool,
}

/// Evaluates the residual at every node of the certificate grid.
///
/// - Phi and G: `t_i = T i/nt` for `i = 1..nt` over the validity window, and
///   `r_j = rad(t_i) j/nr` for `j = margin..nr-margin`, where `rad(t)` is the support radius.
/// - Psi: `t_i` as above, and `r_j = nu + (1-nu) j/nr` for `j = 0..nr-margin`.
pub fn certify_subsolution(spec: &ComparisonSpec, e: &ExponentTriple, grid: &GridResolution) -> Result<CertificateReport> {
    if grid.nr < 2 * grid.margin + 2 || grid.nt < 1 {
        return Err(Error::InvalidParameter("certificate grid too coarse for its margin".into()));
    }
    check_constants(spec)?;
    let q = e.q();
    let (t_end, amp, time_scale) = match spec {
        ComparisonSpec::Phi(s) => (s.window_end(e), s.kappa, s.rho.powf(q)),
        ComparisonSpec::G(s) => (s.window_end(e), s.kappa, s.rho.powf(q)),
        ComparisonSpec::Psi(s) => (s.window_end(e), s.k, 1.0),
    };
    let (nr, nt, m) = (grid.nr, grid.nt, grid.margin);

    let rows: Vec<Result<(f64, (f64, f64), usize, f64)>> = (1..=nt)
        .into_par_iter()
        .map(|i| {
            let t = t_end * i as f64 / nt as f64;
            let mut worst = f64::NEG_INFINITY;
            let mut at = (f64::NAN, t);
            let mut count = 0;
            let mut e_min = f64::INFINITY;
            let (j0, j1) = match spec {
                ComparisonSpec::Psi(_) => (0, nr - m),
                _ => (m, nr - m),
            };
            for j in j0..=j1 {
                let (r, jet) = match spec {
                    ComparisonSpec::Phi(s) => {
                        let r = s.support_radius(t, e) * j as f64 / nr as f64;
                        (r, s.jet(r, t, e))
                    }
                    ComparisonSpec::G(s) => {
                        let r = s.support_radius(t, e) * j as f64 / nr as f64;
                        (r, s.jet(r, t, e)?)
                    }
                    ComparisonSpec::Psi(s) => {
                        let r = s.nu_hole + (1.0 - s.nu_hole) * j as f64 / nr as f64;
                        let z = s.z_of(r, t, e);
                        if z >= s.constants.z_threshold {
                            e_min = e_min.min(psi_e_function(r, z, e));
                        }
                        (r, s.jet(r, t, e))
                    }
                };
                // residual / amp^{q-1}; the diffusion term is homogeneous of degree q-1, so it is
                // evaluated on jet/value, which keeps tiny but smooth gradients above the floor
                let v = jet.value;
                let diffusion = residual_npq(0.0, jet.r / v, jet.rr / v, r, e)? * (v / amp).powf(q - 1.0);
                let res = (jet.t / amp.powf(q - 1.0) + diffusion) * time_scale;
                count += 1;
                if res > worst {
                    worst = res;
                    at = (r, t);
                }
            }
            Ok((worst, at, count, e_min))
        })
        .collect();

    let mut max_residual = f64::NEG_INFINITY;
    let mut argmax = (f64::NAN, f64::NAN);
    let mut points = 0;
    let mut e_min = f64::INFINITY;
    for row in rows {
        let (w, at, c, em) = row?;
        points += c;
        e_min = e_min.min(em);
        if w > max_residual {
            max_residual = w;
            argmax = at;
        }
    }
    let e_min = matches!(spec, ComparisonSpec::Psi(_)).then_some(e_min);
    let e_ok = e_min.is_none_or(|v| v >= -1e-12);
    Ok(CertificateReport {
        function: spec.name().to_string(),
        exponents: *e,
        constants: *spec,
        grid: *grid,
        window: (0.0, t_end),
        points,
        max_residual,
        argmax_location: argmax,
        tolerance: CERTIFY_TOLERANCE,
        e_min,
        pass: max_residual <= CERTIFY_TOLERANCE && e_ok,
    })
}

fn check_constants(spec: &ComparisonSpec) -> Result<()> {
    let ok = |x: f64| x.is_finite() && x > 0.0;
    let good = match spec {
        ComparisonSpec::Phi(s) => ok(s.kappa) && ok(s.rho) && ok(s.xi) && ok(s.delta),
        ComparisonSpec::G(s) => ok(s.kappa) && ok(s.rho) && ok(s.nu) && ok(s.lambda),
        ComparisonSpec::Psi(s) => {
            ok(s.k) && ok(s.nu_hole) && ok(s.constants.zeta) && ok(s.constants.theta) && ok(s.constants.z_threshold)
        }
    };
    if good {
        Ok(())
    } else {
        Err(Error::Selection(format!("{} constants missing or not positive", spec.name())))
    }
}
