//! Exponent bookkeeping, regime classification, intrinsic cylinders and
//! pointwise residuals of the radial equation.
//!
//! Two algebraically equivalent radial forms are provided. With
//! `eta = (p-1)/(q-1)` and `d = (n-1)(q-1)/(p-1) + 1`,
//!
//! ```text
//! phi_t - |phi_r|^{q-2} ((p-1) phi_rr + (n-1)/r phi_r)
//! phi_t - eta |phi_r|^{q-2} ((q-1) phi_rr + (d-1)/r phi_r)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this absolute gradient the classical residual is not evaluated in
/// the singular regime. Callers normalise to unit amplitude first.
pub const GRADIENT_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple", into = "RawTriple")]
pub struct ExponentTriple {
    n: u32,
    p: f64,
    q: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTriple {
    n: u32,
    p: f64,
    q: f64,
}

impl TryFrom<RawTriple> for ExponentTriple {
    type Error = Error;
    fn try_from(raw: RawTriple) -> Result<Self> {
        ExponentTriple::new(raw.n, raw.p, raw.q)
    }
}

impl From<ExponentTriple> for RawTriple {
    fn from(e: ExponentTriple) -> Self {
        RawTriple { n: e.n, p: e.p, q: e.q }
    }
}

impl ExponentTriple {
    pub fn new(n: u32, p: f64, q: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidExponents(format!("n = {n} must be at least 1")));
        }
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidExponents(format!("p = {p} must exceed 1")));
        }
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::InvalidExponents(format!("q = {q} must exceed 1")));
        }
        Ok(Self { n, p, q })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Time-scaling constant `(p-1)/(q-1)`; exactly 1 when `p == q`.
    pub fn eta(&self) -> f64 {
        if self.p == self.q {
            1.0
        } else {
            (self.p - 1.0) / (self.q - 1.0)
        }
    }

    /// Fictitious dimension; exactly `n` when `p == q`.
    pub fn d(&self) -> f64 {
        let nm1 = f64::from(self.n - 1);
        if self.p == self.q {
            f64::from(self.n)
        } else {
            nm1 * (self.q - 1.0) / (self.p - 1.0) + 1.0
        }
    }

    /// Norm exponent `d(2-q)/q`, only defined in the singular regime.
    pub fn s(&self) -> Option<f64> {
        (self.q < 2.0).then(|| self.d() * (2.0 - self.q) / self.q)
    }

    /// `q - d(2-q)`; positive exactly when the range condition holds.
    pub fn lambda_psi(&self) -> f64 {
        self.q - self.d() * (2.0 - self.q)
    }

    pub fn regime(&self) -> Regime {
        if self.q < 2.0 {
            Regime::Singular
        } else if self.q == 2.0 {
            Regime::Critical
        } else {
            Regime::Degenerate
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Singular,
    Critical,
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub in_range: bool,
    pub regime: Regime,
    pub threshold: f64,
}

/// Lower bound on `q` for the intrinsic Harnack inequality at fixed `(n, p)`.
pub fn range_threshold(n: u32, p: f64) -> f64 {
    let nf = f64::from(n);
    if p >= (nf + 1.0) / 2.0 {
        1.0
    } else {
        2.0 * (nf - p) / (nf - 1.0)
    }
}

pub fn check_range(e: &ExponentTriple) -> RegimeVerdict {
    let threshold = range_threshold(e.n, e.p);
    RegimeVerdict {
        in_range: e.q > threshold,
        regime: e.regime(),
        threshold,
    }
}

pub fn fictitious_dimension(e: &ExponentTriple) -> f64 {
    e.d()
}

fn check_point(phi_r: f64, r: f64, e: &ExponentTriple) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("r = {r} must be positive")));
    }
    if e.q < 2.0 && phi_r.abs() < GRADIENT_FLOOR {
        return Err(Error::DegenerateGradient { r, phi_r });
    }
    Ok(())
}

fn grad_power(phi_r: f64, q: f64) -> f64 {
    if q == 2.0 {
        1.0
    } else {
        phi_r.abs().powf(q - 2.0)
    }
}

/// Residual of the `(n, p, q)` radial form. Nonpositive values mean a
/// classical subsolution at the point.
pub fn residual_npq(phi_t: f64, phi_r: f64, phi_rr: f64, r: f64, e: &ExponentTriple) -> Result<f64> {
    check_point(phi_r, r, e)?;
    let nm1 = f64::from(e.n - 1);
    Ok(phi_t - grad_power(phi_r, e.q) * ((e.p - 1.0) * phi_rr + nm1 / r * phi_r))
}

/// Residual of the fictitious-dimension `(q, d)` form.
pub fn residual_qd(phi_t: f64, phi_r: f64, phi_rr: f64, r: f64, e: &ExponentTriple) -> Result<f64> {
    check_point(phi_r, r, e)?;
    let d = e.d();
    Ok(phi_t - e.eta() * grad_power(phi_r, e.q) * ((e.q - 1.0) * phi_rr + (d - 1.0) / r * phi_r))
}

/// Intrinsic waiting-time scale `c u0^{2-q}`.
pub fn intrinsic_theta(u0: f64, c: f64, e: &ExponentTriple) -> Result<f64> {
    if !(u0 > 0.0) {
        return Err(Error::Positivity(format!("u0 = {u0} must be positive")));
    }
    if !(c > 0.0) {
        return Err(Error::Positivity(format!("c = {c} must be positive")));
    }
    Ok(if e.q == 2.0 { c } else { c * u0.powf(2.0 - e.q) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Backward,
    Forward,
    TwoSided,
}

/// `B_r(x) x` a time interval of length `theta r^q` on one or both sides of `t`.
///
/// Space is a single coordinate; the ball is the open interval `|y - x| < r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicCylinder {
    pub center_x: f64,
    pub center_t: f64,
    pub r: f64,
    pub theta: f64,
    pub q: f64,
    pub orientation: Orientation,
}

/// Closed time interval with flags telling whether each end is included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl TimeInterval {
    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let below = if self.hi_closed { t <= self.hi } else { t < self.hi };
        above && below
    }

    pub fn is_subset_of(&self, other: &TimeInterval) -> bool {
        let lo_ok = self.lo > other.lo || (self.lo == other.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < other.hi || (self.hi == other.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }
}

impl IntrinsicCylinder {
    pub fn new(center_x: f64, center_t: f64, r: f64, theta: f64, q: f64, orientation: Orientation) -> Result<Self> {
        if !(r > 0.0 && theta > 0.0 && q > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cylinder needs r > 0, theta > 0, q > 1 (got r = {r}, theta = {theta}, q = {q})"
            )));
        }
        Ok(Self { center_x, center_t, r, theta, q, orientation })
    }

    /// Time-wise length `theta r^q` of one half.
    pub fn half_length(&self) -> f64 {
        self.theta * self.r.powf(self.q)
    }

    pub fn time_interval(&self) -> TimeInterval {
        let h = self.half_length();
        let t = self.center_t;
        match self.orientation {
            Orientation::Backward => TimeInterval { lo: t - h, hi: t, lo_closed: false, hi_closed: true },
            Orientation::Forward => TimeInterval { lo: t, hi: t + h, lo_closed: false, hi_closed: false },
            Orientation::TwoSided => TimeInterval { lo: t - h, hi: t + h, lo_closed: false, hi_closed: false },
        }
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        (x - self.center_x).abs() < self.r && self.time_interval().contains(t)
    }

    pub fn is_subset_of(&self, other: &IntrinsicCylinder) -> bool {
        let ball = self.center_x - self.r >= other.center_x - other.r && self.center_x + self.r <= other.center_x + other.r;
        ball && self.time_interval().is_subset_of(&other.time_interval())
    }

    /// Backward and forward halves sharing this cylinder's centre and scale.
    pub fn halves(&self) -> (IntrinsicCylinder, IntrinsicCylinder) {
        let mut b = *self;
        b.orientation = Orientation::Backward;
        let mut f = *self;
        f.orientation = Orientation::Forward;
        (b, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triple(n: u32, p: f64, q: f64) -> ExponentTriple {
        ExponentTriple::new(n, p, q).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_exponents() {
        assert!(ExponentTriple::new(0, 2.0, 2.0).is_err());
        assert!(ExponentTriple::new(2, 1.0, 2.0).is_err());
        assert!(ExponentTriple::new(2, 2.0, 0.5).is_err());
        assert!(ExponentTriple::new(2, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn range_examples() {
        let v = check_range(&triple(3, 2.0, 1.5));
        assert!(v.in_range);
        assert_eq!(v.threshold, 1.0);
        assert_eq!(v.regime, Regime::Singular);

        let v = check_range(&triple(5, 1.5, 1.6));
        assert!(!v.in_range);
        assert!((v.threshold - 1.75).abs() < 1e-15);

        let v = check_range(&triple(2, 2.0, 3.0));
        assert!(v.in_range);
        assert_eq!(v.regime, Regime::Degenerate);
        assert_eq!(triple(2, 3.0, 2.0).regime(), Regime::Critical);
    }

    #[test]
    fn fictitious_dimension_examples() {
        for n in 1..6 {
            let e = triple(n, 2.7, 2.7);
            assert_eq!(fictitious_dimension(&e), f64::from(n));
            assert_eq!(e.eta(), 1.0);
        }
        assert!((triple(3, 4.0, 2.0).d() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(triple(1, 3.3, 1.4).d(), 1.0);
    }

    #[test]
    fn s_only_in_singular_regime() {
        assert!(triple(3, 2.0, 2.0).s().is_none());
        assert!(triple(3, 2.0, 2.5).s().is_none());
        let e = triple(3, 3.0, 1.5);
        assert!((e.s().unwrap() - e.d() * 0.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn residual_examples() {
        let e = triple(1, 2.0, 2.0);
        assert_eq!(residual_npq(0.0, 1.0, 0.0, 1.0, &e).unwrap(), 0.0);
        for e in [triple(3, 1.7, 1.3), triple(2, 4.0, 3.0), triple(5, 2.0, 2.0)] {
            assert_eq!(residual_npq(-1.0, 1.0, 0.0, 1.0, &e).unwrap(), -1.0 - f64::from(e.n() - 1) * 1.0);
            let a = residual_npq(-1.0, 1.0, 0.0, 1.0, &e).unwrap();
            let b = residual_qd(-1.0, 1.0, 0.0, 1.0, &e).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        let e = triple(1, 3.0, 1.5);
        assert_eq!(residual_npq(-1.0, 1.0, 0.0, 1.0, &e).unwrap(), -1.0);
    }

    #[test]
    fn residual_errors() {
        let e = triple(3, 2.0, 1.5);
        assert!(matches!(residual_npq(0.0, 1.0, 0.0, 0.0, &e), Err(Error::Domain(_))));
        assert!(matches!(residual_qd(0.0, 0.0, 1.0, 1.0, &e), Err(Error::DegenerateGradient { .. })));
        let e = triple(3, 2.0, 2.5);
        assert_eq!(residual_npq(0.0, 0.0, 1.0, 1.0, &e).unwrap(), 0.0);
    }

    #[test]
    fn theta_examples() {
        let e = triple(3, 2.0, 2.0);
        assert_eq!(intrinsic_theta(7.3, 0.4, &e).unwrap(), 0.4);
        let e = triple(3, 2.0, 1.5);
        assert_eq!(intrinsic_theta(1.0, 0.4, &e).unwrap(), 0.4);
        let e = triple(3, 2.0, 3.0);
        assert_eq!(intrinsic_theta(4.0, 1.0, &e).unwrap(), 0.25);
        assert!(intrinsic_theta(0.0, 1.0, &e).is_err());
        assert!(intrinsic_theta(1.0, -1.0, &e).is_err());
    }

    #[test]
    fn cylinder_conventions() {
        let c = IntrinsicCylinder::new(0.0, 1.0, 0.5, 2.0, 2.0, Orientation::Backward).unwrap();
        assert!((c.half_length() - 0.5).abs() < 1e-15);
        assert!(c.contains(0.0, 1.0));
        assert!(!c.contains(0.0, 0.5));
        assert!(c.contains(0.49, 0.51));
        assert!(!c.contains(0.5, 0.8));
        let (b, f) = c.halves();
        assert!(!f.contains(0.0, 1.0));
        assert!(b.contains(0.0, 1.0));
    }

    fn valid_triple() -> impl Strategy<Value = ExponentTriple> {
        (1u32..8, 1.01f64..6.0, 1.01f64..6.0).prop_map(|(n, p, q)| triple(n, p, q))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn forms_agree(
            e in valid_triple(),
            phi_t in -10.0f64..10.0,
            phi_r in prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0],
            phi_rr in -10.0f64..10.0,
            r in 1e-3f64..10.0,
        ) {
            let a = residual_npq(phi_t, phi_r, phi_rr, r, &e).unwrap();
            let b = residual_qd(phi_t, phi_r, phi_rr, r, &e).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn range_is_monotone_in_q(n in 1u32..8, p in 1.01f64..6.0, q1 in 1.01f64..4.0, dq in 0.0f64..2.0) {
            let lo = check_range(&triple(n, p, q1));
            let hi = check_range(&triple(n, p, q1 + dq));
            prop_assert!(!lo.in_range || hi.in_range);
        }

        #[test]
        fn exactly_one_regime(q in 1.01f64..4.0) {
            let e = triple(2, 2.0, q);
            let expected = if q < 2.0 { Regime::Singular } else if q == 2.0 { Regime::Critical } else { Regime::Degenerate };
            prop_assert_eq!(e.regime(), expected);
        }

        #[test]
        fn lambda_positive_iff_in_range(n in 2u32..8, p in 1.01f64..6.0, q in 1.01f64..1.999) {
            let e = triple(n, p, q);
            let lam = e.lambda_psi();
            // skip a thin band around the threshold where rounding decides
            prop_assume!(lam.abs() > 1e-9);
            prop_assert_eq!(lam > 0.0, check_range(&e).in_range);
        }

        #[test]
        fn p_equals_q_collapses(n in 1u32..8, p in 1.01f64..6.0) {
            let e = triple(n, p, p);
            prop_assert_eq!(e.d(), f64::from(n));
            prop_assert_eq!(e.eta(), 1.0);
        }

        #[test]
        fn cylinder_nesting(
            x in -2.0f64..2.0, t in -2.0f64..2.0, r in 0.01f64..2.0, grow in 1.0f64..3.0,
            theta in 0.01f64..3.0, q in 1.1f64..3.5,
            orient in prop_oneof![Just(Orientation::Backward), Just(Orientation::Forward), Just(Orientation::TwoSided)],
            sx in -1.0f64..1.0, st in -1.0f64..1.0,
        ) {
            let small = IntrinsicCylinder::new(x, t, r, theta, q, orient).unwrap();
            let big = IntrinsicCylinder::new(x, t, r * grow, theta, q, orient).unwrap();
            prop_assert!(small.is_subset_of(&big));
            let px = x + sx * r;
            let pt = t + st * small.half_length();
            if small.contains(px, pt) {
                prop_assert!(big.contains(px, pt));
            }
            let two = IntrinsicCylinder { orientation: Orientation::TwoSided, ..small };
            let (b, f) = small.halves();
            prop_assert!(!(b.contains(px, pt) && f.contains(px, pt)));
            let in_union = b.contains(px, pt) || f.contains(px, pt);
            prop_assert_eq!(in_union, two.contains(px, pt));
        }
    }
}
