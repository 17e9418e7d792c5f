//! Closed-form exponent and critical-curve arithmetic for the coupled system
//! `□u = |v|^q, □v = |∂ₜu|^p`.
//!
//! Everything here is a pure function of value inputs. The blow-up side of
//! every curve residual is negative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the critical-curve residual below which a point is labelled critical.
pub const CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("dimension n = {0} is out of range (need n >= 2)")]
    Dimension(i64),
    #[error("exponent {name} = {value} must be > 1")]
    Exponent { name: &'static str, value: f64 },
    #[error("the B14 curve is singular at (n - 1) p = 2")]
    Singular,
    #[error("({n}, {p}, {q}) is not in the blow-up region")]
    NotInBlowupRegion { n: u32, p: f64, q: f64 },
    #[error("lifespan exponent of the (2,2) energy estimate is only available for n = 2, 3 (got n = {0})")]
    B6Dimension(i64),
    #[error("condition beta + alpha p < p + 2 + a (pq - 1) fails: {lhs} >= {rhs}")]
    ConditionY12Violated { lhs: f64, rhs: f64 },
    #[error("mu window needs q > 2 and 2 < p < 3 (got p = {p}, q = {q})")]
    MuWindowDomain { p: f64, q: f64 },
    #[error("mu window is empty: lower end {lo} >= 1")]
    EmptyMuWindow { lo: f64 },
    #[error("invalid comparison parameter {name} = {value}")]
    Comparison { name: &'static str, value: f64 },
}

/// A point `(n, p, q)` of the exponent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    n: u32,
    p: f64,
    q: f64,
}

impl ParamPoint {
    pub fn new(n: i64, p: f64, q: f64) -> Result<Self, AnalyticsError> {
        if n < 2 || n > u32::MAX as i64 {
            return Err(AnalyticsError::Dimension(n));
        }
        // NaN fails both comparisons.
        if !(p > 1.0 && p.is_finite()) {
            return Err(AnalyticsError::Exponent { name: "p", value: p });
        }
        if !(q > 1.0 && q.is_finite()) {
            return Err(AnalyticsError::Exponent { name: "q", value: q });
        }
        Ok(Self { n: n as u32, p, q })
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

    fn nf(&self) -> f64 {
        self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionClass {
    /// Strictly below the critical curve with `p < 2n/(n-1)`: small-data blow-up.
    BlowupY4,
    /// `n = 3`, `q > 2`, `2 < p < 3`, strictly above the critical curve.
    GlobalZ7Candidate,
    /// On the critical curve up to [`CRITICAL_TOL`]. No prediction is attached.
    CriticalB5,
    Unknown,
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionClass::BlowupY4 => "BlowupY4",
            RegionClass::GlobalZ7Candidate => "GlobalZ7Candidate",
            RegionClass::CriticalB5 => "CriticalB5",
            RegionClass::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curve {
    /// `((n-1)p/2 - 1)(pq - 1) = p + 2`, the critical curve of this system.
    B5,
    /// Critical curve of the reference system `□u = |v|^q, □v = |u|^p`.
    B13,
    /// Portion of the critical curve of `□u = |u|^q + |∂ₜu|^p`.
    B14,
}

/// Admissible range of the weight exponent μ and the value actually used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuWindow {
    pub lo: f64,
    pub hi: f64,
    pub chosen_mu: f64,
}

/// Constants of the comparison ODE system
/// `F'' = A (t+1)^-α G^q`, `G'' = B (t+1)^-β (F')^p`, with growth `G >= κ t^a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonParams {
    pub a_coef: f64,
    pub b_coef: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub kappa: f64,
    pub p: f64,
    pub q: f64,
}

impl ComparisonParams {
    /// Returns `p + 2 + a(pq-1) - (β + αp)`, positive exactly when the lemma applies.
    pub fn y12_margin(&self) -> f64 {
        let (p, q) = (self.p, self.q);
        p + 2.0 + self.a * (p * q - 1.0) - (self.beta + self.alpha * p)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }
}

fn check_dim(n: i64) -> Result<f64, AnalyticsError> {
    if n < 2 {
        Err(AnalyticsError::Dimension(n))
    } else {
        Ok(n as f64)
    }
}

/// Strauss exponent: positive root of `(n-1) q² - (n+1) q - 2 = 0`.
pub fn strauss_exponent(n: i64) -> Result<f64, AnalyticsError> {
    let n = check_dim(n)?;
    Ok((n + 1.0 + (n * n + 10.0 * n - 7.0).sqrt()) / (2.0 * (n - 1.0)))
}

/// Glassey exponent `(n+1)/(n-1)`.
pub fn glassey_exponent(n: i64) -> Result<f64, AnalyticsError> {
    let n = check_dim(n)?;
    Ok((n + 1.0) / (n - 1.0))
}

/// Signed residual of `pt` against `curve`; negative on the blow-up side.
pub fn curve_residual(curve: Curve, pt: &ParamPoint) -> Result<f64, AnalyticsError> {
    let (n, p, q) = (pt.nf(), pt.p, pt.q);
    match curve {
        Curve::B5 => Ok(((n - 1.0) * p / 2.0 - 1.0) * (p * q - 1.0) - (p + 2.0)),
        Curve::B13 => {
            let d = p * q - 1.0;
            let m = ((p + 2.0 + 1.0 / q) / d).max((q + 2.0 + 1.0 / p) / d);
            Ok((n - 1.0) / 2.0 - m)
        }
        Curve::B14 => {
            let den = (n - 1.0) * p - 2.0;
            if den == 0.0 {
                return Err(AnalyticsError::Singular);
            }
            Ok(q - (4.0 / den + 1.0))
        }
    }
}

/// The `q` on the `B5` curve above a given `p`, when `(n-1)p/2 > 1`.
pub fn b5_critical_q(n: u32, p: f64) -> Option<f64> {
    let c = (n as f64 - 1.0) * p / 2.0 - 1.0;
    (c > 0.0).then(|| ((p + 2.0) / c + 1.0) / p)
}

/// The `q` on the `B14` curve above a given `p`.
pub fn b14_q(n: u32, p: f64) -> Option<f64> {
    let den = (n as f64 - 1.0) * p - 2.0;
    (den != 0.0).then(|| 4.0 / den + 1.0)
}

/// Left side minus right side of `(p-1)(pq-1) > p+2`.
pub fn z4_margin(p: f64, q: f64) -> f64 {
    (p - 1.0) * (p * q - 1.0) - (p + 2.0)
}

pub fn classify(pt: &ParamPoint) -> RegionClass {
    let (n, p, q) = (pt.nf(), pt.p, pt.q);
    // B5 never errors.
    let res = curve_residual(Curve::B5, pt).unwrap_or(f64::NAN);
    if res.abs() <= CRITICAL_TOL {
        return RegionClass::CriticalB5;
    }
    if res < 0.0 && p < 2.0 * n / (n - 1.0) {
        return RegionClass::BlowupY4;
    }
    if pt.n == 3 && q > 2.0 && p > 2.0 && p < 3.0 && z4_margin(p, q) > 0.0 {
        return RegionClass::GlobalZ7Candidate;
    }
    RegionClass::Unknown
}

/// Exponent `E` of the upper lifespan bound `T <= C ε^-E` in the blow-up region.
pub fn blowup_lifespan_exponent(pt: &ParamPoint) -> Result<f64, AnalyticsError> {
    let not_blowup = AnalyticsError::NotInBlowupRegion {
        n: pt.n,
        p: pt.p,
        q: pt.q,
    };
    if classify(pt) != RegionClass::BlowupY4 {
        return Err(not_blowup);
    }
    let (n, p, q) = (pt.nf(), pt.p, pt.q);
    let den = p + 2.0 - ((n - 1.0) / 2.0 * p - 1.0) * (p * q - 1.0);
    if den <= 0.0 {
        return Err(not_blowup);
    }
    Ok(p * (p * q - 1.0) / den)
}

/// Lifespan exponent `6/(10 - 3n)` of the almost-global `(p, q) = (2, 2)` result.
pub fn b6_lifespan_exponent(n: i64) -> Result<f64, AnalyticsError> {
    match n {
        2 | 3 => Ok(6.0 / (10.0 - 3.0 * n as f64)),
        _ => Err(AnalyticsError::B6Dimension(n)),
    }
}

/// Comparison-system constants induced by a blow-up point; `κ = A·ε^p`.
pub fn comparison_parameters(
    pt: &ParamPoint,
    a_coef: f64,
    b_coef: f64,
    eps: f64,
) -> Result<ComparisonParams, AnalyticsError> {
    if classify(pt) != RegionClass::BlowupY4 {
        return Err(AnalyticsError::NotInBlowupRegion {
            n: pt.n,
            p: pt.p,
            q: pt.q,
        });
    }
    for (name, value) in [("A", a_coef), ("B", b_coef), ("eps", eps)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(AnalyticsError::Comparison { name, value });
        }
    }
    let (n, p, q) = (pt.nf(), pt.p, pt.q);
    Ok(ComparisonParams {
        a_coef,
        b_coef,
        alpha: n * (q - 1.0),
        beta: n * (p - 1.0),
        a: 2.0 - (n - 1.0) * (p - 2.0) / 2.0,
        kappa: a_coef * eps.powf(p),
        p,
        q,
    })
}

/// Exponent of κ in the comparison lemma's lifespan bound `T <= C κ^-E`.
pub fn lemma_y8_exponent(
    p: f64,
    q: f64,
    alpha: f64,
    beta: f64,
    a: f64,
) -> Result<f64, AnalyticsError> {
    let lhs = beta + alpha * p;
    let rhs = p + 2.0 + a * (p * q - 1.0);
    if lhs >= rhs {
        return Err(AnalyticsError::ConditionY12Violated { lhs, rhs });
    }
    Ok((p * q - 1.0) / (rhs - lhs))
}

/// Left side of `μ/p + 1 - (p - 2 + μ) q < -1`.
pub fn z22_lhs(mu: f64, p: f64, q: f64) -> f64 {
    mu / p + 1.0 - (p - 2.0 + mu) * q
}

pub fn mu_window(p: f64, q: f64) -> Result<MuWindow, AnalyticsError> {
    if !(q > 2.0 && p > 2.0 && p < 3.0) {
        return Err(AnalyticsError::MuWindowDomain { p, q });
    }
    let lo = (3.0 - p).max(p * (2.0 - (p - 2.0) * q) / (p * q - 1.0));
    let hi = 1.0;
    if lo >= hi {
        return Err(AnalyticsError::EmptyMuWindow { lo });
    }
    let chosen_mu = 0.5 * (lo + hi);
    // Implied by the window's lower end; kept as a guard.
    if z22_lhs(chosen_mu, p, q) >= -1.0 {
        return Err(AnalyticsError::EmptyMuWindow { lo });
    }
    Ok(MuWindow { lo, hi, chosen_mu })
}
