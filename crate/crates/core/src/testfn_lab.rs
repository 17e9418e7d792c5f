//! The positive test functions `φ₁(x) = ∫_{S^{n-1}} e^{x·ω} dω` and
//! `ψ₁(t, x) = φ₁(x) e^{-t}`, and the `L^{p'}` norm of `ψ₁` over the cone `|x| <= t + 1`.
//!
//! `φ₁` grows like `e^r`, so everything is evaluated through `ln φ₁` and
//! exponentiated only after the `e^{-t}` factor is applied.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{self, QuadratureError, Tolerance};

/// Power series for `I₀` below this radius, asymptotic expansion above.
pub const I0_SWITCH: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestFnError {
    #[error("dimension n = {0} must be >= 2")]
    Dimension(i64),
    #[error("radius r = {0} must be >= 0")]
    NegativeRadius(f64),
    #[error("exponent p = {0} must be > 1")]
    Exponent(f64),
    #[error("time t = {0} must be >= 0")]
    NegativeTime(f64),
    #[error("scan times must be increasing")]
    UnorderedTimes,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionEval {
    pub n: u32,
    pub r: f64,
    pub value: f64,
}

/// Surface measure `|S^k|` of the unit `k`-sphere in `R^{k+1}`.
pub fn sphere_area(k: u32) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(k - 2) / (k as f64 - 1.0),
    }
}

fn check(n: i64, r: f64) -> Result<u32, TestFnError> {
    if n < 2 {
        return Err(TestFnError::Dimension(n));
    }
    if !(r >= 0.0) {
        return Err(TestFnError::NegativeRadius(r));
    }
    Ok(n as u32)
}

/// `ln I₀(r)` for `r >= 0`.
pub fn ln_bessel_i0(r: f64) -> f64 {
    if r <= I0_SWITCH {
        ln_i0_series(r)
    } else {
        ln_i0_asymptotic(r)
    }
}

fn ln_i0_series(r: f64) -> f64 {
    let x = 0.25 * r * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= x / (k * k);
        sum += term;
        k += 1.0;
    }
    sum.ln()
}

fn ln_i0_asymptotic(r: f64) -> f64 {
    // I₀(r) ~ e^r / sqrt(2πr) Σ ((2k-1)!!)² / (k! (8r)^k)
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * r);
        if next >= term || next < 1e-17 * sum {
            break;
        }
        term = next;
        sum += term;
    }
    r - 0.5 * (2.0 * PI * r).ln() + sum.ln()
}

/// `ln φ₁(r)` by the general spherical integral,
/// `|S^{n-2}| ∫₀^π e^{r cos θ} sin^{n-2} θ dθ`.
pub fn ln_phi1_quadrature(n: i64, r: f64) -> Result<f64, TestFnError> {
    let n = check(n, r)?;
    let k = (n - 2) as i32;
    let integral = quadrature::integrate(
        |th| (r * (th.cos() - 1.0)).exp() * th.sin().powi(k),
        0.0,
        PI,
        Tolerance::relative(1e-13),
    )?;
    Ok(sphere_area(n - 2).ln() + r + integral.value.ln())
}

/// `ln φ₁(r)`, using the closed forms for `n = 2, 3`.
pub fn ln_phi1(n: i64, r: f64) -> Result<f64, TestFnError> {
    let nn = check(n, r)?;
    match nn {
        2 => Ok((2.0 * PI).ln() + ln_bessel_i0(r)),
        3 => {
            if r < 1e-3 {
                // sinh(r)/r = 1 + r²/6 + r⁴/120 + ...
                let r2 = r * r;
                Ok((4.0 * PI).ln() + (1.0 + r2 / 6.0 * (1.0 + r2 / 20.0 * (1.0 + r2 / 42.0))).ln())
            } else {
                // 4π sinh(r)/r = 4π e^r (1 - e^{-2r}) / (2r)
                Ok((4.0 * PI).ln() + r + (-(-2.0 * r).exp()).ln_1p() - (2.0 * r).ln())
            }
        }
        _ => ln_phi1_quadrature(n, r),
    }
}

pub fn phi1(n: i64, r: f64) -> Result<f64, TestFnError> {
    ln_phi1(n, r).map(f64::exp)
}

pub fn evaluate(n: i64, r: f64) -> Result<TestFunctionEval, TestFnError> {
    Ok(TestFunctionEval {
        n: n as u32,
        r,
        value: phi1(n, r)?,
    })
}

/// `ψ₁(t, r) = φ₁(r) e^{-t}`, without overflow for large `r` and `t`.
pub fn psi1(n: i64, t: f64, r: f64) -> Result<f64, TestFnError> {
    Ok((ln_phi1(n, r)? - t).exp())
}

/// `‖ψ₁(t, ·)‖_{L^{p'}(|x| <= t+1)}` with `p' = p/(p-1)`.
pub fn psi1_weighted_norm(n: i64, p: f64, t: f64) -> Result<f64, TestFnError> {
    let nn = check(n, 0.0)?;
    if !(p > 1.0) {
        return Err(TestFnError::Exponent(p));
    }
    if !(t >= 0.0) {
        return Err(TestFnError::NegativeTime(t));
    }
    let pp = p / (p - 1.0);
    let area = sphere_area(nn - 1);
    let end = t + 1.0;
    // Evaluate near the edge first; the integrand is dominated by e^{p'(r - t)}.
    let mut failure = None;
    let mut integrand = |r: f64| -> f64 {
        if r == 0.0 && nn > 1 {
            return 0.0;
        }
        match ln_phi1(n, r) {
            Ok(lp) => (pp * (lp - t) + (nn as f64 - 1.0) * r.ln()).exp() * area,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let mut breaks = vec![0.0];
    for d in [40.0, 10.0, 2.0] {
        if end - d > 0.0 {
            breaks.push(end - d);
        }
    }
    breaks.push(end);
    let res = quadrature::integrate_with_breaks(&mut integrand, &breaks, Tolerance::default());
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(res?.value.powf(1.0 / pp))
}

/// `(t, ‖ψ₁(t)‖ / (t+1)^{(n-1)(1/2 - 1/p)})` for each scan time.
pub fn y20_ratio_scan(n: i64, p: f64, ts: &[f64]) -> Result<Vec<(f64, f64)>, TestFnError> {
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TestFnError::UnorderedTimes);
    }
    let growth = (n as f64 - 1.0) * (0.5 - 1.0 / p);
    ts.iter()
        .map(|&t| Ok((t, psi1_weighted_norm(n, p, t)? / (t + 1.0).powf(growth))))
        .collect()
}
