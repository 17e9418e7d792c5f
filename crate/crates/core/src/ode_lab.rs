//! Equality version of the comparison system
//!
//! ```text
//! F'' = A (t+1)^-α G^q,    G'' = B (t+1)^-β (F')^p  [+ κ a (a-1) (t+1)^(a-2)]
//! ```
//!
//! integrated with an adaptive Dormand-Prince 5(4) pair, plus blow-up
//! bracketing and κ-sweeps of the blow-up time.
//!
//! The bracketed forcing term is the ε-channel: it is the lower bound on `G''`
//! that the PDE supplies, and it makes `G(t) >= κ (t+1)^a` hold from `t = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::ComparisonParams;

/// Blow-up is declared once the proposed step drops below `t * STEP_COLLAPSE`.
pub const STEP_COLLAPSE: f64 = 1e-12;
/// Accepted steps looked back over when checking that `G` is running away.
const GROWTH_WINDOW: usize = 50;
const MAX_STEPS: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("invalid initial state: {0}")]
    InitialState(&'static str),
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("need at least 3 samples past t0 = {t0}, found {found}")]
    InsufficientData { t0: f64, found: usize },
    #[error("power-law fit needs at least 3 points (got {0})")]
    InsufficientPoints(usize),
    #[error("power-law fit needs positive coordinates, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("sweep needs at least 4 values spanning one decade")]
    SweepSpan,
    #[error("no blow-up for kappa in {failed:?}")]
    PartialFit { failed: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonState {
    pub t: f64,
    pub f: f64,
    pub fp: f64,
    pub g: f64,
    pub gp: f64,
}

impl ComparisonState {
    pub fn new(f: f64, fp: f64, g: f64, gp: f64) -> Self {
        Self {
            t: 0.0,
            f,
            fp,
            g,
            gp,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.f, self.fp, self.g, self.gp]
    }

    fn from_array(t: f64, y: [f64; 4]) -> Self {
        Self {
            t,
            f: y[0],
            fp: y[1],
            g: y[2],
            gp: y[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowupStatus {
    Blowup,
    NoBlowupByHorizon,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub t_low: f64,
    pub t_high: f64,
    pub status: BlowupStatus,
}

impl BlowupEstimate {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_low + self.t_high)
    }

    pub fn width(&self) -> f64 {
        self.t_high - self.t_low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// How the growth constant κ enters a sweep run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepChannel {
    /// Data `(0, 0, 0, κ)` with no forcing, so `G >= κ t` (growth exponent 1).
    InitialVelocity,
    /// Data `(0, 0, κ, aκ)` plus the forcing `κ a (a-1) (t+1)^(a-2)` on `G''`,
    /// so `G >= κ (t+1)^a` with the `a` of the parameters.
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSystem {
    pub params: ComparisonParams,
    pub growth_forcing: bool,
}

impl ComparisonSystem {
    pub fn new(params: ComparisonParams, growth_forcing: bool) -> Result<Self, OdeError> {
        let checks = [
            ("A", params.a_coef, params.a_coef > 0.0),
            ("B", params.b_coef, params.b_coef > 0.0),
            ("alpha", params.alpha, params.alpha >= 0.0),
            ("beta", params.beta, params.beta >= 0.0),
            ("p", params.p, params.p > 1.0),
            ("q", params.q, params.q > 1.0),
            ("a", params.a, params.a > 0.0),
            ("kappa", params.kappa, params.kappa > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(OdeError::Parameter { name, value });
            }
        }
        Ok(Self {
            params,
            growth_forcing,
        })
    }

    pub fn for_channel(params: ComparisonParams, channel: SweepChannel) -> Result<Self, OdeError> {
        Self::new(params, channel == SweepChannel::Epsilon)
    }

    /// Initial state used by `channel` for this system's κ.
    pub fn channel_data(&self, channel: SweepChannel) -> ComparisonState {
        let k = self.params.kappa;
        match channel {
            SweepChannel::InitialVelocity => ComparisonState::new(0.0, 0.0, 0.0, k),
            SweepChannel::Epsilon => ComparisonState::new(0.0, 0.0, k, self.params.a * k),
        }
    }

    fn rhs(&self, t: f64, y: &[f64; 4]) -> [f64; 4] {
        let c = &self.params;
        let tp = t + 1.0;
        let mut gpp = c.b_coef * tp.powf(-c.beta) * y[1].abs().powf(c.p);
        if self.growth_forcing {
            gpp += c.kappa * c.a * (c.a - 1.0) * tp.powf(c.a - 2.0);
        }
        [
            y[1],
            c.a_coef * tp.powf(-c.alpha) * y[2].abs().powf(c.q),
            y[3],
            gpp,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub trajectory: Vec<ComparisonState>,
    pub estimate: BlowupEstimate,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dp_step(sys: &ComparisonSystem, t: f64, y: &[f64; 4], h: f64) -> ([f64; 4], f64) {
    let mut k = [[0.0; 4]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for i in 0..4 {
                ys[i] += h * A[s][j] * kj[i];
            }
        }
        k[s] = sys.rhs(t + C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut err = 0.0;
    for i in 0..4 {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += B5[s] * k[s][i];
            d4 += B4[s] * k[s][i];
        }
        y5[i] += h * d5;
        let e = h * (d5 - d4);
        let scale = 1.0 + y[i].abs().max(y5[i].abs());
        err += (e / scale).powi(2);
    }
    (y5, (err / 4.0).sqrt())
}

/// Remaining time to blow-up estimated from the geometric decay of recent steps.
fn remaining_time(steps: &[f64]) -> f64 {
    let last = *steps.last().unwrap_or(&0.0);
    if steps.len() < 2 {
        return last;
    }
    let k = (steps.len() - 1).min(10);
    let first = steps[steps.len() - 1 - k];
    let rho = (last / first).powf(1.0 / k as f64);
    if rho < 1.0 && rho > 0.0 {
        last * rho / (1.0 - rho)
    } else {
        last
    }
}

/// Integrates the comparison system from `init` until blow-up or `horizon`.
///
/// The local error test is relative (`tol` per unit of `1 + |y|`). Blow-up is
/// declared when the step size collapses below `t * 1e-12` while `G` has at
/// least doubled over the trailing window of accepted steps; the bracket's
/// upper end adds twice the geometric-series estimate of the remaining time.
pub fn integrate_comparison(
    sys: &ComparisonSystem,
    init: ComparisonState,
    horizon: f64,
    tol: f64,
) -> Result<Integration, OdeError> {
    if !(init.gp > 0.0) {
        return Err(OdeError::InitialState("G'(0) must be > 0"));
    }
    if !(init.fp >= 0.0 && init.g >= 0.0 && init.f >= 0.0) {
        return Err(OdeError::InitialState("F(0), F'(0), G(0) must be >= 0"));
    }
    if !(tol > 0.0) {
        return Err(OdeError::Parameter {
            name: "tol",
            value: tol,
        });
    }
    if !(horizon > 0.0) {
        return Err(OdeError::Parameter {
            name: "horizon",
            value: horizon,
        });
    }
    Ok(integrate_unchecked(sys, init, horizon, tol))
}

pub(crate) fn integrate_unchecked(
    sys: &ComparisonSystem,
    init: ComparisonState,
    horizon: f64,
    tol: f64,
) -> Integration {
    let mut t = init.t;
    let mut y = init.as_array();
    let mut trajectory = vec![ComparisonState::from_array(t, y)];
    let mut steps: Vec<f64> = Vec::new();
    let mut h = (1e-3_f64).min(horizon - t);
    let finish = |trajectory: Vec<ComparisonState>, t_low, t_high, status| Integration {
        trajectory,
        estimate: BlowupEstimate {
            t_low,
            t_high,
            status,
        },
    };

    for _ in 0..MAX_STEPS {
        let (y_new, err) = dp_step(sys, t, &y, h);
        let finite = y_new.iter().all(|v| v.is_finite()) && err.is_finite();
        if !finite {
            // Treat overflow inside a trial step as a rejection; give up only
            // once the step has collapsed as well.
            if h < t.max(1.0) * STEP_COLLAPSE {
                let rem = remaining_time(&steps);
                return finish(trajectory, t, t + 2.0 * rem.max(h), BlowupStatus::Inconclusive);
            }
            h *= 0.2;
            continue;
        }
        let ratio = err / tol;
        if ratio <= 1.0 {
            t += h;
            y = y_new;
            steps.push(h);
            trajectory.push(ComparisonState::from_array(t, y));
            if t >= horizon {
                return finish(trajectory, t, t, BlowupStatus::NoBlowupByHorizon);
            }
        }
        let factor = if ratio == 0.0 {
            5.0
        } else {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < t * STEP_COLLAPSE {
            let n = trajectory.len();
            let back = &trajectory[n.saturating_sub(GROWTH_WINDOW + 1)];
            let g_now = trajectory[n - 1].g;
            if g_now >= 2.0 * back.g && g_now > 0.0 {
                let rem = remaining_time(&steps);
                return finish(trajectory, t, t + 2.0 * rem.max(h), BlowupStatus::Blowup);
            }
            let rem = remaining_time(&steps);
            return finish(trajectory, t, t + 2.0 * rem.max(h), BlowupStatus::Inconclusive);
        }
        h = h.min(horizon - t);
    }
    let rem = remaining_time(&steps);
    finish(trajectory, t, t + rem, BlowupStatus::Inconclusive)
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit, OdeError> {
    if points.len() < 3 {
        return Err(OdeError::InsufficientPoints(points.len()));
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(OdeError::NonPositive(x, y));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(OdeError::InsufficientPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        points: points.to_vec(),
    })
}

/// `t0` at which the growth bound is checked by default: `max{1, G(0)/G'(0)}`.
pub fn default_t0(init: &ComparisonState) -> f64 {
    (init.g / init.gp).max(1.0)
}

/// Fits `G(t) ≈ κ̂ t^â` over the trajectory samples with `t >= t0`.
pub fn verify_lower_bound_y11(
    trajectory: &[ComparisonState],
    t0: f64,
) -> Result<(f64, f64), OdeError> {
    let pts: Vec<(f64, f64)> = trajectory
        .iter()
        .filter(|s| s.t >= t0 && s.t > 0.0 && s.g > 0.0)
        .map(|s| (s.t, s.g))
        .collect();
    if pts.len() < 3 {
        return Err(OdeError::InsufficientData {
            t0,
            found: pts.len(),
        });
    }
    let fit = fit_power_law(&pts)?;
    Ok((fit.intercept.exp(), fit.slope))
}

/// One sweep run, with whether the lemma's `max{t0, G(0)/G'(0), 1} < T/2` held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub kappa: f64,
    pub estimate: BlowupEstimate,
    pub hypothesis_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSweep {
    pub channel: SweepChannel,
    pub runs: Vec<SweepRun>,
    pub fit: ScalingFit,
}

fn check_sweep_values(values: &[f64]) -> Result<(), OdeError> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.len() < 4 || !(lo > 0.0) || hi / lo < 10.0 {
        return Err(OdeError::SweepSpan);
    }
    Ok(())
}

/// Fits `ln T*` against `ln κ` for blow-up times produced by `runner`.
/// Runs execute in parallel and are ordered by κ before fitting.
pub fn kappa_sweep_with<R>(kappas: &[f64], runner: R) -> Result<(Vec<SweepRun>, ScalingFit), OdeError>
where
    R: Fn(f64) -> SweepRun + Sync,
{
    check_sweep_values(kappas)?;
    let mut runs: Vec<SweepRun> = kappas.par_iter().map(|&k| runner(k)).collect();
    runs.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    let failed: Vec<f64> = runs
        .iter()
        .filter(|r| r.estimate.status != BlowupStatus::Blowup)
        .map(|r| r.kappa)
        .collect();
    if !failed.is_empty() {
        return Err(OdeError::PartialFit { failed });
    }
    let pts: Vec<(f64, f64)> = runs.iter().map(|r| (r.kappa, r.estimate.midpoint())).collect();
    Ok((runs, fit_power_law(&pts)?))
}

/// Blow-up time of the comparison system as a function of κ.
pub fn kappa_sweep(
    params_base: &ComparisonParams,
    kappas: &[f64],
    horizon: f64,
    channel: SweepChannel,
    tol: f64,
) -> Result<KappaSweep, OdeError> {
    ComparisonSystem::for_channel(*params_base, channel)?;
    let runner = |kappa: f64| {
        let sys = ComparisonSystem {
            params: params_base.with_kappa(kappa),
            growth_forcing: channel == SweepChannel::Epsilon,
        };
        let init = sys.channel_data(channel);
        let run = integrate_unchecked(&sys, init, horizon, tol);
        let t_star = run.estimate.midpoint();
        SweepRun {
            kappa,
            estimate: run.estimate,
            hypothesis_holds: default_t0(&init) < t_star / 2.0,
        }
    };
    let (runs, fit) = kappa_sweep_with(kappas, runner)?;
    Ok(KappaSweep { channel, runs, fit })
}
