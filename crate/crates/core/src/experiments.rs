//! Composite studies built on the solver and the analytic tools: lifespan
//! sweeps, empirical checks of the weighted kernel estimates, the helper
//! inequalities used in their proofs, and the positivity of `⟨∂ₜu, ψ₁⟩`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, ParamPoint, RegionClass};
use crate::ode_lab::{self, OdeError, ScalingFit};
use crate::quadrature::{self, gauss_legendre, QuadratureError, Tolerance};
use crate::radial_solver::{
    self, Bracket, CharacteristicGrid, Confirmation, InitialData, MarchOptions, Problem,
    SolveOutcome, SolverError, WeightSet,
};
use crate::testfn_lab::{self, TestFnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("({n}, {p}, {q}) is classified {class}, not BlowupY4")]
    NotBlowup {
        n: u32,
        p: f64,
        q: f64,
        class: RegionClass,
    },
    #[error("the radial solver is three-dimensional; got n = {0}")]
    Dimension(u32),
    #[error("lifespan sweep needs at least 4 positive eps values spanning a factor of 2")]
    SweepSpan,
    #[error("{}", describe_failures(.failures))]
    SweepIncomplete {
        failures: Vec<RunFailure>,
        completed: Vec<LifespanRun>,
    },
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("run reached t = {reached} but positivity needs levels with t >= {needed}")]
    InsufficientRun { reached: f64, needed: f64 },
}

fn describe_failures(failures: &[RunFailure]) -> String {
    let parts: Vec<String> = failures.iter().map(ToString::to_string).collect();
    format!("lifespan sweep incomplete: {}", parts.join("; "))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FailureKind {
    /// The run reached its horizon without detecting blow-up.
    HorizonTooShort { t_max: f64 },
    /// The predicted cost of the run exceeds the policy's budget.
    BudgetExceeded { predicted_t: f64, node_levels: f64 },
    NumericalDivergence { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub eps: f64,
    pub kind: FailureKind,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FailureKind::HorizonTooShort { t_max } => {
                write!(f, "eps = {}: horizon too short (no blow-up by t = {t_max})", self.eps)
            }
            FailureKind::BudgetExceeded {
                predicted_t,
                node_levels,
            } => write!(
                f,
                "eps = {}: predicted lifespan {predicted_t:.4e} needs {node_levels:.3e} node updates, over budget",
                self.eps
            ),
            FailureKind::NumericalDivergence { t } => {
                write!(f, "eps = {}: numerical divergence at t = {t}", self.eps)
            }
        }
    }
}

/// How lifespan runs are gridded and bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifespanPolicy {
    pub h: f64,
    pub data: InitialData,
    pub blowup_threshold: f64,
    /// Horizon of the first attempt at the largest eps; grown 4x until blow-up.
    pub first_horizon: f64,
    /// Largest number of node updates `(T/h)²/2` a single run may cost.
    pub max_node_levels: f64,
    /// Confirm the brackets of the smallest and largest eps at `h/2`.
    pub confirm_extremes: bool,
}

impl Default for LifespanPolicy {
    fn default() -> Self {
        Self {
            h: 0.05,
            data: InitialData::default(),
            blowup_threshold: radial_solver::DEFAULT_BLOWUP_THRESHOLD,
            first_horizon: 20.0,
            max_node_levels: 2e9,
            confirm_extremes: true,
        }
    }
}

/// Node updates of a march to time `t`: the cone has `≈ k` nodes at level `k`.
pub fn node_levels(t: f64, h: f64) -> f64 {
    0.5 * (t / h).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifespanRun {
    pub eps: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub confirmation: Option<Confirmation>,
}

impl LifespanRun {
    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_low + self.t_high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifespanSweep {
    /// Sorted by increasing eps.
    pub runs: Vec<LifespanRun>,
    pub fit: ScalingFit,
    /// `-E` with `E` the predicted lifespan exponent.
    pub theory_slope: f64,
}

fn check_eps_list(eps_list: &[f64]) -> Result<Vec<f64>, ExperimentError> {
    let mut eps: Vec<f64> = eps_list.to_vec();
    if eps.len() < 4 || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(ExperimentError::SweepSpan);
    }
    eps.sort_by(f64::total_cmp);
    if eps[eps.len() - 1] < 2.0 * eps[0] {
        return Err(ExperimentError::SweepSpan);
    }
    Ok(eps)
}

/// Fits `T ~ eps^slope` through the runs and sorts them by eps.
pub fn fit_lifespans(
    mut runs: Vec<LifespanRun>,
    theory_slope: f64,
) -> Result<LifespanSweep, ExperimentError> {
    runs.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    let points: Vec<(f64, f64)> = runs.iter().map(|r| (r.eps, r.t_mid())).collect();
    let fit = ode_lab::fit_power_law(&points)?;
    Ok(LifespanSweep {
        runs,
        fit,
        theory_slope,
    })
}

/// Sweep harness with an injected lifespan oracle `runner(eps) -> (t_low, t_high)`.
pub fn lifespan_sweep_with<R>(
    eps_list: &[f64],
    theory_slope: f64,
    runner: R,
) -> Result<LifespanSweep, ExperimentError>
where
    R: Fn(f64) -> Result<(f64, f64), RunFailure> + Sync,
{
    let eps = check_eps_list(eps_list)?;
    let results: Vec<Result<LifespanRun, RunFailure>> = eps
        .par_iter()
        .map(|&e| {
            runner(e).map(|(t_low, t_high)| LifespanRun {
                eps: e,
                t_low,
                t_high,
                confirmation: None,
            })
        })
        .collect();
    collect_runs(results).and_then(|runs| fit_lifespans(runs, theory_slope))
}

fn collect_runs(
    results: Vec<Result<LifespanRun, RunFailure>>,
) -> Result<Vec<LifespanRun>, ExperimentError> {
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => completed.push(run),
            Err(f) => failures.push(f),
        }
    }
    if failures.is_empty() {
        Ok(completed)
    } else {
        failures.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        completed.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        Err(ExperimentError::SweepIncomplete {
            failures,
            completed,
        })
    }
}

fn blowup_run(
    pt: &ParamPoint,
    eps: f64,
    t_max: f64,
    confirm: bool,
    policy: &LifespanPolicy,
) -> Result<Result<LifespanRun, RunFailure>, ExperimentError> {
    let problem = Problem::new(eps, policy.data, pt.p(), pt.q())?;
    let grid = CharacteristicGrid::covering(policy.h, t_max, policy.data.support())?;
    let opts = MarchOptions {
        blowup_threshold: policy.blowup_threshold,
        confirm,
        ..MarchOptions::default()
    };
    let report = radial_solver::march(&problem, grid, &opts)?;
    Ok(match report.outcome {
        SolveOutcome::BlowupDetected { t_low, t_high } => Ok(LifespanRun {
            eps,
            t_low,
            t_high,
            confirmation: report.confirmation,
        }),
        SolveOutcome::CompletedHorizon => Err(RunFailure {
            eps,
            kind: FailureKind::HorizonTooShort { t_max: grid.t_max() },
        }),
        SolveOutcome::NumericalDivergence { t } => Err(RunFailure {
            eps,
            kind: FailureKind::NumericalDivergence { t },
        }),
    })
}

/// Measures the blow-up time for each eps and fits `log T` against `log eps`.
///
/// The largest eps is run first with a growing horizon; its lifespan
/// calibrates `Ĉ` in `T ≈ Ĉ eps^{-E}`, and every other run gets the horizon
/// `2 Ĉ eps^{-E}`. Runs whose predicted cost exceeds the policy budget are not
/// started and are reported as failures, as are runs that reach the horizon.
pub fn lifespan_sweep(
    pt: &ParamPoint,
    eps_list: &[f64],
    policy: &LifespanPolicy,
) -> Result<LifespanSweep, ExperimentError> {
    let class = analytics::classify(pt);
    if class != RegionClass::BlowupY4 {
        return Err(ExperimentError::NotBlowup {
            n: pt.n(),
            p: pt.p(),
            q: pt.q(),
            class,
        });
    }
    if pt.n() != 3 {
        return Err(ExperimentError::Dimension(pt.n()));
    }
    let exponent = analytics::blowup_lifespan_exponent(pt)?;
    let eps = check_eps_list(eps_list)?;
    let (smallest, largest) = (eps[0], eps[eps.len() - 1]);
    let confirm_cost = if policy.confirm_extremes { 4.0 } else { 1.0 };

    // Calibrate at the largest eps.
    let mut horizon = policy.first_horizon;
    let calibration = loop {
        let cost = node_levels(horizon, policy.h) * confirm_cost;
        if cost > policy.max_node_levels {
            return Err(ExperimentError::SweepIncomplete {
                failures: vec![RunFailure {
                    eps: largest,
                    kind: FailureKind::BudgetExceeded {
                        predicted_t: horizon,
                        node_levels: cost,
                    },
                }],
                completed: Vec::new(),
            });
        }
        match blowup_run(pt, largest, horizon, policy.confirm_extremes, policy)? {
            Ok(run) => break run,
            Err(RunFailure {
                kind: FailureKind::HorizonTooShort { .. },
                ..
            }) => horizon *= 4.0,
            Err(f) => {
                return Err(ExperimentError::SweepIncomplete {
                    failures: vec![f],
                    completed: Vec::new(),
                })
            }
        }
    };
    let c_hat = calibration.t_mid() * largest.powf(exponent);

    let rest: Vec<f64> = eps[..eps.len() - 1].to_vec();
    let results: Vec<Result<Result<LifespanRun, RunFailure>, ExperimentError>> = rest
        .par_iter()
        .map(|&e| {
            let predicted = c_hat * e.powf(-exponent);
            let confirm = policy.confirm_extremes && e == smallest;
            let cost = node_levels(predicted, policy.h) * if confirm { 4.0 } else { 1.0 };
            if cost > policy.max_node_levels {
                return Ok(Err(RunFailure {
                    eps: e,
                    kind: FailureKind::BudgetExceeded {
                        predicted_t: predicted,
                        node_levels: cost,
                    },
                }));
            }
            blowup_run(pt, e, 2.0 * predicted, confirm, policy)
        })
        .collect();
    let mut runs = vec![Ok(calibration)];
    for r in results {
        runs.push(r?);
    }
    fit_lifespans(collect_runs(runs)?, -exponent)
}

/// Writes `eps,T_low,T_high,T_mid` rows.
pub fn write_lifespan_csv<W: Write>(out: &mut W, runs: &[LifespanRun]) -> std::io::Result<()> {
    writeln!(out, "eps,T_low,T_high,T_mid")?;
    for r in runs {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            r.eps,
            r.t_low,
            r.t_high,
            r.t_mid()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimateId {
    Z9,
    Z10,
    Z11,
    Z12,
    Z17,
    Z25,
    Y20,
}

impl fmt::Display for EstimateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub t: f64,
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimate_id: EstimateId,
    pub sample_sup: f64,
    /// Sorted by `(t, r)`.
    pub samples: Vec<BoundSample>,
    /// Sup over samples with `t >= sqrt(t_min t_max)` over sup of the rest.
    pub stabilization_ratio: f64,
    /// Samples whose quadrature failed, with the reason.
    pub excluded: Vec<(f64, f64, String)>,
}

impl BoundReport {
    fn from_results(
        estimate_id: EstimateId,
        results: Vec<(f64, f64, Result<f64, ExperimentError>)>,
    ) -> Result<Self, ExperimentError> {
        let mut samples = Vec::new();
        let mut excluded = Vec::new();
        for (t, r, res) in results {
            match res {
                Ok(value) if value.is_finite() => samples.push(BoundSample { t, r, value }),
                Ok(value) => excluded.push((t, r, format!("non-finite value {value}"))),
                Err(e) => excluded.push((t, r, e.to_string())),
            }
        }
        if samples.is_empty() {
            return Err(ExperimentError::NoSamples);
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.r.total_cmp(&b.r)));
        let sample_sup = samples.iter().map(|s| s.value).fold(0.0, f64::max);
        Ok(Self {
            estimate_id,
            sample_sup,
            stabilization_ratio: stabilization_ratio(&samples),
            samples,
            excluded,
        })
    }
}

/// Ratio of the sup over the later half (in log t) of the samples to the sup
/// over the earlier half. A single sample time gives 1.
pub fn stabilization_ratio(samples: &[BoundSample]) -> f64 {
    let t_min = samples.iter().map(|s| s.t).fold(f64::INFINITY, f64::min);
    let t_max = samples.iter().map(|s| s.t).fold(0.0, f64::max);
    if t_min >= t_max {
        return 1.0;
    }
    let split = if t_min > 0.0 {
        (t_min * t_max).sqrt()
    } else {
        0.5 * t_max
    };
    let sup = |late: bool| {
        samples
            .iter()
            .filter(|s| (s.t >= split) == late)
            .map(|s| s.value)
            .fold(0.0, f64::max)
    };
    let early = sup(false);
    let late = sup(true);
    if early == 0.0 {
        if late == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        late / early
    }
}

/// Radii `{0, t/4, t/2, 3t/4, t-1, t, t+R₀}` kept within `[0, t + R₀]`.
pub fn default_sample_radii(t: f64, support: f64) -> Vec<f64> {
    let mut rs: Vec<f64> = [0.0, 0.25 * t, 0.5 * t, 0.75 * t, t - 1.0, t, t + support]
        .into_iter()
        .filter(|r| *r >= 0.0 && *r <= t + support)
        .collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    rs
}

pub const DEFAULT_SAMPLE_TIMES: [f64; 7] = [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

fn inner_tol() -> Tolerance {
    Tolerance {
        rel: 1e-9,
        abs: 1e-300,
        max_intervals: 2000,
    }
}

fn outer_tol() -> Tolerance {
    Tolerance {
        rel: 1e-7,
        abs: 1e-300,
        max_intervals: 2000,
    }
}

fn sorted_breaks(a: f64, b: f64, interior: &[f64]) -> Vec<f64> {
    let mut pts = vec![a];
    pts.extend(interior.iter().copied().filter(|x| *x > a && *x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Adaptive integral that records the first quadrature failure of a nested
/// evaluation instead of losing it inside the outer integrand.
fn nested<F: FnMut(f64) -> Result<f64, ExperimentError>>(
    mut f: F,
    points: &[f64],
    tol: Tolerance,
) -> Result<f64, ExperimentError> {
    let mut failure = None;
    let mut g = |x: f64| match f(x) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let res = quadrature::integrate_with_breaks(&mut g, points, tol);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(res?.value)
}

/// `LF(t, r)` for an even source given pointwise, by nested adaptive quadrature.
/// The source may peak along the rays `ρ = c s` for `c` in `ridges`.
fn l_operator<F>(f: &F, t: f64, r: f64, ridges: &[f64]) -> Result<f64, ExperimentError>
where
    F: Fn(f64, f64) -> f64,
{
    if t == 0.0 {
        return Ok(0.0);
    }
    if r == 0.0 {
        let axis: Vec<f64> = ridges.iter().map(|c| t / (1.0 + c)).collect();
        return nested(
            |s| Ok((t - s) * f(s, t - s)),
            &sorted_breaks(0.0, t, &axis),
            outer_tol(),
        );
    }
    let inner = |s: f64| -> Result<f64, ExperimentError> {
        let tau = t - s;
        let (lo, hi) = ((r - tau).abs(), r + tau);
        let ridge: Vec<f64> = ridges.iter().map(|c| c * s).collect();
        nested(|rho| Ok(rho * f(s, rho)), &sorted_breaks(lo, hi, &ridge), inner_tol())
    };
    // The ρ-window clips a ridge where r ± (t - s) = c s.
    let mut kinks = vec![t - r];
    for c in ridges {
        kinks.push((r + t) / (1.0 + c));
        if c != &1.0 {
            kinks.push((t - r) / (1.0 - c));
        }
        kinks.push((t - r) / (1.0 + c));
    }
    let v = nested(inner, &sorted_breaks(0.0, t, &kinks), outer_tol())?;
    Ok(v / (2.0 * r))
}

/// `K±F(t, r)` for an even source given pointwise; `breaks` are known kinks in `s`.
fn k_operator<F>(f: &F, plus: bool, t: f64, r: f64, breaks: &[f64]) -> Result<f64, ExperimentError>
where
    F: Fn(f64, f64) -> f64,
{
    if t == 0.0 {
        return Ok(0.0);
    }
    let sgn = if plus { 1.0 } else { -1.0 };
    let integrand = |s: f64| {
        let (a, b) = (r + t - s, r - t + s);
        Ok(a * f(s, a) + sgn * b * f(s, b.abs()))
    };
    let mut pts = vec![t - r];
    pts.extend_from_slice(breaks);
    Ok(0.5 * nested(integrand, &sorted_breaks(0.0, t, &pts), outer_tol())?)
}

fn z_breaks(t: f64, r: f64) -> Vec<f64> {
    vec![2.0 * (r + t) / 3.0, 2.0 * (t - r), 2.0 * (t - r) / 3.0, t - r]
}

/// Left side of one kernel estimate at `(t, r)` with the extremal profile
/// substituted, times the estimate's weight.
pub fn kernel_bound_value(
    id: EstimateId,
    weights: &WeightSet,
    q: f64,
    t: f64,
    r: f64,
) -> Result<f64, ExperimentError> {
    let p = weights.p;
    let br = |x: f64| weights.bracket.eval(x);
    match id {
        EstimateId::Z9 => {
            let src = |s: f64, rho: f64| weights.w1(s, rho).powf(-p);
            let l = l_operator(&src, t, r, &[1.0])?;
            Ok(weights.w2(t, r) * l)
        }
        EstimateId::Z10 => {
            let src = |s: f64, rho: f64| weights.w2(s, rho).powf(-q);
            let k = k_operator(&src, true, t, r, &z_breaks(t, r))?;
            Ok(br(t - r).powf(weights.mu / p) * k.abs())
        }
        EstimateId::Z11 => {
            if !(r > 0.0 && r < 1.0) {
                return Err(ExperimentError::Parameter { name: "r", value: r });
            }
            Ok(br(t).powf(weights.mu / p) * z11_majorant(weights, q, t, r)?)
        }
        EstimateId::Z12 => {
            let src = |s: f64, rho: f64| weights.w1(s, rho).powf(-p);
            let k = k_operator(&src, false, t, r, &[])?;
            Ok(weights.w3(t, r) * k.abs())
        }
        EstimateId::Z17 | EstimateId::Z25 | EstimateId::Y20 => {
            Err(ExperimentError::Parameter { name: "kernel estimate id", value: f64::NAN })
        }
    }
}

fn theta_rule() -> (Vec<f64>, Vec<f64>) {
    gauss_legendre(24)
}

/// `s`-breaks of an integrand in `r_θ = θ r⁺ + (1-θ)|r⁻|`: the kink at
/// `s = t - r` and the crossings `r_θ = s/2` (the seam of `w₂`) and `r_θ = s`.
fn r_theta_breaks(t: f64, r: f64, theta: f64) -> Vec<f64> {
    let mut pts = vec![t - r];
    // r_θ = a + b s on each side of s = t - r.
    let pieces = [
        (t + (2.0 * theta - 1.0) * r, -1.0),
        (r - (2.0 * theta - 1.0) * t, 2.0 * theta - 1.0),
    ];
    for (a, b) in pieces {
        for c in [0.5, 1.0] {
            if (c - b).abs() > 1e-14 {
                pts.push(a / (c - b));
            }
        }
    }
    pts
}

fn r_theta(t: f64, r: f64, s: f64, theta: f64) -> (f64, f64) {
    let r_plus = r + t - s;
    let r_minus = r - t + s;
    (theta * r_plus + (1.0 - theta) * r_minus.abs(), r_minus)
}

/// `2∫₀ᵗ w₂(s,r⁺)^{-q} ds + 2q ∫₀¹∫₀ᵗ |r⁻| / (r_θ w₂^{q-1} w₃)(s, r_θ) ds dθ`:
/// the bound on `r⁻¹|K₊|v|^q|` when `‖w₂v‖ = ‖w₃ r∂ᵣv‖ = 1`.
fn z11_majorant(weights: &WeightSet, q: f64, t: f64, r: f64) -> Result<f64, ExperimentError> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let first = nested(
        |s| Ok(weights.w2(s, r + t - s).powf(-q)),
        &sorted_breaks(0.0, t, &[2.0 * (r + t) / 3.0]),
        outer_tol(),
    )?;
    let rule = theta_rule();
    let mut second = 0.0;
    for (x, w) in rule.0.iter().zip(&rule.1) {
        let theta = 0.5 * (x + 1.0);
        let inner = nested(
            |s| {
                let (rt, rm) = r_theta(t, r, s, theta);
                Ok(rm.abs() / (rt * weights.w2(s, rt).powf(q - 1.0) * weights.w3(s, rt)))
            },
            &sorted_breaks(0.0, t, &r_theta_breaks(t, r, theta)),
            outer_tol(),
        )?;
        second += 0.5 * w * inner;
    }
    Ok(2.0 * first + 2.0 * q * second)
}

/// Evaluates one of the kernel estimates on the sample grid `ts × rs(t)`.
pub fn verify_kernel_bound(
    id: EstimateId,
    mu: f64,
    p: f64,
    q: f64,
    sample_ts: &[f64],
    sample_rs: impl Fn(f64) -> Vec<f64>,
) -> Result<BoundReport, ExperimentError> {
    if !matches!(id, EstimateId::Z9 | EstimateId::Z10 | EstimateId::Z11 | EstimateId::Z12) {
        return Err(ExperimentError::Parameter { name: "kernel estimate id", value: f64::NAN });
    }
    let weights = WeightSet::new(mu, p)?;
    let points: Vec<(f64, f64)> = sample_ts
        .iter()
        .flat_map(|&t| sample_rs(t).into_iter().map(move |r| (t, r)))
        .collect();
    if points.is_empty() {
        return Err(ExperimentError::NoSamples);
    }
    let results = points
        .par_iter()
        .map(|&(t, r)| (t, r, kernel_bound_value(id, &weights, q, t, r)))
        .collect();
    BoundReport::from_results(id, results)
}

/// Parameters of the helper inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HelperParams {
    /// `(1/r)∫_{|t-r|}^{t+r} ⟨τ⟩^{-κ} dτ ≤ C⟨t+r⟩^{-1}⟨t-r⟩^{1-κ}`, κ > 1.
    Z17 { kappa: f64, bracket: Bracket },
    /// `⟨t⟩^{μ/p} ∫₀¹∫₀ᵗ (w₂^{q-1} w₃)(s, r_θ)^{-1} ds dθ ≤ C`.
    Z25 { weights: WeightSet, q: f64 },
}

/// Left side of the Z17 helper estimate divided by its right-side envelope.
pub fn z17_ratio(kappa: f64, bracket: Bracket, t: f64, r: f64) -> Result<f64, ExperimentError> {
    if !(kappa > 1.0) {
        return Err(ExperimentError::Parameter { name: "kappa", value: kappa });
    }
    let br = |x: f64| bracket.eval(x);
    let envelope = br(t + r).recip() * br(t - r).powf(1.0 - kappa);
    let lhs = if t == 0.0 {
        0.0
    } else if r == 0.0 {
        2.0 * br(t).powf(-kappa)
    } else {
        let (lo, hi) = ((t - r).abs(), t + r);
        let pts = sorted_breaks(lo, hi, &[0.0]);
        let v = quadrature::integrate_with_breaks(
            &mut |tau: f64| br(tau).powf(-kappa),
            &pts,
            Tolerance::relative(1e-11),
        )?;
        v.value / r
    };
    Ok(lhs / envelope)
}

/// Left side of the Z25 helper estimate times `⟨t⟩^{μ/p}`.
pub fn z25_value(weights: &WeightSet, q: f64, t: f64, r: f64) -> Result<f64, ExperimentError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(ExperimentError::Parameter { name: "r", value: r });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let rule = theta_rule();
    let mut total = 0.0;
    for (x, w) in rule.0.iter().zip(&rule.1) {
        let theta = 0.5 * (x + 1.0);
        let inner = nested(
            |s| {
                let (rt, _) = r_theta(t, r, s, theta);
                Ok(1.0 / (weights.w2(s, rt).powf(q - 1.0) * weights.w3(s, rt)))
            },
            &sorted_breaks(0.0, t, &r_theta_breaks(t, r, theta)),
            outer_tol(),
        )?;
        total += 0.5 * w * inner;
    }
    Ok(weights.bracket.eval(t).powf(weights.mu / weights.p) * total)
}

pub fn verify_helper_inequality(
    params: HelperParams,
    sample_ts: &[f64],
    sample_rs: impl Fn(f64) -> Vec<f64>,
) -> Result<BoundReport, ExperimentError> {
    let points: Vec<(f64, f64)> = sample_ts
        .iter()
        .flat_map(|&t| sample_rs(t).into_iter().map(move |r| (t, r)))
        .collect();
    if points.is_empty() {
        return Err(ExperimentError::NoSamples);
    }
    let (id, results) = match params {
        HelperParams::Z17 { kappa, bracket } => {
            if !(kappa > 1.0) {
                return Err(ExperimentError::Parameter { name: "kappa", value: kappa });
            }
            (
                EstimateId::Z17,
                points
                    .par_iter()
                    .map(|&(t, r)| (t, r, z17_ratio(kappa, bracket, t, r)))
                    .collect(),
            )
        }
        HelperParams::Z25 { weights, q } => (
            EstimateId::Z25,
            points
                .par_iter()
                .map(|&(t, r)| (t, r, z25_value(&weights, q, t, r)))
                .collect(),
        ),
    };
    BoundReport::from_results(id, results)
}

/// Writes `estimate_id,t,r,value` rows.
pub fn write_bound_csv<W: Write>(out: &mut W, reports: &[BoundReport]) -> std::io::Result<()> {
    writeln!(out, "estimate_id,t,r,value")?;
    for rep in reports {
        for s in &rep.samples {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e}",
                rep.estimate_id, s.t, s.r, s.value
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// `(ε/4) ∫ (f + g) φ₁ dx` for the radial data of `u`.
pub fn y19_rhs(eps: f64, data: &InitialData) -> Result<f64, ExperimentError> {
    let support = data.f.support().max(data.g.support());
    if eps == 0.0 || support == 0.0 {
        return Ok(0.0);
    }
    let mut failure = None;
    let mut integrand = |r: f64| match testfn_lab::phi1(3, r) {
        Ok(phi) => (data.f.value(r) + data.g.value(r)) * phi * r * r,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let mut pts = vec![0.0, support];
    for s in [data.f.support(), data.g.support()] {
        if s > 0.0 && s < support {
            pts.insert(1, s);
        }
    }
    let v = quadrature::integrate_with_breaks(&mut integrand, &pts, Tolerance::relative(1e-12));
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(0.25 * eps * 4.0 * PI * v?.value)
}

/// Compares `⟨∂ₜu(t), ψ₁(t)⟩` with `(ε/4)⟨f + g, φ₁⟩` at every level of a
/// march with `t >= ln √2`, stopping at blow-up or at the grid horizon.
pub fn positivity_check_y19(
    problem: &Problem,
    grid: CharacteristicGrid,
    stride: usize,
) -> Result<Vec<PositivityRow>, ExperimentError> {
    let start = 0.5 * 2f64.ln();
    let rhs = y19_rhs(problem.eps, &problem.data)?;
    let h = grid.h;
    let mut ln_phi = Vec::new();
    for j in 0..=grid.n_r {
        ln_phi.push(testfn_lab::ln_phi1(3, grid.r(j))?);
    }
    let mut rows = Vec::new();
    let mut reached = 0.0;
    radial_solver::march_observed(problem, grid, &MarchOptions::default(), |state| {
        reached = state.t;
        if state.t < start || state.level % stride.max(1) != 0 {
            return;
        }
        let vals: Vec<f64> = state
            .w
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let r = j as f64 * h;
                w * (ln_phi[j] - state.t).exp() * r * r
            })
            .collect();
        let lhs = 4.0 * PI * quadrature::trapezoid_uniform(&vals, h);
        rows.push(PositivityRow {
            t: state.t,
            lhs,
            rhs,
        });
    })?;
    if rows.is_empty() {
        return Err(ExperimentError::InsufficientRun {
            reached,
            needed: start,
        });
    }
    Ok(rows)
}

/// Writes `t,lhs,rhs` rows.
pub fn write_positivity_csv<W: Write>(out: &mut W, rows: &[PositivityRow]) -> std::io::Result<()> {
    writeln!(out, "t,lhs,rhs")?;
    for r in rows {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", r.t, r.lhs, r.rhs)?;
    }
    Ok(())
}
