//! Validation of a [`RunConfig`] into a typed job, and its execution.

use std::io::Write;

use serde_json::json;
use wavelab::analytics::{self, AnalyticsError, ComparisonParams, ParamPoint, RegionClass};
use wavelab::experiments::{
    self, EstimateId, ExperimentError, HelperParams, LifespanPolicy,
};
use wavelab::ode_lab::{self, OdeError, SweepChannel};
use wavelab::radial_solver::{
    self, Bracket, CharacteristicGrid, InitialData, MarchOptions, Problem, RadialProfile,
    SolveOutcome, SolverError, WeightSet, PICARD_MAX_NODES,
};
use wavelab::testfn_lab;

use crate::config::{CommandKind, Format, RunConfig};
use crate::CliError;

/// Radii for estimates that only hold inside the unit ball.
const INNER_RADII: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone)]
pub enum Job {
    Classify(ParamPoint),
    Exponents(i64),
    OdeSweep {
        base: ComparisonParams,
        kappas: Vec<f64>,
        channel: SweepChannel,
        horizon: f64,
        tol: f64,
    },
    Solve {
        problem: Problem,
        grid: CharacteristicGrid,
        opts: MarchOptions,
        stride: usize,
    },
    LifespanSweep {
        point: ParamPoint,
        eps: Vec<f64>,
        policy: LifespanPolicy,
    },
    KernelBound {
        id: EstimateId,
        mu: f64,
        p: f64,
        q: f64,
        ts: Vec<f64>,
        rs: Option<Vec<f64>>,
    },
    Helper {
        params: HelperParams,
        ts: Vec<f64>,
        rs: Option<Vec<f64>>,
    },
    PsiScan {
        n: i64,
        p: f64,
        ts: Vec<f64>,
    },
    Positivity {
        problem: Problem,
        grid: CharacteristicGrid,
        stride: usize,
    },
    Picard {
        problem: Problem,
        grid: CharacteristicGrid,
        iters: usize,
        weights: Option<WeightSet>,
    },
}

fn usage(key: &str, message: impl ToString) -> CliError {
    CliError::usage(key, message.to_string())
}

fn positive(cfg: &RunConfig, key: &str) -> Result<f64, CliError> {
    let x = cfg.float(key);
    if x > 0.0 {
        Ok(x)
    } else {
        Err(usage(key, format!("must be > 0, got {x}")))
    }
}

fn count(cfg: &RunConfig, key: &str, min: i64) -> Result<usize, CliError> {
    let k = cfg.int(key);
    if k >= min {
        Ok(k as usize)
    } else {
        Err(usage(key, format!("must be >= {min}, got {k}")))
    }
}

fn analytics_usage(e: AnalyticsError) -> CliError {
    let key = match &e {
        AnalyticsError::Exponent { name, .. } => name,
        AnalyticsError::Comparison { name: "A", .. } => "a-coef",
        AnalyticsError::Comparison { name: "B", .. } => "b-coef",
        AnalyticsError::Comparison { name, .. } => name,
        AnalyticsError::MuWindowDomain { .. } | AnalyticsError::EmptyMuWindow { .. } => "mu",
        _ => "n",
    };
    usage(key, e)
}

fn solver_usage(e: SolverError, fallback: &str) -> CliError {
    match &e {
        SolverError::Parameter { name, .. } => usage(name, e),
        _ => usage(fallback, e),
    }
}

fn point(cfg: &RunConfig) -> Result<ParamPoint, CliError> {
    ParamPoint::new(cfg.int("n"), cfg.float("p"), cfg.float("q")).map_err(analytics_usage)
}

fn require_3d(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.int("n") {
        3 => Ok(()),
        n => Err(usage("n", format!("the radial solver needs n = 3, got {n}"))),
    }
}

fn bump_data(cfg: &RunConfig) -> Result<InitialData, CliError> {
    let radius = positive(cfg, "radius")?;
    let b = RadialProfile::bump(cfg.float("amplitude"), radius).map_err(|e| usage("amplitude", e))?;
    Ok(InitialData {
        f: b,
        g: b,
        f_tilde: b,
        g_tilde: b,
    })
}

fn grid(cfg: &RunConfig, support: f64) -> Result<CharacteristicGrid, CliError> {
    let h = positive(cfg, "h")?;
    let tmax = positive(cfg, "tmax")?;
    CharacteristicGrid::covering(h, tmax, support).map_err(|e| usage("h", e))
}

fn increasing_times(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let ts = cfg.list("ts").unwrap_or(&[]).to_vec();
    if ts.is_empty() || ts.iter().any(|t| *t < 0.0) || ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage("ts", "need increasing times >= 0"));
    }
    Ok(ts)
}

fn default_weights(p: f64, q: f64, mu: Option<f64>) -> Result<Option<WeightSet>, CliError> {
    match mu {
        Some(mu) => Ok(Some(WeightSet::new(mu, p).map_err(|e| usage("mu", e))?)),
        None => Ok(WeightSet::for_exponents(p, q).ok()),
    }
}

/// Checks every precondition of the configured operation and builds it.
pub fn plan(cfg: &RunConfig) -> Result<Job, CliError> {
    Ok(match cfg.command {
        CommandKind::Classify => Job::Classify(point(cfg)?),
        CommandKind::Exponents => {
            let n = cfg.int("n");
            analytics::strauss_exponent(n).map_err(analytics_usage)?;
            Job::Exponents(n)
        }
        CommandKind::OdeSweep => {
            let pt = point(cfg)?;
            let eps = cfg.list("eps").unwrap_or(&[]);
            if eps.len() < 4 || eps.iter().any(|e| *e <= 0.0) {
                return Err(usage("eps", "need at least 4 positive values"));
            }
            let (a_coef, b_coef) = (cfg.float("a-coef"), cfg.float("b-coef"));
            let base = analytics::comparison_parameters(&pt, a_coef, b_coef, eps[0])
                .map_err(analytics_usage)?;
            let kappas: Vec<f64> = eps.iter().map(|e| a_coef * e.powf(pt.p())).collect();
            let (lo, hi) = kappas
                .iter()
                .fold((f64::INFINITY, 0.0_f64), |(lo, hi), k| (lo.min(*k), hi.max(*k)));
            if hi < 10.0 * lo {
                return Err(usage("eps", "kappa = A eps^p must span at least a factor 10"));
            }
            let channel = match cfg.word("channel") {
                Some("velocity") => SweepChannel::InitialVelocity,
                _ => SweepChannel::Epsilon,
            };
            Job::OdeSweep {
                base,
                kappas,
                channel,
                horizon: positive(cfg, "horizon")?,
                tol: positive(cfg, "tol")?,
            }
        }
        CommandKind::Solve => {
            require_3d(cfg)?;
            let data = bump_data(cfg)?;
            let (p, q) = (cfg.float("p"), cfg.float("q"));
            let problem = Problem::new(cfg.float("eps"), data, p, q).map_err(|e| solver_usage(e, "eps"))?;
            let opts = MarchOptions {
                blowup_threshold: positive(cfg, "threshold")?,
                confirm: cfg.flag("confirm"),
                weights: default_weights(p, q, cfg.opt_float("mu"))?,
                ..MarchOptions::default()
            };
            Job::Solve {
                problem,
                grid: grid(cfg, data.support())?,
                opts,
                stride: count(cfg, "stride", 1)?,
            }
        }
        CommandKind::LifespanSweep => {
            require_3d(cfg)?;
            let pt = point(cfg)?;
            let class = analytics::classify(&pt);
            if class != RegionClass::BlowupY4 {
                return Err(usage("q", format!("{pt:?} is {class:?}, not in the blow-up region")));
            }
            let eps = cfg.list("eps").unwrap_or(&[]).to_vec();
            let (lo, hi) = eps
                .iter()
                .fold((f64::INFINITY, 0.0_f64), |(lo, hi), e| (lo.min(*e), hi.max(*e)));
            if eps.len() < 4 || lo <= 0.0 || hi < 2.0 * lo {
                return Err(usage("eps", "need at least 4 positive values spanning a factor 2"));
            }
            let policy = LifespanPolicy {
                h: positive(cfg, "h")?,
                data: bump_data(cfg)?,
                blowup_threshold: positive(cfg, "threshold")?,
                first_horizon: positive(cfg, "first-horizon")?,
                max_node_levels: positive(cfg, "budget")?,
                confirm_extremes: cfg.flag("confirm"),
            };
            Job::LifespanSweep { point: pt, eps, policy }
        }
        CommandKind::VerifyBounds => {
            let (p, q) = (cfg.float("p"), cfg.float("q"));
            for (k, x) in [("p", p), ("q", q)] {
                if !(x > 1.0) {
                    return Err(usage(k, format!("must be > 1, got {x}")));
                }
            }
            let ts = increasing_times(cfg)?;
            let rs = cfg.list("rs").map(<[f64]>::to_vec);
            let estimate = cfg.word("estimate").unwrap_or("z9");
            let inner = matches!(estimate, "z11" | "z25");
            if let Some(rs) = &rs {
                if rs.is_empty() || rs.iter().any(|r| *r < 0.0 || (inner && !(*r > 0.0 && *r < 1.0))) {
                    let need = if inner { "radii in (0, 1)" } else { "radii >= 0" };
                    return Err(usage("rs", format!("{estimate} needs {need}")));
                }
            }
            let bracket = match cfg.word("bracket") {
                Some("sqrt") => Some(Bracket::Sqrt),
                Some(_) => Some(Bracket::OnePlusAbs),
                None => None,
            };
            let mu = || -> Result<f64, CliError> {
                match cfg.opt_float("mu") {
                    Some(mu) => Ok(mu),
                    None => Ok(analytics::mu_window(p, q).map_err(analytics_usage)?.chosen_mu),
                }
            };
            match estimate {
                "z17" => {
                    let kappa = cfg.float("kappa");
                    if !(kappa > 1.0) {
                        return Err(usage("kappa", format!("must be > 1, got {kappa}")));
                    }
                    let bracket = bracket.unwrap_or_default();
                    Job::Helper { params: HelperParams::Z17 { kappa, bracket }, ts, rs }
                }
                "z25" => {
                    let mut weights = WeightSet::new(mu()?, p).map_err(|e| usage("mu", e))?;
                    weights.bracket = bracket.unwrap_or_default();
                    Job::Helper { params: HelperParams::Z25 { weights, q }, ts, rs }
                }
                _ => {
                    if bracket.is_some_and(|b| b != Bracket::default()) {
                        return Err(usage("bracket", "z9-z12 use the bracket convention of the build"));
                    }
                    let id = match estimate {
                        "z9" => EstimateId::Z9,
                        "z10" => EstimateId::Z10,
                        "z11" => EstimateId::Z11,
                        _ => EstimateId::Z12,
                    };
                    Job::KernelBound { id, mu: mu()?, p, q, ts, rs }
                }
            }
        }
        CommandKind::VerifyPsi => {
            let p = cfg.float("p");
            if cfg.word("check") == Some("y19") {
                require_3d(cfg)?;
                let data = InitialData::default();
                let problem = Problem::new(cfg.float("eps"), data, p, cfg.float("q"))
                    .map_err(|e| solver_usage(e, "eps"))?;
                let grid = grid(cfg, data.support())?;
                if grid.t_max() < 0.5 * 2f64.ln() {
                    return Err(usage("tmax", "must reach t = ln sqrt 2"));
                }
                Job::Positivity { problem, grid, stride: count(cfg, "stride", 1)? }
            } else {
                let n = cfg.int("n");
                if n < 2 {
                    return Err(usage("n", format!("need n >= 2, got {n}")));
                }
                if !(p > 1.0) {
                    return Err(usage("p", format!("must be > 1, got {p}")));
                }
                Job::PsiScan { n, p, ts: increasing_times(cfg)? }
            }
        }
        CommandKind::Picard => {
            let data = InitialData::default();
            let (p, q) = (cfg.float("p"), cfg.float("q"));
            let problem = Problem::new(cfg.float("eps"), data, p, q).map_err(|e| solver_usage(e, "eps"))?;
            let grid = grid(cfg, data.support())?;
            let nodes = (grid.n_t + 1) * (grid.n_r + 1);
            if nodes > PICARD_MAX_NODES {
                return Err(usage(
                    "tmax",
                    format!("box of {nodes} nodes exceeds the limit of {PICARD_MAX_NODES}; lower tmax or raise h"),
                ));
            }
            let weights = match cfg.opt_float("mu") {
                Some(mu) => Some(WeightSet::new(mu, p).map_err(|e| usage("mu", e))?),
                None => None,
            };
            Job::Picard { problem, grid, iters: count(cfg, "iters", 2)?, weights }
        }
    })
}

fn e(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(e).unwrap_or_default()
}

fn emit_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Runs the configured operation and writes its results to `out`.
///
/// Partial results are written before an in-band failure is returned.
pub fn execute(cfg: &RunConfig, mut out: &mut dyn Write) -> Result<(), CliError> {
    let job = plan(cfg)?;
    let csv = cfg.format == Format::Csv;
    match job {
        Job::Classify(pt) => {
            let region = analytics::classify(&pt);
            let residual = analytics::curve_residual(analytics::Curve::B5, &pt)?;
            let exponent = analytics::blowup_lifespan_exponent(&pt).ok();
            if csv {
                writeln!(out, "{}", cfg.command.columns())?;
                writeln!(
                    out,
                    "{},{},{},{region:?},{},{}",
                    pt.n(),
                    e(pt.p()),
                    e(pt.q()),
                    e(residual),
                    opt(exponent)
                )?;
            } else {
                emit_json(
                    out,
                    &json!({
                        "n": pt.n(), "p": pt.p(), "q": pt.q(),
                        "region": format!("{region:?}"),
                        "b5_residual": residual,
                        "lifespan_exponent": exponent,
                    }),
                )?;
            }
        }
        Job::Exponents(n) => {
            let q0 = analytics::strauss_exponent(n)?;
            let p0 = analytics::glassey_exponent(n)?;
            let b6 = analytics::b6_lifespan_exponent(n).ok();
            if csv {
                writeln!(out, "{}", cfg.command.columns())?;
                writeln!(out, "{n},{},{},{}", e(q0), e(p0), opt(b6))?;
            } else {
                emit_json(out, &json!({ "n": n, "q0": q0, "p0": p0, "b6_exponent": b6 }))?;
            }
        }
        Job::OdeSweep { base, kappas, channel, horizon, tol } => {
            let a = if channel == SweepChannel::Epsilon { base.a } else { 1.0 };
            let theory = analytics::lemma_y8_exponent(base.p, base.q, base.alpha, base.beta, a).ok();
            let sweep = match ode_lab::kappa_sweep(&base, &kappas, horizon, channel, tol) {
                Ok(s) => s,
                Err(err @ OdeError::PartialFit { .. }) => return Err(CliError::InBand(err.to_string())),
                Err(err) => return Err(err.into()),
            };
            let eps_of = |k: f64| (k / base.a_coef).powf(1.0 / base.p);
            eprintln!(
                "ode-sweep: slope d log T / d log kappa = {:.6} (theory {})",
                sweep.fit.slope,
                theory.map_or("n/a".to_owned(), |t| format!("{:.6}", -t))
            );
            if csv {
                writeln!(out, "{}", cfg.command.columns())?;
                for r in &sweep.runs {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        e(eps_of(r.kappa)),
                        e(r.kappa),
                        e(r.estimate.t_low),
                        e(r.estimate.t_high),
                        e(r.estimate.midpoint()),
                        r.hypothesis_holds
                    )?;
                }
            } else {
                let runs: Vec<_> = sweep
                    .runs
                    .iter()
                    .map(|r| {
                        json!({
                            "eps": eps_of(r.kappa), "kappa": r.kappa,
                            "T_low": r.estimate.t_low, "T_high": r.estimate.t_high,
                            "T_mid": r.estimate.midpoint(), "hypothesis_holds": r.hypothesis_holds,
                        })
                    })
                    .collect();
                emit_json(
                    out,
                    &json!({
                        "channel": format!("{:?}", sweep.channel),
                        "theory_slope": theory.map(|t| -t),
                        "fit": sweep.fit,
                        "runs": runs,
                    }),
                )?;
            }
        }
        Job::Solve { problem, grid, opts, stride } => {
            let report = radial_solver::march(&problem, grid, &opts)?;
            eprintln!("solve: {:?} after {} levels", report.outcome, report.levels_completed);
            let rows: Vec<usize> = (0..report.fg_history.len())
                .filter(|k| k % stride == 0 || k + 1 == report.fg_history.len())
                .collect();
            let norms = |k: usize| report.norm_history.get(k).map(|n| (n.n1, n.n2, n.n3));
            if csv {
                writeln!(out, "{}", cfg.command.columns())?;
                for &k in &rows {
                    let fg = &report.fg_history[k];
                    let n = norms(k);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        e(fg.t),
                        e(fg.f),
                        e(fg.g),
                        e(fg.v_q),
                        e(fg.w_p),
                        opt(n.map(|n| n.0)),
                        opt(n.map(|n| n.1)),
                        opt(n.map(|n| n.2))
                    )?;
                }
            } else {
                let history: Vec<_> = rows
                    .iter()
                    .map(|&k| {
                        let fg = &report.fg_history[k];
                        let n = norms(k);
                        json!({
                            "t": fg.t, "F": fg.f, "G": fg.g, "v_q": fg.v_q, "w_p": fg.w_p,
                            "n1": n.map(|n| n.0), "n2": n.map(|n| n.1), "n3": n.map(|n| n.2),
                        })
                    })
                    .collect();
                emit_json(
                    out,
                    &json!({
                        "outcome": report.outcome,
                        "levels_completed": report.levels_completed,
                        "confirmation": report.confirmation,
                        "history": history,
                    }),
                )?;
            }
            if let SolveOutcome::NumericalDivergence { t } = report.outcome {
                return Err(CliError::Numeric(format!("non-finite values at t = {t}")));
            }
        }
        Job::LifespanSweep { point, eps, policy } => {
            match experiments::lifespan_sweep(&point, &eps, &policy) {
                Ok(sweep) => {
                    eprintln!(
                        "lifespan-sweep: slope {:.6} (theory {:.6})",
                        sweep.fit.slope, sweep.theory_slope
                    );
                    for r in &sweep.runs {
                        if let Some(c) = &r.confirmation {
                            eprintln!("lifespan-sweep: eps = {} confirmation stable = {}", r.eps, c.stable);
                        }
                    }
                    if csv {
                        experiments::write_lifespan_csv(&mut out, &sweep.runs)?;
                    } else {
                        emit_json(out, &serde_json::to_value(&sweep)?)?;
                    }
                }
                Err(err @ ExperimentError::SweepIncomplete { .. }) => {
                    let ExperimentError::SweepIncomplete { completed, failures } = &err else {
                        unreachable!()
                    };
                    if csv {
                        experiments::write_lifespan_csv(&mut out, completed)?;
                    } else {
                        emit_json(out, &json!({ "runs": completed, "failures": failures }))?;
                    }
                    return Err(CliError::InBand(err.to_string()));
                }
                Err(err) => return Err(err.into()),
            }
        }
        Job::KernelBound { id, mu, p, q, ts, rs } => {
            let report = match rs {
                Some(rs) => experiments::verify_kernel_bound(id, mu, p, q, &ts, |_| rs.clone())?,
                None if id == EstimateId::Z11 => {
                    experiments::verify_kernel_bound(id, mu, p, q, &ts, |_| INNER_RADII.to_vec())?
                }
                None => experiments::verify_kernel_bound(id, mu, p, q, &ts, |t| {
                    experiments::default_sample_radii(t, 1.0)
                })?,
            };
            write_bounds(cfg, out, &report)?;
        }
        Job::Helper { params, ts, rs } => {
            let inner = matches!(params, HelperParams::Z25 { .. });
            let report = match rs {
                Some(rs) => experiments::verify_helper_inequality(params, &ts, |_| rs.clone())?,
                None if inner => {
                    experiments::verify_helper_inequality(params, &ts, |_| INNER_RADII.to_vec())?
                }
                None => experiments::verify_helper_inequality(params, &ts, |t| {
                    experiments::default_sample_radii(t, 1.0)
                })?,
            };
            write_bounds(cfg, out, &report)?;
        }
        Job::PsiScan { n, p, ts } => {
            let scan = testfn_lab::y20_ratio_scan(n, p, &ts)?;
            let hi = scan.iter().map(|s| s.1).fold(0.0, f64::max);
            let lo = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            eprintln!("verify-psi: max/min ratio = {:.6}", hi / lo);
            if csv {
                writeln!(out, "t,ratio")?;
                for (t, r) in &scan {
                    writeln!(out, "{},{}", e(*t), e(*r))?;
                }
            } else {
                let rows: Vec<_> = scan.iter().map(|(t, r)| json!({ "t": t, "ratio": r })).collect();
                emit_json(out, &json!(rows))?;
            }
        }
        Job::Positivity { problem, grid, stride } => {
            let rows = experiments::positivity_check_y19(&problem, grid, stride)?;
            if csv {
                experiments::write_positivity_csv(&mut out, &rows)?;
            } else {
                emit_json(out, &serde_json::to_value(&rows)?)?;
            }
            if let Some(bad) = rows.iter().find(|r| r.lhs < r.rhs) {
                return Err(CliError::InBand(format!(
                    "positivity fails at t = {}: {} < {}",
                    bad.t, bad.lhs, bad.rhs
                )));
            }
        }
        Job::Picard { problem, grid, iters, weights } => {
            let report = radial_solver::picard_run(&problem, grid, iters, weights.as_ref())?;
            let ratio = |i: usize| {
                (i > 0 && report.differences[i - 1] > 0.0)
                    .then(|| report.differences[i] / report.differences[i - 1])
            };
            if csv {
                writeln!(out, "{}", cfg.command.columns())?;
                for (i, d) in report.differences.iter().enumerate() {
                    writeln!(out, "{},{},{}", i + 1, e(*d), opt(ratio(i)))?;
                }
            } else {
                emit_json(
                    out,
                    &json!({
                        "differences": report.differences,
                        "ratios": report.ratios(),
                        "diverged": report.diverged,
                        "converged": report.converged,
                    }),
                )?;
            }
            eprintln!("picard: converged = {}, diverged = {}", report.converged, report.diverged);
            if report.diverged {
                return Err(CliError::InBand("picard iteration diverged".to_owned()));
            }
        }
    }
    Ok(())
}

fn write_bounds(
    cfg: &RunConfig,
    mut out: &mut dyn Write,
    report: &experiments::BoundReport,
) -> Result<(), CliError> {
    eprintln!(
        "verify-bounds: {} sup = {:.6e}, stabilization ratio = {:.6}",
        report.estimate_id, report.sample_sup, report.stabilization_ratio
    );
    for (t, r, why) in &report.excluded {
        eprintln!("verify-bounds: excluded (t = {t}, r = {r}): {why}");
    }
    if cfg.format == Format::Csv {
        experiments::write_bound_csv(&mut out, std::slice::from_ref(report))?;
    } else {
        emit_json(out, &serde_json::to_value(report)?)?;
    }
    Ok(())
}
