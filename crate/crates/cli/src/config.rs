//! Run configuration: the key table of every subcommand, command-line and
//! config-file parsing, and rendering back to the config-file format.
//!
//! The config file is flat `key = value` text. Blank lines and lines starting
//! with `#` are ignored. Besides the keys of the subcommand it may set
//! `command`, `output` and `format`. Values given on the command line take
//! precedence over the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Command};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CommandKind {
    Classify,
    Exponents,
    OdeSweep,
    Solve,
    LifespanSweep,
    VerifyBounds,
    VerifyPsi,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::usage("format", format!("expected csv or json, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    FloatList,
    Bool,
    Choice(&'static [&'static str]),
}

impl Kind {
    fn metavar(self) -> &'static str {
        match self {
            Kind::Int => "INT",
            Kind::Float => "FLOAT",
            Kind::FloatList => "F1,F2,..",
            Kind::Bool => "true|false",
            Kind::Choice(_) => "NAME",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Presence {
    Required,
    Default(&'static str),
    Optional,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    pub presence: Presence,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, presence: Presence, help: &'static str) -> KeySpec {
    KeySpec { name, kind, presence, help }
}

use Kind::*;
use Presence::*;

const CHANNELS: &[&str] = &["epsilon", "velocity"];
const ESTIMATES: &[&str] = &["z9", "z10", "z11", "z12", "z17", "z25"];
const BRACKETS: &[&str] = &["sqrt", "one-plus-abs"];
const PSI_CHECKS: &[&str] = &["y20", "y19"];

const N: KeySpec = key("n", Int, Required, "space dimension (n >= 2)");
const N3: KeySpec = key("n", Int, Default("3"), "space dimension (the radial solver is 3-D)");
const P: KeySpec = key("p", Float, Required, "exponent p > 1 of |u_t|^p");
const Q: KeySpec = key("q", Float, Required, "exponent q > 1 of |v|^q");
const EPS: KeySpec = key("eps", Float, Required, "data amplitude eps >= 0");
const AMPLITUDE: KeySpec = key("amplitude", Float, Default("1"), "amplitude of the bump data (1 - r^2)^4");
const RADIUS: KeySpec = key("radius", Float, Default("1"), "support radius of the bump data");
const THRESHOLD: KeySpec = key("threshold", Float, Default("1e6"), "blow-up when max |w|, |v| exceed threshold * eps");

const CLASSIFY: &[KeySpec] = &[N, P, Q];
const EXPONENTS: &[KeySpec] = &[N];
const ODE_SWEEP: &[KeySpec] = &[
    N,
    P,
    Q,
    key("eps", FloatList, Default("0.05,0.07,0.1,0.14,0.2"), "eps values; kappa = A eps^p"),
    key("channel", Choice(CHANNELS), Default("epsilon"), "how kappa enters: epsilon (growth forcing) or velocity (G'(0) = kappa)"),
    key("a-coef", Float, Default("1"), "coefficient A of the comparison system"),
    key("b-coef", Float, Default("1"), "coefficient B of the comparison system"),
    key("horizon", Float, Default("1e12"), "integration horizon"),
    key("tol", Float, Default("1e-10"), "integrator tolerance"),
];
const SOLVE: &[KeySpec] = &[
    N3,
    P,
    Q,
    EPS,
    key("h", Float, Default("0.02"), "grid step (dt = dr = h)"),
    key("tmax", Float, Default("20"), "time horizon"),
    THRESHOLD,
    AMPLITUDE,
    RADIUS,
    key("confirm", Bool, Default("false"), "re-run at h/2 to confirm a blow-up bracket"),
    key("mu", Float, Optional, "weight exponent; defaults to the midpoint of the admissible window when it exists"),
    key("stride", Int, Default("1"), "write every stride-th level"),
];
const LIFESPAN_SWEEP: &[KeySpec] = &[
    N3,
    P,
    Q,
    key("eps", FloatList, Default("0.4,0.5,0.63,0.8"), "eps values (at least 4, spanning 2x)"),
    key("h", Float, Default("0.05"), "grid step"),
    key("budget", Float, Default("2e9"), "largest number of node updates per run"),
    key("first-horizon", Float, Default("20"), "first horizon at the largest eps; grown 4x until blow-up"),
    key("confirm", Bool, Default("true"), "confirm the extreme brackets at h/2"),
    THRESHOLD,
    AMPLITUDE,
    RADIUS,
];
const VERIFY_BOUNDS: &[KeySpec] = &[
    key("estimate", Choice(ESTIMATES), Required, "estimate to sample"),
    key("p", Float, Default("2.5"), "exponent p"),
    key("q", Float, Default("3"), "exponent q"),
    key("mu", Float, Optional, "weight exponent; defaults to the midpoint of the admissible window"),
    key("kappa", Float, Default("2"), "decay exponent kappa > 1 (z17)"),
    key("bracket", Choice(BRACKETS), Optional, "bracket convention; defaults to the build's convention"),
    key("ts", FloatList, Default("1,3,10,30,100,300,1000"), "sample times"),
    key("rs", FloatList, Optional, "sample radii; defaults to {0, t/4, t/2, 3t/4, t-1, t, t+1} (z11, z25: 0.1,0.5,0.9)"),
];
const VERIFY_PSI: &[KeySpec] = &[
    key("check", Choice(PSI_CHECKS), Default("y20"), "y20: weighted norm ratio scan; y19: positivity along a solve"),
    N3,
    P,
    key("q", Float, Default("2"), "exponent q (y19)"),
    key("ts", FloatList, Default("1,3,10,30,100,300,1000"), "sample times (y20)"),
    key("eps", Float, Default("0.5"), "data amplitude (y19)"),
    key("h", Float, Default("0.05"), "grid step (y19)"),
    key("tmax", Float, Default("20"), "time horizon (y19)"),
    key("stride", Int, Default("1"), "sample every stride-th level (y19)"),
];
const PICARD: &[KeySpec] = &[
    P,
    Q,
    EPS,
    key("h", Float, Default("0.02"), "grid step"),
    key("tmax", Float, Default("10"), "time horizon of the box"),
    key("iters", Int, Default("20"), "largest number of iterations (>= 2)"),
    key("mu", Float, Optional, "measure differences in the weighted norm with this mu"),
];

impl CommandKind {
    pub const ALL: [CommandKind; 8] = [
        CommandKind::Classify,
        CommandKind::Exponents,
        CommandKind::OdeSweep,
        CommandKind::Solve,
        CommandKind::LifespanSweep,
        CommandKind::VerifyBounds,
        CommandKind::VerifyPsi,
        CommandKind::Picard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Classify => "classify",
            CommandKind::Exponents => "exponents",
            CommandKind::OdeSweep => "ode-sweep",
            CommandKind::Solve => "solve",
            CommandKind::LifespanSweep => "lifespan-sweep",
            CommandKind::VerifyBounds => "verify-bounds",
            CommandKind::VerifyPsi => "verify-psi",
            CommandKind::Picard => "picard",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn keys(self) -> &'static [KeySpec] {
        match self {
            CommandKind::Classify => CLASSIFY,
            CommandKind::Exponents => EXPONENTS,
            CommandKind::OdeSweep => ODE_SWEEP,
            CommandKind::Solve => SOLVE,
            CommandKind::LifespanSweep => LIFESPAN_SWEEP,
            CommandKind::VerifyBounds => VERIFY_BOUNDS,
            CommandKind::VerifyPsi => VERIFY_PSI,
            CommandKind::Picard => PICARD,
        }
    }

    fn about(self) -> &'static str {
        match self {
            CommandKind::Classify => "Region of (n, p, q) and its lifespan exponent",
            CommandKind::Exponents => "Strauss and Glassey exponents and the sharp lifespan exponent",
            CommandKind::OdeSweep => "Blow-up time of the ODE comparison system against kappa",
            CommandKind::Solve => "March the radial 3-D system on a characteristic grid",
            CommandKind::LifespanSweep => "PDE lifespans over eps and their log-log slope",
            CommandKind::VerifyBounds => "Sample a kernel or helper estimate with its extremal profile",
            CommandKind::VerifyPsi => "Checks of the test functions phi_1 and psi_1",
            CommandKind::Picard => "Picard iteration on the whole space-time box",
        }
    }

    /// CSV columns, in output order.
    pub fn columns(self) -> &'static str {
        match self {
            CommandKind::Classify => "n,p,q,region,b5_residual,lifespan_exponent",
            CommandKind::Exponents => "n,q0,p0,b6_exponent",
            CommandKind::OdeSweep => "eps,kappa,T_low,T_high,T_mid,hypothesis_holds",
            CommandKind::Solve => "t,F,G,v_q,w_p,n1,n2,n3",
            CommandKind::LifespanSweep => "eps,T_low,T_high,T_mid",
            CommandKind::VerifyBounds => "estimate_id,t,r,value",
            CommandKind::VerifyPsi => "t,ratio (y20) | t,lhs,rhs (y19)",
            CommandKind::Picard => "iteration,difference,ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    List(Vec<f64>),
    Bool(bool),
    Word(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` prints the shortest string that parses back to the same f64.
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::List(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "{}", parts.join(","))
            }
            Value::Bool(b) => write!(f, "{b}"),
            Value::Word(w) => write!(f, "{w}"),
        }
    }
}

fn parse_float(key: &str, s: &str) -> Result<f64, CliError> {
    match s.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::usage(key, format!("expected a finite number, got '{s}'"))),
    }
}

fn parse_value(spec: &KeySpec, s: &str) -> Result<Value, CliError> {
    let key = spec.name;
    Ok(match spec.kind {
        Int => Value::Int(
            s.trim()
                .parse()
                .map_err(|_| CliError::usage(key, format!("expected an integer, got '{s}'")))?,
        ),
        Float => Value::Float(parse_float(key, s)?),
        FloatList => {
            let xs = s
                .split(',')
                .map(|x| parse_float(key, x))
                .collect::<Result<Vec<f64>, _>>()?;
            Value::List(xs)
        }
        Bool => match s.trim() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(CliError::usage(key, format!("expected true or false, got '{s}'"))),
        },
        Choice(options) => {
            let s = s.trim();
            if !options.contains(&s) {
                return Err(CliError::usage(
                    key,
                    format!("expected one of {}, got '{s}'", options.join(", ")),
                ));
            }
            Value::Word(s.to_owned())
        }
    })
}

/// A validated run: the subcommand, its typed parameters with defaults filled
/// in, and where and how to write results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub params: BTreeMap<String, Value>,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    fn get(&self, key: &str) -> Option<&Value> {
        self.params.get(key)
    }

    pub fn int(&self, key: &str) -> i64 {
        match self.get(key) {
            Some(Value::Int(i)) => *i,
            other => panic!("key {key} is not an integer: {other:?}"),
        }
    }

    pub fn float(&self, key: &str) -> f64 {
        self.opt_float(key).unwrap_or_else(|| panic!("key {key} is missing"))
    }

    pub fn opt_float(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            Some(Value::Float(x)) => Some(*x),
            None => None,
            other => panic!("key {key} is not a number: {other:?}"),
        }
    }

    pub fn list(&self, key: &str) -> Option<&[f64]> {
        match self.get(key) {
            Some(Value::List(xs)) => Some(xs),
            None => None,
            other => panic!("key {key} is not a list: {other:?}"),
        }
    }

    pub fn flag(&self, key: &str) -> bool {
        matches!(self.get(key), Some(Value::Bool(true)))
    }

    pub fn word(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(Value::Word(w)) => Some(w),
            None => None,
            other => panic!("key {key} is not a name: {other:?}"),
        }
    }

    /// The config-file form of this run.
    pub fn render(&self) -> String {
        let mut out = format!("command = {}\nformat = {}\n", self.command.name(), self.format.name());
        if let Some(path) = &self.output {
            out.push_str(&format!("output = {}\n", path.display()));
        }
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Raw `key = value` entries of a config file, in order.
pub fn parse_config_lines(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage("config", format!("line {}: expected 'key = value'", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if entries.iter().any(|(e, _)| e == k) {
            return Err(CliError::usage(k, "key given twice in the config file"));
        }
        entries.push((k.to_owned(), v.to_owned()));
    }
    Ok(entries)
}

/// Builds and validates a config from raw entries; later entries win.
pub fn build_config(
    command: CommandKind,
    entries: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let mut raw: BTreeMap<&str, &str> = BTreeMap::new();
    let mut output = None;
    let mut format = Format::default();
    for (k, v) in entries {
        match k.as_str() {
            "command" => {
                if CommandKind::from_name(v) != Some(command) {
                    return Err(CliError::usage(
                        "command",
                        format!("config names '{v}' but the command is '{}'", command.name()),
                    ));
                }
            }
            "output" => output = Some(PathBuf::from(v)),
            "format" => format = Format::parse(v)?,
            _ => {
                if !command.keys().iter().any(|s| s.name == k) {
                    return Err(CliError::usage(
                        k,
                        format!("unknown key for {}", command.name()),
                    ));
                }
                raw.insert(k, v);
            }
        }
    }
    let mut params = BTreeMap::new();
    for spec in command.keys() {
        let text = match (raw.get(spec.name), spec.presence) {
            (Some(v), _) => *v,
            (None, Default(d)) => d,
            (None, Optional) => continue,
            (None, Required) => return Err(CliError::usage(spec.name, "missing required key")),
        };
        params.insert(spec.name.to_owned(), parse_value(spec, text)?);
    }
    let config = RunConfig {
        command,
        params,
        output,
        format,
    };
    crate::run::plan(&config)?;
    Ok(config)
}

/// Parses a complete config file, including its `command` line.
pub fn parse_config_text(text: &str) -> Result<RunConfig, CliError> {
    let entries = parse_config_lines(text)?;
    let command = entries
        .iter()
        .find(|(k, _)| k == "command")
        .ok_or_else(|| CliError::usage("command", "missing required key"))?;
    let kind = CommandKind::from_name(&command.1)
        .ok_or_else(|| CliError::usage("command", format!("unknown command '{}'", command.1)))?;
    build_config(kind, &entries)
}

fn workers_note() -> &'static str {
    "Environment: WAVELAB_WORKERS sets the number of worker threads.\n\
     Exit codes: 0 success, 1 scientific failure (e.g. horizon too short), 2 usage error, 3 numeric error."
}

pub fn cli() -> Command {
    let global = [
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .global(true)
            .help("read 'key = value' lines from FILE; command-line values take precedence"),
        Arg::new("output")
            .long("output")
            .value_name("PATH")
            .global(true)
            .help("write results to PATH instead of stdout"),
        Arg::new("format")
            .long("format")
            .value_name("csv|json")
            .global(true)
            .help("result format [default: csv]"),
    ];
    let mut cmd = Command::new("wavelab")
        .about("Numerical laboratory for u_tt - Δu = |v|^q, v_tt - Δv = |u_t|^p")
        .after_help(workers_note())
        .args(global);
    for kind in CommandKind::ALL {
        let mut sub = Command::new(kind.name())
            .about(kind.about())
            .after_help(format!("CSV columns: {}\n\n{}", kind.columns(), workers_note()));
        for spec in kind.keys() {
            let mut help = spec.help.to_owned();
            if let Default(d) = spec.presence {
                help.push_str(&format!(" [default: {d}]"));
            }
            if spec.presence == Required {
                help.push_str(" (required)");
            }
            sub = sub.arg(
                Arg::new(spec.name)
                    .long(spec.name)
                    .value_name(spec.kind.metavar())
                    .allow_negative_numbers(true)
                    .help(help),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Parses command-line arguments (including the program name).
pub fn parse_args<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args)?;
    from_matches(&matches)
}

fn global<'a>(m: &'a ArgMatches, sub: Option<&'a ArgMatches>, key: &str) -> Option<&'a String> {
    sub.and_then(|s| s.get_one::<String>(key)).or_else(|| m.get_one::<String>(key))
}

fn from_matches(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let sub = m.subcommand();
    let sub_m = sub.map(|(_, s)| s);
    let mut entries = match global(m, sub_m, "config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage("config", format!("cannot read {path}: {e}")))?;
            parse_config_lines(&text)?
        }
        None => Vec::new(),
    };
    let command = match sub {
        Some((name, _)) => CommandKind::from_name(name).expect("subcommands come from the key table"),
        None => {
            let named = entries.iter().find(|(k, _)| k == "command").map(|(_, v)| v.clone());
            match named {
                Some(v) => CommandKind::from_name(&v)
                    .ok_or_else(|| CliError::usage("command", format!("unknown command '{v}'")))?,
                None => return Err(CliError::usage("command", "no subcommand given")),
            }
        }
    };
    for k in ["output", "format"] {
        if let Some(v) = global(m, sub_m, k) {
            entries.push((k.to_owned(), v.clone()));
        }
    }
    if let Some(s) = sub_m {
        for spec in command.keys() {
            if let Some(v) = s.get_one::<String>(spec.name) {
                entries.push((spec.name.to_owned(), v.clone()));
            }
        }
    }
    // Later entries override earlier ones.
    let mut merged: Vec<(String, String)> = Vec::new();
    for (k, v) in entries {
        merged.retain(|(e, _)| *e != k);
        merged.push((k, v));
    }
    build_config(command, &merged)
}
