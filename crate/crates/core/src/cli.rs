//! Command-line front end: `theory`, `scan`, `simulate`, `branching` and
//! `percolation`.
//!
//! Every setting is a `key = value` pair. Values come from an optional
//! config file (`--config`), then from flags, which win. The resolved
//! configuration is echoed as `# key = value` lines at the top of the
//! output and parses back to the same [`CliConfig`] via
//! [`CliConfig::from_echo`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::branching::{self, BranchingError, OffspringMethod, DEFAULT_CAP};
use crate::graph::{SampleMethod, TypeMode};
use crate::harness::{
    self, ExperimentConfig, ExperimentOutput, HarnessError, MacroMode, ModelRef, Target,
};
use crate::model::{
    build_space, c_critical, truncate_family, ActivityLaw, Family, ModelError, TypeSpace,
    DEFAULT_TAIL_TOL,
};
use crate::output::fmt_num;
use crate::percolation::{LatticeSpec, PercolationError};
use crate::theory::{solve_alpha, solve_r, Regime, TheoryError, TheoryReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAND_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingRequired(String),
    #[error("key `{key}`: expected {expected}, got `{value}`")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("keys `{0}` and `{1}` are mutually exclusive")]
    Conflict(String, String),
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Branching(#[from] BranchingError),
    #[error(transparent)]
    Percolation(#[from] PercolationError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Theory,
    Scan,
    Simulate,
    Branching,
    Percolation,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Theory => "theory",
            Command::Scan => "scan",
            Command::Simulate => "simulate",
            Command::Branching => "branching",
            Command::Percolation => "percolation",
        }
    }

    fn keys(&self) -> &'static [&'static str] {
        match self {
            Command::Theory => &["atoms", "family", "param", "psi", "tail_tol", "c"],
            Command::Scan => &["atoms", "family", "param", "psi", "tail_tol", "c_grid"],
            Command::Simulate => &[
                "atoms", "family", "param", "psi", "tail_tol", "c", "n", "n_grid", "reps", "seed",
                "target", "type_mode", "method", "band", "replicas_out",
            ],
            Command::Branching => &[
                "atoms", "family", "param", "psi", "tail_tol", "c", "root", "reps", "seed", "cap",
                "offspring", "replicas_out",
            ],
            Command::Percolation => &[
                "d", "p", "c", "N", "n_grid", "reps", "seed", "macro_law", "band", "replicas_out",
            ],
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "theory" => Command::Theory,
            "scan" => Command::Scan,
            "simulate" => Command::Simulate,
            "branching" => Command::Branching,
            "percolation" => Command::Percolation,
            _ => {
                return Err(CliError::TypeMismatch {
                    key: "command".into(),
                    value: s.into(),
                    expected: "theory, scan, simulate, branching or percolation",
                })
            }
        })
    }
}

const GLOBAL_KEYS: [&str; 3] = ["format", "output", "parallel"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Table,
}

impl Format {
    fn name(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Table => "table",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Atoms(Vec<(f64, f64, f64)>),
    Family {
        name: String,
        param: Option<f64>,
        psi: ActivityLaw,
    },
}

impl ModelSpec {
    pub fn build(&self, tail_tol: f64) -> Result<TypeSpace> {
        match self {
            ModelSpec::Atoms(atoms) => Ok(build_space(atoms)?),
            ModelSpec::Family { name, param, psi } => {
                let need = || param.ok_or_else(|| CliError::MissingRequired("param".into()));
                let family = match name.as_str() {
                    "homogeneous" => Family::Homogeneous {
                        activity: psi.apply(1.0),
                    },
                    "two-type" => Family::TwoType {
                        weight: param.unwrap_or(0.5),
                    },
                    "geometric" => Family::Geometric {
                        success: need()?,
                        activity: *psi,
                    },
                    "power-law" => Family::PowerLaw { exponent: need()? },
                    _ => unreachable!("family validated at parse time"),
                };
                Ok(truncate_family(&family, tail_tol)?)
            }
        }
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub model: Option<ModelSpec>,
    pub tail_tol: f64,
    pub c: Option<f64>,
    pub c_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub reps: Vec<usize>,
    pub seed: u64,
    pub target: Target,
    pub type_mode: TypeMode,
    pub method: SampleMethod,
    pub band: Option<(f64, f64)>,
    pub root: Option<f64>,
    pub cap: u64,
    pub offspring: OffspringMethod,
    pub d: Option<usize>,
    pub p: Option<f64>,
    pub radius: Option<usize>,
    pub macro_law: Option<MacroMode>,
    pub replicas_out: Option<PathBuf>,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub parallel: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "subcrit", version, about = "Largest components of subcritical rank-1 random graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Decay constants r(c) and α(c) for one model and c.
    Theory(Flags),
    /// Decay constants over a grid of c.
    Scan(Flags),
    /// Largest-component experiment on the random graph.
    Simulate(Flags),
    /// Monte Carlo of the branching process against closed-form means.
    Branching(Flags),
    /// Lattice percolation with long-range edges.
    Percolation(Flags),
}

/// Raw flags; every value is validated later so errors can name the key.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// File of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Explicit atoms, e.g. "(1,.5,1);(2,.5,2)" as (label, weight, activity).
    #[arg(long, allow_hyphen_values = true)]
    pub atoms: Option<String>,
    /// homogeneous | two-type | geometric | power-law
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub param: Option<String>,
    /// identity or a constant activity
    #[arg(long, allow_hyphen_values = true)]
    pub psi: Option<String>,
    #[arg(long = "tail_tol", alias = "tail-tol", allow_hyphen_values = true)]
    pub tail_tol: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<String>,
    /// Comma-separated c values.
    #[arg(long = "c_grid", alias = "c-grid", allow_hyphen_values = true)]
    pub c_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub n: Option<String>,
    /// Comma-separated, strictly increasing graph (or box) sizes.
    #[arg(long = "n_grid", alias = "n-grid", allow_hyphen_values = true)]
    pub n_grid: Option<String>,
    /// One count, or one per grid point.
    #[arg(long, allow_hyphen_values = true)]
    pub reps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// component_size | component_activity
    #[arg(long)]
    pub target: Option<String>,
    /// iid | quota
    #[arg(long = "type_mode", alias = "type-mode")]
    pub type_mode: Option<String>,
    /// grouped | naive
    #[arg(long)]
    pub method: Option<String>,
    /// Accepted final ratio range, "lo,hi".
    #[arg(long, allow_hyphen_values = true)]
    pub band: Option<String>,
    /// Root type label for the branching process.
    #[arg(long, allow_hyphen_values = true)]
    pub root: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub cap: Option<String>,
    /// per-type | thinned
    #[arg(long)]
    pub offspring: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<String>,
    /// Box radius.
    #[arg(long = "N", allow_hyphen_values = true)]
    pub big_n: Option<String>,
    /// exact | empirical
    #[arg(long = "macro_law", alias = "macro-law")]
    pub macro_law: Option<String>,
    /// Write per-replica values to this CSV file.
    #[arg(long = "replicas_out", alias = "replicas-out")]
    pub replicas_out: Option<String>,
    /// csv | json | table
    #[arg(long)]
    pub format: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<String>,
    /// Worker thread cap.
    #[arg(long, allow_hyphen_values = true)]
    pub parallel: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("atoms", &self.atoms),
            ("family", &self.family),
            ("param", &self.param),
            ("psi", &self.psi),
            ("tail_tol", &self.tail_tol),
            ("c", &self.c),
            ("c_grid", &self.c_grid),
            ("n", &self.n),
            ("n_grid", &self.n_grid),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("target", &self.target),
            ("type_mode", &self.type_mode),
            ("method", &self.method),
            ("band", &self.band),
            ("root", &self.root),
            ("cap", &self.cap),
            ("offspring", &self.offspring),
            ("d", &self.d),
            ("p", &self.p),
            ("N", &self.big_n),
            ("macro_law", &self.macro_law),
            ("replicas_out", &self.replicas_out),
            ("format", &self.format),
            ("output", &self.output),
            ("parallel", &self.parallel),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(CliError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Syntax { line: i + 1 });
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Merges the config file (if any) with flags and resolves the result.
pub fn parse_config<I, T>(argv: I) -> Result<CliConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::TypeMismatch {
        key: "argv".into(),
        value: e.to_string().lines().next().unwrap_or_default().to_string(),
        expected: "valid command line",
    })?;
    from_cli(cli)
}

fn from_cli(cli: Cli) -> Result<CliConfig> {
    let (command, flags) = match cli.command {
        CliCommand::Theory(f) => (Command::Theory, f),
        CliCommand::Scan(f) => (Command::Scan, f),
        CliCommand::Simulate(f) => (Command::Simulate, f),
        CliCommand::Branching(f) => (Command::Branching, f),
        CliCommand::Percolation(f) => (Command::Percolation, f),
    };
    let mut map = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    for (k, v) in flags.pairs() {
        map.insert(k.to_string(), v.clone());
    }
    resolve(command, &map)
}

fn mismatch(key: &str, value: &str, expected: &'static str) -> CliError {
    CliError::TypeMismatch {
        key: key.into(),
        value: value.into(),
        expected,
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| mismatch(key, v, "a finite real number"))
}

fn nonneg(key: &str, v: &str) -> Result<f64> {
    real(key, v)
        .ok()
        .filter(|x| *x >= 0.0)
        .ok_or_else(|| mismatch(key, v, "a nonnegative real number"))
}

fn positive(key: &str, v: &str) -> Result<f64> {
    real(key, v)
        .ok()
        .filter(|x| *x > 0.0)
        .ok_or_else(|| mismatch(key, v, "a positive real number"))
}

/// Accepts `1000` as well as `1e3`.
fn count(key: &str, v: &str) -> Result<u64> {
    let v = v.trim();
    if let Ok(k) = v.parse::<u64>() {
        return Ok(k);
    }
    match v.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15 => Ok(x as u64),
        _ => Err(mismatch(key, v, "a nonnegative integer")),
    }
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(mismatch(key, v, "a comma-separated list"));
    }
    items.into_iter().map(|s| item(key, s)).collect()
}

fn parse_atoms(v: &str) -> Result<Vec<(f64, f64, f64)>> {
    let bad = || mismatch("atoms", v, "atoms like (label,weight,activity);(…)");
    let mut atoms = Vec::new();
    for part in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let inner = part
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(bad)?;
        let xs: Vec<f64> = inner
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [label, weight, activity] = xs[..] else {
            return Err(bad());
        };
        atoms.push((label, weight, activity));
    }
    if atoms.is_empty() {
        return Err(bad());
    }
    Ok(atoms)
}

fn parse_psi(v: &str) -> Result<ActivityLaw> {
    if v.trim() == "identity" {
        Ok(ActivityLaw::Identity)
    } else {
        positive("psi", v)
            .map(ActivityLaw::Constant)
            .map_err(|_| mismatch("psi", v, "`identity` or a positive constant"))
    }
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)], expected: &'static str) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == v.trim())
        .map(|(_, t)| *t)
        .ok_or_else(|| mismatch(key, v, expected))
}

/// Turns a merged key map into a validated config.
pub fn resolve(command: Command, map: &BTreeMap<String, String>) -> Result<CliConfig> {
    for k in map.keys() {
        if !command.keys().contains(&k.as_str()) && !GLOBAL_KEYS.contains(&k.as_str()) {
            return Err(CliError::UnknownKey(k.clone()));
        }
    }
    let get = |k: &str| map.get(k).map(String::as_str);
    let need = |k: &str| get(k).ok_or_else(|| CliError::MissingRequired(k.into()));

    let model = if command == Command::Percolation {
        None
    } else {
        Some(match (get("atoms"), get("family")) {
            (Some(_), Some(_)) => return Err(CliError::Conflict("atoms".into(), "family".into())),
            (Some(a), None) => {
                for k in ["param", "psi"] {
                    if get(k).is_some() {
                        return Err(CliError::Conflict("atoms".into(), k.into()));
                    }
                }
                ModelSpec::Atoms(parse_atoms(a)?)
            }
            (None, Some(f)) => {
                let name = f.trim();
                if !["homogeneous", "two-type", "geometric", "power-law"].contains(&name) {
                    return Err(mismatch(
                        "family",
                        f,
                        "homogeneous, two-type, geometric or power-law",
                    ));
                }
                let param = get("param").map(|v| real("param", v)).transpose()?;
                let psi = get("psi").map(parse_psi).transpose()?;
                let psi = match (name, psi) {
                    ("homogeneous", None) => ActivityLaw::Constant(1.0),
                    (_, Some(p)) => p,
                    (_, None) => ActivityLaw::Identity,
                };
                ModelSpec::Family {
                    name: name.to_string(),
                    param,
                    psi,
                }
            }
            (None, None) => return Err(CliError::MissingRequired("atoms".into())),
        })
    };
    let tail_tol = match get("tail_tol") {
        Some(v) => positive("tail_tol", v)?,
        None => DEFAULT_TAIL_TOL,
    };

    let c = match command {
        Command::Scan => None,
        _ => Some(nonneg("c", need("c")?)?),
    };
    let c_grid = match command {
        Command::Scan => list("c_grid", need("c_grid")?, nonneg)?,
        _ => Vec::new(),
    };

    let n_grid: Vec<usize> = match (get("n"), get("n_grid"), get("N")) {
        (Some(_), Some(_), _) => return Err(CliError::Conflict("n".into(), "n_grid".into())),
        (_, Some(_), Some(_)) => return Err(CliError::Conflict("N".into(), "n_grid".into())),
        (Some(v), None, _) => vec![count("n", v)? as usize],
        (None, Some(v), _) => list("n_grid", v, count)?.into_iter().map(|x| x as usize).collect(),
        (None, None, _) => Vec::new(),
    };
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(mismatch(
            "n_grid",
            get("n_grid").unwrap_or_default(),
            "a strictly increasing list",
        ));
    }
    let radius = get("N").map(|v| count("N", v).map(|x| x as usize)).transpose()?;
    if command == Command::Simulate && n_grid.is_empty() {
        return Err(CliError::MissingRequired("n".into()));
    }
    if command == Command::Percolation && n_grid.is_empty() && radius.is_none() {
        return Err(CliError::MissingRequired("N".into()));
    }

    let reps = match command {
        Command::Simulate | Command::Branching | Command::Percolation => {
            let reps: Vec<usize> = list("reps", need("reps")?, count)?
                .into_iter()
                .map(|x| x as usize)
                .collect();
            if reps.contains(&0) {
                return Err(mismatch("reps", need("reps")?, "positive counts"));
            }
            let grid_len = n_grid.len().max(1);
            if command == Command::Branching && reps.len() != 1
                || reps.len() != 1 && reps.len() != grid_len
            {
                return Err(mismatch("reps", need("reps")?, "one count or one per grid point"));
            }
            reps
        }
        _ => Vec::new(),
    };
    let seed = get("seed").map(|v| count("seed", v)).transpose()?.unwrap_or(0);

    let target = match get("target") {
        Some(v) => choice(
            "target",
            v,
            &[
                ("component_size", Target::ComponentSize),
                ("size", Target::ComponentSize),
                ("component_activity", Target::ComponentActivity),
                ("activity", Target::ComponentActivity),
            ],
            "component_size or component_activity",
        )?,
        None if command == Command::Percolation => Target::PercolationHybrid,
        None => Target::ComponentSize,
    };
    let type_mode = match get("type_mode") {
        Some(v) => choice("type_mode", v, &[("iid", TypeMode::Iid), ("quota", TypeMode::Quota)], "iid or quota")?,
        None => TypeMode::Iid,
    };
    let method = match get("method") {
        Some(v) => choice(
            "method",
            v,
            &[("grouped", SampleMethod::Grouped), ("naive", SampleMethod::Naive)],
            "grouped or naive",
        )?,
        None => SampleMethod::Grouped,
    };
    let band = match get("band") {
        Some(v) => {
            let xs = list("band", v, real)?;
            match xs[..] {
                [lo, hi] if lo <= hi => Some((lo, hi)),
                _ => return Err(mismatch("band", v, "two numbers lo,hi with lo ≤ hi")),
            }
        }
        None => None,
    };
    let root = get("root").map(|v| real("root", v)).transpose()?;
    let cap = match get("cap") {
        Some(v) => match count("cap", v)? {
            0 => return Err(mismatch("cap", v, "a positive integer")),
            k => k,
        },
        None => DEFAULT_CAP,
    };
    let offspring = match get("offspring") {
        Some(v) => choice(
            "offspring",
            v,
            &[("per-type", OffspringMethod::PerType), ("thinned", OffspringMethod::Thinned)],
            "per-type or thinned",
        )?,
        None => OffspringMethod::PerType,
    };

    let (d, p, macro_law) = if command == Command::Percolation {
        let d = count("d", need("d")?)? as usize;
        if !(1..=3).contains(&d) {
            return Err(mismatch("d", need("d")?, "1, 2 or 3"));
        }
        let p = nonneg("p", need("p")?)?;
        if p >= 1.0 {
            return Err(mismatch("p", need("p")?, "a probability in [0, 1)"));
        }
        let law = match get("macro_law") {
            Some(v) => choice(
                "macro_law",
                v,
                &[("exact", MacroMode::Exact), ("empirical", MacroMode::Empirical)],
                "exact or empirical",
            )?,
            None if d == 1 => MacroMode::Exact,
            None => MacroMode::Empirical,
        };
        if d != 1 && law == MacroMode::Exact {
            return Err(mismatch("macro_law", "exact", "empirical when d > 1"));
        }
        (Some(d), Some(p), Some(law))
    } else {
        (None, None, None)
    };

    let format = match get("format") {
        Some(v) => choice(
            "format",
            v,
            &[("csv", Format::Csv), ("json", Format::Json), ("table", Format::Table)],
            "csv, json or table",
        )?,
        None => Format::Table,
    };
    let parallel = match get("parallel") {
        Some(v) => match count("parallel", v)? {
            0 => return Err(mismatch("parallel", v, "a positive integer")),
            k => Some(k as usize),
        },
        None => None,
    };

    Ok(CliConfig {
        command,
        model,
        tail_tol,
        c,
        c_grid,
        n_grid,
        reps,
        seed,
        target,
        type_mode,
        method,
        band,
        root,
        cap,
        offspring,
        d,
        p,
        radius,
        macro_law,
        replicas_out: get("replicas_out").map(PathBuf::from),
        format,
        output: get("output").map(PathBuf::from),
        parallel,
    })
}

/// Shortest representation that parses back to the same value.
fn exact(x: f64) -> String {
    format!("{x:?}")
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(",")
}

impl CliConfig {
    /// Key/value pairs that reproduce this config. Floats use the shortest
    /// exact representation so the echo parses back unchanged. The worker
    /// cap is left out since it cannot change the output.
    pub fn echo_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match &self.model {
            Some(ModelSpec::Atoms(atoms)) => out.push((
                "atoms",
                atoms
                    .iter()
                    .map(|(l, w, a)| format!("({l:?},{w:?},{a:?})"))
                    .collect::<Vec<_>>()
                    .join(";"),
            )),
            Some(ModelSpec::Family { name, param, psi }) => {
                out.push(("family", name.clone()));
                if let Some(p) = param {
                    out.push(("param", exact(*p)));
                }
                out.push(("psi", psi.to_string()));
            }
            None => {}
        }
        if self.model.is_some() {
            out.push(("tail_tol", exact(self.tail_tol)));
        }
        if let Some(d) = self.d {
            out.push(("d", d.to_string()));
        }
        if let Some(p) = self.p {
            out.push(("p", exact(p)));
        }
        if let Some(c) = self.c {
            out.push(("c", exact(c)));
        }
        if !self.c_grid.is_empty() {
            out.push(("c_grid", join(&self.c_grid, |x| exact(*x))));
        }
        if !self.n_grid.is_empty() {
            out.push(("n_grid", join(&self.n_grid, usize::to_string)));
        }
        if let Some(r) = self.radius {
            out.push(("N", r.to_string()));
        }
        if !self.reps.is_empty() {
            out.push(("reps", join(&self.reps, usize::to_string)));
            out.push(("seed", self.seed.to_string()));
        }
        match self.command {
            Command::Simulate => {
                out.push(("target", self.target.name().to_string()));
                out.push(("type_mode", enum_name(&self.type_mode)));
                out.push(("method", enum_name(&self.method)));
            }
            Command::Branching => {
                if let Some(root) = self.root {
                    out.push(("root", exact(root)));
                }
                out.push(("cap", self.cap.to_string()));
                out.push((
                    "offspring",
                    match self.offspring {
                        OffspringMethod::PerType => "per-type",
                        OffspringMethod::Thinned => "thinned",
                    }
                    .to_string(),
                ));
            }
            Command::Percolation => {
                if let Some(law) = self.macro_law {
                    out.push(("macro_law", enum_name(&law)));
                }
            }
            _ => {}
        }
        if let Some((lo, hi)) = self.band {
            out.push(("band", format!("{lo:?},{hi:?}")));
        }
        if let Some(path) = &self.replicas_out {
            out.push(("replicas_out", path.display().to_string()));
        }
        out.push(("format", self.format.name().to_string()));
        if let Some(path) = &self.output {
            out.push(("output", path.display().to_string()));
        }
        out
    }

    pub fn echo(&self) -> String {
        let mut s = format!("# command = {}\n", self.command.name());
        for (k, v) in self.echo_pairs() {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s
    }

    /// Rebuilds a config from the `# key = value` header of an output.
    pub fn from_echo(text: &str) -> Result<CliConfig> {
        let mut map = BTreeMap::new();
        let mut command = None;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix("# ") else { break };
            let Some((k, v)) = rest.split_once(" = ") else { break };
            if k == "command" {
                command = Some(v.parse::<Command>()?);
            } else {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let command = command.ok_or_else(|| CliError::MissingRequired("command".into()))?;
        resolve(command, &map)
    }

    fn space(&self) -> Result<TypeSpace> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::MissingRequired("atoms".into()))?
            .build(self.tail_tol)
    }

    fn need_c(&self) -> Result<f64> {
        self.c.ok_or_else(|| CliError::MissingRequired("c".into()))
    }
}

fn enum_name<T: serde::Serialize>(t: &T) -> String {
    match serde_json::to_value(t) {
        Ok(Value::String(s)) => s,
        _ => unreachable!("unit enum serializes to a string"),
    }
}

/// One output cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) => f.write_str(&fmt_num(*x)),
            Cell::Int(k) => write!(f, "{k}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl Cell {
    fn to_json(&self) -> Value {
        match self {
            Cell::Num(x) if x.is_finite() => {
                json!(fmt_num(*x).parse::<f64>().expect("formatted number parses"))
            }
            Cell::Num(x) => Value::String(fmt_num(*x)),
            Cell::Int(k) => json!(k),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

/// Result of one dispatch before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub table: Table,
    /// Verdict lines, already formatted as `key = value`.
    pub summary: Vec<(&'static str, String)>,
    pub summary_json: Option<Value>,
    pub exit_code: i32,
}

pub fn render(cfg: &CliConfig, r: &Rendered) -> String {
    let mut s = String::new();
    match cfg.format {
        Format::Csv | Format::Table => {
            s.push_str(&cfg.echo());
            let cells: Vec<Vec<String>> = r
                .table
                .rows
                .iter()
                .map(|row| row.iter().map(Cell::to_string).collect())
                .collect();
            if cfg.format == Format::Csv {
                s.push_str(&r.table.columns.join(","));
                s.push('\n');
                for row in &cells {
                    s.push_str(&row.join(","));
                    s.push('\n');
                }
            } else {
                let widths: Vec<usize> = (0..r.table.columns.len())
                    .map(|j| {
                        cells
                            .iter()
                            .map(|row| row[j].len())
                            .chain([r.table.columns[j].len()])
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |items: Vec<&str>| {
                    items
                        .iter()
                        .zip(&widths)
                        .map(|(x, w)| format!("{x:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                s.push_str(&line(r.table.columns.clone()));
                s.push('\n');
                for row in &cells {
                    s.push_str(&line(row.iter().map(String::as_str).collect()));
                    s.push('\n');
                }
            }
            for (k, v) in &r.summary {
                s.push_str(&format!("# {k} = {v}\n"));
            }
        }
        Format::Json => {
            let config: Map<String, Value> = std::iter::once(("command".to_string(), json!(cfg.command.name())))
                .chain(cfg.echo_pairs().into_iter().map(|(k, v)| (k.to_string(), json!(v))))
                .collect();
            let rows: Vec<Value> = r
                .table
                .rows
                .iter()
                .map(|row| {
                    Value::Object(
                        r.table
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(k, c)| (k.to_string(), c.to_json()))
                            .collect(),
                    )
                })
                .collect();
            let mut doc = json!({ "config": config, "rows": rows });
            if let Some(summary) = &r.summary_json {
                doc["summary"] = summary.clone();
            }
            s.push_str(&serde_json::to_string_pretty(&doc).expect("json values serialize"));
            s.push('\n');
        }
    }
    s
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Subcritical => "subcritical",
        Regime::AtOrAboveCritical => "at_or_above_critical",
    }
}

fn inv_log(z: f64) -> f64 {
    if z > 1.0 {
        1.0 / z.ln()
    } else {
        f64::INFINITY
    }
}

fn theory_table(space: &TypeSpace, c: f64) -> Result<Table> {
    let rep = TheoryReport::compute(space, c)?;
    let (r, a) = (rep.r.z0, rep.alpha.z0);
    Ok(Table {
        columns: vec![
            "c", "c_critical", "regime", "y0", "r", "log_r", "inv_log_r", "alpha", "log_alpha",
            "inv_log_alpha", "residual_fixed", "residual_slope", "alpha_residual_fixed",
            "alpha_residual_slope",
        ],
        rows: vec![vec![
            Cell::Num(c),
            Cell::Num(rep.c_critical),
            Cell::Text(regime_name(rep.regime).into()),
            Cell::Num(rep.r.y0),
            Cell::Num(r),
            Cell::Num(r.ln()),
            Cell::Num(inv_log(r)),
            Cell::Num(a),
            Cell::Num(a.ln()),
            Cell::Num(inv_log(a)),
            Cell::Num(rep.r.residual_fixed),
            Cell::Num(rep.r.residual_slope),
            Cell::Num(rep.alpha.residual_fixed),
            Cell::Num(rep.alpha.residual_slope),
        ]],
    })
}

fn scan_table(space: &TypeSpace, grid: &[f64]) -> Result<Table> {
    let ccr = c_critical(space);
    let rows = grid
        .iter()
        .map(|&c| {
            let r = solve_r(space, c)?;
            let a = solve_alpha(space, c)?;
            Ok(vec![
                Cell::Num(c),
                Cell::Num(ccr),
                Cell::Num(r.y0),
                Cell::Num(r.z0),
                Cell::Num(a.z0),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(Table {
        columns: vec!["c", "c_critical", "y0", "r", "alpha"],
        rows,
    })
}

fn harness_rendered(cfg: &CliConfig, out: &ExperimentOutput) -> Result<Rendered> {
    if let Some(path) = &cfg.replicas_out {
        let mut buf = Vec::new();
        harness::write_replicas_csv(&out.replicas, &mut buf).expect("write to memory");
        std::fs::write(path, buf).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let rows = out
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Text(r.target.name().into()),
                Cell::Int(r.n as u64),
                Cell::Int(r.reps as u64),
                Cell::Num(r.mean),
                Cell::Num(r.stderr),
                Cell::Num(r.predicted),
                r.ratio.map_or(Cell::Empty, Cell::Num),
                Cell::Int(r.seed),
            ]
        })
        .collect();
    let table = Table {
        columns: harness::CSV_HEADER.split(',').collect(),
        rows,
    };
    let (summary, summary_json, exit_code) = match cfg.band {
        Some(band) => {
            let rep = harness::summarize(&out.rows, band);
            let lines = vec![
                ("monotone", rep.monotone.to_string()),
                ("final_ratio", rep.final_ratio.map(fmt_num).unwrap_or_default()),
                ("band", format!("{},{}", fmt_num(band.0), fmt_num(band.1))),
                ("final_pass", rep.final_pass.to_string()),
                ("pass", rep.pass.to_string()),
            ];
            let code = if rep.pass { EXIT_OK } else { EXIT_BAND_FAILURE };
            (lines, Some(serde_json::to_value(rep).expect("report serializes")), code)
        }
        None => (Vec::new(), None, EXIT_OK),
    };
    Ok(Rendered {
        table,
        summary,
        summary_json,
        exit_code,
    })
}

fn branching_table(cfg: &CliConfig, space: &TypeSpace) -> Result<Table> {
    let c = cfg.need_c()?;
    let root = cfg
        .root
        .unwrap_or_else(|| space.atoms()[0].label);
    let outcomes = branching::sample_replicas(space, c, root, cfg.reps[0], cfg.cap, cfg.offspring, cfg.seed)?;
    if let Some(path) = &cfg.replicas_out {
        let mut text = String::from("replica,root,progeny,activity,generations,censored\n");
        for (i, o) in outcomes.iter().enumerate() {
            text.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                fmt_num(root),
                o.progeny,
                fmt_num(o.total_activity),
                o.generations,
                o.censored
            ));
        }
        std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let s = branching::summarize(space, c, root, &outcomes)?;
    Ok(Table {
        columns: vec![
            "root", "reps", "progeny_mean", "progeny_stderr", "progeny_expected", "progeny_z",
            "activity_mean", "activity_stderr", "activity_expected", "activity_z", "censored",
        ],
        rows: vec![vec![
            Cell::Num(root),
            Cell::Int(s.reps as u64),
            Cell::Num(s.progeny.mean),
            Cell::Num(s.progeny.stderr),
            Cell::Num(s.mean_progeny),
            Cell::Num(s.z_progeny),
            Cell::Num(s.activity.mean),
            Cell::Num(s.activity.stderr),
            Cell::Num(s.mean_activity),
            Cell::Num(s.z_activity),
            Cell::Int(s.censored as u64),
        ]],
    })
}

/// Builds the harness config for `simulate` and `percolation`.
pub fn experiment_config(cfg: &CliConfig) -> Result<ExperimentConfig> {
    let (model, n_grid) = match cfg.command {
        Command::Simulate => (
            ModelRef::Graph {
                space: cfg.space()?,
                type_mode: cfg.type_mode,
                method: cfg.method,
            },
            cfg.n_grid.clone(),
        ),
        Command::Percolation => {
            let d = cfg.d.ok_or_else(|| CliError::MissingRequired("d".into()))?;
            let grid = match cfg.radius {
                Some(r) => vec![LatticeSpec::new(d, r, cfg.p.unwrap_or(0.0))?.box_size()],
                None => cfg.n_grid.clone(),
            };
            (
                ModelRef::Lattice {
                    d,
                    p: cfg.p.ok_or_else(|| CliError::MissingRequired("p".into()))?,
                    macro_law: cfg.macro_law.unwrap_or(MacroMode::Empirical),
                },
                grid,
            )
        }
        _ => unreachable!("only experiment commands"),
    };
    Ok(ExperimentConfig {
        model,
        c: cfg.need_c()?,
        n_grid,
        reps_per_n: cfg.reps.clone(),
        master_seed: cfg.seed,
        target: cfg.target,
        band: cfg.band.unwrap_or((0.0, f64::INFINITY)),
    })
}

/// Runs the command and returns the rendered result.
pub fn execute(cfg: &CliConfig) -> Result<Rendered> {
    let plain = |table| Rendered {
        table,
        summary: Vec::new(),
        summary_json: None,
        exit_code: EXIT_OK,
    };
    match cfg.command {
        Command::Theory => Ok(plain(theory_table(&cfg.space()?, cfg.need_c()?)?)),
        Command::Scan => Ok(plain(scan_table(&cfg.space()?, &cfg.c_grid)?)),
        Command::Branching => Ok(plain(branching_table(cfg, &cfg.space()?)?)),
        Command::Simulate | Command::Percolation => {
            let exp = experiment_config(cfg)?;
            let out = harness::run_experiment(&exp)?;
            harness_rendered(cfg, &out)
        }
    }
}

/// Executes, writes the output, and returns the exit code.
pub fn dispatch(cfg: &CliConfig) -> Result<i32> {
    let run = || -> Result<(String, i32)> {
        let r = execute(cfg)?;
        Ok((render(cfg, &r), r.exit_code))
    };
    let (text, code) = match cfg.parallel {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .expect("thread pool")
            .install(run)?,
        None => run()?,
    };
    match &cfg.output {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: "stdout".into(),
                    source,
                })?;
        }
    }
    Ok(code)
}

/// Entry point used by the binary.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match from_cli(cli).and_then(|cfg| dispatch(&cfg)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<CliConfig> {
        parse_config(std::iter::once("subcrit").chain(args.iter().copied()))
    }

    #[test]
    fn geometric_family_config() {
        let cfg = parse(&["theory", "--family", "geometric", "--param", "0.7", "--psi", "identity", "--c", "0.1"]).unwrap();
        assert_eq!(cfg.command, Command::Theory);
        assert_eq!(cfg.c, Some(0.1));
        let space = cfg.space().unwrap();
        assert!(space.len() > 10);
        assert!(space.truncation_residual() <= DEFAULT_TAIL_TOL);
    }

    #[test]
    fn two_type_simulate_config() {
        let cfg = parse(&[
            "simulate", "--atoms", "(1,.5,1);(2,.5,2)", "--c", "0.2", "--n", "100000", "--reps", "50", "--seed", "7",
        ])
        .unwrap();
        assert_eq!(cfg.model, Some(ModelSpec::Atoms(vec![(1.0, 0.5, 1.0), (2.0, 0.5, 2.0)])));
        assert_eq!(cfg.n_grid, vec![100_000]);
        assert_eq!(cfg.reps, vec![50]);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn negative_c_names_key() {
        let err = parse(&["theory", "--family", "homogeneous", "--c", "-1"]).unwrap_err();
        assert!(matches!(&err, CliError::TypeMismatch { key, .. } if key == "c"), "{err}");
        let err = parse(&["theory", "--family", "homogeneous"]).unwrap_err();
        assert!(matches!(&err, CliError::MissingRequired(k) if k == "c"));
        let err = parse(&["theory", "--family", "homogeneous", "--c", "x"]).unwrap_err();
        assert!(err.to_string().contains("`c`"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut map = BTreeMap::new();
        map.insert("c".to_string(), "0.5".to_string());
        map.insert("family".to_string(), "homogeneous".to_string());
        map.insert("colour".to_string(), "red".to_string());
        assert!(matches!(resolve(Command::Theory, &map), Err(CliError::UnknownKey(k)) if k == "colour"));
        let err = parse(&["theory", "--family", "homogeneous", "--c", "0.5", "--d", "2"]).unwrap_err();
        assert!(matches!(err, CliError::UnknownKey(k) if k == "d"));
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("subcrit-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# comment\nfamily = homogeneous\nc = 0.3\nformat = csv\n").unwrap();
        let cfg = parse(&["theory", "--config", path.to_str().unwrap(), "--c", "0.5"]).unwrap();
        assert_eq!(cfg.c, Some(0.5));
        assert_eq!(cfg.format, Format::Csv);
        std::fs::write(&path, "family = homogeneous\nc = 0.3\nbogus = 1\n").unwrap();
        assert!(matches!(
            parse(&["theory", "--config", path.to_str().unwrap()]),
            Err(CliError::UnknownKey(k)) if k == "bogus"
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn echo_round_trips() {
        for args in [
            &["theory", "--family", "geometric", "--param", "0.7", "--c", "0.1"][..],
            &["scan", "--atoms", "(1,.5,1);(2,.5,2)", "--c_grid", "0.1,0.2,0.3", "--format", "csv"],
            &[
                "simulate", "--family", "homogeneous", "--psi", "2", "--c", "0.1", "--n_grid", "1e3,1e4",
                "--reps", "20,10", "--band", "0.5,1.5", "--type_mode", "quota",
            ],
            &["branching", "--family", "two-type", "--c", "0.2", "--reps", "100", "--root", "2", "--offspring", "thinned"],
            &["percolation", "--d", "2", "--p", "0.2", "--c", "0.3", "--N", "10", "--reps", "3"],
        ] {
            let cfg = parse(args).unwrap();
            assert_eq!(CliConfig::from_echo(&cfg.echo()).unwrap(), cfg, "{args:?}");
        }
    }

    #[test]
    fn theory_homogeneous_half() {
        let cfg = parse(&["theory", "--family", "homogeneous", "--c", "0.5", "--format", "csv"]).unwrap();
        let text = render(&cfg, &execute(&cfg).unwrap());
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()].parse::<f64>().unwrap();
        assert!((col("r") - 1.2131).abs() < 1e-4);
        assert!((col("inv_log_r") - 5.177).abs() < 1e-3);
        assert_eq!(row[2], "subcritical");
    }

    #[test]
    fn json_has_config_and_rows() {
        let cfg = parse(&["scan", "--family", "homogeneous", "--c_grid", "0.5,1,1.5", "--format", "json"]).unwrap();
        let v: Value = serde_json::from_str(&render(&cfg, &execute(&cfg).unwrap())).unwrap();
        assert_eq!(v["config"]["command"], "scan");
        assert_eq!(v["rows"].as_array().unwrap().len(), 3);
        assert_eq!(v["rows"][2]["r"], json!(1.0));
    }
}
