//! Convergence experiments: simulated `C1 / log n` (or the largest component
//! activity over `log n`) against the predicted limit `1 / log z0`.
//!
//! Replica `i` at grid size `n` always draws from the stream derived from
//! `(master_seed, n, i)`. Replicas run in parallel but are folded in
//! `(n, i)` order, so the output does not depend on the worker count.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{components, sample_graph, sample_types, GraphError, SampleMethod, TypeMode};
use crate::model::{c_critical, TypeSpace, DEFAULT_TAIL_TOL};
use crate::output::fmt_num;
use crate::percolation::{
    empirical_macro_law, gamma, one_d_cluster_law, sample_clusters, sample_hybrid, LatticeSpec,
    MacroSource, PercolationError,
};
use crate::rng;
use crate::stats::MeanSe;
use crate::theory::{alpha_of_c, r_of_c, TheoryError};

/// Stream path component reserved for the empirical macro-law sample.
const MACRO_LAW_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
    #[error("c = {c} is not below the critical value {c_critical}")]
    NotSubcritical { c: f64, c_critical: f64 },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Percolation(#[from] PercolationError),
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    ComponentSize,
    ComponentActivity,
    PercolationHybrid,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::ComponentSize => "component_size",
            Target::ComponentActivity => "component_activity",
            Target::PercolationHybrid => "percolation_hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroMode {
    /// Closed-form 1-d law; only valid for `d = 1`.
    Exact,
    /// Law estimated from one cluster sample at the largest grid size.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelRef {
    Graph {
        space: TypeSpace,
        type_mode: TypeMode,
        method: SampleMethod,
    },
    Lattice {
        d: usize,
        p: f64,
        macro_law: MacroMode,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    pub c: f64,
    /// Graph sizes; for lattices, target box sizes.
    pub n_grid: Vec<usize>,
    /// One entry per grid point, or a single entry used for all of them.
    pub reps_per_n: Vec<usize>,
    pub master_seed: u64,
    pub target: Target,
    /// Accepted range for the final ratio.
    pub band: (f64, f64),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(HarnessError::InvalidConfig("empty n grid".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::InvalidConfig(
                "n grid must be strictly increasing".into(),
            ));
        }
        if self.n_grid[0] < 2 {
            return Err(HarnessError::InvalidConfig("graph sizes must be at least 2".into()));
        }
        if !(self.reps_per_n.len() == 1 || self.reps_per_n.len() == self.n_grid.len()) {
            return Err(HarnessError::InvalidConfig(format!(
                "{} replica counts for {} grid points",
                self.reps_per_n.len(),
                self.n_grid.len()
            )));
        }
        if self.reps_per_n.contains(&0) {
            return Err(HarnessError::InvalidConfig("replica counts must be positive".into()));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(HarnessError::InvalidConfig(format!("c = {} invalid", self.c)));
        }
        match (&self.model, self.target) {
            (ModelRef::Graph { .. }, Target::PercolationHybrid)
            | (ModelRef::Lattice { .. }, Target::ComponentSize | Target::ComponentActivity) => {
                Err(HarnessError::InvalidConfig(format!(
                    "target {} does not match the model",
                    self.target.name()
                )))
            }
            (ModelRef::Lattice { d, macro_law, .. }, _) if *d != 1 && *macro_law == MacroMode::Exact => {
                Err(HarnessError::InvalidConfig(
                    "exact macro law exists only in dimension 1".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn reps_at(&self, grid_index: usize) -> usize {
        if self.reps_per_n.len() == 1 {
            self.reps_per_n[0]
        } else {
            self.reps_per_n[grid_index]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: Target,
    pub n: usize,
    pub reps: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `1 / log z0`; `+∞` when `z0 = 1`.
    pub predicted: f64,
    /// `mean / predicted`, absent when the prediction is infinite.
    pub ratio: Option<f64>,
    pub seed: u64,
}

/// Per-replica raw values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub n: usize,
    pub replica: usize,
    pub c1: u64,
    pub max_activity: f64,
    pub size_statistic: f64,
    pub activity_statistic: f64,
    /// Lattice runs only: the macro-vertex reading of `c1`.
    pub c1_macro_activity: Option<u64>,
    pub k_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<SummaryRow>,
    pub replicas: Vec<ReplicaRecord>,
    /// The decay constant behind `predicted`.
    pub decay_constant: f64,
}

fn predicted_from(z0: f64) -> f64 {
    if z0 > 1.0 {
        1.0 / z0.ln()
    } else {
        f64::INFINITY
    }
}

fn graph_replica(
    space: &TypeSpace,
    type_mode: TypeMode,
    method: SampleMethod,
    c: f64,
    n: usize,
    replica: usize,
    master_seed: u64,
) -> Result<ReplicaRecord> {
    let mut rng = rng::stream(master_seed, &[n as u64, replica as u64]);
    let types = sample_types(space, n, type_mode, &mut rng);
    let graph = sample_graph(space, c, &types, method, &mut rng)?;
    let stats = components(&graph, space);
    let log_n = (n as f64).ln();
    Ok(ReplicaRecord {
        n,
        replica,
        c1: u64::from(stats.c1),
        max_activity: stats.max_activity,
        size_statistic: f64::from(stats.c1) / log_n,
        activity_statistic: stats.max_activity / log_n,
        c1_macro_activity: None,
        k_n: None,
    })
}

fn lattice_replica(lattice: &LatticeSpec, c: f64, n: usize, replica: usize, master_seed: u64) -> Result<ReplicaRecord> {
    let mut rng = rng::stream(master_seed, &[n as u64, replica as u64]);
    let s = sample_hybrid(lattice, c, &mut rng)?;
    let log_b = (lattice.box_size() as f64).ln();
    Ok(ReplicaRecord {
        n: lattice.box_size(),
        replica,
        c1: s.c1_combined,
        max_activity: s.c1_macro_activity as f64,
        size_statistic: s.c1_combined as f64 / log_b,
        activity_statistic: s.c1_macro_activity as f64 / log_b,
        c1_macro_activity: Some(s.c1_macro_activity),
        k_n: Some(s.k_n),
    })
}

fn collect_rows(
    cfg: &ExperimentConfig,
    predicted: f64,
    mut replica: impl FnMut(usize, usize) -> Result<Vec<ReplicaRecord>>,
    statistic: fn(&ReplicaRecord) -> f64,
) -> Result<(Vec<SummaryRow>, Vec<ReplicaRecord>)> {
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    let mut all = Vec::new();
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let reps = cfg.reps_at(gi);
        let records = replica(n, reps)?;
        let values: Vec<f64> = records.iter().map(statistic).collect();
        let m = MeanSe::of(&values);
        rows.push(SummaryRow {
            target: cfg.target,
            n: records.first().map_or(n, |r| r.n),
            reps,
            mean: m.mean,
            stderr: m.stderr,
            predicted,
            ratio: predicted.is_finite().then(|| m.mean / predicted),
            seed: cfg.master_seed,
        });
        all.extend(records);
    }
    Ok((rows, all))
}

fn run_graph(cfg: &ExperimentConfig, activity: bool) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let ModelRef::Graph {
        space,
        type_mode,
        method,
    } = &cfg.model
    else {
        return Err(HarnessError::InvalidConfig("graph experiment needs a type space".into()));
    };
    let ccr = c_critical(space);
    if cfg.c >= ccr {
        return Err(HarnessError::NotSubcritical {
            c: cfg.c,
            c_critical: ccr,
        });
    }
    let decay = if cfg.c == 0.0 {
        f64::INFINITY
    } else if activity {
        alpha_of_c(space, cfg.c)?
    } else {
        r_of_c(space, cfg.c)?
    };
    let predicted = if decay.is_infinite() { 0.0 } else { predicted_from(decay) };
    let statistic: fn(&ReplicaRecord) -> f64 = if activity {
        |r| r.activity_statistic
    } else {
        |r| r.size_statistic
    };
    let (rows, replicas) = collect_rows(
        cfg,
        predicted,
        |n, reps| {
            (0..reps)
                .into_par_iter()
                .map(|i| graph_replica(space, *type_mode, *method, cfg.c, n, i, cfg.master_seed))
                .collect()
        },
        statistic,
    )?;
    Ok(ExperimentOutput {
        rows: fix_degenerate(rows),
        replicas,
        decay_constant: decay,
    })
}

/// `c = 0` has no finite prediction; report it like the critical case.
fn fix_degenerate(mut rows: Vec<SummaryRow>) -> Vec<SummaryRow> {
    for row in &mut rows {
        if row.predicted == 0.0 {
            row.predicted = f64::INFINITY;
            row.ratio = None;
        }
    }
    rows
}

/// Statistic `C1 / log n` against `1 / log r(c)`.
pub fn run_component_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.target != Target::ComponentSize {
        return Err(HarnessError::InvalidConfig("target must be component_size".into()));
    }
    run_graph(cfg, false)
}

/// Statistic `max_L Σψ / log n` against `1 / log α(c)`.
pub fn run_activity_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.target != Target::ComponentActivity {
        return Err(HarnessError::InvalidConfig("target must be component_activity".into()));
    }
    run_graph(cfg, true)
}

/// Macro law used for the lattice prediction.
pub fn macro_source(cfg: &ExperimentConfig) -> Result<MacroSource> {
    let ModelRef::Lattice { d, p, macro_law } = cfg.model else {
        return Err(HarnessError::InvalidConfig("percolation experiment needs a lattice".into()));
    };
    match macro_law {
        MacroMode::Exact => Ok(MacroSource::Exact1d(one_d_cluster_law(p)?)),
        MacroMode::Empirical => {
            let n = *cfg.n_grid.last().expect("validated grid");
            let lattice = LatticeSpec::new(d, LatticeSpec::radius_for(d, n), p)?;
            let mut rng = rng::stream(cfg.master_seed, &[MACRO_LAW_STREAM, n as u64]);
            let clusters = sample_clusters(&lattice, &mut rng);
            Ok(MacroSource::Empirical(empirical_macro_law(&clusters)?))
        }
    }
}

/// Statistic `C1(G_N(p, c)) / log |B(N)|` against `1 / log γ(p, c)`.
pub fn run_percolation_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if cfg.target != Target::PercolationHybrid {
        return Err(HarnessError::InvalidConfig("target must be percolation_hybrid".into()));
    }
    let ModelRef::Lattice { d, p, .. } = cfg.model else {
        return Err(HarnessError::InvalidConfig("percolation experiment needs a lattice".into()));
    };
    let source = macro_source(cfg)?;
    let decay = if cfg.c == 0.0 {
        f64::INFINITY
    } else {
        gamma(&source, cfg.c, DEFAULT_TAIL_TOL)?
    };
    let predicted = if decay.is_infinite() { 0.0 } else { predicted_from(decay) };
    let (rows, replicas) = collect_rows(
        cfg,
        predicted,
        |n, reps| {
            let lattice = LatticeSpec::new(d, LatticeSpec::radius_for(d, n), p)?;
            (0..reps)
                .into_par_iter()
                .map(|i| lattice_replica(&lattice, cfg.c, n, i, cfg.master_seed))
                .collect()
        },
        |r| r.size_statistic,
    )?;
    Ok(ExperimentOutput {
        rows: fix_degenerate(rows),
        replicas,
        decay_constant: decay,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.target {
        Target::ComponentSize => run_component_experiment(cfg),
        Target::ComponentActivity => run_activity_experiment(cfg),
        Target::PercolationHybrid => run_percolation_experiment(cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Ratios never decrease along the grid.
    pub monotone: bool,
    pub final_ratio: Option<f64>,
    pub band: (f64, f64),
    pub final_pass: bool,
    pub pass: bool,
}

pub fn summarize(rows: &[SummaryRow], band: (f64, f64)) -> Report {
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let monotone = ratios.windows(2).all(|w| w[1] >= w[0]);
    let final_ratio = rows.last().and_then(|r| r.ratio);
    let final_pass = final_ratio.is_some_and(|x| x >= band.0 && x <= band.1);
    Report {
        monotone,
        final_ratio,
        band,
        final_pass,
        pass: monotone && final_pass,
    }
}

pub const CSV_HEADER: &str = "target,n,reps,mean,stderr,predicted,ratio,seed";

pub fn write_rows_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.target.name(),
            r.n,
            r.reps,
            fmt_num(r.mean),
            fmt_num(r.stderr),
            fmt_num(r.predicted),
            r.ratio.map(fmt_num).unwrap_or_default(),
            r.seed
        )?;
    }
    Ok(())
}

pub fn write_replicas_csv<W: Write>(records: &[ReplicaRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "n,replica,c1,max_activity,size_statistic,activity_statistic")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            r.replica,
            r.c1,
            fmt_num(r.max_activity),
            fmt_num(r.size_statistic),
            fmt_num(r.activity_statistic)
        )?;
    }
    Ok(())
}
