//! Multi-type Poisson branching process `B_κ(x)`.
//!
//! A particle of type `x` has, independently for every type `y`, a
//! `Poisson(c ψ(x) ψ(y) μ(y))` number of children of type `y`. The sampler
//! expands trees generation by generation and records the total progeny `𝒳`
//! and the total activity `Φ = Σ ψ` over all particles, root included.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{c_critical, moments, TypeSpace};
use crate::rng;
use crate::stats::MeanSe;

pub const DEFAULT_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error("type label {0} is not an atom of the type space")]
    UnknownRootLabel(f64),
    #[error("c = {c} is not below the critical value {c_critical}")]
    NotSubcritical { c: f64, c_critical: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgenyOutcome {
    /// Total number of particles, root included.
    pub progeny: u64,
    pub total_activity: f64,
    /// Number of nonempty generations, the root's included.
    pub generations: u32,
    /// Children of the root.
    pub root_offspring: u64,
    pub censored: bool,
}

/// How a particle's children are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffspringMethod {
    /// One Poisson variate per child type.
    PerType,
    /// A Poisson total `Poisson(c ψ(x) m1)` split over types with weights
    /// `μ(y) ψ(y) / m1`. Same law as `PerType`.
    Thinned,
}

/// Prebuilt offspring laws for repeated sampling.
pub struct BranchingSampler<'a> {
    space: &'a TypeSpace,
    /// `per_type[x][y]`; `None` when the intensity is zero.
    per_type: Vec<Vec<Option<Poisson<f64>>>>,
    totals: Vec<Option<Poisson<f64>>>,
    child_type: WeightedIndex<f64>,
    method: OffspringMethod,
}

fn poisson(lambda: f64) -> Result<Option<Poisson<f64>>, BranchingError> {
    if lambda == 0.0 {
        return Ok(None);
    }
    Poisson::new(lambda)
        .map(Some)
        .map_err(|e| BranchingError::InvalidArgument(format!("Poisson({lambda}): {e}")))
}

impl<'a> BranchingSampler<'a> {
    /// `c = 0` is accepted and yields childless roots.
    pub fn new(space: &'a TypeSpace, c: f64, method: OffspringMethod) -> Result<Self, BranchingError> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(BranchingError::InvalidArgument(format!(
                "c = {c} must be finite and nonnegative"
            )));
        }
        let m1 = moments(space).m1;
        let mut per_type = Vec::with_capacity(space.len());
        let mut totals = Vec::with_capacity(space.len());
        for x in space.atoms() {
            let row = space
                .atoms()
                .iter()
                .map(|y| poisson(c * x.activity * y.activity * y.weight))
                .collect::<Result<Vec<_>, _>>()?;
            per_type.push(row);
            totals.push(poisson(c * x.activity * m1)?);
        }
        let child_type = WeightedIndex::new(space.atoms().iter().map(|a| a.weight * a.activity))
            .map_err(|e| BranchingError::InvalidArgument(e.to_string()))?;
        Ok(BranchingSampler {
            space,
            per_type,
            totals,
            child_type,
            method,
        })
    }

    /// Draws one tree rooted at atom index `root`, stopping once the progeny
    /// reaches `cap`.
    pub fn sample<R: Rng + ?Sized>(&self, root: usize, cap: u64, rng: &mut R) -> ProgenyOutcome {
        let k = self.space.len();
        let activity: Vec<f64> = self.space.activities().collect();
        let mut current = vec![0u64; k];
        current[root] = 1;
        let mut out = ProgenyOutcome {
            progeny: 1,
            total_activity: activity[root],
            generations: 1,
            root_offspring: 0,
            censored: false,
        };
        if cap <= 1 {
            out.censored = cap == 1 && self.has_children(root);
            return out;
        }
        let mut next = vec![0u64; k];
        let mut first = true;
        loop {
            next.iter_mut().for_each(|n| *n = 0);
            let mut born = 0u64;
            for (x, &count) in current.iter().enumerate() {
                for _ in 0..count {
                    let children = self.offspring(x, &mut next, rng);
                    born += children;
                    out.progeny += children;
                    if out.progeny >= cap {
                        out.censored = true;
                        break;
                    }
                }
                if out.censored {
                    break;
                }
            }
            if first {
                out.root_offspring = born;
                first = false;
            }
            out.total_activity += next
                .iter()
                .zip(&activity)
                .map(|(&n, &psi)| n as f64 * psi)
                .sum::<f64>();
            if born == 0 {
                break;
            }
            out.generations += 1;
            if out.censored {
                break;
            }
            std::mem::swap(&mut current, &mut next);
        }
        out
    }

    fn has_children(&self, x: usize) -> bool {
        self.totals[x].is_some()
    }

    /// Adds the children of one type-`x` particle into `next`.
    fn offspring<R: Rng + ?Sized>(&self, x: usize, next: &mut [u64], rng: &mut R) -> u64 {
        match self.method {
            OffspringMethod::PerType => {
                let mut total = 0;
                for (y, law) in self.per_type[x].iter().enumerate() {
                    if let Some(law) = law {
                        let n = law.sample(rng) as u64;
                        next[y] += n;
                        total += n;
                    }
                }
                total
            }
            OffspringMethod::Thinned => {
                let Some(law) = &self.totals[x] else {
                    return 0;
                };
                let n = law.sample(rng) as u64;
                for _ in 0..n {
                    next[self.child_type.sample(rng)] += 1;
                }
                n
            }
        }
    }
}

fn root_index(space: &TypeSpace, root_label: f64) -> Result<usize, BranchingError> {
    space
        .index_of(root_label)
        .ok_or(BranchingError::UnknownRootLabel(root_label))
}

/// One tree from the per-type sampler.
pub fn sample_progeny<R: Rng + ?Sized>(
    space: &TypeSpace,
    c: f64,
    root_label: f64,
    cap: u64,
    rng: &mut R,
) -> Result<ProgenyOutcome, BranchingError> {
    let root = root_index(space, root_label)?;
    if cap == 0 {
        return Err(BranchingError::InvalidArgument("cap must be at least 1".into()));
    }
    let sampler = BranchingSampler::new(space, c, OffspringMethod::PerType)?;
    Ok(sampler.sample(root, cap, rng))
}

/// `reps` independent trees; replica `i` uses the stream derived from
/// `(master_seed, root index, i)`. Output is in replica order.
pub fn sample_replicas(
    space: &TypeSpace,
    c: f64,
    root_label: f64,
    reps: usize,
    cap: u64,
    method: OffspringMethod,
    master_seed: u64,
) -> Result<Vec<ProgenyOutcome>, BranchingError> {
    let root = root_index(space, root_label)?;
    if cap == 0 {
        return Err(BranchingError::InvalidArgument("cap must be at least 1".into()));
    }
    let sampler = BranchingSampler::new(space, c, method)?;
    Ok((0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(master_seed, &[root as u64, i as u64]);
            sampler.sample(root, cap, &mut rng)
        })
        .collect())
}

fn require_subcritical(space: &TypeSpace, c: f64) -> Result<(), BranchingError> {
    let ccr = c_critical(space);
    if c < ccr {
        Ok(())
    } else {
        Err(BranchingError::NotSubcritical { c, c_critical: ccr })
    }
}

/// `E𝒳(x) = 1 + c ψ(x) m1 / (1 − c m2)`.
pub fn mean_progeny(space: &TypeSpace, c: f64, root_label: f64) -> Result<f64, BranchingError> {
    require_subcritical(space, c)?;
    let psi = space.atoms()[root_index(space, root_label)?].activity;
    let m = moments(space);
    Ok(1.0 + c * psi * m.m1 / (1.0 - c * m.m2))
}

/// `EΦ(x) = ψ(x) / (1 − c m2)`.
pub fn mean_activity(space: &TypeSpace, c: f64, root_label: f64) -> Result<f64, BranchingError> {
    require_subcritical(space, c)?;
    let psi = space.atoms()[root_index(space, root_label)?].activity;
    Ok(psi / (1.0 - c * moments(space).m2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub threshold: u64,
    /// Estimate of `P(𝒳 > threshold)`.
    pub probability: f64,
    pub stderr: f64,
}

/// Monte Carlo estimates of `P(𝒳 > t)` with binomial standard errors.
pub fn empirical_tail(
    space: &TypeSpace,
    c: f64,
    root_label: f64,
    reps: usize,
    thresholds: &[u64],
    master_seed: u64,
) -> Result<Vec<TailPoint>, BranchingError> {
    require_subcritical(space, c)?;
    if reps < 10_000 {
        return Err(BranchingError::InvalidArgument(format!(
            "tail estimates need at least 10^4 replicas, got {reps}"
        )));
    }
    let cap = thresholds.iter().copied().max().unwrap_or(0).saturating_add(1).max(2);
    let outcomes = sample_replicas(
        space,
        c,
        root_label,
        reps,
        cap,
        OffspringMethod::PerType,
        master_seed,
    )?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = outcomes.iter().filter(|o| o.progeny > t).count();
            let p = hits as f64 / reps as f64;
            TailPoint {
                threshold: t,
                probability: p,
                stderr: (p * (1.0 - p) / reps as f64).sqrt(),
            }
        })
        .collect())
}

/// Replica means compared with the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchingSummary {
    pub reps: usize,
    pub progeny: MeanSe,
    pub activity: MeanSe,
    pub mean_progeny: f64,
    pub mean_activity: f64,
    pub z_progeny: f64,
    pub z_activity: f64,
    pub censored: usize,
}

pub fn summarize(
    space: &TypeSpace,
    c: f64,
    root_label: f64,
    outcomes: &[ProgenyOutcome],
) -> Result<BranchingSummary, BranchingError> {
    let progeny: Vec<f64> = outcomes.iter().map(|o| o.progeny as f64).collect();
    let activity: Vec<f64> = outcomes.iter().map(|o| o.total_activity).collect();
    let (progeny, activity) = (MeanSe::of(&progeny), MeanSe::of(&activity));
    let mp = mean_progeny(space, c, root_label)?;
    let ma = mean_activity(space, c, root_label)?;
    Ok(BranchingSummary {
        reps: outcomes.len(),
        progeny,
        activity,
        mean_progeny: mp,
        mean_activity: ma,
        z_progeny: progeny.z_score(mp),
        z_activity: activity.z_score(ma),
        censored: outcomes.iter().filter(|o| o.censored).count(),
    })
}
