//! Discrete type spaces for the rank-1 kernel `κ(x, y) = c ψ(x) ψ(y)`.
//!
//! A [`TypeSpace`] is always finite. Countable laws are brought in through
//! [`truncate_family`], which cuts the support at the smallest `D` whose
//! discarded tail mass is within the requested tolerance and renormalizes
//! the remaining weights.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tail tolerance used when truncating countable families.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("type space has no atoms")]
    EmptySpace,
    #[error("atom with label {label} has non-positive weight {weight}")]
    NonPositiveWeight { label: f64, weight: f64 },
    #[error("atom with label {label} has non-positive activity {activity}")]
    NonPositiveActivity { label: f64, activity: f64 },
    #[error("duplicate type label {0}")]
    DuplicateLabel(f64),
    #[error("type label {0} must be a finite nonnegative number")]
    InvalidLabel(f64),
    #[error("family {0} has no finite exponential moment of its activity")]
    TailTooHeavy(String),
    #[error("tail tolerance {0} outside (0, 1)")]
    TolOutOfRange(f64),
    #[error("invalid family parameter: {0}")]
    InvalidParameter(String),
}

/// One type `x` with its probability mass `μ(x)` and activity `ψ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAtom {
    pub label: f64,
    pub weight: f64,
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpace {
    atoms: Vec<TypeAtom>,
    /// Supremum of the rates `a` with `Σ e^{aψ(x)} μ(x) < ∞` for the
    /// un-truncated family. Every `a` strictly below it is certified.
    tail_rate: Option<f64>,
    truncation_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    c: f64,
}

impl ModelParams {
    pub fn new(c: f64) -> Option<Self> {
        (c.is_finite() && c > 0.0).then_some(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// `m1 = E ψ(X)`, `m2 = E ψ²(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
}

/// How activities are assigned over a countable family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivityLaw {
    /// `ψ(x) = x`
    Identity,
    /// `ψ(x) = b`
    Constant(f64),
}

impl ActivityLaw {
    pub fn apply(&self, label: f64) -> f64 {
        match *self {
            ActivityLaw::Identity => label,
            ActivityLaw::Constant(b) => b,
        }
    }

    /// Growth factor `g` such that `ψ(x) ≤ g·x` on `{1, 2, …}`.
    fn linear_growth(&self) -> f64 {
        match *self {
            ActivityLaw::Identity => 1.0,
            ActivityLaw::Constant(_) => 0.0,
        }
    }
}

impl fmt::Display for ActivityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityLaw::Identity => write!(f, "identity"),
            ActivityLaw::Constant(b) => write!(f, "{b}"),
        }
    }
}

/// Built-in type laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Single type with label 1 and constant activity.
    Homogeneous { activity: f64 },
    /// Labels 1 and 2 with activities 1 and 2; `weight` is the mass of type 1.
    TwoType { weight: f64 },
    /// `μ(k) = s (1 − s)^{k−1}` on `{1, 2, …}`.
    Geometric { success: f64, activity: ActivityLaw },
    /// `μ(k) ∝ k^{−exponent}` on `{1, 2, …}` with `ψ(x) = x`. Has no
    /// exponential moment of any order, so truncation always rejects it.
    PowerLaw { exponent: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Homogeneous { .. } => "homogeneous",
            Family::TwoType { .. } => "two-type",
            Family::Geometric { .. } => "geometric",
            Family::PowerLaw { .. } => "power-law",
        }
    }
}

impl TypeSpace {
    pub fn atoms(&self) -> &[TypeAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn tail_rate(&self) -> Option<f64> {
        self.tail_rate
    }

    pub fn truncation_residual(&self) -> f64 {
        self.truncation_residual
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.weight)
    }

    pub fn activities(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.activity)
    }

    /// Index of the atom carrying `label`.
    pub fn index_of(&self, label: f64) -> Option<usize> {
        self.atoms.iter().position(|a| a.label == label)
    }

    pub fn min_activity(&self) -> f64 {
        self.activities().fold(f64::INFINITY, f64::min)
    }

    pub fn max_activity(&self) -> f64 {
        self.activities().fold(0.0, f64::max)
    }

    /// Returns a copy with every activity multiplied by `factor`.
    pub fn scale_activities(&self, factor: f64) -> TypeSpace {
        let mut out = self.clone();
        for atom in &mut out.atoms {
            atom.activity *= factor;
        }
        out.tail_rate = self.tail_rate.map(|a| a / factor);
        out
    }
}

/// Builds a finite space from `(label, weight, activity)` triples.
///
/// Weights may be unnormalized counts; they are rescaled to sum to one.
pub fn build_space(atoms: &[(f64, f64, f64)]) -> Result<TypeSpace, ModelError> {
    if atoms.is_empty() {
        return Err(ModelError::EmptySpace);
    }
    let mut out: Vec<TypeAtom> = Vec::with_capacity(atoms.len());
    for &(label, weight, activity) in atoms {
        if !(label.is_finite() && label >= 0.0) {
            return Err(ModelError::InvalidLabel(label));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(ModelError::NonPositiveWeight { label, weight });
        }
        if !(activity.is_finite() && activity > 0.0) {
            return Err(ModelError::NonPositiveActivity { label, activity });
        }
        out.push(TypeAtom {
            label,
            weight,
            activity,
        });
    }
    out.sort_by(|a, b| a.label.total_cmp(&b.label));
    if let Some(w) = out.windows(2).find(|w| w[0].label == w[1].label) {
        return Err(ModelError::DuplicateLabel(w[0].label));
    }
    let total: f64 = out.iter().map(|a| a.weight).sum();
    for atom in &mut out {
        atom.weight /= total;
    }
    Ok(TypeSpace {
        atoms: out,
        tail_rate: None,
        truncation_residual: 0.0,
    })
}

/// Brings a built-in family down to a finite [`TypeSpace`].
///
/// Countable families are cut at the smallest `D` whose discarded tail mass
/// is at most `tail_tol`; the kept weights are renormalized by
/// `M_D = Σ_{y ≤ D} μ(y)`.
pub fn truncate_family(family: &Family, tail_tol: f64) -> Result<TypeSpace, ModelError> {
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(ModelError::TolOutOfRange(tail_tol));
    }
    match *family {
        Family::Homogeneous { activity } => build_space(&[(1.0, 1.0, activity)]),
        Family::TwoType { weight } => {
            if !(weight > 0.0 && weight < 1.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "two-type weight {weight} outside (0, 1)"
                )));
            }
            build_space(&[(1.0, weight, 1.0), (2.0, 1.0 - weight, 2.0)])
        }
        Family::Geometric { success, activity } => geometric(success, activity, tail_tol),
        Family::PowerLaw { exponent } => {
            if !(exponent > 1.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "power-law exponent {exponent} must exceed 1"
                )));
            }
            Err(ModelError::TailTooHeavy(family.name().to_string()))
        }
    }
}

fn geometric(success: f64, activity: ActivityLaw, tail_tol: f64) -> Result<TypeSpace, ModelError> {
    if !(success > 0.0 && success <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "geometric success probability {success} outside (0, 1]"
        )));
    }
    if let ActivityLaw::Constant(b) = activity {
        if !(b.is_finite() && b > 0.0) {
            return Err(ModelError::NonPositiveActivity {
                label: 1.0,
                activity: b,
            });
        }
    }
    let q = 1.0 - success;
    if q == 0.0 {
        return build_space(&[(1.0, 1.0, activity.apply(1.0))]);
    }
    // tail beyond D is exactly q^D
    let mut depth: i32 = 1;
    while q.powi(depth) > tail_tol {
        depth += 1;
    }
    let atoms: Vec<(f64, f64, f64)> = (1..=depth)
        .map(|k| {
            let x = f64::from(k);
            (x, success * q.powi(k - 1), activity.apply(x))
        })
        .collect();
    let mut space = build_space(&atoms)?;
    space.truncation_residual = q.powi(depth);
    let growth = activity.linear_growth();
    space.tail_rate = Some(if growth > 0.0 {
        -q.ln() / growth
    } else {
        f64::INFINITY
    });
    Ok(space)
}

pub fn moments(space: &TypeSpace) -> Moments {
    let (m1, m2) = space.atoms.iter().fold((0.0, 0.0), |(m1, m2), a| {
        (
            m1 + a.activity * a.weight,
            m2 + a.activity * a.activity * a.weight,
        )
    });
    Moments { m1, m2 }
}

/// `c^cr = 1 / E ψ²(X)`; the kernel is subcritical exactly when `c < c^cr`.
pub fn c_critical(space: &TypeSpace) -> f64 {
    1.0 / moments(space).m2
}
