//! Bond percolation on the box `B(N) = {−N, …, N}^d` with long-range
//! shortcuts, and its reduction to a rank-1 graph on macro-vertices.
//!
//! Each nearest-neighbour bond is open with probability `p`; every pair of
//! sites additionally gets a long-range edge with probability `c / |B(N)|`.
//! Open clusters become macro-vertices of type `|X_i|` with activity
//! `ψ(x) = x`, and the kernel constant is rescaled to `c · E(1/|C|)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsu::DisjointSet;
use crate::model::{
    build_space, truncate_family, ActivityLaw, Family, ModelError, TypeSpace,
};
use crate::rng::{distinct_indices, triangular_pair};
use crate::theory::{alpha_of_c, TheoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PercolationError {
    #[error("bond probability {0} outside [0, 1)")]
    OutOfRange(f64),
    #[error("dimension {0} not in {{1, 2, 3}}")]
    Dimension(usize),
    #[error("box with radius {0} has too many sites")]
    BoxTooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    d: usize,
    radius: usize,
    p: f64,
    side: usize,
    box_size: usize,
}

impl LatticeSpec {
    /// The caller vouches that `p` is below the percolation threshold.
    pub fn new(d: usize, radius: usize, p: f64) -> Result<Self, PercolationError> {
        if !(1..=3).contains(&d) {
            return Err(PercolationError::Dimension(d));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(PercolationError::OutOfRange(p));
        }
        let side = 2 * radius + 1;
        let box_size = side
            .checked_pow(d as u32)
            .filter(|&b| b <= u32::MAX as usize)
            .ok_or(PercolationError::BoxTooLarge(radius))?;
        Ok(LatticeSpec {
            d,
            radius,
            p,
            side,
            box_size,
        })
    }

    /// Radius whose box size is closest to `target` sites (ties go up).
    pub fn radius_for(d: usize, target: usize) -> usize {
        let side = (target as f64).powf(1.0 / d as f64);
        let guess = ((side - 1.0) / 2.0).floor().max(0.0) as usize;
        let size = |r: usize| ((2 * r + 1) as f64).powi(d as i32);
        [guess + 1, guess]
            .into_iter()
            .min_by(|&a, &b| {
                (size(a) - target as f64)
                    .abs()
                    .total_cmp(&(size(b) - target as f64).abs())
            })
            .unwrap_or(guess)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn box_size(&self) -> usize {
        self.box_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    /// Cluster id of each site; ids are dense and ordered by smallest site.
    pub cluster_of: Vec<u32>,
    pub sizes: Vec<u32>,
    pub k_n: usize,
}

/// Open nearest-neighbour bonds, free boundary.
pub fn sample_bonds<R: Rng + ?Sized>(lattice: &LatticeSpec, rng: &mut R) -> Vec<(u32, u32)> {
    let mut bonds = Vec::new();
    if lattice.p == 0.0 {
        return bonds;
    }
    let side = lattice.side;
    for site in 0..lattice.box_size {
        let mut stride = 1;
        for _ in 0..lattice.d {
            let coord = (site / stride) % side;
            if coord + 1 < side && rng.random_bool(lattice.p) {
                bonds.push((site as u32, (site + stride) as u32));
            }
            stride *= side;
        }
    }
    bonds
}

fn clusters_from_bonds(box_size: usize, bonds: &[(u32, u32)]) -> ClusterSet {
    let mut ds = DisjointSet::new(box_size);
    for &(u, v) in bonds {
        ds.union(u, v);
    }
    let (cluster_of, k_n) = ds.labels();
    let mut sizes = vec![0u32; k_n];
    for &id in &cluster_of {
        sizes[id as usize] += 1;
    }
    ClusterSet {
        cluster_of,
        sizes,
        k_n,
    }
}

pub fn sample_clusters<R: Rng + ?Sized>(lattice: &LatticeSpec, rng: &mut R) -> ClusterSet {
    let bonds = sample_bonds(lattice, rng);
    clusters_from_bonds(lattice.box_size, &bonds)
}

/// Exact cluster law of 1-d bond percolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDLaw {
    pub p: f64,
}

pub fn one_d_cluster_law(p: f64) -> Result<OneDLaw, PercolationError> {
    if !(0.0..1.0).contains(&p) {
        return Err(PercolationError::OutOfRange(p));
    }
    Ok(OneDLaw { p })
}

impl OneDLaw {
    /// `P(|C| = k) = k p^{k−1} (1 − p)²`
    pub fn size_pmf(&self, k: u32) -> f64 {
        if k == 0 {
            return 0.0;
        }
        f64::from(k) * self.p.powi(k as i32 - 1) * (1.0 - self.p).powi(2)
    }

    /// `E|C| = (1 + p) / (1 − p)`
    pub fn mean_size(&self) -> f64 {
        (1.0 + self.p) / (1.0 - self.p)
    }

    /// `E(1/|C|) = 1 − p`
    pub fn mean_inverse_size(&self) -> f64 {
        1.0 - self.p
    }

    /// Macro law `μ(k) = P(|C| = k) / (k E(1/|C|)) = p^{k−1} (1 − p)`.
    pub fn macro_weight(&self, k: u32) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.p.powi(k as i32 - 1) * (1.0 - self.p)
    }

    pub fn macro_space(&self, tail_tol: f64) -> Result<TypeSpace, PercolationError> {
        Ok(truncate_family(
            &Family::Geometric {
                success: 1.0 - self.p,
                activity: ActivityLaw::Identity,
            },
            tail_tol,
        )?)
    }

    /// Total-variation distance between the exact macro law and `law.mu_hat`.
    pub fn tv_distance(&self, law: &MacroLaw) -> f64 {
        let max_k = law.mu_hat.keys().copied().max().unwrap_or(0);
        let mut covered = 0.0;
        let mut diff = 0.0;
        for k in 1..=max_k {
            let exact = self.macro_weight(k);
            covered += exact;
            diff += (law.mu_hat.get(&k).copied().unwrap_or(0.0) - exact).abs();
        }
        // exact mass above the largest observed size is unmatched
        0.5 * (diff + (1.0 - covered).max(0.0))
    }
}

/// Empirical macro-vertex law of one cluster sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLaw {
    /// Cluster size `k` → number of clusters of that size.
    pub counts: BTreeMap<u32, u64>,
    pub mu_hat: BTreeMap<u32, f64>,
    /// `K_N / |B(N)|`, the estimator of `E(1/|C|)`.
    pub inv_c_mean: f64,
    /// `Σ k² · #{clusters of size k} / |B(N)|`, the estimator of `E|C|`.
    pub c_mean: f64,
    pub k_n: usize,
    pub box_size: usize,
}

impl MacroLaw {
    /// Finite type space on the observed sizes with `ψ(k) = k`.
    pub fn type_space(&self) -> Result<TypeSpace, PercolationError> {
        let atoms: Vec<(f64, f64, f64)> = self
            .counts
            .iter()
            .map(|(&k, &n)| (f64::from(k), n as f64, f64::from(k)))
            .collect();
        Ok(build_space(&atoms)?)
    }
}

pub fn empirical_macro_law(clusters: &ClusterSet) -> Result<MacroLaw, PercolationError> {
    if clusters.k_n == 0 {
        return Err(PercolationError::InvalidArgument("no clusters".into()));
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for &s in &clusters.sizes {
        *counts.entry(s).or_default() += 1;
    }
    let box_size: usize = clusters.cluster_of.len();
    let k_n = clusters.k_n;
    let mu_hat = counts
        .iter()
        .map(|(&k, &n)| (k, n as f64 / k_n as f64))
        .collect();
    let second: f64 = counts
        .iter()
        .map(|(&k, &n)| f64::from(k) * f64::from(k) * n as f64)
        .sum();
    Ok(MacroLaw {
        counts,
        mu_hat,
        inv_c_mean: k_n as f64 / box_size as f64,
        c_mean: second / box_size as f64,
        k_n,
        box_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridSample {
    /// Largest component of the site graph with both edge kinds.
    pub c1_combined: u64,
    /// Largest `Σ |X_i|` over components of the macro-vertex graph.
    pub c1_macro_activity: u64,
    pub long_edge_count: u64,
    pub k_n: usize,
    pub box_size: usize,
}

impl HybridSample {
    pub fn inv_c_mean(&self) -> f64 {
        self.k_n as f64 / self.box_size as f64
    }
}

/// One draw of `G_N(p, c)`, read both on sites and on macro-vertices.
pub fn sample_hybrid<R: Rng + ?Sized>(
    lattice: &LatticeSpec,
    c: f64,
    rng: &mut R,
) -> Result<HybridSample, PercolationError> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(PercolationError::InvalidArgument(format!(
            "c = {c} must be finite and nonnegative"
        )));
    }
    let box_size = lattice.box_size;
    let bonds = sample_bonds(lattice, rng);
    let clusters = clusters_from_bonds(box_size, &bonds);

    let b = box_size as u64;
    let pairs = b * b.saturating_sub(1) / 2;
    let prob = (c / box_size as f64).min(1.0);
    let long_count = if pairs == 0 || prob <= 0.0 {
        0
    } else if prob >= 1.0 {
        pairs
    } else {
        Binomial::new(pairs, prob)
            .map_err(|e| PercolationError::InvalidArgument(e.to_string()))?
            .sample(rng)
    };
    let long: Vec<(u32, u32)> = distinct_indices(rng, pairs, long_count)
        .into_iter()
        .map(|idx| {
            let (i, j) = triangular_pair(idx);
            (i as u32, j as u32)
        })
        .collect();

    // sites
    let mut sites = DisjointSet::new(box_size);
    for &(u, v) in bonds.iter().chain(&long) {
        sites.union(u, v);
    }
    let c1_combined = (0..box_size as u32)
        .map(|v| sites.set_size(v))
        .max()
        .unwrap_or(0);

    // macro-vertices
    let mut macros = DisjointSet::new(clusters.k_n);
    for &(u, v) in &long {
        macros.union(clusters.cluster_of[u as usize], clusters.cluster_of[v as usize]);
    }
    let mut mass = vec![0u64; clusters.k_n];
    for (id, &size) in clusters.sizes.iter().enumerate() {
        let root = macros.find(id as u32);
        mass[root as usize] += u64::from(size);
    }
    let c1_macro_activity = mass.into_iter().max().unwrap_or(0);

    Ok(HybridSample {
        c1_combined: u64::from(c1_combined),
        c1_macro_activity,
        long_edge_count: long_count,
        k_n: clusters.k_n,
        box_size,
    })
}

/// Macro law feeding [`gamma`].
#[derive(Debug, Clone, PartialEq)]
pub enum MacroSource {
    Exact1d(OneDLaw),
    Empirical(MacroLaw),
}

impl MacroSource {
    pub fn mean_size(&self) -> f64 {
        match self {
            MacroSource::Exact1d(law) => law.mean_size(),
            MacroSource::Empirical(law) => law.c_mean,
        }
    }

    pub fn mean_inverse_size(&self) -> f64 {
        match self {
            MacroSource::Exact1d(law) => law.mean_inverse_size(),
            MacroSource::Empirical(law) => law.inv_c_mean,
        }
    }

    pub fn type_space(&self, tail_tol: f64) -> Result<TypeSpace, PercolationError> {
        match self {
            MacroSource::Exact1d(law) => law.macro_space(tail_tol),
            MacroSource::Empirical(law) => law.type_space(),
        }
    }
}

/// `γ(p, c) = α(c · E(1/|C|))` on the macro law with `ψ(x) = x`; equal to 1
/// once `c ≥ 1 / E|C|`.
pub fn gamma(source: &MacroSource, c: f64, tail_tol: f64) -> Result<f64, PercolationError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(PercolationError::InvalidArgument(format!(
            "c = {c} must be positive"
        )));
    }
    if c * source.mean_size() >= 1.0 {
        return Ok(1.0);
    }
    let space = source.type_space(tail_tol)?;
    Ok(alpha_of_c(&space, c * source.mean_inverse_size())?)
}
