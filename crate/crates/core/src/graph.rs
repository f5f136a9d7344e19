//! Sampling of `G^V(n, κ)` and its component structure.
//!
//! Vertices `i < j` are joined independently with probability
//! `min{c ψ(x_i) ψ(x_j) / n, 1}`. The grouped sampler uses that the
//! probability depends only on the pair of type classes: it draws one
//! binomial edge count per class pair and then that many distinct pairs.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsu::DisjointSet;
use crate::model::TypeSpace;
use crate::rng::{distinct_indices, triangular_pair};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex {vertex} has type index {index} but the space has {atoms} atoms")]
    InvalidType {
        vertex: usize,
        index: u32,
        atoms: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed edge list: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeMode {
    /// Each vertex draws its type independently from `μ`.
    Iid,
    /// `⌊n μ(k)⌋` vertices per atom, largest remainders fill up, then shuffle.
    Quota,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Grouped,
    /// One Bernoulli per vertex pair; quadratic, only for small `n`.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedGraph {
    pub n: usize,
    /// Atom index of each vertex.
    pub type_of: Vec<u32>,
    /// Unordered pairs stored as `(u, v)` with `u < v`.
    pub edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub component_count: usize,
    /// Component sizes, largest first.
    pub sizes: Vec<u32>,
    /// Per-component `Σ ψ`, largest first. Not aligned with `sizes`.
    pub activities: Vec<f64>,
    pub c1: u32,
    pub max_activity: f64,
}

pub fn sample_types<R: Rng + ?Sized>(
    space: &TypeSpace,
    n: usize,
    mode: TypeMode,
    rng: &mut R,
) -> Vec<u32> {
    match mode {
        TypeMode::Iid => {
            if space.len() == 1 {
                return vec![0; n];
            }
            let law = WeightedIndex::new(space.weights()).expect("weights are positive");
            (0..n).map(|_| law.sample(rng) as u32).collect()
        }
        TypeMode::Quota => {
            let mut counts: Vec<usize> = Vec::with_capacity(space.len());
            let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(space.len());
            for (k, w) in space.weights().enumerate() {
                let exact = n as f64 * w;
                let floor = exact.floor();
                counts.push(floor as usize);
                remainders.push((exact - floor, k));
            }
            let assigned: usize = counts.iter().sum();
            // ties go to the lower atom index
            remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, k) in remainders.iter().take(n.saturating_sub(assigned)) {
                counts[k] += 1;
            }
            let mut types: Vec<u32> = counts
                .iter()
                .enumerate()
                .flat_map(|(k, &m)| std::iter::repeat_n(k as u32, m))
                .collect();
            types.shuffle(rng);
            types
        }
    }
}

fn edge_probability(c: f64, psi_a: f64, psi_b: f64, n: usize) -> f64 {
    (c * psi_a * psi_b / n as f64).min(1.0)
}

pub fn sample_graph<R: Rng + ?Sized>(
    space: &TypeSpace,
    c: f64,
    types: &[u32],
    method: SampleMethod,
    rng: &mut R,
) -> Result<TypedGraph, GraphError> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(GraphError::InvalidArgument(format!(
            "c = {c} must be finite and nonnegative"
        )));
    }
    let n = types.len();
    if n > u32::MAX as usize {
        return Err(GraphError::InvalidArgument(format!("n = {n} exceeds u32 range")));
    }
    if let Some((vertex, &index)) = types
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= space.len())
    {
        return Err(GraphError::InvalidType {
            vertex,
            index,
            atoms: space.len(),
        });
    }
    let psi: Vec<f64> = space.activities().collect();
    let edges = match method {
        SampleMethod::Naive => {
            let mut edges = Vec::new();
            for j in 1..n {
                for i in 0..j {
                    let p = edge_probability(c, psi[types[i] as usize], psi[types[j] as usize], n);
                    if rng.random_bool(p) {
                        edges.push((i as u32, j as u32));
                    }
                }
            }
            edges
        }
        SampleMethod::Grouped => grouped_edges(&psi, c, types, rng),
    };
    Ok(TypedGraph {
        n,
        type_of: types.to_vec(),
        edges,
    })
}

fn grouped_edges<R: Rng + ?Sized>(psi: &[f64], c: f64, types: &[u32], rng: &mut R) -> Vec<(u32, u32)> {
    let n = types.len();
    let mut classes: Vec<Vec<u32>> = vec![Vec::new(); psi.len()];
    for (v, &t) in types.iter().enumerate() {
        classes[t as usize].push(v as u32);
    }
    let mut edges = Vec::new();
    for k in 0..classes.len() {
        for l in k..classes.len() {
            let (a, b) = (&classes[k], &classes[l]);
            let pairs = if k == l {
                let m = a.len() as u64;
                m * m.saturating_sub(1) / 2
            } else {
                a.len() as u64 * b.len() as u64
            };
            if pairs == 0 {
                continue;
            }
            let p = edge_probability(c, psi[k], psi[l], n);
            let count = if p >= 1.0 {
                pairs
            } else if p <= 0.0 {
                0
            } else {
                Binomial::new(pairs, p).expect("valid binomial").sample(rng)
            };
            for idx in distinct_indices(rng, pairs, count) {
                let (u, v) = if k == l {
                    let (i, j) = triangular_pair(idx);
                    (a[i as usize], a[j as usize])
                } else {
                    let len = b.len() as u64;
                    (a[(idx / len) as usize], b[(idx % len) as usize])
                };
                edges.push((u.min(v), u.max(v)));
            }
        }
    }
    edges
}

fn finish_stats(mut sizes: Vec<u32>, mut activities: Vec<f64>) -> ComponentStats {
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    activities.sort_unstable_by(|a, b| b.total_cmp(a));
    ComponentStats {
        component_count: sizes.len(),
        c1: sizes.first().copied().unwrap_or(0),
        max_activity: activities.first().copied().unwrap_or(0.0),
        sizes,
        activities,
    }
}

/// Component structure by disjoint-set union.
///
/// Activities are summed over each component's vertices in increasing
/// vertex order.
pub fn components(graph: &TypedGraph, space: &TypeSpace) -> ComponentStats {
    let mut ds = DisjointSet::new(graph.n);
    for &(u, v) in &graph.edges {
        ds.union(u, v);
    }
    let (labels, count) = ds.labels();
    let psi: Vec<f64> = space.activities().collect();
    let mut sizes = vec![0u32; count];
    let mut activities = vec![0.0f64; count];
    for (v, &id) in labels.iter().enumerate() {
        sizes[id as usize] += 1;
        activities[id as usize] += psi[graph.type_of[v] as usize];
    }
    finish_stats(sizes, activities)
}

/// Component structure by breadth-first search; the reference for
/// [`components`].
pub fn components_bfs(graph: &TypedGraph, space: &TypeSpace) -> ComponentStats {
    let n = graph.n;
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(u, v) in &graph.edges {
        adjacency[u as usize].push(v);
        adjacency[v as usize].push(u);
    }
    let psi: Vec<f64> = space.activities().collect();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    let mut activities = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start as u32);
        let mut members = Vec::new();
        while let Some(u) = queue.pop_front() {
            members.push(u);
            for &w in &adjacency[u as usize] {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        sizes.push(members.len() as u32);
        activities.push(
            members
                .iter()
                .map(|&v| psi[graph.type_of[v as usize] as usize])
                .sum(),
        );
    }
    finish_stats(sizes, activities)
}

/// Writes `n m` followed by one `u v` line per edge.
pub fn write_edge_list<W: Write>(graph: &TypedGraph, mut out: W) -> io::Result<()> {
    writeln!(out, "{} {}", graph.n, graph.edges.len())?;
    for &(u, v) in &graph.edges {
        writeln!(out, "{u} {v}")?;
    }
    Ok(())
}

/// Reads the format of [`write_edge_list`]; returns `(n, edges)`.
pub fn read_edge_list<R: BufRead>(input: R) -> Result<(usize, Vec<(u32, u32)>), GraphError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| GraphError::Parse("missing header".into()))??;
    let nums = |line: &str| -> Result<(u64, u64), GraphError> {
        let mut it = line.split_whitespace().map(str::parse::<u64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
            _ => Err(GraphError::Parse(format!("bad line {line:?}"))),
        }
    };
    let (n, m) = nums(&header)?;
    let mut edges = Vec::with_capacity(m as usize);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (u, v) = nums(&line)?;
        if u >= n || v >= n {
            return Err(GraphError::Parse(format!("edge {u} {v} out of range")));
        }
        edges.push((u as u32, v as u32));
    }
    if edges.len() as u64 != m {
        return Err(GraphError::Parse(format!(
            "header announces {m} edges, found {}",
            edges.len()
        )));
    }
    Ok((n as usize, edges))
}
