//! Decay constants `r(c)` and `α(c)`.
//!
//! Both constants are read off the tangency of the identity line with a
//! convex generating-function map. With `θ(y) = c·m1·(y − 1)`:
//!
//! * progeny: `F(y, z) = z · f(y)`, `f(y) = E[ψ(X) e^{ψ(X) θ(y)}] / m1`
//! * activity: `F(y, z) = E[z^{ψ(X)} ψ(X) e^{ψ(X) θ(y)}] / m1`
//!
//! The decay constant is the largest `z` for which `y ↦ F(y, z)` still has a
//! fixed point `y ≥ 1`. For `r` this reduces to a scalar root of
//! `g(y) = f(y) − y f'(y)`; for `α` we bisect on `z` with an inner convex
//! minimization. The monotone fixed-point iterations in [`iterate_h`] and
//! [`iterate_g`] bracket the same constants without any tangency argument
//! and serve as the independent check.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{c_critical, moments, TypeSpace};

/// Largest exponent (natural-log scale) any atom may reach.
pub const EXPONENT_CAP: f64 = 700.0;
/// Default iteration budget for the generating-function iterations.
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Divergence cap multiplier: a trace diverges once it exceeds `1e12 · m1`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

const MAX_SOLVER_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct BracketDiagnostics {
    pub what: &'static str,
    /// Last point where the function could be evaluated.
    pub last_point: f64,
    pub last_value: f64,
}

impl fmt::Display for BracketDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: no sign change up to {} (value {})",
            self.what, self.last_point, self.last_value
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("exponent above {EXPONENT_CAP} at y = {y}")]
    ExponentOverflow { y: f64 },
    #[error("y = {y} leaves the certified exponential-tail domain (rate {rate})")]
    TailDomain { y: f64, rate: f64 },
    #[error("c = {c} is not below the critical value {c_critical}")]
    NotSubcritical { c: f64, c_critical: f64 },
    #[error("bracket not found: {0}")]
    BracketNotFound(BracketDiagnostics),
    #[error("c = {0} outside (0, 1)")]
    OutOfRange(f64),
    #[error("iteration verdict inconclusive at z = {z}")]
    ScanInconclusive { z: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl TheoryError {
    fn is_domain(&self) -> bool {
        matches!(
            self,
            TheoryError::ExponentOverflow { .. } | TheoryError::TailDomain { .. }
        )
    }
}

type Result<T> = std::result::Result<T, TheoryError>;

/// Which generating function is probed: `E z^𝒳` or `E z^Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfMode {
    Progeny,
    Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    AtOrAboveCritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencySolution {
    pub y0: f64,
    /// `r(c)` or `α(c)`.
    pub z0: f64,
    pub residual_fixed: f64,
    pub residual_slope: f64,
    pub iterations: usize,
    pub regime: Regime,
}

impl TangencySolution {
    fn trivial() -> Self {
        TangencySolution {
            y0: 1.0,
            z0: 1.0,
            residual_fixed: 0.0,
            residual_slope: 0.0,
            iterations: 0,
            regime: Regime::AtOrAboveCritical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverged,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GFIterationTrace {
    pub z: f64,
    pub verdict: Verdict,
    pub limit_value: Option<f64>,
    pub iterations: usize,
    /// Whether every iterate was at least its predecessor.
    pub nondecreasing: bool,
}

#[derive(Debug, Clone, Copy)]
struct MapEval {
    value: f64,
    slope: f64,
    curvature: f64,
}

/// Evaluates `F(y, z)` and its first two `y`-derivatives with `z = e^{log_z}`.
fn eval_map(space: &TypeSpace, c: f64, m1: f64, y: f64, log_z: f64, mode: GfMode) -> Result<MapEval> {
    let theta = c * m1 * (y - 1.0);
    let rate = match mode {
        GfMode::Progeny => theta,
        GfMode::Activity => theta + log_z,
    };
    if let Some(a) = space.tail_rate() {
        if rate >= a {
            return Err(TheoryError::TailDomain { y, rate: a });
        }
    }
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for atom in space.atoms() {
        let psi = atom.activity;
        let exponent = psi * rate;
        if exponent > EXPONENT_CAP {
            return Err(TheoryError::ExponentOverflow { y });
        }
        let e = exponent.exp();
        s1 += psi * atom.weight * e;
        s2 += psi * psi * atom.weight * e;
        s3 += psi * psi * psi * atom.weight * e;
    }
    let scale = match mode {
        GfMode::Progeny => log_z.exp(),
        GfMode::Activity => 1.0,
    };
    Ok(MapEval {
        value: scale * s1 / m1,
        slope: scale * c * s2,
        curvature: scale * c * c * m1 * s3,
    })
}

/// `f(y)` and `f'(y)` for the progeny map at `z = 1`.
pub fn f_eval(space: &TypeSpace, c: f64, y: f64) -> Result<(f64, f64)> {
    if !(y >= 1.0) {
        return Err(TheoryError::InvalidArgument(format!("y = {y} below 1")));
    }
    let m1 = moments(space).m1;
    let e = eval_map(space, c, m1, y, 0.0, GfMode::Progeny)?;
    Ok((e.value, e.slope))
}

enum Bracket {
    Found(f64, f64),
    /// No sign change inside the evaluable region; carries its edge.
    Exhausted { last: f64, value: f64 },
}

/// Walks right from `lo` (where `probe > 0`) with geometrically growing steps
/// until `probe ≤ 0`. Domain errors shrink the step towards the last good
/// point so the evaluable region is searched up to its edge.
fn expand_bracket<P>(lo: f64, step: f64, mut probe: P) -> Result<Bracket>
where
    P: FnMut(f64) -> Result<f64>,
{
    let mut a = lo;
    let mut a_val = f64::NAN;
    let mut h = step;
    for _ in 0..200 {
        let x = a + h;
        match probe(x) {
            Ok(v) if v <= 0.0 => return Ok(Bracket::Found(a, x)),
            Ok(v) => {
                a = x;
                a_val = v;
                h *= 2.0;
            }
            Err(e) if e.is_domain() => {
                // locate the edge of the evaluable region
                let mut bad = x;
                for _ in 0..100 {
                    let mid = 0.5 * (a + bad);
                    if mid <= a || mid >= bad {
                        break;
                    }
                    match probe(mid) {
                        Ok(v) if v <= 0.0 => return Ok(Bracket::Found(a, mid)),
                        Ok(v) => {
                            a = mid;
                            a_val = v;
                        }
                        Err(e) if e.is_domain() => bad = mid,
                        Err(e) => return Err(e),
                    }
                }
                return Ok(Bracket::Exhausted {
                    last: a,
                    value: a_val,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Bracket::Exhausted {
        last: a,
        value: a_val,
    })
}

/// Newton iteration kept inside a sign-change bracket, falling back to
/// bisection whenever the step leaves it. `func` returns `(value, derivative)`;
/// `done` decides convergence from `(x, value, derivative)`.
fn safeguarded_newton<F, D>(mut a: f64, mut b: f64, mut func: F, done: D) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
    D: Fn(f64, f64, f64) -> bool,
{
    let (fa, _) = func(a)?;
    let positive_left = fa > 0.0;
    let mut x = 0.5 * (a + b);
    for it in 1..=MAX_SOLVER_ITER {
        let (fx, dfx) = func(x)?;
        if done(x, fx, dfx) || fx == 0.0 {
            return Ok((x, it));
        }
        if (fx > 0.0) == positive_left {
            a = x;
        } else {
            b = x;
        }
        if b - a <= 4.0 * f64::EPSILON * b.abs().max(a.abs()) {
            return Ok((x, it));
        }
        let newton = x - fx / dfx;
        x = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Ok((x, MAX_SOLVER_ITER))
}

fn require_positive_c(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(TheoryError::InvalidArgument(format!("c = {c} must be positive")))
    }
}

fn solve_y_counted(space: &TypeSpace, c: f64) -> Result<(f64, usize)> {
    require_positive_c(c)?;
    let ccr = c_critical(space);
    if c >= ccr {
        return Err(TheoryError::NotSubcritical { c, c_critical: ccr });
    }
    let m1 = moments(space).m1;
    let g = |y: f64| -> Result<(f64, f64)> {
        let e = eval_map(space, c, m1, y, 0.0, GfMode::Progeny)?;
        Ok((e.value - y * e.slope, -y * e.curvature))
    };
    let (a, b) = match expand_bracket(1.0, 1.0 / (c * m1), |y| g(y).map(|v| v.0))? {
        Bracket::Found(a, b) => (a, b),
        Bracket::Exhausted { last, value } => {
            return Err(TheoryError::BracketNotFound(BracketDiagnostics {
                what: "g(y) = f(y) - y f'(y)",
                last_point: last,
                last_value: value,
            }))
        }
    };
    safeguarded_newton(a, b, g, |y, gy, _| {
        // |y − f/f'| = |g| / f'
        let slope = eval_map(space, c, m1, y, 0.0, GfMode::Progeny)
            .map(|e| e.slope)
            .unwrap_or(f64::INFINITY);
        gy.abs() <= 1e-13 * y * slope
    })
}

/// The unique `y0 > 1` with `y0 = f(y0) / f'(y0)`.
pub fn solve_y(space: &TypeSpace, c: f64) -> Result<f64> {
    solve_y_counted(space, c).map(|(y, _)| y)
}

/// Tangency solution for `r(c)` via the scalar root of `f − y f'`.
pub fn solve_r(space: &TypeSpace, c: f64) -> Result<TangencySolution> {
    require_positive_c(c)?;
    if c >= c_critical(space) {
        return Ok(TangencySolution::trivial());
    }
    let (y0, iterations) = solve_y_counted(space, c)?;
    let (f, slope) = f_eval(space, c, y0)?;
    let z0 = 1.0 / slope;
    let sol = TangencySolution {
        y0,
        z0,
        residual_fixed: (z0 * f - y0).abs(),
        residual_slope: (z0 * slope - 1.0).abs(),
        iterations,
        regime: Regime::Subcritical,
    };
    check_tangency(sol, "progeny tangency")
}

fn check_tangency(sol: TangencySolution, what: &'static str) -> Result<TangencySolution> {
    let ok = sol.z0 > 1.0
        && sol.y0 > 1.0
        && sol.residual_fixed <= 1e-10 * sol.y0
        && sol.residual_slope <= 1e-8;
    if ok {
        Ok(sol)
    } else {
        Err(TheoryError::BracketNotFound(BracketDiagnostics {
            what,
            last_point: sol.y0,
            last_value: sol.residual_fixed.max(sol.residual_slope),
        }))
    }
}

/// `r(c)`: 1 at or above criticality, otherwise `1 / f'(y0)`.
pub fn r_of_c(space: &TypeSpace, c: f64) -> Result<f64> {
    solve_r(space, c).map(|s| s.z0)
}

/// Minimum of `F(y, z) − y` over `y ≥ 1` (restricted to the evaluable region).
#[derive(Debug, Clone, Copy)]
struct InnerMin {
    y: f64,
    gap: f64,
    slope: f64,
    interior: bool,
    iterations: usize,
}

fn inner_min(space: &TypeSpace, c: f64, m1: f64, log_z: f64, mode: GfMode) -> Result<InnerMin> {
    let at_one = eval_map(space, c, m1, 1.0, log_z, mode)?;
    if at_one.slope >= 1.0 {
        return Ok(InnerMin {
            y: 1.0,
            gap: at_one.value - 1.0,
            slope: at_one.slope,
            interior: false,
            iterations: 0,
        });
    }
    let deriv = |y: f64| -> Result<(f64, f64)> {
        let e = eval_map(space, c, m1, y, log_z, mode)?;
        Ok((1.0 - e.slope, -e.curvature))
    };
    let step = 1.0 / (c * m1 * space.max_activity());
    match expand_bracket(1.0, step, |y| deriv(y).map(|v| v.0))? {
        Bracket::Found(a, b) => {
            let (y, iterations) = safeguarded_newton(a, b, deriv, |_, d, _| d.abs() <= 1e-14)?;
            let e = eval_map(space, c, m1, y, log_z, mode)?;
            Ok(InnerMin {
                y,
                gap: e.value - y,
                slope: e.slope,
                interior: true,
                iterations,
            })
        }
        Bracket::Exhausted { last, .. } => {
            let e = eval_map(space, c, m1, last, log_z, mode)?;
            Ok(InnerMin {
                y: last,
                gap: e.value - last,
                slope: e.slope,
                interior: false,
                iterations: 0,
            })
        }
    }
}

/// Largest `z` for which `y ↦ F(y, z)` keeps a fixed point in `y ≥ 1`,
/// located by bisection on `log z` with an inner convex minimization.
///
/// This is the solver behind [`alpha_of_c`]; in progeny mode it gives a
/// second route to `r(c)` independent of [`solve_y`].
pub fn solve_by_sweep(space: &TypeSpace, c: f64, mode: GfMode) -> Result<TangencySolution> {
    require_positive_c(c)?;
    if c >= c_critical(space) {
        return Ok(TangencySolution::trivial());
    }
    let m1 = moments(space).m1;
    let u_cap = match mode {
        GfMode::Progeny => EXPONENT_CAP,
        GfMode::Activity => {
            let overflow = EXPONENT_CAP / space.max_activity();
            space.tail_rate().map_or(overflow, |a| a.min(overflow))
        }
    };
    let edge = u_cap * (1.0 - 1e-12);
    let mut iterations = 0;
    let mut feasible = |u: f64| -> Result<bool> {
        let m = inner_min(space, c, m1, u, mode)?;
        iterations += 1 + m.iterations;
        Ok(m.gap <= 0.0)
    };

    let (mut lo, mut hi) = (0.0_f64, 0.1_f64.min(0.5 * u_cap));
    loop {
        if !feasible(hi)? {
            break;
        }
        lo = hi;
        if hi >= edge {
            return Err(TheoryError::BracketNotFound(BracketDiagnostics {
                what: "outer z search",
                last_point: hi.exp(),
                last_value: 0.0,
            }));
        }
        hi = (2.0 * hi).min(edge);
    }
    for _ in 0..MAX_SOLVER_ITER {
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = inner_min(space, c, m1, lo, mode)?;
    if !m.interior {
        return Err(TheoryError::BracketNotFound(BracketDiagnostics {
            what: "tangency on the boundary of the evaluable region",
            last_point: m.y,
            last_value: m.gap,
        }));
    }
    let sol = TangencySolution {
        y0: m.y,
        z0: lo.exp(),
        residual_fixed: m.gap.abs(),
        residual_slope: (m.slope - 1.0).abs(),
        iterations: iterations + m.iterations,
        regime: Regime::Subcritical,
    };
    check_tangency(sol, "sweep tangency")
}

pub fn solve_alpha(space: &TypeSpace, c: f64) -> Result<TangencySolution> {
    solve_by_sweep(space, c, GfMode::Activity)
}

/// `α(c)`: 1 at or above criticality, otherwise the tangency value of the
/// activity map.
pub fn alpha_of_c(space: &TypeSpace, c: f64) -> Result<f64> {
    solve_alpha(space, c).map(|s| s.z0)
}

/// `1e12 · m1`
pub fn default_cap(space: &TypeSpace) -> f64 {
    DIVERGENCE_FACTOR * moments(space).m1
}

/// Monotone iteration from zero of the fixed-point equation for
/// `H_z = Σ ψ(x) μ(x) E z^{𝒳(x)}` (progeny) or `G_z` (activity).
pub fn iterate_gf(
    space: &TypeSpace,
    c: f64,
    z: f64,
    mode: GfMode,
    max_iter: usize,
    cap: f64,
) -> GFIterationTrace {
    let m1 = moments(space).m1;
    let log_z = z.ln();
    let mut x = 0.0_f64;
    let mut nondecreasing = true;
    let trace = |verdict, limit_value, iterations, nondecreasing| GFIterationTrace {
        z,
        verdict,
        limit_value,
        iterations,
        nondecreasing,
    };
    for it in 1..=max_iter {
        let mut next = 0.0;
        for atom in space.atoms() {
            let psi = atom.activity;
            let mut exponent = c * psi * (x - m1);
            if mode == GfMode::Activity {
                exponent += psi * log_z;
            }
            if exponent > EXPONENT_CAP {
                return trace(Verdict::Diverged, None, it, nondecreasing);
            }
            next += psi * atom.weight * exponent.exp();
        }
        if mode == GfMode::Progeny {
            next *= z;
        }
        if next < x {
            nondecreasing = false;
        }
        if !next.is_finite() || next > cap {
            return trace(Verdict::Diverged, None, it, nondecreasing);
        }
        if (next - x).abs() < 1e-12 * next {
            return trace(Verdict::Converged, Some(next), it, nondecreasing);
        }
        x = next;
    }
    trace(Verdict::Inconclusive, None, max_iter, nondecreasing)
}

/// `H ← z E[ψ(X) exp{cψ(X)(H − m1)}]` from `H = 0`.
pub fn iterate_h(space: &TypeSpace, c: f64, z: f64, max_iter: usize, cap: f64) -> GFIterationTrace {
    iterate_gf(space, c, z, GfMode::Progeny, max_iter, cap)
}

/// `G ← E[z^{ψ(X)} ψ(X) exp{cψ(X)(G − m1)}]` from `G = 0`.
pub fn iterate_g(space: &TypeSpace, c: f64, z: f64, max_iter: usize, cap: f64) -> GFIterationTrace {
    iterate_gf(space, c, z, GfMode::Activity, max_iter, cap)
}

/// Brackets the radius of convergence by bisection on the iteration verdict.
/// Returns `(z_lo, z_hi)` with `z_lo` converged and `z_hi` diverged.
pub fn radius_scan(space: &TypeSpace, c: f64, mode: GfMode, rel_tol: f64) -> Result<(f64, f64)> {
    require_positive_c(c)?;
    let ccr = c_critical(space);
    if c >= ccr {
        return Err(TheoryError::NotSubcritical { c, c_critical: ccr });
    }
    if !(rel_tol > 1e-6 && rel_tol < 0.1) {
        return Err(TheoryError::InvalidArgument(format!(
            "rel_tol = {rel_tol} outside (1e-6, 0.1)"
        )));
    }
    let cap = default_cap(space);
    let verdict = |z: f64| -> Result<bool> {
        match iterate_gf(space, c, z, mode, DEFAULT_MAX_ITER, cap).verdict {
            Verdict::Converged => Ok(true),
            Verdict::Diverged => Ok(false),
            Verdict::Inconclusive => Err(TheoryError::ScanInconclusive { z }),
        }
    };
    let mut lo = 1.0;
    let mut step = 0.05;
    let mut hi = lo + step;
    while verdict(hi)? {
        lo = hi;
        step *= 2.0;
        hi = 1.0 + step;
        if !hi.is_finite() || step > 1e300 {
            return Err(TheoryError::BracketNotFound(BracketDiagnostics {
                what: "radius scan",
                last_point: lo,
                last_value: 0.0,
            }));
        }
    }
    while hi / lo - 1.0 > rel_tol {
        let mid = (lo * hi).sqrt();
        if verdict(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

/// `log r = c − 1 + |log c|` for the homogeneous graph.
pub fn er_log_r(c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(TheoryError::OutOfRange(c));
    }
    Ok(c - 1.0 - c.ln())
}

/// Everything the `theory` command prints for one `(space, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub c: f64,
    pub c_critical: f64,
    pub regime: Regime,
    pub r: TangencySolution,
    pub alpha: TangencySolution,
}

impl TheoryReport {
    pub fn compute(space: &TypeSpace, c: f64) -> Result<Self> {
        let r = solve_r(space, c)?;
        let alpha = solve_alpha(space, c)?;
        Ok(TheoryReport {
            c,
            c_critical: c_critical(space),
            regime: r.regime,
            r,
            alpha,
        })
    }
}
