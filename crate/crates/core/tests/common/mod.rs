#![allow(dead_code)]

use subcrit::model::{build_space, moments, truncate_family, ActivityLaw, Family, TypeSpace};

pub fn homogeneous() -> TypeSpace {
    build_space(&[(1.0, 1.0, 1.0)]).unwrap()
}

pub fn two_type() -> TypeSpace {
    build_space(&[(1.0, 0.5, 1.0), (2.0, 0.5, 2.0)]).unwrap()
}

pub fn geometric() -> TypeSpace {
    truncate_family(
        &Family::Geometric {
            success: 0.7,
            activity: ActivityLaw::Identity,
        },
        1e-12,
    )
    .unwrap()
}

pub fn constant(b: f64) -> TypeSpace {
    build_space(&[(1.0, 1.0, b)]).unwrap()
}

/// Named `(space, c)` pairs the oracles are run on.
pub fn test_matrix() -> Vec<(&'static str, TypeSpace, f64)> {
    let g = geometric();
    let cg = 0.5 * subcrit::model::c_critical(&g);
    vec![
        ("homogeneous c=0.5", homogeneous(), 0.5),
        ("two-type c=0.1", two_type(), 0.1),
        ("two-type c=0.2", two_type(), 0.2),
        ("two-type c=0.3", two_type(), 0.3),
        ("geometric(0.7) c=ccr/2", g, cg),
    ]
}

/// Distinct spaces of the matrix.
pub fn test_spaces() -> Vec<(&'static str, TypeSpace)> {
    vec![
        ("homogeneous", homogeneous()),
        ("two-type", two_type()),
        ("geometric(0.7)", geometric()),
    ]
}

/// `Σ μ ψ^k e^{ψ t}`.
fn tilted(space: &TypeSpace, k: i32, t: f64) -> f64 {
    space
        .atoms()
        .iter()
        .map(|a| a.weight * a.activity.powi(k) * (a.activity * t).exp())
        .sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "oracle bracket");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn upper_bracket(f: impl Fn(f64) -> f64, sign_at_zero: bool) -> f64 {
    let mut hi = 1.0;
    while (f(hi) > 0.0) == sign_at_zero {
        hi *= 2.0;
        assert!(hi < 1e6, "no sign change");
    }
    hi
}

/// `r(c)` from the reduced equation `u + c m1 = A(u) / B(u)`, with
/// `r = 1 / (c B(u))`, where `A`, `B` are the first and second tilted
/// activity moments.
pub fn r_oracle(space: &TypeSpace, c: f64) -> f64 {
    let m1 = moments(space).m1;
    let g = |u: f64| tilted(space, 1, u) / tilted(space, 2, u) - u - c * m1;
    assert!(g(0.0) > 0.0, "not subcritical");
    let u = bisect(0.0, upper_bracket(g, true), g);
    1.0 / (c * tilted(space, 2, u))
}

/// `α(c) = exp(θ − c (A(θ) − m1))` where `c B(θ) = 1`.
pub fn alpha_oracle(space: &TypeSpace, c: f64) -> f64 {
    let m1 = moments(space).m1;
    let h = |t: f64| c * tilted(space, 2, t) - 1.0;
    assert!(h(0.0) < 0.0, "not subcritical");
    let t = bisect(0.0, upper_bracket(h, false), h);
    (t - c * (tilted(space, 1, t) - m1)).exp()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
