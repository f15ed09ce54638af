//! Shared generators and oracles for the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tolerance_core::linalg::{Mat2, Vec2};
use tolerance_core::linear::{self, LinearAnalysis};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    Mat2::new(
        a.a * b.a + a.b * b.c,
        a.a * b.b + a.b * b.d,
        a.c * b.a + a.d * b.c,
        a.c * b.b + a.d * b.d,
    )
}

fn inverse(m: Mat2) -> Mat2 {
    let det = m.det();
    Mat2::new(m.d / det, -m.b / det, -m.c / det, m.a / det)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec2 {
    loop {
        let v = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 {
            return v.scale(1.0 / n);
        }
    }
}

/// Random 2x2 matrix with real negative eigenvalues: a mix of
/// similarity transforms of diagonal seeds, triangular and diagonal
/// matrices, and defective companion forms. Retries until the analyzer
/// accepts the result (rounding can push a seed across the complex or
/// sign boundary).
pub fn random_stable_matrix(rng: &mut ChaCha8Rng) -> Mat2 {
    loop {
        let l1 = -rng.random_range(0.1..2.5);
        let l2 = l1 - rng.random_range(0.05..2.5);
        let m = match rng.random_range(0..10u32) {
            0..=5 => {
                let v = unit(rng);
                let w = unit(rng);
                let p = Mat2::new(v.x, w.x, v.y, w.y);
                if p.det().abs() < 0.2 {
                    continue;
                }
                mat_mul(mat_mul(p, Mat2::new(l1, 0.0, 0.0, l2)), inverse(p))
            }
            6 | 7 => Mat2::new(l1, 0.0, 0.0, l2),
            8 => Mat2::new(l1, rng.random_range(-1.0..1.0), 0.0, l2),
            // Companion form of (z - l1)^2: exactly defective in floats.
            _ => Mat2::new(0.0, 1.0, -l1 * l1, 2.0 * l1),
        };
        if linear::analyze(m).is_ok() {
            return m;
        }
    }
}

/// Random pair in the first quadrant with `x_p >= x_r` whose
/// closed-form forward orbits both stay nonnegative, or `None` when
/// the admissible set is too thin to hit by rejection.
pub fn admissible_pair(rng: &mut ChaCha8Rng, an: &LinearAnalysis) -> Option<(Vec2, Vec2)> {
    for _ in 0..300 {
        let r0 = Vec2::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        if !linear::nonnegative_forward(an, r0) {
            continue;
        }
        for _ in 0..20 {
            let p0 = Vec2::new(
                r0.x + rng.random_range(0.0..2.0),
                rng.random_range(0.0..3.5),
            );
            if p0 != r0 && linear::nonnegative_forward(an, p0) {
                return Some((r0, p0));
            }
        }
    }
    None
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn quad_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    let err = left + right - whole;
    if depth == 0 || err.abs() < 15.0 * tol {
        return left + right + err / 15.0;
    }
    quad_rec(f, a, m, left, 0.5 * tol, depth - 1) + quad_rec(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` (signed bounds).
pub fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    quad_rec(f, a, b, simpson(f, a, b), tol, 50)
}

/// Random expression source over the parser grammar. Leaves are
/// constants or variables; interior nodes cover every operator and
/// function the differentiator handles.
pub fn random_expr_source(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 {
        return match rng.random_range(0..4u32) {
            0 => format!("{:.3}", rng.random_range(0.2..3.0)),
            1 | 2 => "x".to_string(),
            _ => "y".to_string(),
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expr_source(rng, depth - 1);
    match rng.random_range(0..14u32) {
        0 | 1 => format!("({} + {})", sub(rng), sub(rng)),
        2 | 3 => format!("({} - {})", sub(rng), sub(rng)),
        4 | 5 => format!("({} * {})", sub(rng), sub(rng)),
        6 => format!("({} / {})", sub(rng), sub(rng)),
        7 => format!("({} / (1.5 + abs({})))", sub(rng), sub(rng)),
        8 => format!("-({})", sub(rng)),
        9 => format!("({})^{}", sub(rng), rng.random_range(2..5u32)),
        10 => format!("exp(0.4 * ({}))", random_expr_source(rng, depth.min(2) - 1)),
        11 => format!("log(1.2 + abs({}))", sub(rng)),
        12 => format!("sqrt(0.3 + abs({}))", sub(rng)),
        _ => format!("abs({})", sub(rng)),
    }
}
