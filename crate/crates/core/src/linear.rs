//! Exact tolerance verdicts for linear systems `x' = Ax` with a stable
//! node at the origin.
//!
//! The flow splits along the eigenbasis, so whether the perturbed first
//! component ever drops below the reference one reduces to inequalities
//! between the basis coefficients of the two starts, with the onset
//! time in closed form. The module also recasts those inequalities
//! geometrically: lines through the reference start parallel to the
//! eigenvectors carve the quadrant into candidate regions, and for the
//! eigenvector configurations that can host nonnegative dynamics the
//! winning region is named explicitly.
//!
//! Case labels: `1a`, `1b`, `1c` are distinct eigenvalues with the
//! weak eigenvector vertical, the strong eigenvector vertical, or
//! neither; `2a` is a repeated eigenvalue with a full eigenspace;
//! `2b` a repeated eigenvalue with a single eigenvector.

use crate::linalg::{Eigen2, Mat2, Vec2};
use crate::tolerance::{assumption, check_quadrant, ToleranceError};

/// Relative threshold deciding whether an eigenvector's first component
/// counts as zero (routing to case 1a or 1b instead of 1c).
pub const NORMALIZE_EPS: f64 = 1e-12;
/// First components within this relative distance of zero, or
/// eigenvalue gaps within this relative distance of a tie, are legal
/// but flagged as boundary-sensitive.
const BOUNDARY_FLAG_REL: f64 = 1e-9;
const TIE_FLAG_REL: f64 = 1e-6;
/// Log-spaced sample count for the nonnegativity screen.
const NONNEG_GRID: usize = 1000;
/// Screened window in units of the slow time constant.
const NONNEG_WINDOW: f64 = 50.0;
const NONNEG_REL_SLACK: f64 = 1e-9;

/// Eigenvalue pattern of the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearCase {
    /// Distinct eigenvalues, weak eigenvector on the y-axis.
    WeakVertical,
    /// Distinct eigenvalues, strong eigenvector on the y-axis.
    StrongVertical,
    /// Distinct eigenvalues, both first components nonzero.
    Generic,
    /// Repeated eigenvalue, two-dimensional eigenspace (scalar matrix).
    RepeatedDiagonal,
    /// Repeated eigenvalue, one-dimensional eigenspace.
    RepeatedDefective,
}

impl LinearCase {
    pub fn label(self) -> &'static str {
        match self {
            LinearCase::WeakVertical => "1a",
            LinearCase::StrongVertical => "1b",
            LinearCase::Generic => "1c",
            LinearCase::RepeatedDiagonal => "2a",
            LinearCase::RepeatedDefective => "2b",
        }
    }
}

/// Eigenvector configuration: the geometric arrangements that can host
/// nonnegative first-quadrant dynamics and admit a region analysis.
///
/// With eigenvectors scaled to first component one and slopes `alpha`
/// (weak) and `beta` (strong):
/// - `A`: strong eigenvector along the positive x-axis, weak interior
///   (`alpha > 0`, `beta = 0`).
/// - `B`: both interior, weak below strong (`0 < alpha < beta`).
/// - `C`: both interior, strong below weak (`0 < beta < alpha`).
/// - `D`: defective, eigenvector interior, generalized offset along the
///   positive y-axis.
/// - `Unlabeled`: anything else. Verdicts still apply; the region
///   analysis does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvcLabel {
    A,
    B,
    C,
    D,
    Unlabeled,
}

impl EvcLabel {
    pub fn label(self) -> &'static str {
        match self {
            EvcLabel::A => "a",
            EvcLabel::B => "b",
            EvcLabel::C => "c",
            EvcLabel::D => "d",
            EvcLabel::Unlabeled => "none",
        }
    }
}

/// Eigenstructure of a stable-node matrix, normalized for the verdict
/// formulas.
#[derive(Clone, Debug)]
pub struct LinearAnalysis {
    pub matrix: Mat2,
    /// Eigenvalue closer to zero (the slow, weak mode).
    pub lambda_slow: f64,
    /// Eigenvalue further from zero. Equal to `lambda_slow` in the
    /// repeated cases.
    pub lambda_fast: f64,
    /// Weak eigenvector, first component normalized to 1 (or 0).
    pub v: Vec2,
    /// Strong eigenvector, absent in the defective case.
    pub w: Option<Vec2>,
    /// Generalized eigenvector with `(A - lambda I) v_gen = v`, present
    /// only in the defective case. First component 0 whenever the
    /// eigenvector allows it.
    pub v_gen: Option<Vec2>,
    pub case: LinearCase,
    pub evc: EvcLabel,
    /// Notes about inputs near a classification threshold.
    pub boundary_flags: Vec<String>,
}

/// Coordinates of a point in the analysis basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub c1: f64,
    pub c2: f64,
}

impl LinearAnalysis {
    /// Basis matrix with the eigenvector columns.
    fn basis(&self) -> Mat2 {
        let second = self.w.or(self.v_gen).expect("analysis always stores a second basis vector");
        Mat2::new(self.v.x, second.x, self.v.y, second.y)
    }

    /// Second basis vector (strong eigenvector or generalized one).
    pub fn second_direction(&self) -> Vec2 {
        self.w.or(self.v_gen).expect("analysis always stores a second basis vector")
    }

    /// Closed-form state at time `t` for the start with coordinates
    /// `co`.
    pub fn state(&self, co: Coefficients, t: f64) -> Vec2 {
        match self.case {
            LinearCase::RepeatedDefective => {
                let e = (self.lambda_slow * t).exp();
                let vg = self.v_gen.unwrap();
                Vec2::new(
                    ((co.c1 + co.c2 * t) * self.v.x + co.c2 * vg.x) * e,
                    ((co.c1 + co.c2 * t) * self.v.y + co.c2 * vg.y) * e,
                )
            }
            _ => {
                let w = self.w.unwrap();
                let e1 = (self.lambda_slow * t).exp();
                let e2 = (self.lambda_fast * t).exp();
                Vec2::new(
                    co.c1 * self.v.x * e1 + co.c2 * w.x * e2,
                    co.c1 * self.v.y * e1 + co.c2 * w.y * e2,
                )
            }
        }
    }

    /// First component of the closed-form solution.
    pub fn first_component(&self, co: Coefficients, t: f64) -> f64 {
        self.state(co, t).x
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "matrix": [[self.matrix.a, self.matrix.b], [self.matrix.c, self.matrix.d]],
            "lambda_slow": self.lambda_slow,
            "lambda_fast": self.lambda_fast,
            "weak": [self.v.x, self.v.y],
            "strong": self.w.map(|w| vec![w.x, w.y]),
            "generalized": self.v_gen.map(|g| vec![g.x, g.y]),
            "case": self.case.label(),
            "configuration": self.evc.label(),
            "boundary_flags": self.boundary_flags,
        })
    }
}

/// Eigen-decompose `a` and normalize for the verdict formulas. Errors
/// when the eigenvalues are complex or not strictly negative.
pub fn analyze(a: Mat2) -> Result<LinearAnalysis, ToleranceError> {
    let scale = a.norm_inf().max(1.0);
    match a.eigen() {
        Eigen2::Complex { re, im } => Err(assumption(
            "the matrix has real negative eigenvalues",
            format!("eigenvalues are complex ({re} +/- {im}i)"),
        )),
        Eigen2::RealDistinct {
            first,
            second,
            v_first,
            v_second,
        } => {
            if first >= 0.0 || second >= 0.0 {
                return Err(assumption(
                    "the matrix has real negative eigenvalues",
                    format!("eigenvalues are {first} and {second}"),
                ));
            }
            let mut flags = Vec::new();
            if (first - second).abs() < TIE_FLAG_REL * scale {
                flags.push(format!(
                    "eigenvalue gap {:.3e} is close to the repeated-eigenvalue threshold",
                    (first - second).abs()
                ));
            }
            let v1_zero = v_first.x.abs() <= NORMALIZE_EPS * v_first.norm();
            let w1_zero = v_second.x.abs() <= NORMALIZE_EPS * v_second.norm();
            for (name, vec, zero) in [("weak", v_first, v1_zero), ("strong", v_second, w1_zero)] {
                if !zero && vec.x.abs() <= BOUNDARY_FLAG_REL * vec.norm() {
                    flags.push(format!(
                        "{name} eigenvector first component {:.3e} is close to zero",
                        vec.x / vec.norm()
                    ));
                }
            }
            let (case, v, w) = match (v1_zero, w1_zero) {
                (true, false) => (
                    LinearCase::WeakVertical,
                    Vec2::new(0.0, 1.0),
                    v_second.scale(1.0 / v_second.x),
                ),
                (false, true) => (
                    LinearCase::StrongVertical,
                    v_first.scale(1.0 / v_first.x),
                    Vec2::new(0.0, 1.0),
                ),
                (false, false) => (
                    LinearCase::Generic,
                    v_first.scale(1.0 / v_first.x),
                    v_second.scale(1.0 / v_second.x),
                ),
                (true, true) => {
                    return Err(assumption(
                        "the eigenvectors are linearly independent",
                        "both eigenvectors are vertical".to_string(),
                    ))
                }
            };
            let evc = if case == LinearCase::Generic {
                let (alpha, beta) = (v.y, w.y);
                if alpha > 0.0 && beta == 0.0 {
                    EvcLabel::A
                } else if 0.0 < alpha && alpha < beta {
                    EvcLabel::B
                } else if 0.0 < beta && beta < alpha {
                    EvcLabel::C
                } else {
                    EvcLabel::Unlabeled
                }
            } else {
                EvcLabel::Unlabeled
            };
            Ok(LinearAnalysis {
                matrix: a,
                lambda_slow: first,
                lambda_fast: second,
                v,
                w: Some(w),
                v_gen: None,
                case,
                evc,
                boundary_flags: flags,
            })
        }
        Eigen2::RealRepeatedDiagonal { lambda } => {
            if lambda >= 0.0 {
                return Err(assumption(
                    "the matrix has real negative eigenvalues",
                    format!("the repeated eigenvalue is {lambda}"),
                ));
            }
            Ok(LinearAnalysis {
                matrix: a,
                lambda_slow: lambda,
                lambda_fast: lambda,
                v: Vec2::new(1.0, 0.0),
                w: Some(Vec2::new(0.0, 1.0)),
                v_gen: None,
                case: LinearCase::RepeatedDiagonal,
                evc: EvcLabel::Unlabeled,
                boundary_flags: Vec::new(),
            })
        }
        Eigen2::RealRepeatedDefective { lambda, v, .. } => {
            if lambda >= 0.0 {
                return Err(assumption(
                    "the matrix has real negative eigenvalues",
                    format!("the repeated eigenvalue is {lambda}"),
                ));
            }
            // The generalized eigenvector is free up to multiples of v.
            // When v1 != 0 that freedom pins its first component to
            // zero, which is the normalization the verdict formula
            // wants; when v1 = 0 the offset necessarily tilts.
            let (v, v_gen) = if v.x.abs() > NORMALIZE_EPS * v.norm() {
                let v = v.scale(1.0 / v.x);
                // (A - lambda I) (0, s) = s (b, d - lambda) must equal
                // v = (1, alpha); the top row gives s directly.
                let s = 1.0 / a.b;
                (v, Vec2::new(0.0, s))
            } else {
                let v = Vec2::new(0.0, 1.0);
                // (A - lambda I) has a vertical kernel, so b = 0 and
                // the bottom row gives c * vg.x = 1.
                (v, Vec2::new(1.0 / a.c, 0.0))
            };
            let evc = if v.x == 1.0 && v.y > 0.0 && v_gen.y > 0.0 {
                EvcLabel::D
            } else {
                EvcLabel::Unlabeled
            };
            Ok(LinearAnalysis {
                matrix: a,
                lambda_slow: lambda,
                lambda_fast: lambda,
                v,
                w: None,
                v_gen: Some(v_gen),
                case: LinearCase::RepeatedDefective,
                evc,
                boundary_flags: Vec::new(),
            })
        }
    }
}

/// Coordinates of `p` in the analysis basis, solved exactly from the
/// 2x2 basis system.
pub fn decompose_point(an: &LinearAnalysis, p: Vec2) -> Coefficients {
    let c = an
        .basis()
        .solve(p)
        .expect("eigenbasis is independent by construction");
    Coefficients { c1: c.x, c2: c.y }
}

/// True when the closed-form forward orbit of `p` stays nonnegative:
/// both components are screened on a log-spaced grid out to
/// `50 / |lambda_slow|` and the sign of each component's dominant
/// long-time term is checked.
pub fn nonnegative_forward(an: &LinearAnalysis, p: Vec2) -> bool {
    if p.x < 0.0 || p.y < 0.0 {
        return false;
    }
    let co = decompose_point(an, p);
    let slack = -NONNEG_REL_SLACK * (1.0 + p.norm() + co.c1.abs() + co.c2.abs());

    // Dominant-term signs as t -> infinity.
    let dominant = |j: usize| -> f64 {
        let pick = |v: Vec2| if j == 0 { v.x } else { v.y };
        match an.case {
            LinearCase::RepeatedDefective => {
                let lead = co.c2 * pick(an.v);
                if lead != 0.0 {
                    lead
                } else {
                    co.c1 * pick(an.v) + co.c2 * pick(an.v_gen.unwrap())
                }
            }
            _ => {
                let lead = co.c1 * pick(an.v);
                if lead != 0.0 {
                    lead
                } else {
                    co.c2 * pick(an.w.unwrap())
                }
            }
        }
    };
    if dominant(0) < slack || dominant(1) < slack {
        return false;
    }

    let t_max = NONNEG_WINDOW / an.lambda_slow.abs();
    for k in 0..=NONNEG_GRID {
        let t = if k == 0 {
            0.0
        } else {
            // Log spacing from 1e-6 * t_max up to t_max.
            t_max * 10f64.powf(-6.0 * (1.0 - (k - 1) as f64 / (NONNEG_GRID - 1) as f64))
        };
        let s = an.state(co, t);
        if s.x < slack || s.y < slack {
            return false;
        }
    }
    true
}

/// Verdict outcome for a linear pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearOutcome {
    /// The perturbed first component never drops below the reference.
    No,
    /// It drops below for every time past the onset.
    YesAfter(f64),
    /// The two starts coincide, so the gap is identically zero.
    DegenerateTie,
}

impl LinearOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            LinearOutcome::No => "no",
            LinearOutcome::YesAfter(_) => "yes-after",
            LinearOutcome::DegenerateTie => "degenerate-tie",
        }
    }
}

/// Closed-form verdict with the licensing rule and depth data.
#[derive(Clone, Debug)]
pub struct LinearVerdict {
    pub outcome: LinearOutcome,
    /// Unclamped crossing time; zero when the starts share their first
    /// component and the gap opens immediately.
    pub onset_raw: Option<f64>,
    /// Largest possible dip depth (defective ramp case only).
    pub max_depth: Option<f64>,
    /// Time at which the depth envelope peaks.
    pub depth_time: Option<f64>,
    /// Mechanism that licenses the verdict:
    /// - `single-mode-ordering`: the gap is one exponential whose sign
    ///   is fixed by the start ordering.
    /// - `proportional-decay`: both trajectories are scalar multiples
    ///   of the same decay.
    /// - `two-mode-crossing`: two exponentials, crossing decided by the
    ///   coefficient inequalities.
    /// - `ramp-crossing`: exponential times a linear ramp.
    pub rule: &'static str,
    pub reference: Coefficients,
    pub perturbed: Coefficients,
}

impl LinearVerdict {
    pub fn to_json(&self) -> serde_json::Value {
        let t = match self.outcome {
            LinearOutcome::YesAfter(t) => Some(t),
            _ => None,
        };
        serde_json::json!({
            "outcome": self.outcome.label(),
            "onset": t,
            "onset_raw": self.onset_raw,
            "max_depth": self.max_depth,
            "depth_time": self.depth_time,
            "rule": self.rule,
            "reference_coefficients": {"c1": self.reference.c1, "c2": self.reference.c2},
            "perturbed_coefficients": {"c1": self.perturbed.c1, "c2": self.perturbed.c2},
        })
    }
}

/// Decide tolerance for the pair `(r0, p0)` from the closed forms.
pub fn verdict_linear(
    an: &LinearAnalysis,
    r0: Vec2,
    p0: Vec2,
) -> Result<LinearVerdict, ToleranceError> {
    check_quadrant("reference", r0)?;
    check_quadrant("perturbed", p0)?;
    if p0.x < r0.x {
        return Err(assumption(
            "the perturbed start does not precede the reference (x_p >= x_r)",
            format!("x_p = {} < x_r = {}", p0.x, r0.x),
        ));
    }
    for (which, p) in [("reference", r0), ("perturbed", p0)] {
        if !nonnegative_forward(an, p) {
            return Err(assumption(
                "both closed-form trajectories stay nonnegative",
                format!("the {which} orbit from {p} leaves the first quadrant"),
            ));
        }
    }
    let c = decompose_point(an, r0);
    let d = decompose_point(an, p0);
    let mut verdict = LinearVerdict {
        outcome: LinearOutcome::No,
        onset_raw: None,
        max_depth: None,
        depth_time: None,
        rule: "",
        reference: c,
        perturbed: d,
    };
    if c == d {
        verdict.outcome = LinearOutcome::DegenerateTie;
        verdict.rule = match an.case {
            LinearCase::RepeatedDiagonal => "proportional-decay",
            LinearCase::RepeatedDefective => "ramp-crossing",
            LinearCase::Generic => "two-mode-crossing",
            _ => "single-mode-ordering",
        };
        return Ok(verdict);
    }
    match an.case {
        LinearCase::WeakVertical | LinearCase::StrongVertical => {
            verdict.rule = "single-mode-ordering";
        }
        LinearCase::RepeatedDiagonal => {
            verdict.rule = "proportional-decay";
        }
        LinearCase::Generic => {
            verdict.rule = "two-mode-crossing";
            if c.c1 > d.c1 && c.c2 < d.c2 {
                let raw = ((d.c2 - c.c2) / (c.c1 - d.c1)).ln()
                    / (an.lambda_slow - an.lambda_fast);
                verdict.onset_raw = Some(raw);
                verdict.outcome = LinearOutcome::YesAfter(raw.max(0.0));
            }
        }
        LinearCase::RepeatedDefective => {
            if an.v.x == 0.0 {
                // First components ride the generalized offset alone,
                // so the gap is a single ordered exponential.
                verdict.rule = "single-mode-ordering";
            } else {
                verdict.rule = "ramp-crossing";
                if c.c2 > d.c2 {
                    let raw = (d.c1 - c.c1) / (c.c2 - d.c2);
                    verdict.onset_raw = Some(raw);
                    verdict.outcome = LinearOutcome::YesAfter(raw.max(0.0));
                    verdict.max_depth =
                        Some((d.c2 - c.c2) / (an.lambda_slow * std::f64::consts::E));
                    verdict.depth_time = Some(-1.0 / an.lambda_slow);
                }
            }
        }
    }
    Ok(verdict)
}

/// Named tolerance region for a reference start under one of the
/// labeled eigenvector configurations.
///
/// Membership is the pair of coefficient half-planes through the
/// reference start, the truncation `x >= x_r`, the first quadrant, and
/// the nonnegative-forward-orbit screen.
#[derive(Clone, Debug)]
pub struct ToleranceRegion {
    analysis: LinearAnalysis,
    pub r0: Vec2,
    pub reference: Coefficients,
    /// Position label of the reference start (`"2a"`, `"3b"`, ...).
    pub start_region: String,
    /// Name of the winning subregion, or `None` when no admissible
    /// point satisfies the inequalities.
    pub label: Option<String>,
}

impl ToleranceRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x >= self.r0.x && p.is_finite()) {
            return false;
        }
        let d = decompose_point(&self.analysis, p);
        let inequalities = if self.analysis.case == LinearCase::RepeatedDefective {
            d.c1 >= self.reference.c1 && d.c2 < self.reference.c2
        } else {
            d.c1 < self.reference.c1 && d.c2 > self.reference.c2
        };
        inequalities && nonnegative_forward(&self.analysis, p)
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_none()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let defective = self.analysis.case == LinearCase::RepeatedDefective;
        let second = self.analysis.second_direction();
        serde_json::json!({
            "configuration": self.analysis.evc.label(),
            "start_region": self.start_region,
            "label": self.label,
            "empty": self.is_empty(),
            "reference": [self.r0.x, self.r0.y],
            "reference_coefficients": {"c1": self.reference.c1, "c2": self.reference.c2},
            "c1_line": {"through": [self.r0.x, self.r0.y], "direction": [second.x, second.y]},
            "c2_line": {"through": [self.r0.x, self.r0.y],
                        "direction": [self.analysis.v.x, self.analysis.v.y]},
            "constraints": if defective {
                vec!["d1 >= c1", "d2 < c2", "x >= x_r", "nonnegative forward orbit"]
            } else {
                vec!["d1 < c1", "d2 > c2", "x >= x_r", "nonnegative forward orbit"]
            },
        })
    }
}

/// Resolve the tolerance region for `r0` under the labeled
/// configurations. Errors when the configuration is unlabeled or the
/// start itself cannot have a nonnegative forward orbit.
pub fn tolerance_region(
    an: &LinearAnalysis,
    r0: Vec2,
) -> Result<ToleranceRegion, ToleranceError> {
    if an.evc == EvcLabel::Unlabeled {
        return Err(assumption(
            "the eigenvector configuration admits a region analysis",
            format!("configuration of case {} is unlabeled", an.case.label()),
        ));
    }
    check_quadrant("reference", r0)?;
    if !nonnegative_forward(an, r0) {
        return Err(assumption(
            "the reference orbit stays nonnegative",
            format!("the forward orbit from {r0} leaves the first quadrant"),
        ));
    }
    let alpha = an.v.y;
    let above_v = r0.y > alpha * r0.x;
    let (start_region, label) = match an.evc {
        EvcLabel::A => {
            if r0.y == 0.0 {
                ("1a", None)
            } else if !above_v && r0.y != alpha * r0.x {
                ("2a", Some("IV_2a"))
            } else {
                ("3a", Some("IV_3a"))
            }
        }
        EvcLabel::B => {
            let beta = an.w.unwrap().y;
            if r0.y > beta * r0.x {
                return Err(assumption(
                    "the reference start lies in a tabulated region",
                    format!("{r0} sits above the strong eigenvector"),
                ));
            }
            if r0.y == 0.0 {
                ("1b", Some("I_1b"))
            } else if !above_v && r0.y != alpha * r0.x {
                ("2b", Some("I_2b"))
            } else {
                ("3b", Some("II_3b"))
            }
        }
        EvcLabel::C => {
            let beta = an.w.unwrap().y;
            if r0.y < beta * r0.x {
                return Err(assumption(
                    "the reference start lies in a tabulated region",
                    format!("{r0} sits below the strong eigenvector"),
                ));
            }
            if !above_v && r0.y != alpha * r0.x {
                ("1c", Some("IV_1c"))
            } else if r0.y == alpha * r0.x {
                ("1c", Some("IV_1c"))
            } else {
                ("2c", Some("IV_2c"))
            }
        }
        EvcLabel::D => {
            if !above_v {
                return Err(assumption(
                    "the reference start lies in a tabulated region",
                    format!("{r0} is not above the eigenvector"),
                ));
            }
            ("1d", Some("IV_1d"))
        }
        EvcLabel::Unlabeled => unreachable!(),
    };
    Ok(ToleranceRegion {
        analysis: an.clone(),
        r0,
        reference: decompose_point(an, r0),
        start_region: start_region.to_string(),
        label: label.map(str::to_string),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::PlanarSystem;
    use crate::tolerance::{detect_tolerance, Outcome, ToleranceOptions};
    use rand::Rng;
    use rand::SeedableRng;

    fn tri() -> LinearAnalysis {
        analyze(Mat2::new(-2.0, 1.0, 0.0, -1.0)).unwrap()
    }

    fn defective() -> LinearAnalysis {
        analyze(Mat2::new(-2.0, 1.0, -1.0, 0.0)).unwrap()
    }

    /// Similarity transform with prescribed eigenpairs.
    fn from_eigen(l1: f64, l2: f64, v: Vec2, w: Vec2) -> Mat2 {
        let det = v.x * w.y - v.y * w.x;
        let s_inv = Mat2::new(w.y / det, -w.x / det, -v.y / det, v.x / det);
        let sd = Mat2::new(l1 * v.x, l2 * w.x, l1 * v.y, l2 * w.y);
        Mat2::new(
            sd.a * s_inv.a + sd.b * s_inv.c,
            sd.a * s_inv.b + sd.b * s_inv.d,
            sd.c * s_inv.a + sd.d * s_inv.c,
            sd.c * s_inv.b + sd.d * s_inv.d,
        )
    }

    fn config_b() -> LinearAnalysis {
        analyze(from_eigen(-1.0, -3.0, Vec2::new(1.0, 0.5), Vec2::new(1.0, 2.0))).unwrap()
    }

    fn config_c() -> LinearAnalysis {
        analyze(from_eigen(-1.0, -3.0, Vec2::new(1.0, 2.0), Vec2::new(1.0, 0.5))).unwrap()
    }

    fn residual(a: Mat2, lambda: f64, v: Vec2) -> f64 {
        let av = a.apply(v);
        Vec2::new(av.x - lambda * v.x, av.y - lambda * v.y).norm()
    }

    #[test]
    fn triangular_archetype_analysis() {
        let an = tri();
        assert_eq!(an.case, LinearCase::Generic);
        assert_eq!(an.evc, EvcLabel::A);
        assert_eq!(an.lambda_slow, -1.0);
        assert_eq!(an.lambda_fast, -2.0);
        assert_eq!(an.v, Vec2::new(1.0, 1.0));
        assert_eq!(an.w, Some(Vec2::new(1.0, 0.0)));
        // Characteristic polynomial and eigenvector residuals.
        let a = an.matrix;
        for l in [an.lambda_slow, an.lambda_fast] {
            assert!((l * l - a.trace() * l + a.det()).abs() <= 1e-10);
        }
        assert!(residual(a, an.lambda_slow, an.v) <= 1e-10);
        assert!(residual(a, an.lambda_fast, an.w.unwrap()) <= 1e-10);
    }

    #[test]
    fn scalar_matrix_is_proportional_case() {
        let an = analyze(Mat2::new(-1.0, 0.0, 0.0, -1.0)).unwrap();
        assert_eq!(an.case, LinearCase::RepeatedDiagonal);
        assert_eq!(an.evc, EvcLabel::Unlabeled);
    }

    #[test]
    fn defective_archetype_analysis() {
        let an = defective();
        assert_eq!(an.case, LinearCase::RepeatedDefective);
        assert_eq!(an.evc, EvcLabel::D);
        assert_eq!(an.lambda_slow, -1.0);
        assert_eq!(an.v, Vec2::new(1.0, 1.0));
        assert_eq!(an.v_gen, Some(Vec2::new(0.0, 1.0)));
        // (A - lambda I) v_gen = v, and the shifted matrix is nilpotent.
        let a = an.matrix;
        let l = an.lambda_slow;
        let shifted = Mat2::new(a.a - l, a.b, a.c, a.d - l);
        let applied = shifted.apply(an.v_gen.unwrap());
        assert!(Vec2::new(applied.x - an.v.x, applied.y - an.v.y).norm() <= 1e-10);
        let sq = Mat2::new(
            shifted.a * shifted.a + shifted.b * shifted.c,
            shifted.a * shifted.b + shifted.b * shifted.d,
            shifted.c * shifted.a + shifted.d * shifted.c,
            shifted.c * shifted.b + shifted.d * shifted.d,
        );
        assert!(sq.norm_inf() <= 1e-10);
    }

    #[test]
    fn vertical_eigenvector_patterns() {
        let an = analyze(Mat2::new(-1.0, 0.0, 0.0, -0.1)).unwrap();
        assert_eq!(an.case, LinearCase::WeakVertical);
        assert_eq!(an.v, Vec2::new(0.0, 1.0));
        assert_eq!(an.w, Some(Vec2::new(1.0, 0.0)));
        assert_eq!(an.evc, EvcLabel::Unlabeled);
        let an = analyze(Mat2::new(-0.1, 0.0, 0.0, -1.0)).unwrap();
        assert_eq!(an.case, LinearCase::StrongVertical);
        assert_eq!(an.v, Vec2::new(1.0, 0.0));
        assert_eq!(an.w, Some(Vec2::new(0.0, 1.0)));
    }

    #[test]
    fn interior_configurations_order_by_slope() {
        assert_eq!(config_b().evc, EvcLabel::B);
        assert_eq!(config_c().evc, EvcLabel::C);
        // A negative weak slope breaks every archetype.
        let an = analyze(from_eigen(-1.0, -3.0, Vec2::new(1.0, -0.5), Vec2::new(1.0, 2.0))).unwrap();
        assert_eq!(an.case, LinearCase::Generic);
        assert_eq!(an.evc, EvcLabel::Unlabeled);
    }

    #[test]
    fn rejects_complex_and_nonnegative_eigenvalues() {
        assert!(analyze(Mat2::new(0.0, -1.0, 1.0, 0.0)).is_err());
        assert!(analyze(Mat2::new(-1.0, 0.0, 0.0, 1.0)).is_err());
        assert!(analyze(Mat2::new(0.0, 0.0, 0.0, -1.0)).is_err());
        assert!(analyze(Mat2::new(1e-3, 0.0, 0.0, 2e-3)).is_err());
    }

    #[test]
    fn near_vertical_first_component_is_flagged() {
        let an = analyze(Mat2::new(-1.0, 1e-10, 0.0, -2.0)).unwrap();
        assert_eq!(an.case, LinearCase::Generic);
        assert!(
            an.boundary_flags.iter().any(|f| f.contains("close to zero")),
            "{:?}",
            an.boundary_flags
        );
        let an = analyze(Mat2::new(-1.0, 0.0, 0.0, -2.0)).unwrap();
        assert!(an.boundary_flags.is_empty());
    }

    #[test]
    fn near_tie_gap_is_flagged() {
        let an = analyze(Mat2::new(-1.0, 0.0, 0.0, -1.0 - 1e-7)).unwrap();
        assert_eq!(an.case, LinearCase::StrongVertical);
        assert!(
            an.boundary_flags.iter().any(|f| f.contains("repeated")),
            "{:?}",
            an.boundary_flags
        );
    }

    #[test]
    fn decomposition_solves_the_basis_system() {
        let an = tri();
        assert_eq!(decompose_point(&an, Vec2::new(1.0, 1.0)), Coefficients { c1: 1.0, c2: 0.0 });
        assert_eq!(decompose_point(&an, an.v), Coefficients { c1: 1.0, c2: 0.0 });
        assert_eq!(
            decompose_point(&an, Vec2::new(2.0, 0.5)),
            Coefficients { c1: 0.5, c2: 1.5 }
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for an in [tri(), config_b(), config_c(), defective()] {
            for _ in 0..50 {
                let p = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                let co = decompose_point(&an, p);
                let second = an.second_direction();
                let back = Vec2::new(
                    co.c1 * an.v.x + co.c2 * second.x,
                    co.c1 * an.v.y + co.c2 * second.y,
                );
                assert!(back.dist(p) <= 1e-12 * (1.0 + p.norm()));
            }
        }
    }

    #[test]
    fn crossing_example_has_logarithmic_onset() {
        let an = tri();
        let v = verdict_linear(&an, Vec2::new(1.0, 1.0), Vec2::new(2.0, 0.5)).unwrap();
        let t = match v.outcome {
            LinearOutcome::YesAfter(t) => t,
            other => panic!("expected a crossing, got {other:?}"),
        };
        assert!((t - 3f64.ln()).abs() <= 1e-12);
        assert_eq!(v.rule, "two-mode-crossing");
        // Sampled sign pattern of the closed forms around the onset:
        // phi1 = e^{-t}, psi1 = 0.5 e^{-t} + 1.5 e^{-2t}.
        let gap = |s: f64| (-s).exp() - (0.5 * (-s).exp() + 1.5 * (-2.0 * s).exp());
        for k in 1..300 {
            let before = t * k as f64 / 300.0;
            assert!(gap(before) <= 1e-15, "gap {} at t={}", gap(before), before);
            let after = t + 10.0 * k as f64 / 300.0;
            assert!(gap(after) > 0.0, "gap {} at t={}", gap(after), after);
        }
    }

    #[test]
    fn diagonal_fast_x_never_tolerates() {
        let an = analyze(Mat2::new(-1.0, 0.0, 0.0, -2.0)).unwrap();
        assert_eq!(an.case, LinearCase::StrongVertical);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r0 = Vec2::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let p0 = Vec2::new(r0.x + rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let v = verdict_linear(&an, r0, p0).unwrap();
            assert!(
                matches!(v.outcome, LinearOutcome::No | LinearOutcome::DegenerateTie),
                "{r0} {p0}"
            );
            assert_eq!(v.rule, "single-mode-ordering");
        }
    }

    #[test]
    fn defective_ramp_crossing_and_depth() {
        let an = defective();
        let v = verdict_linear(&an, Vec2::new(1.0, 2.0), Vec2::new(1.5, 1.6)).unwrap();
        assert!((v.reference.c1 - 1.0).abs() <= 1e-12 && (v.reference.c2 - 1.0).abs() <= 1e-12);
        assert!((v.perturbed.c1 - 1.5).abs() <= 1e-12 && (v.perturbed.c2 - 0.1).abs() <= 1e-12);
        match v.outcome {
            LinearOutcome::YesAfter(t) => assert!((t - 5.0 / 9.0).abs() <= 1e-12),
            other => panic!("expected a crossing, got {other:?}"),
        }
        assert_eq!(v.rule, "ramp-crossing");
        let depth = v.max_depth.unwrap();
        assert!((depth - 0.9 / std::f64::consts::E).abs() <= 1e-12);
        assert!((v.depth_time.unwrap() - 1.0).abs() <= 1e-12);
        // The envelope (c2 - d2) t e^{lambda t} peaks at the reported
        // depth; sample densely and polish with golden section.
        let env = |t: f64| 0.9 * t * (-t).exp();
        let mut best_t = 0.0;
        let mut best = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let t = 5.0 * k as f64 / 1000.0;
            if env(t) > best {
                best = env(t);
                best_t = t;
            }
        }
        let (mut lo, mut hi) = (best_t - 0.01, best_t + 0.01);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if env(m1) < env(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let t_star = 0.5 * (lo + hi);
        assert!((env(t_star) - depth).abs() <= 1e-9);
        assert!((t_star - v.depth_time.unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn tilted_defective_offset_never_tolerates() {
        // Vertical eigenvector forces a tilted generalized offset; the
        // first components then share a single mode.
        let an = analyze(Mat2::new(-1.0, 0.0, 2.0, -1.0)).unwrap();
        assert_eq!(an.case, LinearCase::RepeatedDefective);
        assert_eq!(an.v, Vec2::new(0.0, 1.0));
        assert_eq!(an.v_gen, Some(Vec2::new(0.5, 0.0)));
        assert_eq!(an.evc, EvcLabel::Unlabeled);
        let v = verdict_linear(&an, Vec2::new(0.5, 1.0), Vec2::new(1.0, 0.5)).unwrap();
        assert_eq!(v.rule, "single-mode-ordering");
        assert!(matches!(v.outcome, LinearOutcome::No));
        assert!(tolerance_region(&an, Vec2::new(0.5, 1.0)).is_err());
    }

    #[test]
    fn shared_first_component_crosses_immediately() {
        let an = tri();
        let v = verdict_linear(&an, Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.5)).unwrap();
        match v.outcome {
            LinearOutcome::YesAfter(t) => assert_eq!(t, 0.0),
            other => panic!("expected an immediate crossing, got {other:?}"),
        }
        assert_eq!(v.onset_raw, Some(0.0));
    }

    #[test]
    fn identical_starts_tie() {
        let an = tri();
        let v = verdict_linear(&an, Vec2::new(1.0, 0.5), Vec2::new(1.0, 0.5)).unwrap();
        assert!(matches!(v.outcome, LinearOutcome::DegenerateTie));
    }

    #[test]
    fn misordered_starts_are_rejected() {
        let an = tri();
        assert!(verdict_linear(&an, Vec2::new(2.0, 0.5), Vec2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn escaping_orbit_is_rejected_by_sampling() {
        // Above the strong eigenvector in configuration B the slow
        // coefficient is negative and the first component eventually
        // crosses zero.
        let an = config_b();
        assert!(!nonnegative_forward(&an, Vec2::new(1.0, 2.5)));
        let err = verdict_linear(&an, Vec2::new(0.8, 0.3), Vec2::new(1.0, 2.5)).unwrap_err();
        assert!(err.to_string().contains("nonnegative"), "{err}");
    }

    #[test]
    fn axis_start_region_is_empty() {
        let an = tri();
        let region = tolerance_region(&an, Vec2::new(3.0, 0.0)).unwrap();
        assert_eq!(region.start_region, "1a");
        assert!(region.is_empty());
        for i in 0..30 {
            for j in 0..30 {
                let p = Vec2::new(0.3 * i as f64, 0.3 * j as f64);
                assert!(!region.contains(p));
                if p.x >= 3.0 {
                    let v = verdict_linear(&an, Vec2::new(3.0, 0.0), p).unwrap();
                    assert!(!matches!(v.outcome, LinearOutcome::YesAfter(_)));
                }
            }
        }
    }

    #[test]
    fn below_weak_region_is_labeled_and_coherent() {
        let an = tri();
        let region = tolerance_region(&an, Vec2::new(2.0, 0.5)).unwrap();
        assert_eq!(region.start_region, "2a");
        assert_eq!(region.label.as_deref(), Some("IV_2a"));
        assert!(region.contains(Vec2::new(2.5, 0.3)));
        assert!(!region.contains(Vec2::new(2.5, 0.7)));
        assert!(!region.contains(Vec2::new(1.5, 0.3)));
        let y = verdict_linear(&an, Vec2::new(2.0, 0.5), Vec2::new(2.5, 0.3)).unwrap();
        assert!(matches!(y.outcome, LinearOutcome::YesAfter(_)));
        let n = verdict_linear(&an, Vec2::new(2.0, 0.5), Vec2::new(2.5, 0.7)).unwrap();
        assert!(matches!(n.outcome, LinearOutcome::No));
    }

    #[test]
    fn membership_matches_verdict_on_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cases = [
            (tri(), Vec2::new(2.0, 0.5)),
            (tri(), Vec2::new(1.0, 3.0)),
            (config_b(), Vec2::new(2.0, 0.5)),
            (config_b(), Vec2::new(1.0, 1.0)),
            (config_c(), Vec2::new(1.0, 1.0)),
            (config_c(), Vec2::new(1.0, 2.5)),
            (defective(), Vec2::new(1.0, 2.0)),
        ];
        for (an, r0) in cases {
            let region = tolerance_region(&an, r0).unwrap();
            let mut inside = 0;
            let mut outside = 0;
            let mut draws = 0;
            while (inside < 100 || outside < 100) && draws < 40_000 {
                draws += 1;
                let p = Vec2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
                if p.x < r0.x || !nonnegative_forward(&an, p) || p == r0 {
                    continue;
                }
                let member = region.contains(p);
                let v = verdict_linear(&an, r0, p).unwrap();
                if member {
                    inside += 1;
                    assert!(
                        matches!(v.outcome, LinearOutcome::YesAfter(_)),
                        "member {p} of {:?} got {:?}",
                        region.label,
                        v.outcome
                    );
                } else {
                    outside += 1;
                    assert!(
                        !matches!(v.outcome, LinearOutcome::YesAfter(_)),
                        "non-member {p} of {:?} got {:?}",
                        region.label,
                        v.outcome
                    );
                }
            }
            assert!(inside >= 100, "only {inside} members sampled for {:?}", region.label);
            assert!(outside >= 100);
        }
    }

    #[test]
    fn region_labels_follow_the_configuration_table() {
        let b = config_b();
        assert_eq!(
            tolerance_region(&b, Vec2::new(2.0, 0.0)).unwrap().label.as_deref(),
            Some("I_1b")
        );
        assert_eq!(
            tolerance_region(&b, Vec2::new(2.0, 0.5)).unwrap().label.as_deref(),
            Some("I_2b")
        );
        assert_eq!(
            tolerance_region(&b, Vec2::new(1.0, 1.0)).unwrap().label.as_deref(),
            Some("II_3b")
        );
        assert!(tolerance_region(&b, Vec2::new(1.0, 2.5)).is_err());
        let c = config_c();
        assert_eq!(
            tolerance_region(&c, Vec2::new(1.0, 1.0)).unwrap().label.as_deref(),
            Some("IV_1c")
        );
        assert_eq!(
            tolerance_region(&c, Vec2::new(1.0, 2.5)).unwrap().label.as_deref(),
            Some("IV_2c")
        );
        assert!(tolerance_region(&c, Vec2::new(2.0, 0.5)).is_err());
        let d = defective();
        assert_eq!(
            tolerance_region(&d, Vec2::new(1.0, 2.0)).unwrap().label.as_deref(),
            Some("IV_1d")
        );
        assert!(tolerance_region(&d, Vec2::new(2.0, 0.5)).is_err());
        let a = tri();
        assert_eq!(
            tolerance_region(&a, Vec2::new(1.0, 3.0)).unwrap().label.as_deref(),
            Some("IV_3a")
        );
    }

    #[test]
    fn region_json_describes_the_lines() {
        let an = tri();
        let region = tolerance_region(&an, Vec2::new(2.0, 0.5)).unwrap();
        let j = region.to_json();
        assert_eq!(j["label"], "IV_2a");
        assert_eq!(j["c1_line"]["direction"], serde_json::json!([1.0, 0.0]));
        assert_eq!(j["c2_line"]["direction"], serde_json::json!([1.0, 1.0]));
        assert!(j["constraints"].as_array().unwrap().len() == 4);
    }

    #[test]
    fn analytic_verdicts_match_numeric_detection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let opts = ToleranceOptions::default();
        let mut compared = 0;
        let mut crossings = 0;
        for _ in 0..40 {
            let l1 = -rng.random_range(0.2..1.5);
            let l2 = l1 - rng.random_range(0.3..2.0);
            let alpha = rng.random_range(0.2..2.0);
            let beta = match rng.random_range(0..3) {
                0 => 0.0,
                1 => alpha + rng.random_range(0.2..2.0),
                _ => rng.random_range(0.05..alpha * 0.9),
            };
            let a = from_eigen(l1, l2, Vec2::new(1.0, alpha), Vec2::new(1.0, beta));
            let an = analyze(a).unwrap();
            assert_eq!(an.case, LinearCase::Generic);
            let sys = PlanarSystem::from_matrix("random-node", a);

            // Reference start, then a perturbed start drawn either from
            // the winning region or uniformly.
            let mut pair = None;
            for _ in 0..200 {
                let r0 = Vec2::new(rng.random_range(0.3..2.0), rng.random_range(0.0..2.0));
                if !nonnegative_forward(&an, r0) {
                    continue;
                }
                let c = decompose_point(&an, r0);
                let p0 = if rng.random_bool(0.5) && c.c1 > 0.1 {
                    let d1 = rng.random_range(0.0..c.c1 * 0.8);
                    let d2 = c.c2 + rng.random_range(0.3..2.0);
                    let second = an.second_direction();
                    Vec2::new(
                        d1 * an.v.x + d2 * second.x,
                        d1 * an.v.y + d2 * second.y,
                    )
                } else {
                    Vec2::new(r0.x + rng.random_range(0.0..2.0), rng.random_range(0.0..3.0))
                };
                if p0.x < r0.x
                    || p0.y < 0.0
                    || p0.x < 0.0
                    || !nonnegative_forward(&an, p0)
                    || r0.dist(p0) < 1e-3
                {
                    continue;
                }
                let v = verdict_linear(&an, r0, p0).unwrap();
                // Keep the comparison away from boundary cases the
                // numeric engine reports as inconclusive.
                match v.outcome {
                    LinearOutcome::YesAfter(t) => {
                        let depth = (0..400)
                            .map(|k| {
                                let s = t + 30.0 / l1.abs() * k as f64 / 400.0;
                                an.first_component(c, s)
                                    - an.first_component(decompose_point(&an, p0), s)
                            })
                            .fold(f64::NEG_INFINITY, f64::max);
                        if t < 0.01 || t > 40.0 || depth < 1e-4 {
                            continue;
                        }
                    }
                    LinearOutcome::DegenerateTie => continue,
                    LinearOutcome::No => {}
                }
                pair = Some((r0, p0, v));
                break;
            }
            let Some((r0, p0, analytic)) = pair else { continue };
            let numeric = detect_tolerance(&sys, r0, p0, &opts).unwrap();
            match (&analytic.outcome, numeric.outcome) {
                (LinearOutcome::YesAfter(t), Outcome::Tolerance) => {
                    let t1 = numeric.t1.expect("crossing time reported");
                    assert!(
                        (t1 - t).abs() <= 1e-6 * t.max(1e-3),
                        "onset {t1} vs analytic {t} for {r0} {p0}"
                    );
                    compared += 1;
                    crossings += 1;
                }
                (LinearOutcome::No, Outcome::NoTolerance) => compared += 1,
                (_, Outcome::Inconclusive) => {}
                (a, n) => panic!("analytic {a:?} vs numeric {n:?} for {r0} -> {p0}"),
            }
        }
        assert!(compared >= 20, "only {compared} conclusive comparisons");
        assert!(crossings >= 5, "only {crossings} crossing comparisons");
    }

    #[test]
    fn verdict_json_round_trip() {
        let an = defective();
        let v = verdict_linear(&an, Vec2::new(1.0, 2.0), Vec2::new(1.5, 1.6)).unwrap();
        let j = v.to_json();
        assert_eq!(j["outcome"], "yes-after");
        assert_eq!(j["rule"], "ramp-crossing");
        assert!((j["onset"].as_f64().unwrap() - 5.0 / 9.0).abs() < 1e-12);
    }
}
