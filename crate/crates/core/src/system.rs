//! Planar autonomous systems `x' = f(x, y)`, `y' = g(x, y)`.
//!
//! A system is built either from two symbolic expressions or from a 2x2
//! matrix (a linear field). Partial derivatives of expression fields are
//! differentiated symbolically once at construction and cached, so
//! Jacobians are exact rather than finite-differenced.

use std::fmt;

use thiserror::Error;

use crate::expr::{EvalError, Expr, ExprError};
use crate::linalg::{Eigen2, Mat2, Vec2};

/// Convergence threshold for Newton polishing of fixed points.
pub const NEWTON_RESIDUAL: f64 = 1e-12;
/// Maximum Newton iterations per seed.
pub const NEWTON_MAX_ITERS: usize = 50;
/// Two roots closer than this are considered the same fixed point.
pub const ROOT_DEDUP_DIST: f64 = 1e-6;
/// Eigenvalues with absolute value below this are treated as degenerate,
/// as are real pairs closer together than this.
pub const CLASSIFY_EPS: f64 = 1e-9;

/// Identifier for a built-in example system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinId {
    /// Excitable system with a global inhibition term:
    /// `f = x^2/(1+y) - x`, `g = x^2 - y/2`.
    Ex2,
    /// Factored field whose inhibition region has a curved boundary:
    /// `f = (0.5x - y)(0.1x/(1+y) - 1)`, `g = 0.4x - y`.
    Ex1,
    /// Field with three first-quadrant equilibria (node, saddle, spiral):
    /// `f = x((1+y^2)/(1-y+y^2) - 1.9)`, `g = x - y`.
    Ex3,
}

impl BuiltinId {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinId::Ex2 => "ex2",
            BuiltinId::Ex1 => "ex1",
            BuiltinId::Ex3 => "ex3",
        }
    }
}

/// All the names `PlanarSystem::builtin` accepts.
pub const BUILTIN_NAMES: &[&str] = &["ex1", "ex2", "ex3"];

#[derive(Clone, Debug)]
enum Field {
    Symbolic {
        f: Expr,
        g: Expr,
        f_x: Expr,
        f_y: Expr,
        g_x: Expr,
        g_y: Expr,
    },
    Linear(Mat2),
}

/// A planar autonomous vector field.
#[derive(Clone, Debug)]
pub struct PlanarSystem {
    name: String,
    field: Field,
    builtin: Option<BuiltinId>,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("in `{which}`: {source}")]
    BadExpression {
        which: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("unknown builtin `{name}`; available: {available}")]
    UnknownBuiltin { name: String, available: String },
    #[error("definition line {line}: {message}")]
    Definition { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Stability classification of a fixed point from its Jacobian spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedPointClass {
    StableNode,
    UnstableNode,
    Saddle,
    StableSpiral,
    UnstableSpiral,
    /// Center, repeated or near-zero eigenvalues: not classified further.
    Degenerate,
}

impl fmt::Display for FixedPointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FixedPointClass::StableNode => "stable node",
            FixedPointClass::UnstableNode => "unstable node",
            FixedPointClass::Saddle => "saddle",
            FixedPointClass::StableSpiral => "stable spiral",
            FixedPointClass::UnstableSpiral => "unstable spiral",
            FixedPointClass::Degenerate => "degenerate",
        };
        f.write_str(s)
    }
}

/// A polished fixed point with its local linearization data.
#[derive(Clone, Debug)]
pub struct FixedPointReport {
    pub location: Vec2,
    pub jacobian: Mat2,
    pub eigen: Eigen2,
    pub class: FixedPointClass,
    /// True when the eigenvalues are real, negative, and the point is a
    /// sink suitable for the tolerance analysis.
    pub satisfies_stable_node_assumption: bool,
    /// Residual `||(f,g)||_inf` after polishing.
    pub residual: f64,
}

impl PlanarSystem {
    /// Build a system from expression sources for `f` and `g`.
    pub fn from_strs(name: &str, f_src: &str, g_src: &str) -> Result<Self, SystemError> {
        let f = Expr::parse(f_src).map_err(|source| SystemError::BadExpression {
            which: "f",
            source,
        })?;
        let g = Expr::parse(g_src).map_err(|source| SystemError::BadExpression {
            which: "g",
            source,
        })?;
        Self::from_exprs(name, f, g)
    }

    pub fn from_exprs(name: &str, f: Expr, g: Expr) -> Result<Self, SystemError> {
        let d = |e: &Expr, v: char, which: &'static str| {
            e.differentiate(v)
                .map_err(|source| SystemError::BadExpression { which, source })
        };
        let f_x = d(&f, 'x', "f")?;
        let f_y = d(&f, 'y', "f")?;
        let g_x = d(&g, 'x', "g")?;
        let g_y = d(&g, 'y', "g")?;
        Ok(PlanarSystem {
            name: name.to_string(),
            field: Field::Symbolic {
                f,
                g,
                f_x,
                f_y,
                g_x,
                g_y,
            },
            builtin: None,
        })
    }

    /// Build the linear system `(x', y')^T = A (x, y)^T`.
    pub fn from_matrix(name: &str, a: Mat2) -> Self {
        PlanarSystem {
            name: name.to_string(),
            field: Field::Linear(a),
            builtin: None,
        }
    }

    /// Look up a built-in example system by name.
    pub fn builtin(name: &str) -> Result<Self, SystemError> {
        let (id, f, g) = match name {
            "ex2" => (BuiltinId::Ex2, "x^2/(1+y) - x", "x^2 - y/2"),
            "ex1" => (
                BuiltinId::Ex1,
                "(0.5*x - y)*(0.1*x/(1+y) - 1)",
                "0.4*x - y",
            ),
            "ex3" => (
                BuiltinId::Ex3,
                "x*((1 + y^2)/(1 - y + y^2) - 1.9)",
                "x - y",
            ),
            other => {
                return Err(SystemError::UnknownBuiltin {
                    name: other.to_string(),
                    available: BUILTIN_NAMES.join(", "),
                })
            }
        };
        let mut sys = Self::from_strs(name, f, g)?;
        sys.builtin = Some(id);
        Ok(sys)
    }

    /// Parse a key=value definition. Recognized keys: `name`, `f`, `g`,
    /// `A` (comma-separated row-major matrix entries). Lines starting with
    /// `#` and blank lines are ignored. Errors cite 1-based line numbers.
    pub fn from_definition(text: &str) -> Result<Self, SystemError> {
        let mut name: Option<String> = None;
        let mut f_src: Option<String> = None;
        let mut g_src: Option<String> = None;
        let mut matrix: Option<Mat2> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SystemError::Definition {
                    line: line_no,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let dup = |k: &str| SystemError::Definition {
                line: line_no,
                message: format!("duplicate key `{k}`"),
            };
            match key {
                "name" => {
                    if name.replace(value.to_string()).is_some() {
                        return Err(dup("name"));
                    }
                }
                "f" => {
                    if f_src.replace(value.to_string()).is_some() {
                        return Err(dup("f"));
                    }
                }
                "g" => {
                    if g_src.replace(value.to_string()).is_some() {
                        return Err(dup("g"));
                    }
                }
                "A" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 4 {
                        return Err(SystemError::Definition {
                            line: line_no,
                            message: format!(
                                "matrix needs 4 comma-separated entries, got {}",
                                parts.len()
                            ),
                        });
                    }
                    let mut vals = [0.0; 4];
                    for (i, p) in parts.iter().enumerate() {
                        vals[i] = p.parse().map_err(|_| SystemError::Definition {
                            line: line_no,
                            message: format!("bad matrix entry `{p}`"),
                        })?;
                    }
                    if matrix
                        .replace(Mat2::new(vals[0], vals[1], vals[2], vals[3]))
                        .is_some()
                    {
                        return Err(dup("A"));
                    }
                }
                other => {
                    return Err(SystemError::Definition {
                        line: line_no,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        let name = name.unwrap_or_else(|| "user".to_string());
        match (f_src, g_src, matrix) {
            (Some(f), Some(g), None) => Self::from_strs(&name, &f, &g),
            (None, None, Some(a)) => Ok(Self::from_matrix(&name, a)),
            (None, Some(_), None) | (Some(_), None, None) => Err(SystemError::Invalid(
                "definition must provide both f= and g=".into(),
            )),
            (None, None, None) => Err(SystemError::Invalid(
                "definition must provide f=/g= or A=".into(),
            )),
            _ => Err(SystemError::Invalid(
                "definition cannot mix f=/g= with A=".into(),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn builtin_id(&self) -> Option<BuiltinId> {
        self.builtin
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.field, Field::Linear(_))
    }

    pub fn matrix(&self) -> Option<Mat2> {
        match self.field {
            Field::Linear(a) => Some(a),
            _ => None,
        }
    }

    /// Textual sources `(f, g)` for symbolic fields.
    pub fn sources(&self) -> Option<(String, String)> {
        match &self.field {
            Field::Symbolic { f, g, .. } => Some((f.to_string(), g.to_string())),
            Field::Linear(_) => None,
        }
    }

    /// First component of the vector field.
    pub fn f(&self, p: Vec2) -> Result<f64, SystemError> {
        match &self.field {
            Field::Symbolic { f, .. } => Ok(f.eval(p.x, p.y)?),
            Field::Linear(a) => Ok(a.a * p.x + a.b * p.y),
        }
    }

    /// Second component of the vector field.
    pub fn g(&self, p: Vec2) -> Result<f64, SystemError> {
        match &self.field {
            Field::Symbolic { g, .. } => Ok(g.eval(p.x, p.y)?),
            Field::Linear(a) => Ok(a.c * p.x + a.d * p.y),
        }
    }

    /// Both components at once.
    pub fn eval(&self, p: Vec2) -> Result<Vec2, SystemError> {
        Ok(Vec2::new(self.f(p)?, self.g(p)?))
    }

    /// Partial `df/dy`, the inhibition indicator.
    pub fn f_y(&self, p: Vec2) -> Result<f64, SystemError> {
        match &self.field {
            Field::Symbolic { f_y, .. } => Ok(f_y.eval(p.x, p.y)?),
            Field::Linear(a) => Ok(a.b),
        }
    }

    pub fn f_x(&self, p: Vec2) -> Result<f64, SystemError> {
        match &self.field {
            Field::Symbolic { f_x, .. } => Ok(f_x.eval(p.x, p.y)?),
            Field::Linear(a) => Ok(a.a),
        }
    }

    /// Exact Jacobian from the cached symbolic partials (or the matrix).
    pub fn jacobian(&self, p: Vec2) -> Result<Mat2, SystemError> {
        match &self.field {
            Field::Symbolic {
                f_x, f_y, g_x, g_y, ..
            } => Ok(Mat2::new(
                f_x.eval(p.x, p.y)?,
                f_y.eval(p.x, p.y)?,
                g_x.eval(p.x, p.y)?,
                g_y.eval(p.x, p.y)?,
            )),
            Field::Linear(a) => Ok(*a),
        }
    }

    /// The level `C = f(p)` of the speed isocline through `p`.
    pub fn isocline_value(&self, p: Vec2) -> Result<f64, SystemError> {
        self.f(p)
    }

    /// Locate fixed points inside `[x0, x1] x [y0, y1]` by damped Newton
    /// iteration from an `n x n` seed grid, deduplicated within
    /// [`ROOT_DEDUP_DIST`]. Roots that wander outside the box are dropped.
    pub fn find_fixed_points(
        &self,
        x_range: (f64, f64),
        y_range: (f64, f64),
        n: usize,
    ) -> Result<Vec<FixedPointReport>, SystemError> {
        let n = n.max(2);
        let mut roots: Vec<Vec2> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let sx = x_range.0 + (x_range.1 - x_range.0) * i as f64 / (n - 1) as f64;
                let sy = y_range.0 + (y_range.1 - y_range.0) * j as f64 / (n - 1) as f64;
                let Some(root) = self.newton(Vec2::new(sx, sy)) else {
                    continue;
                };
                let slack = 1e-9
                    * (x_range.1 - x_range.0)
                        .abs()
                        .max((y_range.1 - y_range.0).abs())
                        .max(1.0);
                if root.x < x_range.0 - slack
                    || root.x > x_range.1 + slack
                    || root.y < y_range.0 - slack
                    || root.y > y_range.1 + slack
                {
                    continue;
                }
                if !roots.iter().any(|r| r.dist(root) < ROOT_DEDUP_DIST) {
                    roots.push(root);
                }
            }
        }
        roots.sort_by(|a, b| {
            (a.x, a.y)
                .partial_cmp(&(b.x, b.y))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        roots
            .into_iter()
            .map(|location| self.fixed_point_report(location))
            .collect()
    }

    /// Classification report for a (presumed) fixed point location.
    pub fn fixed_point_report(&self, location: Vec2) -> Result<FixedPointReport, SystemError> {
        let jacobian = self.jacobian(location)?;
        let eigen = jacobian.eigen();
        let (class, stable_node) = classify(eigen);
        let residual = self.eval(location)?.norm_inf();
        Ok(FixedPointReport {
            location,
            jacobian,
            eigen,
            class,
            satisfies_stable_node_assumption: stable_node,
            residual,
        })
    }

    /// Polish a fixed-point guess by damped Newton iteration.
    pub fn refine_fixed_point(&self, guess: Vec2) -> Option<Vec2> {
        self.newton(guess)
    }

    /// Damped Newton iteration for `(f, g) = 0`; `None` when it fails to
    /// converge or the field is undefined along the way.
    fn newton(&self, seed: Vec2) -> Option<Vec2> {
        let mut p = seed;
        let mut fv = self.eval(p).ok()?;
        for _ in 0..NEWTON_MAX_ITERS {
            if fv.norm_inf() <= NEWTON_RESIDUAL {
                return Some(p);
            }
            let jac = self.jacobian(p).ok()?;
            let step = jac.solve(-fv)?;
            // Backtracking line search: halve until the residual drops.
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..8 {
                let cand = p + step.scale(scale);
                if let Ok(cand_f) = self.eval(cand) {
                    if cand_f.norm_inf() < fv.norm_inf() || fv.norm_inf() <= NEWTON_RESIDUAL {
                        accepted = Some((cand, cand_f));
                        break;
                    }
                }
                scale *= 0.5;
            }
            let (np, nf) = accepted?;
            if !np.is_finite() {
                return None;
            }
            p = np;
            fv = nf;
        }
        if fv.norm_inf() <= NEWTON_RESIDUAL {
            Some(p)
        } else {
            None
        }
    }
}

fn classify(eigen: Eigen2) -> (FixedPointClass, bool) {
    match eigen {
        Eigen2::Complex { re, .. } => {
            if re < -CLASSIFY_EPS {
                (FixedPointClass::StableSpiral, false)
            } else if re > CLASSIFY_EPS {
                (FixedPointClass::UnstableSpiral, false)
            } else {
                (FixedPointClass::Degenerate, false)
            }
        }
        Eigen2::RealDistinct { first, second, .. } => {
            let stable = first < -CLASSIFY_EPS && second < -CLASSIFY_EPS;
            if first.abs() < CLASSIFY_EPS || second.abs() < CLASSIFY_EPS {
                (FixedPointClass::Degenerate, false)
            } else if stable {
                (FixedPointClass::StableNode, true)
            } else if first > 0.0 && second > 0.0 {
                (FixedPointClass::UnstableNode, false)
            } else {
                (FixedPointClass::Saddle, false)
            }
        }
        // Repeated eigenvalues: labeled degenerate rather than guessed,
        // but a negative repeated pair still counts as a valid sink for
        // the stable-node assumption.
        Eigen2::RealRepeatedDiagonal { lambda }
        | Eigen2::RealRepeatedDefective { lambda, .. } => {
            (FixedPointClass::Degenerate, lambda < -CLASSIFY_EPS)
        }
    }
}
