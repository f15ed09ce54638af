//! Minimal 2D vector / 2x2 matrix arithmetic.
//!
//! Everything in this crate lives in the plane, so a hand-rolled pair of
//! types is simpler and faster than pulling in a general linear-algebra
//! dependency. The eigensolver handles exactly the 2x2 real case,
//! including the defective (single eigenvector) branch that the linear
//! analysis needs.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A point or vector in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_inf(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Squared distance from `self` to the segment `[a, b]`.
    pub fn dist_sq_to_segment(self, a: Vec2, b: Vec2) -> f64 {
        let ab = b - a;
        let len_sq = ab.dot(ab);
        if len_sq == 0.0 {
            return (self - a).dot(self - a);
        }
        let t = ((self - a).dot(ab) / len_sq).clamp(0.0, 1.0);
        let proj = a + ab.scale(t);
        (self - proj).dot(self - proj)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        self.scale(s)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A 2x2 real matrix in row-major order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Eigenstructure of a 2x2 real matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eigen2 {
    /// Two distinct real eigenvalues, ordered `first > second`
    /// (so for a stable node `first` is the slow one).
    RealDistinct {
        first: f64,
        second: f64,
        v_first: Vec2,
        v_second: Vec2,
    },
    /// Repeated real eigenvalue with two independent eigenvectors
    /// (the matrix is a multiple of the identity).
    RealRepeatedDiagonal { lambda: f64 },
    /// Repeated real eigenvalue with a one-dimensional eigenspace.
    /// `v` is the eigenvector, `v_gen` a generalized eigenvector with
    /// `(A - lambda I) v_gen = v`.
    RealRepeatedDefective { lambda: f64, v: Vec2, v_gen: Vec2 },
    /// Complex conjugate pair `re +/- i*im` with `im > 0`.
    Complex { re: f64, im: f64 },
}

/// Relative threshold below which two eigenvalues are treated as repeated.
pub const EIGEN_TIE_REL: f64 = 1e-9;

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn from_rows(r0: [f64; 2], r1: [f64; 2]) -> Self {
        Mat2::new(r0[0], r0[1], r1[0], r1[1])
    }

    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    pub fn norm_inf(self) -> f64 {
        (self.a.abs() + self.b.abs()).max(self.c.abs() + self.d.abs())
    }

    /// Solve `A x = rhs`. Returns `None` when the matrix is singular.
    pub fn solve(self, rhs: Vec2) -> Option<Vec2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Vec2::new(
            (rhs.x * self.d - rhs.y * self.b) / det,
            (rhs.y * self.a - rhs.x * self.c) / det,
        ))
    }

    /// Eigenvector for a known real eigenvalue. `A - lambda I` has rank
    /// one, so the eigenvector is orthogonal to both of its rows; the
    /// larger row is used because the near-zero row is dominated by
    /// rounding noise in `lambda` and would tilt the direction.
    fn eigenvector_for(self, lambda: f64) -> Vec2 {
        let r0 = Vec2::new(self.a - lambda, self.b);
        let r1 = Vec2::new(self.c, self.d - lambda);
        let r = if r0.norm() >= r1.norm() { r0 } else { r1 };
        if r.norm() == 0.0 {
            return Vec2::new(1.0, 0.0);
        }
        Vec2::new(-r.y, r.x)
    }

    /// Full eigensolve for the 2x2 real case.
    pub fn eigen(self) -> Eigen2 {
        let tr = self.trace();
        let det = self.det();
        let disc = tr * tr - 4.0 * det;
        let scale = self.norm_inf().max(1.0);
        if disc < 0.0 {
            return Eigen2::Complex {
                re: tr / 2.0,
                im: (-disc).sqrt() / 2.0,
            };
        }
        let sq = disc.sqrt();
        // Larger-magnitude root from the quadratic formula, the other
        // from the product, so neither suffers cancellation.
        let (l_hi, l_lo) = if tr > 0.0 {
            let big = 0.5 * (tr + sq);
            (big, det / big)
        } else if tr < 0.0 {
            let big = 0.5 * (tr - sq);
            (det / big, big)
        } else {
            (0.5 * sq, -0.5 * sq)
        };
        if (l_hi - l_lo).abs() < EIGEN_TIE_REL * scale {
            let lambda = tr / 2.0;
            let shifted = Mat2::new(self.a - lambda, self.b, self.c, self.d - lambda);
            if shifted.norm_inf() <= 1e-9 * scale {
                return Eigen2::RealRepeatedDiagonal { lambda };
            }
            let v = shifted.kernel_direction();
            let v_gen = shifted.solve_rank1(v);
            return Eigen2::RealRepeatedDefective { lambda, v, v_gen };
        }
        Eigen2::RealDistinct {
            first: l_hi,
            second: l_lo,
            v_first: self.eigenvector_for(l_hi),
            v_second: self.eigenvector_for(l_lo),
        }
    }

    /// Kernel direction of a (numerically) rank-1 matrix. For the nilpotent
    /// shift `A - lambda I` of a defective matrix the kernel equals the
    /// image, so any nonzero column works.
    fn kernel_direction(self) -> Vec2 {
        let col0 = Vec2::new(self.a, self.c);
        let col1 = Vec2::new(self.b, self.d);
        let v = if col0.norm() >= col1.norm() { col0 } else { col1 };
        v.scale(1.0 / v.norm())
    }

    /// Solve `A x = rhs` for a rank-1 matrix using its dominant row.
    /// Only valid when the system is consistent (as it is for the
    /// generalized-eigenvector equation).
    fn solve_rank1(self, rhs: Vec2) -> Vec2 {
        let (r, target) = if self.a.abs() + self.b.abs() >= self.c.abs() + self.d.abs() {
            (Vec2::new(self.a, self.b), rhs.x)
        } else {
            (Vec2::new(self.c, self.d), rhs.y)
        };
        if r.x.abs() >= r.y.abs() {
            Vec2::new(target / r.x, 0.0)
        } else {
            Vec2::new(0.0, target / r.y)
        }
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}
