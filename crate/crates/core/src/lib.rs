//! Transient-overtaking analysis for planar dynamical systems.
//!
//! Two trajectories of the same planar vector field both settle into a
//! stable equilibrium, with the perturbed one starting at least as far
//! out in the first coordinate as the reference. Does the perturbed
//! trajectory's first component ever dip below the reference's on the
//! way in? This crate decides that question numerically, classifies
//! starting points for which the answer is knowable without integration,
//! and provides exact answers for linear fields.

pub mod estimates;
pub mod expr;
pub mod geometry;
pub mod integrate;
pub mod linalg;
pub mod linear;
pub mod scan;
pub mod system;
pub mod tolerance;

pub use linalg::{Mat2, Vec2};
pub use system::{BuiltinId, PlanarSystem};
