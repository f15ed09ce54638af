//! Grid sweeps over candidate perturbed starts, basin rasters, and the
//! pre-conditioned start curve.
//!
//! [`scan_grid`] evaluates every cell center of a rectangular grid
//! against one shared reference: cells left of the reference or outside
//! the basin are marked and skipped, the rest get a phase-plane
//! prediction ([`Classifier::classify`]) and a simulated verdict. Cells
//! are independent, so the sweep runs in parallel; results land in a
//! buffer indexed by cell, which keeps the output identical no matter
//! how the work was scheduled. Per-cell failures are recorded in the
//! cell record instead of aborting the sweep.
//!
//! The summary cross-checks predictions against simulation: a cell
//! predicted `guaranteed` must simulate to a dip and a cell predicted
//! `impossible` must not. A nonzero violation count means the run is
//! broken (usually by a too-loose integrator budget), not that the map
//! found something interesting.

use crate::geometry::{Classifier, Prediction};
use crate::integrate::{in_basin, integrate, Direction, IntegrationOptions, NONNEG_SLACK};
use crate::linalg::Vec2;
use crate::system::{FixedPointReport, PlanarSystem};
use crate::tolerance::{
    assumption, Outcome, PairContext, ToleranceError, ToleranceOptions,
};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Rectangular sampling grid; cells are addressed by `(i, j)` column
/// and row indices and evaluated at their centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
    ) -> Result<Self, ToleranceError> {
        let g = GridSpec {
            x_min: x_range.0,
            x_max: x_range.1,
            y_min: y_range.0,
            y_max: y_range.1,
            nx,
            ny,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ToleranceError> {
        let finite = self.x_min.is_finite()
            && self.x_max.is_finite()
            && self.y_min.is_finite()
            && self.y_max.is_finite();
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(assumption(
                "the grid box is finite with positive extent",
                format!(
                    "x: [{}, {}], y: [{}, {}]",
                    self.x_min, self.x_max, self.y_min, self.y_max
                ),
            ));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(assumption(
                "the grid resolution is at least 2 x 2",
                format!("nx = {}, ny = {}", self.nx, self.ny),
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    /// Center of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.x_min + (i as f64 + 0.5) * self.dx(),
            self.y_min + (j as f64 + 0.5) * self.dy(),
        )
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major storage index of cell `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "nx": self.nx, "ny": self.ny,
        })
    }
}

/// What happened at one cell center.
#[derive(Clone, Debug)]
pub enum CellStatus {
    /// `x < x_r`: the pair would violate the ordering assumption.
    LeftOfReference,
    /// The forward-orbit screen did not confirm convergence; the label
    /// is the screen's termination reason.
    OutsideBasin(&'static str),
    Evaluated {
        prediction: Prediction,
        outcome: Outcome,
        /// Onset of the dip when one was found.
        onset: Option<f64>,
        /// Max over the horizon of `phi1 - psi1`.
        margin: f64,
    },
    /// The pipeline failed for this start; recorded, never propagated.
    Error(String),
}

#[derive(Clone, Debug)]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    pub center: Vec2,
    pub status: CellStatus,
}

impl CellRecord {
    fn prediction_label(&self) -> String {
        match &self.status {
            CellStatus::LeftOfReference => "left-of-reference".to_string(),
            CellStatus::OutsideBasin(_) => "outside-basin".to_string(),
            CellStatus::Error(_) => "error".to_string(),
            CellStatus::Evaluated { prediction, .. } => prediction.label(),
        }
    }

    fn outcome_label(&self) -> &'static str {
        match &self.status {
            CellStatus::Evaluated { outcome, .. } => outcome.label(),
            _ => "none",
        }
    }

    /// Whether prediction and simulation contradict each other.
    fn violates_soundness(&self) -> bool {
        match &self.status {
            CellStatus::Evaluated {
                prediction: Prediction::Guaranteed(_),
                outcome,
                ..
            } => *outcome != Outcome::Tolerance,
            CellStatus::Evaluated {
                prediction: Prediction::Impossible(_),
                outcome,
                ..
            } => *outcome == Outcome::Tolerance,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MapSummary {
    pub evaluated: usize,
    pub tolerance: usize,
    pub no_tolerance: usize,
    pub inconclusive: usize,
    pub guaranteed: usize,
    pub impossible: usize,
    pub possible: usize,
    pub left_of_reference: usize,
    pub outside_basin: usize,
    pub errors: usize,
    /// Guaranteed cells that did not simulate to a dip plus impossible
    /// cells that did. Nonzero means the run is unusable.
    pub prediction_violations: usize,
}

impl MapSummary {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "evaluated": self.evaluated,
            "tolerance": self.tolerance,
            "no_tolerance": self.no_tolerance,
            "inconclusive": self.inconclusive,
            "guaranteed": self.guaranteed,
            "impossible": self.impossible,
            "possible": self.possible,
            "left_of_reference": self.left_of_reference,
            "outside_basin": self.outside_basin,
            "errors": self.errors,
            "prediction_violations": self.prediction_violations,
        })
    }
}

/// Verdict map over a grid of perturbed starts sharing one reference.
#[derive(Clone, Debug)]
pub struct ToleranceMap {
    pub grid: GridSpec,
    pub reference: Vec2,
    pub node: Vec2,
    /// Row-major, `j * nx + i`.
    pub cells: Vec<CellRecord>,
    pub summary: MapSummary,
}

impl ToleranceMap {
    pub fn cell(&self, i: usize, j: usize) -> &CellRecord {
        &self.cells[self.grid.index(i, j)]
    }

    /// The record whose center is closest to `p`.
    pub fn cell_nearest(&self, p: Vec2) -> &CellRecord {
        self.cells
            .iter()
            .min_by(|a, b| {
                let da = a.center.dist(p);
                let db = b.center.dist(p);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("grid has at least 2 x 2 cells")
    }

    /// True when no cell contradicts its own prediction.
    pub fn sound(&self) -> bool {
        self.summary.prediction_violations == 0
    }

    pub fn violation_cells(&self) -> Vec<&CellRecord> {
        self.cells
            .iter()
            .filter(|c| c.violates_soundness())
            .collect()
    }

    /// One row per cell: `x,y,prediction,outcome,onset,margin`.
    ///
    /// Onset is `-1` when no dip was found; margin is `NaN` for cells
    /// that were not evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,prediction,outcome,onset,margin\n");
        for rec in &self.cells {
            let (onset, margin) = match &rec.status {
                CellStatus::Evaluated { onset, margin, .. } => {
                    (onset.unwrap_or(-1.0), *margin)
                }
                _ => (-1.0, f64::NAN),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                rec.center.x,
                rec.center.y,
                rec.prediction_label(),
                rec.outcome_label(),
                onset,
                margin
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.grid.to_json(),
            "reference": [self.reference.x, self.reference.y],
            "node": [self.node.x, self.node.y],
            "summary": self.summary.to_json(),
        })
    }
}

fn evaluate_cell(
    sys: &PlanarSystem,
    ctx: &PairContext<'_>,
    cls: &Classifier<'_>,
    p0: Vec2,
    opts: &ToleranceOptions,
) -> CellStatus {
    let r0 = ctx.reference_start();
    if p0.x < r0.x {
        return CellStatus::LeftOfReference;
    }
    let basin = match in_basin(sys, p0, ctx.node().location, &opts.integration) {
        Ok(status) => status,
        Err(e) => return CellStatus::Error(e.to_string()),
    };
    if !basin.is_in() {
        return CellStatus::OutsideBasin(basin.label());
    }
    let prediction = match cls.classify(p0) {
        Ok(p) => p,
        Err(e) => return CellStatus::Error(e.to_string()),
    };
    match ctx.verdict(p0) {
        Ok(v) => CellStatus::Evaluated {
            prediction,
            outcome: v.outcome,
            onset: v.t1,
            margin: v.margin,
        },
        Err(e) => CellStatus::Error(e.to_string()),
    }
}

fn summarize(cells: &[CellRecord]) -> MapSummary {
    let mut s = MapSummary::default();
    for rec in cells {
        match &rec.status {
            CellStatus::LeftOfReference => s.left_of_reference += 1,
            CellStatus::OutsideBasin(_) => s.outside_basin += 1,
            CellStatus::Error(_) => s.errors += 1,
            CellStatus::Evaluated {
                prediction,
                outcome,
                ..
            } => {
                s.evaluated += 1;
                match outcome {
                    Outcome::Tolerance => s.tolerance += 1,
                    Outcome::NoTolerance => s.no_tolerance += 1,
                    Outcome::Inconclusive => s.inconclusive += 1,
                }
                match prediction {
                    Prediction::Guaranteed(_) => s.guaranteed += 1,
                    Prediction::Impossible(_) => s.impossible += 1,
                    Prediction::Possible => s.possible += 1,
                }
            }
        }
        if rec.violates_soundness() {
            s.prediction_violations += 1;
        }
    }
    s
}

/// Sweep every cell center of `grid` as a perturbed start against the
/// reference from `r0`.
///
/// The reference trajectory is integrated once and shared; cells are
/// then evaluated independently (and in parallel) in the order of
/// [`GridSpec::index`]. Failures inside a cell become
/// [`CellStatus::Error`] records.
pub fn scan_grid(
    sys: &PlanarSystem,
    r0: Vec2,
    grid: GridSpec,
    opts: &ToleranceOptions,
) -> Result<ToleranceMap, ToleranceError> {
    grid.validate()?;
    let ctx = PairContext::new(sys, r0, opts)?;
    let cls = Classifier::new(sys, r0, opts)?;
    let node = ctx.node().location;
    let cells: Vec<CellRecord> = (0..grid.cell_count())
        .into_par_iter()
        .map(|idx| {
            let i = idx % grid.nx;
            let j = idx / grid.nx;
            let center = grid.center(i, j);
            CellRecord {
                i,
                j,
                center,
                status: evaluate_cell(sys, &ctx, &cls, center, opts),
            }
        })
        .collect();
    let summary = summarize(&cells);
    Ok(ToleranceMap {
        grid,
        reference: r0,
        node,
        cells,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Pre-conditioned starts
// ---------------------------------------------------------------------------

/// Sample the curve of perturbed starts obtained by flowing a
/// nonnegative seed forward and shifting it by a fixed offset:
/// the point at parameter `s` is `rho(s) + offset`, where `rho` is the
/// forward solution from `rho0`.
///
/// With `offset = r0` every sampled start dominates the reference start
/// componentwise, so the ordering assumption holds along the whole
/// curve. When a reference start is supplied the seed is checked
/// against it (`0 < x_rho <= x_r`, `0 <= y_rho <= y_r`).
pub fn preconditioning_curve(
    sys: &PlanarSystem,
    rho0: Vec2,
    offset: Vec2,
    s_values: &[f64],
    reference: Option<Vec2>,
) -> Result<Vec<Vec2>, ToleranceError> {
    if !(offset.x >= 0.0 && offset.y >= 0.0) || !offset.is_finite() {
        return Err(assumption(
            "the start offset is nonnegative",
            format!("offset = {offset}"),
        ));
    }
    if !(rho0.x > 0.0 && rho0.y >= 0.0) || !rho0.is_finite() {
        return Err(assumption(
            "the seed has x > 0 and y >= 0",
            format!("rho(0) = {rho0}"),
        ));
    }
    if let Some(r0) = reference {
        if rho0.x > r0.x || rho0.y > r0.y {
            return Err(assumption(
                "the seed lies at or below the reference start (x_rho <= x_r, y_rho <= y_r)",
                format!("rho(0) = {rho0}, reference = {r0}"),
            ));
        }
    }
    let mut s_max: f64 = 0.0;
    for &s in s_values {
        if !s.is_finite() || s < 0.0 {
            return Err(assumption(
                "curve parameters are finite and nonnegative",
                format!("s = {s}"),
            ));
        }
        s_max = s_max.max(s);
    }
    if s_max == 0.0 {
        return Ok(s_values.iter().map(|_| rho0 + offset).collect());
    }

    let mut io = IntegrationOptions::default();
    io.horizon = s_max;
    io.ball = None;
    io.nonneg_guard = Some(NONNEG_SLACK);
    io.events = Vec::new();
    io.stop_events = Vec::new();
    io.allow_partial = true;
    let rho = integrate(sys, rho0, Direction::Forward, &io)?;
    let reach = rho.end_time();
    let slack = 1e-9 * s_max.max(1.0);
    s_values
        .iter()
        .map(|&s| {
            if s > reach + slack {
                return Err(assumption(
                    "the curve parameter lies within the integrated span",
                    format!("s = {s}, seed orbit ends at t = {reach}"),
                ));
            }
            Ok(rho.state_at(s.min(reach)) + offset)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Basin raster
// ---------------------------------------------------------------------------

/// Boolean raster of the forward-orbit basin screen over a grid.
#[derive(Clone, Debug)]
pub struct BasinRaster {
    pub grid: GridSpec,
    pub node: Vec2,
    /// Row-major, `j * nx + i`; true when the orbit converged.
    pub inside: Vec<bool>,
    /// Cells where the screen ran out of budget (counted as outside).
    pub unresolved: usize,
}

impl BasinRaster {
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.inside[self.grid.index(i, j)]
    }

    /// Raster value at the cell whose center is closest to `p`.
    pub fn nearest(&self, p: Vec2) -> bool {
        let mut best = (f64::INFINITY, 0);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let d = self.grid.center(i, j).dist(p);
                if d < best.0 {
                    best = (d, self.grid.index(i, j));
                }
            }
        }
        self.inside[best.1]
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }
}

/// Raster the basin screen of an attracting node over `grid`.
///
/// Each cell center is flowed forward under `opts` (with the capture
/// ball placed on the node); a cell is inside when the orbit enters the
/// ball without first leaving the nonnegative quadrant. Budget-limited
/// cells count as outside and are tallied in `unresolved`, so a short
/// horizon under-approximates the basin rather than stalling.
pub fn estimate_basin(
    sys: &PlanarSystem,
    fp: &FixedPointReport,
    grid: GridSpec,
    opts: &IntegrationOptions,
) -> Result<BasinRaster, ToleranceError> {
    grid.validate()?;
    if !fp.satisfies_stable_node_assumption {
        return Err(assumption(
            "the fixed point is an attracting node with real negative eigenvalues",
            format!("classified as {:?} at {}", fp.class, fp.location),
        ));
    }
    let results: Vec<(bool, bool)> = (0..grid.cell_count())
        .into_par_iter()
        .map(|idx| {
            let i = idx % grid.nx;
            let j = idx / grid.nx;
            match in_basin(sys, grid.center(i, j), fp.location, opts) {
                Ok(status) => (status.is_in(), !status.conclusive()),
                Err(_) => (false, true),
            }
        })
        .collect();
    let unresolved = results.iter().filter(|(_, u)| *u).count();
    Ok(BasinRaster {
        grid,
        node: fp.location,
        inside: results.into_iter().map(|(b, _)| b).collect(),
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::PlanarSystem;

    fn ex(name: &str) -> PlanarSystem {
        PlanarSystem::builtin(name).unwrap()
    }

    fn outcome_at(map: &ToleranceMap, p: Vec2) -> Outcome {
        match &map.cell_nearest(p).status {
            CellStatus::Evaluated { outcome, .. } => *outcome,
            other => panic!("cell near {p} not evaluated: {other:?}"),
        }
    }

    #[test]
    fn grid_rejects_degenerate_boxes() {
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 1, 4).is_err());
        assert!(GridSpec::new((1.0, 1.0), (0.0, 1.0), 4, 4).is_err());
        assert!(GridSpec::new((0.0, f64::INFINITY), (0.0, 1.0), 4, 4).is_err());
        assert!(GridSpec::new((0.0, 1.0), (2.0, 1.0), 4, 4).is_err());
    }

    #[test]
    fn centers_are_cell_midpoints() {
        let g = GridSpec::new((0.0, 1.0), (0.0, 2.0), 4, 4).unwrap();
        assert_eq!(g.center(0, 0), Vec2::new(0.125, 0.25));
        assert_eq!(g.center(3, 3), Vec2::new(0.875, 1.75));
        assert_eq!(g.index(3, 2), 11);
        assert_eq!(g.cell_count(), 16);
    }

    #[test]
    fn cells_left_of_the_reference_are_skipped() {
        let sys = ex("ex2");
        let grid = GridSpec::new((0.5, 3.0), (0.0, 2.0), 4, 4).unwrap();
        let map = scan_grid(&sys, Vec2::new(4.0, 0.0), grid, &ToleranceOptions::default())
            .unwrap();
        assert_eq!(map.summary.left_of_reference, 16);
        assert_eq!(map.summary.evaluated, 0);
        assert!(map.sound());
        let csv = map.to_csv();
        assert_eq!(csv.lines().count(), 17);
        for line in csv.lines().skip(1) {
            assert!(line.contains("left-of-reference"), "{line}");
            assert!(line.contains(",none,-1,NaN"), "{line}");
        }
    }

    #[test]
    fn saturating_map_matches_figure_verdicts() {
        let sys = ex("ex2");
        let grid = GridSpec::new((4.0, 8.0), (0.0, 26.0), 12, 13).unwrap();
        let map = scan_grid(&sys, Vec2::new(4.0, 0.0), grid, &ToleranceOptions::default())
            .unwrap();
        assert!(map.sound(), "violations: {:?}", map.violation_cells());
        assert_eq!(outcome_at(&map, Vec2::new(4.5, 5.0)), Outcome::Tolerance);
        assert_eq!(outcome_at(&map, Vec2::new(4.5, 20.0)), Outcome::Tolerance);
        assert_eq!(outcome_at(&map, Vec2::new(6.0, 10.0)), Outcome::Tolerance);
        assert_eq!(outcome_at(&map, Vec2::new(7.0, 1.0)), Outcome::NoTolerance);
        assert!(map.summary.guaranteed > 0);
        assert!(map.summary.evaluated > 100);
        assert_eq!(map.summary.errors, 0);
        // Every guaranteed cell carries an onset time in the export.
        for rec in &map.cells {
            if let CellStatus::Evaluated {
                prediction: Prediction::Guaranteed(_),
                onset,
                ..
            } = &rec.status
            {
                assert!(onset.is_some(), "{rec:?}");
            }
        }
    }

    #[test]
    fn factored_map_matches_figure_verdicts() {
        let sys = ex("ex1");
        let grid = GridSpec::new((2.0, 6.0), (0.0, 3.0), 12, 10).unwrap();
        let map = scan_grid(&sys, Vec2::new(2.0, 0.5), grid, &ToleranceOptions::default())
            .unwrap();
        assert!(map.sound(), "violations: {:?}", map.violation_cells());
        assert_eq!(outcome_at(&map, Vec2::new(5.0, 1.0)), Outcome::NoTolerance);
        assert_eq!(outcome_at(&map, Vec2::new(2.0, 0.0)), Outcome::Tolerance);
        assert!(map.summary.evaluated > 0);
    }

    #[test]
    fn map_export_is_deterministic() {
        let sys = ex("ex2");
        let grid = GridSpec::new((4.0, 6.0), (0.0, 6.0), 6, 6).unwrap();
        let opts = ToleranceOptions::default();
        let a = scan_grid(&sys, Vec2::new(4.0, 10.0), grid, &opts).unwrap();
        let b = scan_grid(&sys, Vec2::new(4.0, 10.0), grid, &opts).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary, b.summary);
        let json = a.to_json();
        assert_eq!(json["summary"]["evaluated"], a.summary.evaluated);
        assert_eq!(json["grid"]["nx"], 6);
        let total = a.summary.evaluated
            + a.summary.left_of_reference
            + a.summary.outside_basin
            + a.summary.errors;
        assert_eq!(total, grid.cell_count());
    }

    #[test]
    fn refining_the_grid_preserves_center_verdicts() {
        let sys = ex("ex2");
        let r0 = Vec2::new(4.0, 10.0);
        let opts = ToleranceOptions::default();
        let coarse_grid = GridSpec::new((4.2, 5.2), (0.0, 5.0), 5, 5).unwrap();
        let fine_grid = GridSpec::new((4.2, 5.2), (0.0, 5.0), 15, 15).unwrap();
        let coarse = scan_grid(&sys, r0, coarse_grid, &opts).unwrap();
        let fine = scan_grid(&sys, r0, fine_grid, &opts).unwrap();
        // Tripling the resolution keeps every coarse center as the
        // center of the middle subcell.
        for j in 0..5 {
            for i in 0..5 {
                let c = coarse.cell(i, j);
                let f = fine.cell(3 * i + 1, 3 * j + 1);
                assert!(c.center.dist(f.center) < 1e-12);
                assert_eq!(
                    c.prediction_label(),
                    f.prediction_label(),
                    "at {}",
                    c.center
                );
                assert_eq!(c.outcome_label(), f.outcome_label(), "at {}", c.center);
            }
        }
    }

    #[test]
    fn precondition_samples_are_flow_plus_offset() {
        let sys = ex("ex2");
        let rho0 = Vec2::new(1.0, 0.0);
        let offset = Vec2::new(4.0, 0.0);
        let s = [0.0, 0.7, 3.0, 30.0];
        let pts =
            preconditioning_curve(&sys, rho0, offset, &s, Some(Vec2::new(4.0, 0.0))).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0], rho0 + offset);
        // The seed orbit has decayed to the node by s = 30.
        assert!(pts[3].dist(offset) < 1e-4, "{}", pts[3]);
        // All samples stay to the right of the reference and produce a
        // well-posed verdict problem.
        let opts = ToleranceOptions::default();
        let ctx = PairContext::new(&sys, Vec2::new(4.0, 0.0), &opts).unwrap();
        for p in &pts {
            assert!(p.x >= 4.0);
            let v = ctx.verdict(*p).unwrap();
            assert_ne!(v.outcome, Outcome::Inconclusive, "at {p}: {v:?}");
        }
    }

    #[test]
    fn precondition_validates_inputs() {
        let sys = ex("ex2");
        let r0 = Some(Vec2::new(4.0, 0.0));
        let s = [1.0];
        // Seed to the right of the reference.
        assert!(preconditioning_curve(&sys, Vec2::new(5.0, 0.0), Vec2::ZERO, &s, r0).is_err());
        // Seed on the y-axis.
        assert!(preconditioning_curve(&sys, Vec2::new(0.0, 1.0), Vec2::ZERO, &s, None).is_err());
        // Negative offset component.
        let bad = Vec2::new(-1.0, 0.0);
        assert!(preconditioning_curve(&sys, Vec2::new(1.0, 0.0), bad, &s, None).is_err());
        // Negative parameter.
        assert!(
            preconditioning_curve(&sys, Vec2::new(1.0, 0.0), Vec2::ZERO, &[-0.5], None).is_err()
        );
    }

    #[test]
    fn precondition_rejects_parameters_past_the_orbit_end() {
        // A field that drains x linearly: the seed orbit leaves the
        // quadrant at t = 1 and the partial trajectory ends there.
        let sys = PlanarSystem::from_strs("drain", "0 - 1", "0").unwrap();
        let err = preconditioning_curve(
            &sys,
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 2.0),
            &[0.5, 5.0],
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("within the integrated span"), "{err}");
    }

    #[test]
    fn basin_raster_splits_the_bistable_example_along_the_diagonal() {
        let sys = ex("ex3");
        let reports = sys
            .find_fixed_points((-0.5, 2.5), (-0.5, 2.5), 7)
            .unwrap();
        let node = reports
            .iter()
            .find(|r| r.location.norm() < 1e-6)
            .expect("node at the origin");
        let mut io = IntegrationOptions::default();
        io.horizon = 80.0;
        let grid = GridSpec::new((0.0, 2.0), (0.0, 2.0), 60, 60).unwrap();
        let raster = estimate_basin(&sys, node, grid, &io).unwrap();
        assert!(raster.nearest(Vec2::new(0.5, 0.5)));
        assert!(!raster.nearest(Vec2::new(1.4, 1.4)));
        assert!(raster.inside_count() > 0);
        assert!(raster.unresolved < grid.cell_count());
        // The diagonal is invariant and the boundary on it is the
        // saddle, so the flip between consecutive diagonal cells must
        // bracket it.
        let mut flip = None;
        for k in 1..60 {
            if raster.at(k - 1, k - 1) && !raster.at(k, k) {
                let mid = 0.5 * (grid.center(k - 1, k - 1).x + grid.center(k, k).x);
                flip = Some(mid);
                break;
            }
        }
        let mid = flip.expect("basin boundary crosses the diagonal");
        assert!((mid - 0.72).abs() < 0.05, "flip at {mid}");
    }

    #[test]
    fn basin_raster_covers_a_linear_node_box() {
        let a = crate::linalg::Mat2::new(-1.0, 0.0, 0.0, -2.0);
        let sys = PlanarSystem::from_matrix("lin", a);
        let fp = sys.fixed_point_report(Vec2::ZERO).unwrap();
        let grid = GridSpec::new((0.0, 3.0), (0.0, 3.0), 10, 10).unwrap();
        let raster = estimate_basin(&sys, &fp, grid, &IntegrationOptions::default()).unwrap();
        assert_eq!(raster.inside_count(), 100);
        assert_eq!(raster.unresolved, 0);
    }

    #[test]
    fn basin_raster_requires_an_attracting_node() {
        let sys = ex("ex3");
        let reports = sys
            .find_fixed_points((-0.5, 2.5), (-0.5, 2.5), 7)
            .unwrap();
        let saddle = reports
            .iter()
            .find(|r| (r.location.x - 0.72).abs() < 0.05 && r.location.x > 0.1)
            .expect("saddle near (0.72, 0.72)");
        let grid = GridSpec::new((0.0, 2.0), (0.0, 2.0), 4, 4).unwrap();
        let err = estimate_basin(&sys, saddle, grid, &IntegrationOptions::default());
        assert!(err.is_err());
    }
}
