//! Phase-plane classification: predicts, where possible, whether a
//! perturbed start will dip below the reference without integrating the
//! pair to a verdict.
//!
//! The reference trajectory is first classified as excitable or not (an
//! excitable reference fires one or more pulses in its first component
//! before settling). An excitable excursion encloses a region of starts
//! that are guaranteed to dip; the strip above the excursion, where the
//! first component can only shrink, is guaranteed as well. In the other
//! direction, graph ordering between the two trajectories combined with
//! the sign of `df/dy` can rule a dip out entirely. Everything else is
//! reported as [`Prediction::Possible`] and left to the verdict engine.

use crate::integrate::{
    in_basin, integrate, Direction, EventKind, EventSpec, IntegrationOptions, Termination,
    Trajectory, NONNEG_SLACK,
};
use crate::linalg::Vec2;
use crate::system::{FixedPointReport, PlanarSystem};
use crate::tolerance::{
    assumption, ball_run, check_group_property_no_tolerance, check_quadrant, locate_node,
    ToleranceError, ToleranceOptions,
};

/// Distance at which a point counts as lying on a region boundary.
pub const BOUNDARY_EPS: f64 = 1e-9;
/// Band of `df/dy` values around zero reported as [`InhibitionSign::Boundary`].
pub const INHIBITION_BAND: f64 = 1e-10;
/// Equal-x comparison stations per overlapping monotone-segment pair.
const ORDER_SAMPLES: usize = 512;
/// Grid resolution (per axis) for the strip's sign verification.
const F_GRID: usize = 100;
/// Equal-x stations when checking the tube between two graphs.
const BRIDGE_STATIONS: usize = 64;
/// Interior samples per bridge station.
const BRIDGE_SAMPLES: usize = 16;
/// Interior samples per trajectory-dense step in sign sweeps.
const SWEEP_SUBSAMPLES: usize = 4;

// ---------------------------------------------------------------------------
// Excitability of the reference
// ---------------------------------------------------------------------------

/// Shape summary of the reference trajectory's first component.
///
/// `n >= 1` means the trajectory fires `n` pulses: the drive `f` starts
/// positive, changes sign `2n - 1` times, and stays negative afterward,
/// with every switch happening strictly right of the start level and the
/// second component still being fed (`g > 0`) through the switch window.
#[derive(Clone, Debug)]
pub struct ExcitabilityReport {
    /// Number of pulses; zero when any condition fails.
    pub n: usize,
    /// Times where `f` changes sign along the trajectory.
    pub switch_times: Vec<f64>,
    /// First return of the first component to its starting level, if any.
    pub t_return: Option<f64>,
    /// Largest first component reached over the whole run. Equals the
    /// starting level for a non-excitable (descending) reference.
    pub max_x: f64,
    /// First and last times the maximum is attained.
    pub t_first_max: f64,
    pub t_last_max: f64,
    /// Second component at `t_last_max`.
    pub y_at_last_max: f64,
    /// Second component at the return time.
    pub y_at_return: Option<f64>,
    /// Every switch point sits strictly right of the start level.
    pub switches_right_of_start: bool,
    /// `g > 0` at every sample from the start through the last switch.
    pub rising_through_switches: bool,
    /// `f` alternates sign window by window, positive first, negative
    /// after the last switch.
    pub alternating_pulse_signs: bool,
    start: Vec2,
    node: Vec2,
    traj: Trajectory,
    graph: Vec<Vec2>,
}

impl ExcitabilityReport {
    pub fn start(&self) -> Vec2 {
        self.start
    }

    pub fn node(&self) -> Vec2 {
        self.node
    }

    /// The underlying run, integrated until the comparison ball around
    /// the node.
    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// Polyline of the excursion graph from the start to the return
    /// point; empty when there is no return crossing.
    pub fn graph(&self) -> &[Vec2] {
        &self.graph
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "switch_times": self.switch_times,
            "t_return": self.t_return,
            "max_x": self.max_x,
            "t_first_max": self.t_first_max,
            "t_last_max": self.t_last_max,
            "y_at_last_max": self.y_at_last_max,
            "y_at_return": self.y_at_return,
            "switches_right_of_start": self.switches_right_of_start,
            "rising_through_switches": self.rising_through_switches,
            "alternating_pulse_signs": self.alternating_pulse_signs,
        })
    }
}

/// Classify the reference start as `n`-pulse excitable or not.
pub fn classify_excitable(
    sys: &PlanarSystem,
    r0: Vec2,
    opts: &ToleranceOptions,
) -> Result<ExcitabilityReport, ToleranceError> {
    check_quadrant("reference", r0)?;
    let node = locate_node(sys, r0, opts)?;
    build_report(sys, r0, &node, opts)
}

fn build_report(
    sys: &PlanarSystem,
    r0: Vec2,
    node: &FixedPointReport,
    opts: &ToleranceOptions,
) -> Result<ExcitabilityReport, ToleranceError> {
    let mut io = opts.integration.clone();
    io.ball = Some(crate::integrate::Ball {
        center: node.location,
        radius: opts.compare_radius(),
    });
    io.nonneg_guard = Some(NONNEG_SLACK);
    io.allow_partial = false;
    io.events = vec![EventSpec::FSign, EventSpec::XLevel(r0.x)];
    io.stop_events.clear();
    io.stop_at_axis = false;
    io.t_start = 0.0;
    let traj = integrate(sys, r0, Direction::Forward, &io)?;
    match traj.termination() {
        Termination::EnteredBall => {}
        Termination::NegativityViolation => {
            return Err(assumption(
                "trajectories remain in the nonnegative quadrant",
                format!(
                    "reference trajectory left the quadrant at t = {:.6}",
                    traj.end_time()
                ),
            ));
        }
        other => {
            return Err(assumption(
                "the reference trajectory reaches the node within the horizon",
                format!("integration stopped with {other:?} at t = {}", traj.end_time()),
            ));
        }
    }

    let f0 = sys.f(r0)?;
    let switch_times: Vec<f64> = traj
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::FSign { .. }))
        .map(|e| e.t)
        .collect();
    let t_return = traj
        .events()
        .iter()
        .find(|e| matches!(e.kind, EventKind::XLevel { .. }))
        .map(|e| e.t);

    let switches_right_of_start = traj
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::FSign { .. }))
        .all(|e| e.point.x > r0.x);

    // g > 0 from the start through the last switch, checked on the
    // dense sample grid plus both endpoints.
    let mut rising_through_switches = true;
    if let Some(&t_last) = switch_times.last() {
        let mut probes: Vec<Vec2> = traj
            .dense_samples(SWEEP_SUBSAMPLES)
            .into_iter()
            .take_while(|(t, _)| *t <= t_last)
            .map(|(_, p)| p)
            .collect();
        probes.push(traj.state_at(t_last));
        for p in probes {
            if sys.g(p)? <= 0.0 {
                rising_through_switches = false;
                break;
            }
        }
    }

    // Sign pattern of f: sampled at window midpoints between switches,
    // expecting +, -, +, ... and - after the last switch.
    let mut alternating_pulse_signs = f0 > 0.0 && switch_times.len() % 2 == 1;
    if alternating_pulse_signs {
        let mut knots = vec![0.0];
        knots.extend_from_slice(&switch_times);
        knots.push(traj.end_time());
        for (i, w) in knots.windows(2).enumerate() {
            let expect_positive = i % 2 == 0;
            let mid = 0.5 * (w[0] + w[1]);
            if (sys.f(traj.state_at(mid))? > 0.0) != expect_positive {
                alternating_pulse_signs = false;
                break;
            }
        }
    }

    let n = if alternating_pulse_signs && switches_right_of_start && rising_through_switches {
        (switch_times.len() + 1) / 2
    } else {
        0
    };

    // Maximum of the first component and where it is attained. Monotone
    // pieces attain extrema at their endpoints, so segment boundaries
    // are the only candidates.
    let segments = traj.monotone_segments();
    let mut max_x = r0.x;
    for s in &segments {
        max_x = max_x.max(s.x_max());
    }
    let tol_max = 1e-9 * (1.0 + max_x.abs());
    let mut candidates = vec![0.0];
    for s in &segments {
        candidates.push(s.t_lo);
        candidates.push(s.t_hi);
    }
    candidates.sort_by(f64::total_cmp);
    let mut t_first_max = 0.0;
    let mut t_last_max = 0.0;
    let mut seen = false;
    for &t in &candidates {
        if (traj.x_at(t) - max_x).abs() <= tol_max {
            if !seen {
                t_first_max = t;
                seen = true;
            }
            t_last_max = t;
        }
    }
    let y_at_last_max = traj.y_at(t_last_max);
    let y_at_return = t_return.map(|t| traj.y_at(t));

    let mut graph = Vec::new();
    if let Some(t_r) = t_return {
        graph.push(r0);
        for (t, p) in traj.dense_samples(SWEEP_SUBSAMPLES) {
            if t > 0.0 && t < t_r {
                graph.push(p);
            }
        }
        graph.push(traj.state_at(t_r));
    }

    Ok(ExcitabilityReport {
        n,
        switch_times,
        t_return,
        max_x,
        t_first_max,
        t_last_max,
        y_at_last_max,
        y_at_return,
        switches_right_of_start,
        rising_through_switches,
        alternating_pulse_signs,
        start: r0,
        node: node.location,
        traj,
        graph,
    })
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// Region enclosed by an excitable excursion: the graph arc from the
/// start to the first return, the vertical segment joining the return
/// point back down to the start, and everything inside. The graph and
/// the vertical segment belong to the region; the start corner itself
/// does not.
#[derive(Clone, Debug)]
pub struct ExcursionRegion {
    boundary: Vec<Vec2>,
    start: Vec2,
    y_return: f64,
}

impl ExcursionRegion {
    pub fn new(report: &ExcitabilityReport) -> Result<Self, ToleranceError> {
        if report.n == 0 {
            return Err(assumption(
                "the reference trajectory is excitable",
                "pulse classification returned n = 0".to_string(),
            ));
        }
        let y_return = report.y_at_return.ok_or_else(|| {
            assumption(
                "the first component returns to its starting level",
                "no return crossing was recorded".to_string(),
            )
        })?;
        Ok(ExcursionRegion {
            boundary: report.graph.clone(),
            start: report.start,
            y_return,
        })
    }

    /// The graph polyline from the start to the return point.
    pub fn boundary(&self) -> &[Vec2] {
        &self.boundary
    }

    pub fn start(&self) -> Vec2 {
        self.start
    }

    /// Height of the vertical closing segment above the start.
    pub fn return_height(&self) -> f64 {
        self.y_return
    }

    pub fn contains(&self, p: Vec2) -> bool {
        // The start corner is excluded even though both boundary pieces
        // end there.
        if p.dist(self.start) <= BOUNDARY_EPS {
            return false;
        }
        // Vertical closing segment, start height excluded, return point
        // included.
        if (p.x - self.start.x).abs() <= BOUNDARY_EPS
            && p.y > self.start.y
            && p.y <= self.y_return + BOUNDARY_EPS
        {
            return true;
        }
        if self.dist_to_graph(p) <= BOUNDARY_EPS {
            return true;
        }
        if p.x < self.start.x {
            return false;
        }
        self.ray_cast(p)
    }

    fn dist_to_graph(&self, p: Vec2) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.boundary.windows(2) {
            best = best.min(dist_to_segment(p, w[0], w[1]));
        }
        best
    }

    /// Even-odd rule over the closed polygon (graph plus the implicit
    /// vertical edge back to the start).
    fn ray_cast(&self, p: Vec2) -> bool {
        let b = &self.boundary;
        let mut inside = false;
        for i in 0..b.len() {
            let a = b[i];
            let c = b[(i + 1) % b.len()];
            if (a.y > p.y) != (c.y > p.y) {
                let x_int = a.x + (p.y - a.y) / (c.y - a.y) * (c.x - a.x);
                if p.x < x_int {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "excursion",
            "start": [self.start.x, self.start.y],
            "return_height": self.y_return,
            "boundary": self.boundary.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "includes": {
                "graph": true,
                "closing_segment": true,
                "start_corner": false,
            },
        })
    }
}

fn dist_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Open strip above an excitable excursion: first component strictly
/// between the start level and the excursion maximum, second component
/// strictly above its value at the (last) maximum, minus the excursion
/// region itself, intersected with the node's basin. When
/// `f_nonpositive` holds, the first component can only shrink anywhere
/// in the strip, so every start here dips below the reference.
pub struct StripAboveExcursion {
    sys: PlanarSystem,
    opts: ToleranceOptions,
    excursion: ExcursionRegion,
    node: Vec2,
    /// Lower x bound (the reference start level), excluded.
    pub x_lo: f64,
    /// Upper x bound (the excursion maximum), excluded.
    pub x_hi: f64,
    /// Lower y bound (second component at the last maximum), excluded.
    pub y_floor: f64,
    /// `f <= 0` held at every grid point of the strip sample window.
    pub f_nonpositive: bool,
    /// Top of the finite window used for the sign check; the strip
    /// itself is unbounded above.
    pub sampled_y_top: f64,
}

impl StripAboveExcursion {
    pub fn new(
        sys: &PlanarSystem,
        report: &ExcitabilityReport,
        opts: &ToleranceOptions,
    ) -> Result<Self, ToleranceError> {
        let excursion = ExcursionRegion::new(report)?;
        let x_lo = report.start.x;
        let x_hi = report.max_x;
        let y_floor = report.y_at_last_max;
        let y_top = y_floor + y_floor.abs().max(10.0);
        let mut f_nonpositive = true;
        'grid: for i in 1..F_GRID {
            for j in 1..F_GRID {
                let p = Vec2::new(
                    x_lo + (x_hi - x_lo) * i as f64 / F_GRID as f64,
                    y_floor + (y_top - y_floor) * j as f64 / F_GRID as f64,
                );
                if excursion.contains(p) {
                    continue;
                }
                if sys.f(p)? > 0.0 {
                    f_nonpositive = false;
                    break 'grid;
                }
            }
        }
        Ok(StripAboveExcursion {
            sys: sys.clone(),
            opts: opts.clone(),
            excursion,
            node: report.node,
            x_lo,
            x_hi,
            y_floor,
            f_nonpositive,
            sampled_y_top: y_top,
        })
    }

    /// Membership test. The basin clause integrates a trajectory, so
    /// this can fail like any other run.
    pub fn contains(&self, p: Vec2) -> Result<bool, ToleranceError> {
        if !(p.x > self.x_lo && p.x < self.x_hi && p.y > self.y_floor) {
            return Ok(false);
        }
        if self.excursion.contains(p) {
            return Ok(false);
        }
        let status = in_basin(&self.sys, p, self.node, &self.opts.integration)?;
        Ok(status.is_in())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "strip-minus-excursion",
            "x": [self.x_lo, self.x_hi],
            "y_floor": self.y_floor,
            "f_nonpositive": self.f_nonpositive,
            "sampled_y_top": self.sampled_y_top,
            "includes": { "edges": false },
        })
    }
}

// ---------------------------------------------------------------------------
// Inhibition sign and graph order
// ---------------------------------------------------------------------------

/// Sign of `df/dy` at a point: negative means the second component
/// inhibits the first there.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InhibitionSign {
    Inhibiting,
    NonInhibiting,
    /// `|df/dy|` within [`INHIBITION_BAND`] of zero.
    Boundary,
}

pub fn inhibition_sign(sys: &PlanarSystem, p: Vec2) -> Result<InhibitionSign, ToleranceError> {
    let fy = sys.f_y(p)?;
    Ok(if fy < -INHIBITION_BAND {
        InhibitionSign::Inhibiting
    } else if fy > INHIBITION_BAND {
        InhibitionSign::NonInhibiting
    } else {
        InhibitionSign::Boundary
    })
}

/// How the perturbed graph sits against the reference graph when both
/// are read as curves over the first component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphOrder {
    /// At equal first components the perturbed second component is
    /// larger: the perturbed graph is bounded below by the reference.
    BoundedBelow,
    /// At equal first components the perturbed second component is
    /// smaller: bounded above by the reference.
    BoundedAbove,
    /// Mixed, all ties, or no shared first-component range.
    Neither,
}

#[derive(Clone, Debug)]
pub struct OrderReport {
    pub order: GraphOrder,
    /// Shared first-component range that was compared, if any.
    pub shared_x: Option<(f64, f64)>,
    /// Comparison stations evaluated.
    pub comparisons: usize,
    /// Stations within integrator noise of each other (not counted for
    /// either side).
    pub ties: usize,
}

/// Compare two trajectories at equal first components, pairing every
/// monotone piece of one with every overlapping monotone piece of the
/// other. Differences within integrator noise are neutral.
pub fn bounded_order(
    reference: &Trajectory,
    perturbed: &Trajectory,
    io: &IntegrationOptions,
) -> OrderReport {
    let segs_r = reference.monotone_segments();
    let segs_p = perturbed.monotone_segments();
    let mut scale = 0.0f64;
    for (_, p) in reference.dense_samples(1) {
        scale = scale.max(p.y.abs());
    }
    for (_, p) in perturbed.dense_samples(1) {
        scale = scale.max(p.y.abs());
    }
    let noise = 100.0 * (io.abs_tol + io.rel_tol * scale);

    let mut above = 0usize;
    let mut below = 0usize;
    let mut ties = 0usize;
    let mut lo_all = f64::INFINITY;
    let mut hi_all = f64::NEG_INFINITY;
    for sr in &segs_r {
        for sp in &segs_p {
            let lo = sr.x_min().max(sp.x_min());
            let hi = sr.x_max().min(sp.x_max());
            if hi - lo <= 1e-12 {
                continue;
            }
            lo_all = lo_all.min(lo);
            hi_all = hi_all.max(hi);
            for k in 0..ORDER_SAMPLES {
                let x = lo + (hi - lo) * (k as f64 + 0.5) / ORDER_SAMPLES as f64;
                let (Some(yr), Some(yp)) = (sr.y_at_x(x), sp.y_at_x(x)) else {
                    continue;
                };
                let d = yp - yr;
                if d > noise {
                    above += 1;
                } else if d < -noise {
                    below += 1;
                } else {
                    ties += 1;
                }
            }
        }
    }
    let order = match (above > 0, below > 0) {
        (true, false) => GraphOrder::BoundedBelow,
        (false, true) => GraphOrder::BoundedAbove,
        _ => GraphOrder::Neither,
    };
    OrderReport {
        order,
        shared_x: if hi_all > lo_all { Some((lo_all, hi_all)) } else { None },
        comparisons: above + below + ties,
        ties,
    }
}

// ---------------------------------------------------------------------------
// Candidate classification
// ---------------------------------------------------------------------------

/// Which argument decided a guaranteed or impossible prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grounds {
    /// Start inside the region enclosed by the excitable excursion.
    InsideExcursion,
    /// Start in the strip above the excursion where `f <= 0`.
    InsideSuppressedStrip,
    /// Perturbed graph bounded below by the reference and the two never
    /// co-occupy inhibiting territory at equal first components.
    BoundedBelowNoInhibition,
    /// Perturbed graph bounded above, start right of the excursion
    /// maximum, and both trajectories (plus the tube between them) sit
    /// in inhibiting territory throughout.
    BoundedAboveInsideInhibition,
    /// Perturbed start lies on the reference's backward orbit and the
    /// first component decays monotonically.
    SameOrbitMonotone,
}

impl Grounds {
    pub fn label(&self) -> &'static str {
        match self {
            Grounds::InsideExcursion => "inside-excursion",
            Grounds::InsideSuppressedStrip => "inside-suppressed-strip",
            Grounds::BoundedBelowNoInhibition => "bounded-below-without-inhibition",
            Grounds::BoundedAboveInsideInhibition => "bounded-above-inside-inhibition",
            Grounds::SameOrbitMonotone => "same-orbit-monotone",
        }
    }
}

/// Phase-plane prediction for a candidate perturbed start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prediction {
    /// The perturbed trajectory will dip below the reference.
    Guaranteed(Grounds),
    /// It cannot dip below the reference.
    Impossible(Grounds),
    /// Neither argument applies; the verdict engine has to decide.
    Possible,
}

impl Prediction {
    pub fn label(&self) -> String {
        match self {
            Prediction::Guaranteed(g) => format!("guaranteed({})", g.label()),
            Prediction::Impossible(g) => format!("impossible({})", g.label()),
            Prediction::Possible => "possible".to_string(),
        }
    }
}

/// Cached cascade state for one reference start: the node, the pulse
/// report, and the prebuilt regions. Amortizes the reference work when
/// many candidates are screened against the same start.
pub struct Classifier<'a> {
    sys: &'a PlanarSystem,
    r0: Vec2,
    node: FixedPointReport,
    report: ExcitabilityReport,
    excursion: Option<ExcursionRegion>,
    strip: Option<StripAboveExcursion>,
    opts: ToleranceOptions,
}

impl<'a> Classifier<'a> {
    pub fn new(
        sys: &'a PlanarSystem,
        r0: Vec2,
        opts: &ToleranceOptions,
    ) -> Result<Self, ToleranceError> {
        check_quadrant("reference", r0)?;
        let node = locate_node(sys, r0, opts)?;
        let report = build_report(sys, r0, &node, opts)?;
        let (excursion, strip) = if report.n >= 1 {
            (
                Some(ExcursionRegion::new(&report)?),
                Some(StripAboveExcursion::new(sys, &report, opts)?),
            )
        } else {
            (None, None)
        };
        Ok(Classifier {
            sys,
            r0,
            node,
            report,
            excursion,
            strip,
            opts: opts.clone(),
        })
    }

    pub fn node(&self) -> &FixedPointReport {
        &self.node
    }

    pub fn report(&self) -> &ExcitabilityReport {
        &self.report
    }

    /// Run the classification cascade for one candidate start.
    ///
    /// Region arguments come first (they need only the reference), then
    /// the order-plus-inhibition exclusions, then the backward-orbit
    /// shortcut. Anything left over is [`Prediction::Possible`]; that
    /// is a statement of ignorance, not of likelihood.
    pub fn classify(&self, p0: Vec2) -> Result<Prediction, ToleranceError> {
        check_quadrant("perturbed", p0)?;
        if p0.x < self.r0.x {
            return Err(assumption(
                "the perturbed start does not precede the reference (x_p >= x_r)",
                format!("x_p = {} < x_r = {}", p0.x, self.r0.x),
            ));
        }

        if let Some(excursion) = &self.excursion {
            if excursion.contains(p0) {
                return Ok(Prediction::Guaranteed(Grounds::InsideExcursion));
            }
        }
        if let Some(strip) = &self.strip {
            if strip.f_nonpositive && strip.contains(p0)? {
                return Ok(Prediction::Guaranteed(Grounds::InsideSuppressedStrip));
            }
        }

        let phi = self.report.trajectory();
        let psi = ball_run(self.sys, p0, "perturbed", &self.node, &self.opts)?;
        let order = bounded_order(phi, &psi, &self.opts.integration);
        match order.order {
            GraphOrder::BoundedBelow => {
                if !inhibiting_coincidence(self.sys, phi, &psi)? {
                    return Ok(Prediction::Impossible(Grounds::BoundedBelowNoInhibition));
                }
            }
            GraphOrder::BoundedAbove => {
                if p0.x > self.report.max_x && jointly_inhibited(self.sys, phi, &psi)? {
                    return Ok(Prediction::Impossible(
                        Grounds::BoundedAboveInsideInhibition,
                    ));
                }
            }
            GraphOrder::Neither => {}
        }

        if check_group_property_no_tolerance(self.sys, self.r0, p0, &self.opts)? {
            return Ok(Prediction::Impossible(Grounds::SameOrbitMonotone));
        }
        Ok(Prediction::Possible)
    }
}

/// One-shot version of [`Classifier::classify`] for callers with a
/// single candidate.
pub fn classify_candidate(
    sys: &PlanarSystem,
    r0: Vec2,
    p0: Vec2,
    opts: &ToleranceOptions,
) -> Result<Prediction, ToleranceError> {
    Classifier::new(sys, r0, opts)?.classify(p0)
}

/// Is there a shared first-component station where both trajectories
/// sit at strictly inhibiting points? Sampled, so a miss between
/// stations is possible; the cascade only uses the negative answer.
fn inhibiting_coincidence(
    sys: &PlanarSystem,
    reference: &Trajectory,
    perturbed: &Trajectory,
) -> Result<bool, ToleranceError> {
    for sr in reference.monotone_segments() {
        for sp in perturbed.monotone_segments() {
            let lo = sr.x_min().max(sp.x_min());
            let hi = sr.x_max().min(sp.x_max());
            if hi - lo <= 1e-12 {
                continue;
            }
            for k in 0..ORDER_SAMPLES {
                let x = lo + (hi - lo) * (k as f64 + 0.5) / ORDER_SAMPLES as f64;
                let (Some(tr), Some(tp)) = (sr.time_at_x(x), sp.time_at_x(x)) else {
                    continue;
                };
                if inhibition_sign(sys, reference.state_at(tr))? == InhibitionSign::Inhibiting
                    && inhibition_sign(sys, perturbed.state_at(tp))? == InhibitionSign::Inhibiting
                {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

/// Do both trajectories, and the vertical tube between their graphs,
/// stay where `df/dy <= 0`? The tube makes the sampled set connected,
/// so a positive answer exhibits one inhibiting region containing both
/// runs. Non-strict sign with a small slack: the drive's y-sensitivity
/// vanishes at the node itself.
fn jointly_inhibited(
    sys: &PlanarSystem,
    reference: &Trajectory,
    perturbed: &Trajectory,
) -> Result<bool, ToleranceError> {
    const SLACK: f64 = 1e-12;
    for traj in [reference, perturbed] {
        for (_, p) in traj.dense_samples(SWEEP_SUBSAMPLES) {
            if sys.f_y(p)? > SLACK {
                return Ok(false);
            }
        }
    }
    for sr in reference.monotone_segments() {
        for sp in perturbed.monotone_segments() {
            let lo = sr.x_min().max(sp.x_min());
            let hi = sr.x_max().min(sp.x_max());
            if hi - lo <= 1e-12 {
                continue;
            }
            for k in 0..BRIDGE_STATIONS {
                let x = lo + (hi - lo) * (k as f64 + 0.5) / BRIDGE_STATIONS as f64;
                let (Some(yr), Some(yp)) = (sr.y_at_x(x), sp.y_at_x(x)) else {
                    continue;
                };
                for j in 0..=BRIDGE_SAMPLES {
                    let y = yr + (yp - yr) * j as f64 / BRIDGE_SAMPLES as f64;
                    if sys.f_y(Vec2::new(x, y))? > SLACK {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}
