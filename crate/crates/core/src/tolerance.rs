//! The verdict engine: given a reference start and a perturbed start that
//! both flow into the same stable node, decide whether the perturbed
//! trajectory's first component ever drops below the reference's.
//!
//! The decision procedure integrates both trajectories until they enter a
//! small ball around the node, scans the gap `d(t) = psi1(t) - phi1(t)`
//! through dense output on the union of the two adaptive grids, and, when
//! no significant dip is found, settles the infinite tail by comparing
//! coefficients in the node's eigenbasis.

use thiserror::Error;

use crate::integrate::{
    integrate, Ball, Direction, IntegrateError, IntegrationOptions, Termination, Trajectory,
    DIVERGENCE_NORM, NONNEG_SLACK,
};
use crate::linalg::{Eigen2, Mat2, Vec2};
use crate::system::{FixedPointReport, PlanarSystem, SystemError};

/// Dips shallower than this (in trajectory units) are never reported as
/// tolerance: the strict inequality in the definition has no numerical
/// thickness, so we impose one and report it.
pub const EPSILON_TOL: f64 = 1e-7;
/// Asymptotic coefficient differences smaller than this are ties.
pub const TIE_THRESHOLD: f64 = 1e-10;
/// Trajectories are compared until both are this close to the node.
pub const COMPARE_RADIUS: f64 = 1e-8;
/// Outer radius of the ball around the node where the asymptotic
/// comparison decomposes the offsets into eigendirections. Small enough
/// for the linearization to hold, yet taken well before the final
/// approach so that the fast component, which decays at the steep
/// eigenvalue, is still resolvable above integration noise.
pub const TAIL_RADIUS: f64 = 1e-2;
/// The decomposition is repeated at `TAIL_RADIUS / TAIL_SHRINK`; the two
/// reads must agree before the tail is considered resolved, so nonlinear
/// residue cannot pass for an eigencomponent.
pub const TAIL_SHRINK: f64 = 4.0;
/// A point closer than this to the backward orbit counts as on it.
pub const ORBIT_MATCH_DIST: f64 = 1e-6;
/// `f` may exceed zero by this much and still count as monotone decay.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// Interior evaluation points per union-grid interval when scanning `d`.
const GRID_SUBSAMPLES: usize = 8;

#[derive(Debug, Error)]
pub enum ToleranceError {
    #[error("assumption failed: {assumption} ({detail})")]
    Assumption { assumption: String, detail: String },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub(crate) fn assumption(assumption: &str, detail: String) -> ToleranceError {
    ToleranceError::Assumption {
        assumption: assumption.to_string(),
        detail,
    }
}

/// Tunable parameters for the verdict engine.
#[derive(Clone, Debug)]
pub struct ToleranceOptions {
    pub integration: IntegrationOptions,
    /// Significance threshold for a dip; see [`EPSILON_TOL`].
    pub epsilon_tol: f64,
    /// Tie threshold for the asymptotic comparison; see [`TIE_THRESHOLD`].
    pub tie_threshold: f64,
    /// Try the backward-orbit shortcut before integrating the pair.
    pub group_shortcut: bool,
}

impl Default for ToleranceOptions {
    fn default() -> Self {
        ToleranceOptions {
            integration: IntegrationOptions::default(),
            epsilon_tol: EPSILON_TOL,
            tie_threshold: TIE_THRESHOLD,
            group_shortcut: false,
        }
    }
}

impl ToleranceOptions {
    pub(crate) fn compare_radius(&self) -> f64 {
        self.integration.ball_radius.min(self.epsilon_tol / 10.0)
    }

    /// Same options with integrator tolerances tightened by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        let mut o = self.clone();
        o.integration = o.integration.tightened(factor);
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Tolerance,
    NoTolerance,
    Inconclusive,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Tolerance => "tolerance",
            Outcome::NoTolerance => "no-tolerance",
            Outcome::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Which eigen-direction settled the asymptotic comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailDirection {
    Slow,
    Fast,
    Repeated,
    Defective,
}

/// The coefficient difference (projected onto the first coordinate) that
/// decided the tail; positive means the perturbed trajectory stays above.
#[derive(Clone, Copy, Debug)]
pub struct TailComparison {
    pub direction: TailDirection,
    pub delta_x: f64,
}

#[derive(Clone, Debug)]
pub struct ToleranceVerdict {
    pub outcome: Outcome,
    /// Onset: first time the gap reaches zero before going negative.
    pub t1: Option<f64>,
    /// Witness: time of the deepest dip.
    pub tau: Option<f64>,
    /// Recovery: first return of the gap to zero after the dip, when it
    /// happens within the compared window.
    pub t2: Option<f64>,
    /// Max over the horizon of `phi1(t) - psi1(t)`; positive iff the
    /// perturbed trajectory dipped below the reference.
    pub margin: f64,
    /// Common end time of the compared window.
    pub horizon: f64,
    pub justification: Option<String>,
    pub assumptions_checked: Vec<String>,
    /// The node both trajectories converge to.
    pub node: Vec2,
    /// Asymptotic comparison detail, when one was performed.
    pub tail: Option<TailComparison>,
}

impl ToleranceVerdict {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "outcome": self.outcome.label(),
            "t1": self.t1,
            "tau": self.tau,
            "t2": self.t2,
            "margin": self.margin,
            "horizon": self.horizon,
            "justification": self.justification,
            "assumptions_checked": self.assumptions_checked,
        })
    }
}

/// Locate the attracting fixed point of the flow from `r0` and verify it
/// is a stable node with real negative eigenvalues.
pub fn locate_node(
    sys: &PlanarSystem,
    r0: Vec2,
    opts: &ToleranceOptions,
) -> Result<FixedPointReport, ToleranceError> {
    let mut io = opts.integration.clone();
    io.ball = None;
    io.nonneg_guard = Some(NONNEG_SLACK);
    io.allow_partial = true;
    io.events.clear();
    io.stop_events.clear();
    io.t_start = 0.0;
    let probe = integrate(sys, r0, Direction::Forward, &io)?;
    match probe.termination() {
        Termination::NegativityViolation => {
            return Err(assumption(
                "trajectories remain in the nonnegative quadrant",
                format!(
                    "reference trajectory left the quadrant at t = {:.6}",
                    probe.end_time()
                ),
            ));
        }
        Termination::Diverged => {
            return Err(assumption(
                "starting points lie in the basin of an attracting fixed point",
                format!("reference trajectory diverged (norm > {DIVERGENCE_NORM:e})"),
            ));
        }
        _ => {}
    }
    let end = probe.end_state();
    let root = sys.refine_fixed_point(end).ok_or_else(|| {
        assumption(
            "an attracting fixed point exists",
            format!("root refinement failed from the trajectory end state {end}"),
        )
    })?;
    if root.dist(end) > 0.5 {
        return Err(assumption(
            "the reference trajectory settles near a fixed point within the horizon",
            format!("end state {end} is {:.3} away from the nearest root {root}", root.dist(end)),
        ));
    }
    let report = sys.fixed_point_report(root)?;
    if !report.satisfies_stable_node_assumption {
        return Err(assumption(
            "the attracting fixed point is a stable node with real negative eigenvalues",
            format!("found {} at {root}", report.class),
        ));
    }
    Ok(report)
}

/// Cached per-reference state: the node and the reference trajectory,
/// reused when many perturbed starts are tested against one reference.
pub struct PairContext<'a> {
    sys: &'a PlanarSystem,
    r0: Vec2,
    node: FixedPointReport,
    phi: Trajectory,
    opts: ToleranceOptions,
}

impl<'a> PairContext<'a> {
    pub fn new(
        sys: &'a PlanarSystem,
        r0: Vec2,
        opts: &ToleranceOptions,
    ) -> Result<Self, ToleranceError> {
        check_quadrant("reference", r0)?;
        let node = locate_node(sys, r0, opts)?;
        Self::with_node(sys, r0, node, opts)
    }

    /// Variant for callers that already know the node (robustness
    /// sampling, grid scans).
    pub fn with_node(
        sys: &'a PlanarSystem,
        r0: Vec2,
        node: FixedPointReport,
        opts: &ToleranceOptions,
    ) -> Result<Self, ToleranceError> {
        check_quadrant("reference", r0)?;
        let phi = ball_run(sys, r0, "reference", &node, opts)?;
        Ok(PairContext {
            sys,
            r0,
            node,
            phi,
            opts: opts.clone(),
        })
    }

    pub fn node(&self) -> &FixedPointReport {
        &self.node
    }

    pub fn reference(&self) -> &Trajectory {
        &self.phi
    }

    pub fn reference_start(&self) -> Vec2 {
        self.r0
    }

    /// Decide tolerance for the cached reference against `p0`.
    pub fn verdict(&self, p0: Vec2) -> Result<ToleranceVerdict, ToleranceError> {
        let r0 = self.r0;
        check_quadrant("perturbed", p0)?;
        if p0.x < r0.x {
            return Err(assumption(
                "the perturbed start does not precede the reference (x_p >= x_r)",
                format!("x_p = {} < x_r = {}", p0.x, r0.x),
            ));
        }
        let mut assumptions = vec![
            "starting points lie in the nonnegative quadrant".to_string(),
            "perturbed start does not precede the reference (x_p >= x_r)".to_string(),
            format!(
                "attracting fixed point at {} is a stable node with real negative eigenvalues",
                self.node.location
            ),
        ];

        if p0 == r0 {
            // Identical starts give identical trajectories by uniqueness.
            return Ok(ToleranceVerdict {
                outcome: Outcome::NoTolerance,
                t1: None,
                tau: None,
                t2: None,
                margin: 0.0,
                horizon: 0.0,
                justification: Some("analytic".to_string()),
                assumptions_checked: assumptions,
                node: self.node.location,
                tail: None,
            });
        }

        if self.opts.group_shortcut
            && check_group_property_no_tolerance(self.sys, r0, p0, &self.opts)?
        {
            assumptions.push("reference trajectory converges to the node".to_string());
            return Ok(ToleranceVerdict {
                outcome: Outcome::NoTolerance,
                t1: None,
                tau: None,
                t2: None,
                margin: f64::NEG_INFINITY,
                horizon: self.phi.end_time(),
                justification: Some("group-property".to_string()),
                assumptions_checked: assumptions,
                node: self.node.location,
                tail: None,
            });
        }

        let psi = ball_run(self.sys, p0, "perturbed", &self.node, &self.opts)?;
        assumptions.push("reference trajectory stays nonnegative and converges to the node".to_string());
        assumptions.push("perturbed trajectory stays nonnegative and converges to the node".to_string());

        // Bring both trajectories to the common horizon.
        let t_star = self.phi.end_time().max(psi.end_time());
        let phi = extend_to(self.sys, self.phi.clone(), t_star, &self.opts)?;
        let psi = extend_to(self.sys, psi, t_star, &self.opts)?;

        let d = |t: f64| psi.x_at(t) - phi.x_at(t);
        let grid = union_grid(&phi, &psi);
        let mut min_val = f64::INFINITY;
        let mut min_idx = 0usize;
        let mut x_scale: f64 = 1.0;
        let values: Vec<f64> = grid.iter().map(|&t| d(t)).collect();
        for (i, (&t, &v)) in grid.iter().zip(values.iter()).enumerate() {
            if v < min_val {
                min_val = v;
                min_idx = i;
            }
            x_scale = x_scale.max(phi.x_at(t).abs()).max(psi.x_at(t).abs());
        }

        // Polish the dip inside its bracketing grid window.
        let lo = grid[min_idx.saturating_sub(1)];
        let hi = grid[(min_idx + 1).min(grid.len() - 1)];
        let (tau, depth) = golden_min(&d, lo, hi);
        let min_d = depth.min(min_val);

        if min_d < -self.opts.epsilon_tol {
            // Walk back from the dip to the start of its excursion.
            let mut k = min_idx;
            while k > 0 && values[k] < 0.0 {
                k -= 1;
            }
            let t1 = if values[k] >= 0.0 {
                bisect_zero(&d, grid[k], grid[k + 1].min(tau))
            } else {
                // Negative from the first sample: onset at the start.
                grid[0]
            };
            // Walk forward to the recovery, if the gap comes back up.
            let mut m = min_idx;
            while m + 1 < values.len() && values[m + 1] < 0.0 {
                m += 1;
            }
            let t2 = if m + 1 < values.len() {
                Some(bisect_zero(&d, grid[m + 1], grid[m].max(tau)))
            } else {
                None
            };
            return Ok(ToleranceVerdict {
                outcome: Outcome::Tolerance,
                t1: Some(t1),
                tau: Some(tau),
                t2,
                margin: -min_d,
                horizon: t_star,
                justification: None,
                assumptions_checked: assumptions,
                node: self.node.location,
                tail: None,
            });
        }

        // No significant dip: settle the infinite tail in eigen-coordinates.
        // The offsets are decomposed when the trajectories enter a small
        // ball around the node, early enough that the fast component is
        // still above integration noise (the final approach to the
        // comparison ball can be many fast time constants long), and
        // again at a fraction of that radius as a cross-check.
        let mut reads = Vec::new();
        for radius in [TAIL_RADIUS, TAIL_RADIUS / TAIL_SHRINK] {
            let t_lin = first_entry_time(&phi, self.node.location, radius)
                .max(first_entry_time(&psi, self.node.location, radius));
            let u_phi = phi.state_at(t_lin) - self.node.location;
            let u_psi = psi.state_at(t_lin) - self.node.location;
            reads.push(tail_comparison(
                &self.node,
                u_phi,
                u_psi,
                self.opts.tie_threshold,
            )?);
        }
        let inner = reads.pop().expect("two reads");
        let outer = reads.pop().expect("two reads");
        let scale_dependent = outer.0 != TailDecision::Tie
            && inner.0 != TailDecision::Tie
            && outer.0 != inner.0;
        let (decision, tail) = if scale_dependent {
            (TailDecision::Tie, inner.1)
        } else if outer.0 == TailDecision::Tie {
            inner
        } else if inner.0 == TailDecision::Tie {
            outer
        } else {
            inner
        };

        // Shallow dips above the integration noise floor are reported, not
        // silently dropped.
        let noise_floor = 10.0
            * (self.opts.integration.abs_tol + self.opts.integration.rel_tol * x_scale);
        let observed_dip = min_d < -noise_floor;

        let (outcome, justification) = match decision {
            TailDecision::Above => {
                if observed_dip {
                    (
                        Outcome::Inconclusive,
                        Some(format!(
                            "dip of {:.3e} is above the noise floor but below the \
                             significance threshold {:.1e}",
                            -min_d, self.opts.epsilon_tol
                        )),
                    )
                } else {
                    (
                        Outcome::NoTolerance,
                        Some("horizon+asymptotic".to_string()),
                    )
                }
            }
            TailDecision::Below => (
                Outcome::Inconclusive,
                Some(
                    "asymptotic ordering reverses beyond the horizon; any dip is below \
                     the significance threshold"
                        .to_string(),
                ),
            ),
            TailDecision::Tie => (
                Outcome::Inconclusive,
                Some(if scale_dependent {
                    "asymptotic decomposition depends on the sampling radius; \
                     the tail is unresolved"
                        .to_string()
                } else {
                    "asymptotic coefficients tie at the node".to_string()
                }),
            ),
        };

        Ok(ToleranceVerdict {
            outcome,
            t1: None,
            tau: None,
            t2: None,
            margin: -min_d,
            horizon: t_star,
            justification,
            assumptions_checked: assumptions,
            node: self.node.location,
            tail: Some(tail),
        })
    }
}

/// Decide tolerance for the pair `(r0, p0)`.
pub fn detect_tolerance(
    sys: &PlanarSystem,
    r0: Vec2,
    p0: Vec2,
    opts: &ToleranceOptions,
) -> Result<ToleranceVerdict, ToleranceError> {
    PairContext::new(sys, r0, opts)?.verdict(p0)
}

/// True iff `p0` lies on the backward orbit of `r0` (within
/// [`ORBIT_MATCH_DIST`]) and both forward trajectories have numerically
/// non-increasing first components, which rules out tolerance by the
/// time-shift argument.
pub fn check_group_property_no_tolerance(
    sys: &PlanarSystem,
    r0: Vec2,
    p0: Vec2,
    opts: &ToleranceOptions,
) -> Result<bool, ToleranceError> {
    let mut io = opts.integration.clone();
    io.ball = None;
    io.nonneg_guard = None;
    io.allow_partial = true;
    io.events.clear();
    io.stop_events.clear();
    io.t_start = 0.0;
    let back = integrate(sys, r0, Direction::Backward, &io)?;

    // Nearest approach of the backward orbit to p0.
    let samples = back.dense_samples(GRID_SUBSAMPLES);
    let mut best = (0usize, f64::INFINITY);
    for (i, (_, p)) in samples.iter().enumerate() {
        let dist = p.dist(p0);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    let mut min_dist = best.1;
    if best.1 < 1.0 && samples.len() >= 2 {
        let lo = samples[best.0.saturating_sub(1)].0;
        let hi = samples[(best.0 + 1).min(samples.len() - 1)].0;
        let obj = |t: f64| back.state_at(t).dist(p0);
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let (_, refined) = golden_min(&obj, a, b);
        min_dist = min_dist.min(refined);
    }
    if min_dist >= ORBIT_MATCH_DIST {
        return Ok(false);
    }

    // Both first components must decay monotonically.
    for start in [r0, p0] {
        let mut fo = opts.integration.clone();
        fo.ball = None;
        fo.nonneg_guard = None;
        fo.allow_partial = true;
        fo.events.clear();
        fo.stop_events.clear();
        fo.t_start = 0.0;
        let traj = integrate(sys, start, Direction::Forward, &fo)?;
        for (_, p) in traj.dense_samples(GRID_SUBSAMPLES) {
            match sys.f(p) {
                Ok(v) if v <= MONOTONE_SLACK => {}
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}

/// Sampling report for verdict robustness under perturbed starting points.
#[derive(Clone, Debug)]
pub struct RobustnessReport {
    pub n_samples: usize,
    pub initial_radius: f64,
    pub final_radius: f64,
    pub halvings: usize,
    /// Fraction of sampled pairs preserving tolerance at the final radius.
    pub fraction: f64,
    /// `(radius, fraction)` per attempted radius.
    pub history: Vec<(f64, f64)>,
    pub seed: u64,
}

/// Sample starting-point pairs from balls around `r0` and `p0` (clipped
/// to the admissible set) and report the fraction that still produce
/// tolerance. When the fraction falls short of 1.0 the radius is halved,
/// at most five times.
#[allow(clippy::too_many_arguments)]
pub fn robustness_balls(
    sys: &PlanarSystem,
    r0: Vec2,
    p0: Vec2,
    verdict: &ToleranceVerdict,
    n_samples: usize,
    radius: f64,
    seed: u64,
    opts: &ToleranceOptions,
) -> Result<RobustnessReport, ToleranceError> {
    use rand::{Rng, SeedableRng};
    if verdict.outcome != Outcome::Tolerance {
        return Err(assumption(
            "robustness sampling requires a tolerance verdict",
            format!("got {}", verdict.outcome),
        ));
    }
    if radius == 0.0 || n_samples == 0 {
        return Ok(RobustnessReport {
            n_samples,
            initial_radius: radius,
            final_radius: radius,
            halvings: 0,
            fraction: 1.0,
            history: vec![(radius, 1.0)],
            seed,
        });
    }

    let node = locate_node(sys, r0, opts)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let disk = |rng: &mut rand_chacha::ChaCha8Rng, c: Vec2, r: f64| -> Vec2 {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = r * rng.random::<f64>().sqrt();
        Vec2::new(c.x + rad * angle.cos(), c.y + rad * angle.sin())
    };

    let mut history = Vec::new();
    let mut current = radius;
    let mut halvings = 0usize;
    loop {
        let mut preserved = 0usize;
        for _ in 0..n_samples {
            // Rejection-sample an admissible pair from the two balls.
            let mut pair = None;
            for _ in 0..200 {
                let r = disk(&mut rng, r0, current);
                let p = disk(&mut rng, p0, current);
                if r.x >= 0.0 && r.y >= 0.0 && p.x >= 0.0 && p.y >= 0.0 && p.x >= r.x {
                    pair = Some((r, p));
                    break;
                }
            }
            let Some((r, p)) = pair else { continue };
            let ok = PairContext::with_node(sys, r, node.clone(), opts)
                .and_then(|ctx| ctx.verdict(p))
                .map(|v| v.outcome == Outcome::Tolerance)
                .unwrap_or(false);
            if ok {
                preserved += 1;
            }
        }
        let fraction = preserved as f64 / n_samples as f64;
        history.push((current, fraction));
        if fraction >= 1.0 || halvings >= 5 {
            return Ok(RobustnessReport {
                n_samples,
                initial_radius: radius,
                final_radius: current,
                halvings,
                fraction,
                history,
                seed,
            });
        }
        current *= 0.5;
        halvings += 1;
    }
}

// ---------------------------------------------------------------------------
// Internals
// ---------------------------------------------------------------------------

pub(crate) fn check_quadrant(which: &str, p: Vec2) -> Result<(), ToleranceError> {
    if p.x < 0.0 || p.y < 0.0 || !p.is_finite() {
        return Err(assumption(
            "starting points lie in the nonnegative quadrant",
            format!("{which} start {p} has a negative or non-finite component"),
        ));
    }
    Ok(())
}

/// Forward integration until the comparison ball around the node.
pub(crate) fn ball_run(
    sys: &PlanarSystem,
    start: Vec2,
    which: &str,
    node: &FixedPointReport,
    opts: &ToleranceOptions,
) -> Result<Trajectory, ToleranceError> {
    let mut io = opts.integration.clone();
    io.ball = Some(Ball {
        center: node.location,
        radius: opts.compare_radius(),
    });
    io.nonneg_guard = Some(NONNEG_SLACK);
    io.allow_partial = false;
    io.events.clear();
    io.stop_events.clear();
    io.stop_at_axis = false;
    io.t_start = 0.0;
    let traj = integrate(sys, start, Direction::Forward, &io)?;
    match traj.termination() {
        Termination::EnteredBall => Ok(traj),
        Termination::NegativityViolation => Err(assumption(
            "trajectories remain in the nonnegative quadrant",
            format!(
                "{which} trajectory left the quadrant at t = {:.6}",
                traj.end_time()
            ),
        )),
        Termination::Diverged => Err(assumption(
            "starting points lie in the node's basin",
            format!("{which} trajectory diverged"),
        )),
        other => Err(assumption(
            "both trajectories converge to the node within the horizon",
            format!(
                "{which} trajectory had not entered the {:.1e} ball by t = {} ({:?})",
                opts.compare_radius(),
                traj.end_time(),
                other
            ),
        )),
    }
}

/// Continue a trajectory (without stopping conditions) out to `t_target`.
fn extend_to(
    sys: &PlanarSystem,
    traj: Trajectory,
    t_target: f64,
    opts: &ToleranceOptions,
) -> Result<Trajectory, ToleranceError> {
    let dt = t_target - traj.end_time();
    if dt <= 1e-12 {
        return Ok(traj);
    }
    let mut io = opts.integration.clone();
    io.ball = None;
    io.nonneg_guard = None;
    io.allow_partial = false;
    io.events.clear();
    io.stop_events.clear();
    io.horizon = dt;
    io.t_start = traj.end_time();
    let tail = integrate(sys, traj.end_state(), Direction::Forward, &io)?;
    Ok(traj.extend(tail))
}

/// First time the trajectory comes within `radius` of `center`, refined
/// by bisection inside the bracketing step. Returns the start time when
/// the trajectory begins inside, and the end time if it never enters.
fn first_entry_time(traj: &Trajectory, center: Vec2, radius: f64) -> f64 {
    let dist = |t: f64| (traj.state_at(t) - center).norm() - radius;
    let times = traj.step_times();
    if dist(times[0]) <= 0.0 {
        return times[0];
    }
    for w in times.windows(2) {
        if dist(w[1]) > 0.0 {
            continue;
        }
        let (mut lo, mut hi) = (w[0], w[1]);
        for _ in 0..80 {
            if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if dist(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return hi;
    }
    traj.end_time()
}

/// Union of both trajectories' step boundaries with interior subsamples.
fn union_grid(phi: &Trajectory, psi: &Trajectory) -> Vec<f64> {
    let t_end = phi.end_time().min(psi.end_time());
    let mut ts = phi.step_times();
    ts.extend(psi.step_times());
    ts.retain(|t| *t <= t_end);
    ts.push(t_end);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let mut out = Vec::with_capacity(ts.len() * GRID_SUBSAMPLES);
    for w in ts.windows(2) {
        for j in 0..GRID_SUBSAMPLES {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / GRID_SUBSAMPLES as f64);
        }
    }
    out.push(t_end);
    out
}

/// Golden-section minimization; returns `(argmin, min)`.
fn golden_min(obj: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    if hi - lo <= 0.0 {
        return (lo, obj(lo));
    }
    let mut c = lo + phi * (hi - lo);
    let mut d = hi - phi * (hi - lo);
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..100 {
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = lo + phi * (hi - lo);
            fc = obj(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = hi - phi * (hi - lo);
            fd = obj(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, obj(mid))
}

/// Bisect `d` to its zero between a nonnegative and a negative sample.
fn bisect_zero(d: &impl Fn(f64) -> f64, t_nonneg: f64, t_neg: f64) -> f64 {
    let mut a = t_nonneg;
    let mut b = t_neg;
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        let v = d(mid);
        if v.abs() <= 1e-9 || (a - b).abs() <= 1e-14 * (1.0 + mid.abs()) {
            return mid;
        }
        if v >= 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TailDecision {
    /// Perturbed stays above the reference asymptotically.
    Above,
    /// Perturbed ends up below: a crossing exists beyond resolution.
    Below,
    Tie,
}

fn orient_x(v: Vec2) -> Vec2 {
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        -v
    } else {
        v
    }
}

/// Compare the node-relative offsets in the eigenbasis of the node's
/// linearization. The slow direction dominates the tail; when its
/// projection onto the first coordinate is below the tie threshold
/// (including the exactly-vertical case), the fast direction decides.
fn tail_comparison(
    node: &FixedPointReport,
    u_phi: Vec2,
    u_psi: Vec2,
    tie: f64,
) -> Result<(TailDecision, TailComparison), ToleranceError> {
    let decide = |value: f64, direction: TailDirection| {
        let decision = if value > tie {
            TailDecision::Above
        } else if value < -tie {
            TailDecision::Below
        } else {
            TailDecision::Tie
        };
        (
            decision,
            TailComparison {
                direction,
                delta_x: value,
            },
        )
    };
    match node.eigen {
        Eigen2::RealDistinct {
            v_first, v_second, ..
        } => {
            let v = orient_x(v_first);
            let w = orient_x(v_second);
            let m = Mat2::new(v.x, w.x, v.y, w.y);
            let (c_phi, c_psi) = match (m.solve(u_phi), m.solve(u_psi)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(assumption(
                        "the node's eigenvectors span the plane",
                        "eigenbasis decomposition failed".to_string(),
                    ))
                }
            };
            let slow = (c_psi.x - c_phi.x) * v.x;
            if slow.abs() > tie {
                Ok(decide(slow, TailDirection::Slow))
            } else {
                let fast = (c_psi.y - c_phi.y) * w.x;
                Ok(decide(fast, TailDirection::Fast))
            }
        }
        Eigen2::RealRepeatedDiagonal { .. } => {
            // Every direction decays at the same rate; the offsets
            // themselves order the tails.
            Ok(decide(u_psi.x - u_phi.x, TailDirection::Repeated))
        }
        Eigen2::RealRepeatedDefective { v, v_gen, .. } => {
            let v = orient_x(v);
            let m = Mat2::new(v.x, v_gen.x, v.y, v_gen.y);
            let (c_phi, c_psi) = match (m.solve(u_phi), m.solve(u_psi)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(assumption(
                        "the node's generalized eigenbasis spans the plane",
                        "decomposition failed".to_string(),
                    ))
                }
            };
            // The t e^{lambda t} component dominates.
            let dominant = (c_psi.y - c_phi.y) * v.x;
            if dominant.abs() > tie {
                Ok(decide(dominant, TailDirection::Defective))
            } else {
                let secondary = (c_psi.x - c_phi.x) * v.x + (c_psi.y - c_phi.y) * v_gen.x;
                Ok(decide(secondary, TailDirection::Defective))
            }
        }
        Eigen2::Complex { .. } => Err(assumption(
            "the attracting fixed point is a stable node with real negative eigenvalues",
            "complex eigenvalues at the node".to_string(),
        )),
    }
}
