//! Adaptive Runge-Kutta integration with dense output and event location.
//!
//! The stepper is the classic Dormand-Prince 5(4) embedded pair with PI
//! step-size control and the standard quartic continuous extension, so a
//! trajectory can be evaluated at any interior time without re-stepping.
//! Events (sign changes of `f` or `g`, coordinate level crossings,
//! coordinate extrema) are bracketed on a per-step subsample grid of the
//! interpolant and refined by bisection.
//!
//! Backward integration solves the time-reversed field; reported times are
//! negative so they remain actual flow times.

use thiserror::Error;

use crate::linalg::Vec2;
use crate::system::{PlanarSystem, SystemError};

/// Default relative tolerance for the embedded error estimate.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Default absolute tolerance floor.
pub const DEFAULT_ABS_TOL: f64 = 1e-12;
/// Default forward-time horizon. Generous because near-degenerate nodes
/// (slow eigenvalue of order 0.07) need a couple hundred time units to
/// shrink into a 1e-6 ball.
pub const DEFAULT_HORIZON: f64 = 400.0;
/// Default radius of the capture ball used for basin membership.
pub const DEFAULT_BALL_RADIUS: f64 = 1e-6;
/// Slack below zero tolerated before a nonnegativity guard trips.
pub const NONNEG_SLACK: f64 = 1e-9;
/// Event times are refined until the event function is below this.
pub const EVENT_REFINE_TOL: f64 = 1e-9;
/// Hard cap on bisection depth during event refinement.
pub const EVENT_REFINE_MAX_DEPTH: usize = 80;
/// A state with sup-norm above this counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Default cap on accepted + rejected steps per trajectory.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;
/// Interpolant subsamples per step when scanning for events.
const EVENT_SUBSAMPLES: usize = 8;

/// Flow direction of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A capture ball used as a stopping set.
#[derive(Clone, Copy, Debug)]
pub struct Ball {
    pub center: Vec2,
    pub radius: f64,
}

/// Axis-aligned stopping domain `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Which event function to monitor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventSpec {
    /// Sign change of `f` along the trajectory.
    FSign,
    /// Sign change of `g` along the trajectory.
    GSign,
    /// Crossing of `x = level`.
    XLevel(f64),
    /// Crossing of `y = level`.
    YLevel(f64),
    /// Local extremum of the first component (a sign change of `f`).
    XExtremum,
    /// Local extremum of the second component (a sign change of `g`).
    YExtremum,
}

/// A located event.
#[derive(Clone, Copy, Debug)]
pub struct Event {
    /// Actual flow time (negative on backward trajectories).
    pub t: f64,
    pub point: Vec2,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    FSign { rising: bool },
    GSign { rising: bool },
    XLevel { level: f64, rising: bool },
    YLevel { level: f64, rising: bool },
    XExtremum { maximum: bool },
    YExtremum { maximum: bool },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::FSign { .. } => "f-sign-change",
            EventKind::GSign { .. } => "g-sign-change",
            EventKind::XLevel { .. } => "x-level",
            EventKind::YLevel { .. } => "y-level",
            EventKind::XExtremum { .. } => "x-extremum",
            EventKind::YExtremum { .. } => "y-extremum",
        }
    }
}

/// Why integration stopped.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// Reached the time horizon.
    Horizon,
    /// Entered the stopping ball.
    EnteredBall,
    /// Left the stopping domain.
    LeftDomain,
    /// Crossed a coordinate axis (used by backward axis searches).
    AxisCrossing,
    /// Hit a stop-event.
    EventTarget,
    /// A nonnegativity guard tripped.
    NegativityViolation,
    /// State norm exceeded [`DIVERGENCE_NORM`].
    Diverged,
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("field evaluation failed at t = {t}: {source}")]
    Field {
        t: f64,
        #[source]
        source: SystemError,
    },
    #[error("step size underflow at t = {t}, state {state}")]
    StepUnderflow { t: f64, state: Vec2 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    BudgetExhausted { t: f64, max_steps: usize },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
}

/// Tunable integration parameters.
#[derive(Clone, Debug)]
pub struct IntegrationOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub horizon: f64,
    pub max_steps: usize,
    /// Radius used by [`in_basin`] for its capture ball.
    pub ball_radius: f64,
    /// Stop when the state enters this ball.
    pub ball: Option<Ball>,
    /// Stop when the state leaves this rectangle.
    pub domain: Option<Rect>,
    /// Stop at the first crossing of `x = 0` or `y = 0`.
    pub stop_at_axis: bool,
    /// Stop (with [`Termination::NegativityViolation`]) when either
    /// component drops below `-slack`.
    pub nonneg_guard: Option<f64>,
    /// Events to record.
    pub events: Vec<EventSpec>,
    /// Events that also terminate the trajectory.
    pub stop_events: Vec<EventSpec>,
    /// Nominal time of the initial state; samples are reported relative
    /// to it (used to stitch continuations).
    pub t_start: f64,
    /// On step underflow or budget exhaustion, return the partial
    /// trajectory (with a diagnostic note) instead of an error.
    pub allow_partial: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            horizon: DEFAULT_HORIZON,
            max_steps: DEFAULT_MAX_STEPS,
            ball_radius: DEFAULT_BALL_RADIUS,
            ball: None,
            domain: None,
            stop_at_axis: false,
            nonneg_guard: None,
            events: Vec::new(),
            stop_events: Vec::new(),
            t_start: 0.0,
            allow_partial: false,
        }
    }
}

impl IntegrationOptions {
    /// Same options with tolerances tightened by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        let mut o = self.clone();
        o.rel_tol /= factor;
        o.abs_tol /= factor;
        o
    }
}

/// One accepted step with its dense-output coefficients, stored in
/// internal (nonnegative, increasing) time.
#[derive(Clone, Debug)]
struct Step {
    s0: f64,
    h: f64,
    cont: [Vec2; 5],
}

impl Step {
    fn eval(&self, theta: f64) -> Vec2 {
        let th = theta;
        let th1 = 1.0 - theta;
        let [c1, c2, c3, c4, c5] = self.cont;
        c1 + (c2 + (c3 + (c4 + c5.scale(th1)).scale(th)).scale(th1)).scale(th)
    }

    fn at_s(&self, s: f64) -> Vec2 {
        if self.h == 0.0 {
            return self.cont[0];
        }
        self.eval(((s - self.s0) / self.h).clamp(0.0, 1.0))
    }

    fn s_end(&self) -> f64 {
        self.s0 + self.h
    }
}

/// An integrated trajectory with dense output, located events, and the
/// reason it stopped.
#[derive(Clone, Debug)]
pub struct Trajectory {
    direction: Direction,
    t_start: f64,
    initial: Vec2,
    steps: Vec<Step>,
    /// Internal end time; at most the last step's end, smaller when a
    /// stopping condition truncated the final step.
    end_s: f64,
    events: Vec<Event>,
    termination: Termination,
    note: Option<String>,
}

impl Trajectory {
    fn sign(&self) -> f64 {
        match self.direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    fn to_internal(&self, t: f64) -> f64 {
        (t - self.t_start) * self.sign()
    }

    fn to_actual(&self, s: f64) -> f64 {
        self.t_start + self.sign() * s
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn initial(&self) -> Vec2 {
        self.initial
    }

    pub fn start_time(&self) -> f64 {
        self.t_start
    }

    pub fn end_time(&self) -> f64 {
        self.to_actual(self.end_s)
    }

    /// Total integrated span in absolute time units.
    pub fn span(&self) -> f64 {
        self.end_s
    }

    pub fn end_state(&self) -> Vec2 {
        self.state_at(self.end_time())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn termination(&self) -> &Termination {
        &self.termination
    }

    pub fn note(&self) -> Option<&str> {
        self.note.as_deref()
    }

    /// Dense-output evaluation at an absolute time, clamped to the
    /// integrated range.
    pub fn state_at(&self, t: f64) -> Vec2 {
        let s = self.to_internal(t).clamp(0.0, self.end_s);
        if self.steps.is_empty() {
            return self.initial;
        }
        let idx = self
            .steps
            .partition_point(|step| step.s_end() < s)
            .min(self.steps.len() - 1);
        self.steps[idx].at_s(s)
    }

    pub fn x_at(&self, t: f64) -> f64 {
        self.state_at(t).x
    }

    pub fn y_at(&self, t: f64) -> f64 {
        self.state_at(t).y
    }

    /// Internal step-boundary times, strictly increasing and clipped to
    /// the integrated range. Stitched continuations may overlap their
    /// predecessor's final step, hence the cursor.
    fn boundary_s(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut cursor = 0.0f64;
        for step in &self.steps {
            let s = step.s_end().min(self.end_s);
            if s > cursor {
                out.push(s);
                cursor = s;
            }
            if cursor >= self.end_s {
                break;
            }
        }
        out
    }

    /// Absolute times of the accepted step boundaries, ending at
    /// [`Trajectory::end_time`].
    pub fn step_times(&self) -> Vec<f64> {
        self.boundary_s()
            .into_iter()
            .map(|s| self.to_actual(s))
            .collect()
    }

    /// `(t, state)` samples with `per_step` interior points per step.
    pub fn dense_samples(&self, per_step: usize) -> Vec<(f64, Vec2)> {
        let k = per_step.max(1);
        let mut out = Vec::new();
        out.push((self.t_start, self.initial));
        let bounds = self.boundary_s();
        for w in bounds.windows(2) {
            for j in 1..=k {
                let s = w[0] + (w[1] - w[0]) * j as f64 / k as f64;
                out.push((self.to_actual(s), self.state_at(self.to_actual(s))));
            }
        }
        out
    }

    /// Append a continuation integrated from this trajectory's end state.
    /// Panics if the pieces do not line up.
    pub fn extend(mut self, tail: Trajectory) -> Trajectory {
        assert_eq!(self.direction, tail.direction, "direction mismatch");
        assert!(
            (tail.t_start - self.end_time()).abs() <= 1e-9 * (1.0 + self.end_time().abs()),
            "continuation must start at the end time"
        );
        assert!(
            tail.initial.dist(self.end_state()) <= 1e-9 * (1.0 + self.end_state().norm()),
            "continuation must start at the end state"
        );
        let offset = self.end_s;
        // A truncated final step keeps its full dense interpolant: the
        // polynomial is valid over its whole fitted window, so samples in
        // the short overlap with the continuation agree to tolerance.
        for step in &tail.steps {
            let mut s = step.clone();
            s.s0 += offset;
            self.steps.push(s);
        }
        self.end_s = offset + tail.end_s;
        self.events.extend(tail.events.iter().copied());
        self.termination = tail.termination.clone();
        self.note = tail.note.clone();
        self
    }

    /// CSV rows `t,x,y` at the accepted step boundaries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y\n");
        for t in self.step_times() {
            let p = self.state_at(t);
            out.push_str(&format!("{},{},{}\n", t, p.x, p.y));
        }
        out
    }

    /// JSON sidecar describing the located events.
    pub fn events_json(&self) -> serde_json::Value {
        let list: Vec<serde_json::Value> = self
            .events
            .iter()
            .map(|e| {
                let detail = match e.kind {
                    EventKind::FSign { rising } | EventKind::GSign { rising } => {
                        serde_json::json!({ "rising": rising })
                    }
                    EventKind::XLevel { level, rising } | EventKind::YLevel { level, rising } => {
                        serde_json::json!({ "level": level, "rising": rising })
                    }
                    EventKind::XExtremum { maximum } | EventKind::YExtremum { maximum } => {
                        serde_json::json!({ "maximum": maximum })
                    }
                };
                serde_json::json!({
                    "t": e.t,
                    "x": e.point.x,
                    "y": e.point.y,
                    "kind": e.kind.label(),
                    "detail": detail,
                })
            })
            .collect();
        serde_json::json!({
            "termination": format!("{:?}", self.termination),
            "events": list,
        })
    }

    /// Decompose the first component's time course into maximal monotone
    /// pieces. Breakpoints are located by golden-section refinement of the
    /// interpolant, so no field evaluations are needed.
    pub fn monotone_segments(&self) -> Vec<MonotoneSegment<'_>> {
        let samples = self.dense_samples(EVENT_SUBSAMPLES);
        if samples.len() < 2 {
            return Vec::new();
        }
        let mut breaks = vec![self.t_start];
        let mut prev_dir = 0i8;
        for w in samples.windows(2) {
            let dx = w[1].1.x - w[0].1.x;
            let dir = if dx > 0.0 {
                1
            } else if dx < 0.0 {
                -1
            } else {
                0
            };
            if dir != 0 {
                if prev_dir != 0 && dir != prev_dir {
                    // Direction flip inside (w[0].t - delta, w[1].t): refine.
                    let lo = w[0].0 - (w[1].0 - w[0].0);
                    let t_star = self.refine_turning(lo.max(self.t_start), w[1].0, prev_dir);
                    breaks.push(t_star);
                }
                prev_dir = dir;
            }
        }
        breaks.push(self.end_time());
        breaks.sort_by(|a, b| {
            (a * self.sign())
                .partial_cmp(&(b * self.sign()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
        let mut segs = Vec::new();
        for w in breaks.windows(2) {
            if (w[1] - w[0]).abs() <= 1e-12 {
                continue;
            }
            let x_lo = self.x_at(w[0]);
            let x_hi = self.x_at(w[1]);
            segs.push(MonotoneSegment {
                traj: self,
                t_lo: w[0],
                t_hi: w[1],
                x_start: x_lo,
                x_end: x_hi,
            });
        }
        segs
    }

    /// Golden-section search for the x-extremum between `a` and `b`.
    /// `prev_dir > 0` means x was increasing, so the turning point is a
    /// maximum.
    fn refine_turning(&self, a: f64, b: f64, prev_dir: i8) -> f64 {
        let maximize = prev_dir > 0;
        let obj = |t: f64| {
            let v = self.x_at(t);
            if maximize {
                -v
            } else {
                v
            }
        };
        let phi = 0.5 * (3.0 - 5.0f64.sqrt());
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        let mut c = lo + phi * (hi - lo);
        let mut d = hi - phi * (hi - lo);
        let (mut fc, mut fd) = (obj(c), obj(d));
        for _ in 0..80 {
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
        0.5 * (lo + hi)
    }
}

/// A time window over which the first component is monotone.
#[derive(Clone, Copy)]
pub struct MonotoneSegment<'a> {
    traj: &'a Trajectory,
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_start: f64,
    pub x_end: f64,
}

impl<'a> MonotoneSegment<'a> {
    pub fn increasing(&self) -> bool {
        self.x_end > self.x_start
    }

    pub fn x_min(&self) -> f64 {
        self.x_start.min(self.x_end)
    }

    pub fn x_max(&self) -> f64 {
        self.x_start.max(self.x_end)
    }

    /// Time at which the segment attains `x`, by bisection on the
    /// monotone interpolant. `None` when `x` lies outside the segment.
    pub fn time_at_x(&self, x: f64) -> Option<f64> {
        if x < self.x_min() - 1e-12 || x > self.x_max() + 1e-12 {
            return None;
        }
        let (mut lo, mut hi) = (self.t_lo, self.t_hi);
        let increasing = self.increasing();
        for _ in 0..90 {
            let mid = 0.5 * (lo + hi);
            let v = self.traj.x_at(mid);
            let below = if increasing { v < x } else { v > x };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Second component of the trajectory where it attains `x`.
    pub fn y_at_x(&self, x: f64) -> Option<f64> {
        self.time_at_x(x).map(|t| self.traj.y_at(t))
    }
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) stepper
// ---------------------------------------------------------------------------

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const MAX_GROW: f64 = 10.0;
const MAX_SHRINK: f64 = 5.0;

struct StopHit {
    s: f64,
    termination: Termination,
}

/// Integrate from `y0` until the horizon or a stopping condition.
pub fn integrate(
    sys: &PlanarSystem,
    y0: Vec2,
    direction: Direction,
    opts: &IntegrationOptions,
) -> Result<Trajectory, IntegrateError> {
    if !(opts.horizon > 0.0) {
        return Err(IntegrateError::BadHorizon(opts.horizon));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let rhs = |s: f64, p: Vec2| -> Result<Vec2, IntegrateError> {
        let v = sys.eval(p).map_err(|source| IntegrateError::Field {
            t: opts.t_start + sign * s,
            source,
        })?;
        Ok(v.scale(sign))
    };

    let mut traj = Trajectory {
        direction,
        t_start: opts.t_start,
        initial: y0,
        steps: Vec::new(),
        end_s: 0.0,
        events: Vec::new(),
        termination: Termination::Horizon,
        note: None,
    };

    // Stopping sets that already hold at the initial state.
    if let Some(ball) = opts.ball {
        if y0.dist(ball.center) <= ball.radius {
            traj.termination = Termination::EnteredBall;
            return Ok(traj);
        }
    }
    if let Some(domain) = opts.domain {
        if !domain.contains(y0) {
            traj.termination = Termination::LeftDomain;
            return Ok(traj);
        }
    }

    let s_end = opts.horizon;
    let mut s = 0.0;
    let mut y = y0;
    let mut k1 = rhs(s, y)?;
    let mut h = initial_step(&rhs, s, y, k1, opts, s_end)?;
    let mut facold: f64 = 1e-4;
    let mut steps_taken = 0usize;

    // Sign memories for the event functions, seeded at the initial state.
    let mut watchers: Vec<(EventSpec, bool, i8)> = Vec::new();
    for spec in &opts.events {
        watchers.push((*spec, false, 0));
    }
    for spec in &opts.stop_events {
        watchers.push((*spec, true, 0));
    }
    for (spec, _, sign_mem) in watchers.iter_mut() {
        if let Ok(v) = event_value(sys, *spec, y0) {
            *sign_mem = num_sign(v);
        }
    }

    loop {
        if s >= s_end - 1e-14 * s_end.max(1.0) {
            traj.end_s = s;
            traj.termination = Termination::Horizon;
            return Ok(traj);
        }
        if steps_taken >= opts.max_steps {
            if opts.allow_partial {
                traj.end_s = s;
                traj.termination = Termination::Horizon;
                traj.note = Some(format!("step budget {} exhausted", opts.max_steps));
                return Ok(traj);
            }
            return Err(IntegrateError::BudgetExhausted {
                t: opts.t_start + sign * s,
                max_steps: opts.max_steps,
            });
        }
        steps_taken += 1;
        if s + h > s_end {
            h = s_end - s;
        }
        if h < 1e-14 * s.max(1.0) {
            if opts.allow_partial {
                traj.end_s = s;
                traj.termination = Termination::Horizon;
                traj.note = Some(format!("step size underflow at t = {}", opts.t_start + sign * s));
                return Ok(traj);
            }
            return Err(IntegrateError::StepUnderflow {
                t: opts.t_start + sign * s,
                state: y,
            });
        }

        // One Dormand-Prince attempt. A field failure inside the step is
        // treated like an oversized step: retry smaller.
        let attempt = dopri_step(&rhs, s, y, k1, h);
        let (y_new, k7, err_vec) = match attempt {
            Ok(v) => v,
            Err(_) if h > 1e-12 * s.max(1.0) => {
                h *= 0.25;
                continue;
            }
            Err(e) => {
                if opts.allow_partial {
                    traj.end_s = s;
                    traj.termination = Termination::Horizon;
                    traj.note = Some(format!("field became undefined: {e}"));
                    return Ok(traj);
                }
                return Err(e);
            }
        };

        let sc_x = opts.abs_tol + opts.rel_tol * y.x.abs().max(y_new.x.abs());
        let sc_y = opts.abs_tol + opts.rel_tol * y.y.abs().max(y_new.y.abs());
        let ex = err_vec.x / sc_x;
        let ey = err_vec.y / sc_y;
        let err = (0.5 * (ex * ex + ey * ey)).sqrt();

        if !(err.is_finite()) || err > 1.0 {
            // Rejected: shrink and retry.
            let fac11 = if err.is_finite() {
                err.powf(EXPO1)
            } else {
                MAX_SHRINK
            };
            h /= (fac11 / SAFETY).clamp(1.0, MAX_SHRINK);
            continue;
        }

        // Accepted. Build the dense coefficients.
        let step = make_dense(&rhs, s, y, y_new, k1, k7, h)?;

        // Scan the fresh step for events and stopping conditions.
        let (mut new_events, stop) = scan_step(sys, &step, &mut watchers, opts);
        for ev in new_events.iter_mut() {
            ev.t = opts.t_start + sign * ev.t;
        }
        traj.steps.push(step);

        if let Some(hit) = stop {
            new_events.retain(|e| (e.t - opts.t_start) * sign <= hit.s + 1e-12);
            traj.events.extend(new_events);
            traj.end_s = hit.s;
            traj.termination = hit.termination;
            return Ok(traj);
        }
        traj.events.extend(new_events);

        s += h;
        traj.end_s = s;
        y = y_new;
        k1 = k7; // FSAL

        if y.norm_inf() > DIVERGENCE_NORM {
            traj.termination = Termination::Diverged;
            return Ok(traj);
        }

        let fac11 = err.powf(EXPO1);
        let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / MAX_GROW, MAX_SHRINK);
        facold = err.max(1e-4);
        h /= fac;
    }
}

#[allow(clippy::type_complexity)]
fn dopri_step(
    rhs: &dyn Fn(f64, Vec2) -> Result<Vec2, IntegrateError>,
    s: f64,
    y: Vec2,
    k1: Vec2,
    h: f64,
) -> Result<(Vec2, Vec2, Vec2), IntegrateError> {
    let k2 = rhs(s + C2 * h, y + k1.scale(A21 * h))?;
    let k3 = rhs(s + C3 * h, y + (k1.scale(A31) + k2.scale(A32)).scale(h))?;
    let k4 = rhs(
        s + C4 * h,
        y + (k1.scale(A41) + k2.scale(A42) + k3.scale(A43)).scale(h),
    )?;
    let k5 = rhs(
        s + C5 * h,
        y + (k1.scale(A51) + k2.scale(A52) + k3.scale(A53) + k4.scale(A54)).scale(h),
    )?;
    let k6 = rhs(
        s + h,
        y + (k1.scale(A61) + k2.scale(A62) + k3.scale(A63) + k4.scale(A64) + k5.scale(A65))
            .scale(h),
    )?;
    let y_new = y
        + (k1.scale(A71) + k3.scale(A73) + k4.scale(A74) + k5.scale(A75) + k6.scale(A76)).scale(h);
    let k7 = rhs(s + h, y_new)?;
    let err = (k1.scale(E1) + k3.scale(E3) + k4.scale(E4) + k5.scale(E5) + k6.scale(E6)
        + k7.scale(E7))
    .scale(h);
    if !y_new.is_finite() {
        return Err(IntegrateError::StepUnderflow { t: s, state: y });
    }
    Ok((y_new, k7, err))
}

/// Dense coefficients for the accepted step. Recomputes the interior
/// stages; clearer than threading all seven k's out of the attempt, and
/// only done for accepted steps.
fn make_dense(
    rhs: &dyn Fn(f64, Vec2) -> Result<Vec2, IntegrateError>,
    s: f64,
    y: Vec2,
    y_new: Vec2,
    k1: Vec2,
    k7: Vec2,
    h: f64,
) -> Result<Step, IntegrateError> {
    let k2 = rhs(s + C2 * h, y + k1.scale(A21 * h))?;
    let k3 = rhs(s + C3 * h, y + (k1.scale(A31) + k2.scale(A32)).scale(h))?;
    let k4 = rhs(
        s + C4 * h,
        y + (k1.scale(A41) + k2.scale(A42) + k3.scale(A43)).scale(h),
    )?;
    let k5 = rhs(
        s + C5 * h,
        y + (k1.scale(A51) + k2.scale(A52) + k3.scale(A53) + k4.scale(A54)).scale(h),
    )?;
    let k6 = rhs(
        s + h,
        y + (k1.scale(A61) + k2.scale(A62) + k3.scale(A63) + k4.scale(A64) + k5.scale(A65))
            .scale(h),
    )?;
    let dy = y_new - y;
    let c1 = y;
    let c2 = dy;
    let c3 = k1.scale(h) - dy;
    let c4 = dy - k7.scale(h) - c3;
    let c5 = (k1.scale(D1) + k3.scale(D3) + k4.scale(D4) + k5.scale(D5) + k6.scale(D6)
        + k7.scale(D7))
    .scale(h);
    Ok(Step {
        s0: s,
        h,
        cont: [c1, c2, c3, c4, c5],
    })
}

fn initial_step(
    rhs: &dyn Fn(f64, Vec2) -> Result<Vec2, IntegrateError>,
    s: f64,
    y: Vec2,
    f0: Vec2,
    opts: &IntegrationOptions,
    s_end: f64,
) -> Result<f64, IntegrateError> {
    let sc_x = opts.abs_tol + opts.rel_tol * y.x.abs();
    let sc_y = opts.abs_tol + opts.rel_tol * y.y.abs();
    let d0 = ((y.x / sc_x).powi(2) + (y.y / sc_y).powi(2)).sqrt() / 2f64.sqrt();
    let d1 = ((f0.x / sc_x).powi(2) + (f0.y / sc_y).powi(2)).sqrt() / 2f64.sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(s_end - s);
    let y1 = y + f0.scale(h0);
    let f1 = match rhs(s + h0, y1) {
        Ok(v) => v,
        Err(_) => return Ok((h0 * 1e-2).max(1e-10)),
    };
    let d2 = (((f1.x - f0.x) / sc_x).powi(2) + ((f1.y - f0.y) / sc_y).powi(2)).sqrt()
        / (2f64.sqrt() * h0);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(s_end - s))
}

fn num_sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn event_value(sys: &PlanarSystem, spec: EventSpec, p: Vec2) -> Result<f64, SystemError> {
    match spec {
        EventSpec::FSign | EventSpec::XExtremum => sys.f(p),
        EventSpec::GSign | EventSpec::YExtremum => sys.g(p),
        EventSpec::XLevel(level) => Ok(p.x - level),
        EventSpec::YLevel(level) => Ok(p.y - level),
    }
}

fn event_kind(spec: EventSpec, rising: bool) -> EventKind {
    match spec {
        EventSpec::FSign => EventKind::FSign { rising },
        EventSpec::GSign => EventKind::GSign { rising },
        EventSpec::XLevel(level) => EventKind::XLevel { level, rising },
        EventSpec::YLevel(level) => EventKind::YLevel { level, rising },
        // For a forward trajectory f falling through zero is a maximum of x.
        EventSpec::XExtremum => EventKind::XExtremum { maximum: !rising },
        EventSpec::YExtremum => EventKind::YExtremum { maximum: !rising },
    }
}

/// Scan a freshly accepted step for events and stopping conditions.
/// Event times in the result are internal (the caller converts to actual
/// flow time); the returned hit, if any, is the earliest stop.
fn scan_step(
    sys: &PlanarSystem,
    step: &Step,
    watchers: &mut [(EventSpec, bool, i8)],
    opts: &IntegrationOptions,
) -> (Vec<Event>, Option<StopHit>) {
    let n = EVENT_SUBSAMPLES;
    let mut earliest: Option<StopHit> = None;
    let consider = |hit: StopHit, earliest: &mut Option<StopHit>| {
        if earliest.as_ref().map_or(true, |e| hit.s < e.s) {
            *earliest = Some(hit);
        }
    };

    // Watched event functions.
    let mut new_events: Vec<Event> = Vec::new();
    for (spec, stops, sign_mem) in watchers.iter_mut() {
        let mut prev_s = step.s0;
        for j in 1..=n {
            let s_j = step.s0 + step.h * j as f64 / n as f64;
            let p = step.at_s(s_j);
            let Ok(v) = event_value(sys, *spec, p) else {
                prev_s = s_j;
                continue;
            };
            let sg = num_sign(v);
            if sg != 0 {
                if *sign_mem != 0 && sg != *sign_mem {
                    let rising = sg > 0;
                    if let Some(s_cross) = bisect_event(sys, *spec, step, prev_s, s_j) {
                        new_events.push(Event {
                            t: s_cross,
                            point: step.at_s(s_cross),
                            kind: event_kind(*spec, rising),
                        });
                        if *stops {
                            consider(
                                StopHit {
                                    s: s_cross,
                                    termination: Termination::EventTarget,
                                },
                                &mut earliest,
                            );
                        }
                    }
                }
                *sign_mem = sg;
            }
            prev_s = s_j;
        }
    }

    // Built-in stopping probes share the subsample scan.
    if let Some(ball) = opts.ball {
        if let Some(s_hit) = probe_crossing(step, n, |p| p.dist(ball.center) - ball.radius) {
            consider(
                StopHit {
                    s: s_hit,
                    termination: Termination::EnteredBall,
                },
                &mut earliest,
            );
        }
    }
    if let Some(domain) = opts.domain {
        let probes: [Box<dyn Fn(Vec2) -> f64>; 4] = [
            Box::new(move |p: Vec2| p.x - domain.x0),
            Box::new(move |p: Vec2| domain.x1 - p.x),
            Box::new(move |p: Vec2| p.y - domain.y0),
            Box::new(move |p: Vec2| domain.y1 - p.y),
        ];
        for probe in probes.iter() {
            if let Some(s_hit) = probe_crossing(step, n, probe) {
                consider(
                    StopHit {
                        s: s_hit,
                        termination: Termination::LeftDomain,
                    },
                    &mut earliest,
                );
            }
        }
    }
    if opts.stop_at_axis {
        for probe in [|p: Vec2| p.x, |p: Vec2| p.y] {
            if let Some(s_hit) = probe_crossing(step, n, probe) {
                consider(
                    StopHit {
                        s: s_hit,
                        termination: Termination::AxisCrossing,
                    },
                    &mut earliest,
                );
            }
        }
    }
    if let Some(slack) = opts.nonneg_guard {
        if let Some(s_hit) = probe_crossing(step, n, move |p| p.x.min(p.y) + slack) {
            consider(
                StopHit {
                    s: s_hit,
                    termination: Termination::NegativityViolation,
                },
                &mut earliest,
            );
        }
    }

    new_events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal));
    (new_events, earliest)
}

/// First falling crossing of `probe` (positive to negative) on the step.
fn probe_crossing(step: &Step, n: usize, probe: impl Fn(Vec2) -> f64) -> Option<f64> {
    let mut prev_s = step.s0;
    let mut prev_v = probe(step.at_s(step.s0));
    for j in 1..=n {
        let s_j = step.s0 + step.h * j as f64 / n as f64;
        let v = probe(step.at_s(s_j));
        if prev_v > 0.0 && v <= 0.0 {
            // Bisect to the crossing.
            let (mut lo, mut hi) = (prev_s, s_j);
            for _ in 0..EVENT_REFINE_MAX_DEPTH {
                let mid = 0.5 * (lo + hi);
                let vm = probe(step.at_s(mid));
                if vm.abs() <= EVENT_REFINE_TOL {
                    return Some(mid);
                }
                if vm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        prev_s = s_j;
        prev_v = v;
    }
    let _ = prev_s;
    None
}

fn bisect_event(
    sys: &PlanarSystem,
    spec: EventSpec,
    step: &Step,
    s_lo: f64,
    s_hi: f64,
) -> Option<f64> {
    let value = |s: f64| event_value(sys, spec, step.at_s(s)).ok();
    let mut lo = s_lo;
    let mut hi = s_hi;
    let mut v_lo = value(lo)?;
    for _ in 0..EVENT_REFINE_MAX_DEPTH {
        let mid = 0.5 * (lo + hi);
        let vm = value(mid)?;
        if vm.abs() <= EVENT_REFINE_TOL || (hi - lo) <= 1e-15 * (1.0 + mid.abs()) {
            return Some(mid);
        }
        if (vm > 0.0) == (v_lo > 0.0) {
            lo = mid;
            v_lo = vm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Basin membership and backward axis search
// ---------------------------------------------------------------------------

/// Outcome of a basin-membership probe.
#[derive(Clone, Debug, PartialEq)]
pub enum BasinStatus {
    /// Entered the capture ball while staying (essentially) nonnegative.
    Converged { t_entry: f64 },
    /// Dropped below `-`[`NONNEG_SLACK`] before converging.
    NegativeExcursion { t: f64 },
    /// Norm blew past [`DIVERGENCE_NORM`].
    Diverged { t: f64 },
    /// Horizon (or step budget) exhausted without a decision; treated as
    /// "not in the basin" but flagged inconclusive.
    HorizonExhausted,
}

impl BasinStatus {
    pub fn is_in(&self) -> bool {
        matches!(self, BasinStatus::Converged { .. })
    }

    pub fn conclusive(&self) -> bool {
        !matches!(self, BasinStatus::HorizonExhausted)
    }

    pub fn label(&self) -> &'static str {
        match self {
            BasinStatus::Converged { .. } => "converged",
            BasinStatus::NegativeExcursion { .. } => "negative-excursion",
            BasinStatus::Diverged { .. } => "diverged",
            BasinStatus::HorizonExhausted => "horizon-exhausted",
        }
    }
}

/// Does the forward trajectory from `p0` reach the `opts.ball_radius`
/// ball around `fp` within the horizon while staying in the nonnegative
/// quadrant (within [`NONNEG_SLACK`])?
pub fn in_basin(
    sys: &PlanarSystem,
    p0: Vec2,
    fp: Vec2,
    opts: &IntegrationOptions,
) -> Result<BasinStatus, IntegrateError> {
    let mut o = opts.clone();
    o.ball = Some(Ball {
        center: fp,
        radius: opts.ball_radius,
    });
    o.nonneg_guard = Some(NONNEG_SLACK);
    o.events = Vec::new();
    o.stop_events = Vec::new();
    o.allow_partial = true;
    let traj = integrate(sys, p0, Direction::Forward, &o)?;
    Ok(match traj.termination() {
        Termination::EnteredBall => BasinStatus::Converged {
            t_entry: traj.end_time(),
        },
        Termination::NegativityViolation => BasinStatus::NegativeExcursion {
            t: traj.end_time(),
        },
        Termination::Diverged => BasinStatus::Diverged {
            t: traj.end_time(),
        },
        _ => BasinStatus::HorizonExhausted,
    })
}

/// Integrate backward from `p0` until the trajectory crosses a coordinate
/// axis. The end state is the axis intersection; times along the result
/// are negative. Backward blow-up before reaching an axis yields a
/// trajectory terminated by [`Termination::Horizon`] with a diagnostic
/// note.
pub fn integrate_backward_to_axis(
    sys: &PlanarSystem,
    p0: Vec2,
    opts: &IntegrationOptions,
) -> Result<Trajectory, IntegrateError> {
    let mut o = opts.clone();
    o.stop_at_axis = true;
    o.allow_partial = true;
    o.ball = None;
    integrate(sys, p0, Direction::Backward, &o)
}
