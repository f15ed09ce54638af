//! Passage-time bounds and closed-form guarantees built from isocline
//! speeds.
//!
//! A trajectory piece running from its start down (or up) to a terminal
//! first-component level splits into monotone graph segments at the
//! drive's sign changes. On each segment the travel time is bracketed
//! by `|dx| / extreme(|f|)`: dividing by the largest speed along the
//! segment gives a lower bound, by the smallest an upper bound. When
//! the perturbed trajectory's upper bound beats the reference's lower
//! bound, the perturbed one arrives first and must dip below.
//!
//! For the built-in saturating system there is also a closed-form chord
//! integral and a sufficient inequality that decides a dip without any
//! integration.

use crate::integrate::Trajectory;
use crate::linalg::Vec2;
use crate::system::{BuiltinId, PlanarSystem};
use crate::tolerance::{assumption, ToleranceError};

/// Samples of `|f|` per segment before polishing the extremes.
const SEGMENT_SAMPLES: usize = 1024;
/// An inf-speed at or below this is treated as zero (the segment
/// touches a turning point), making the upper bound unbounded.
pub const UNBOUNDED_SPEED_EPS: f64 = 1e-9;

/// One monotone graph segment with its speed extremes.
#[derive(Clone, Debug)]
pub struct GraphSegment {
    pub t_from: f64,
    pub t_to: f64,
    pub x_from: f64,
    pub x_to: f64,
    pub y_from: f64,
    pub y_to: f64,
    /// Largest `|f|` along the segment.
    pub sup_speed: f64,
    /// Smallest `|f|` along the segment.
    pub inf_speed: f64,
}

impl GraphSegment {
    pub fn dt(&self) -> f64 {
        self.t_to - self.t_from
    }

    pub fn dx_abs(&self) -> f64 {
        (self.x_to - self.x_from).abs()
    }
}

/// A trajectory piece from its start to a terminal first-component
/// level, split into monotone segments at drive sign changes.
#[derive(Clone, Debug)]
pub struct SegmentDecomposition {
    pub segments: Vec<GraphSegment>,
    /// First components at the segment boundaries, start first.
    pub breakpoints: Vec<f64>,
    pub x_terminal: f64,
    pub y_terminal: f64,
    /// Time at which the terminal level is first attained.
    pub t_terminal: f64,
    /// `|f|` at the start point.
    pub start_speed: f64,
    /// `|f|` at the terminal point.
    pub terminal_speed: f64,
}

impl SegmentDecomposition {
    /// Largest first component over the decomposed piece.
    pub fn x_max(&self) -> f64 {
        self.breakpoints.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Split the trajectory at its drive sign changes, stopping at the
/// first time the first component attains `x_f`.
pub fn decompose_segments(
    sys: &PlanarSystem,
    traj: &Trajectory,
    x_f: f64,
) -> Result<SegmentDecomposition, ToleranceError> {
    let pieces = traj.monotone_segments();
    let mut t_end = None;
    for s in &pieces {
        if let Some(t) = s.time_at_x(x_f) {
            t_end = Some(t);
            break;
        }
    }
    let Some(t_end) = t_end else {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &pieces {
            lo = lo.min(s.x_min());
            hi = hi.max(s.x_max());
        }
        return Err(assumption(
            "the trajectory attains the terminal level",
            format!("x = {x_f} is never reached; the first component covers [{lo:.6}, {hi:.6}]"),
        ));
    };
    if t_end <= 0.0 {
        return Err(assumption(
            "the terminal level differs from the starting level",
            format!("x = {x_f} is attained at t = 0"),
        ));
    }

    let mut knots = vec![0.0];
    for s in pieces.iter().skip(1) {
        if s.t_lo > 0.0 && s.t_lo < t_end {
            knots.push(s.t_lo);
        }
    }
    knots.push(t_end);

    let mut segments = Vec::new();
    let mut breakpoints = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pa = traj.state_at(a);
        let pb = traj.state_at(b);
        let (sup, inf) = speed_extremes(sys, traj, a, b)?;
        breakpoints.push(pa.x);
        segments.push(GraphSegment {
            t_from: a,
            t_to: b,
            x_from: pa.x,
            x_to: pb.x,
            y_from: pa.y,
            y_to: pb.y,
            sup_speed: sup,
            inf_speed: inf,
        });
    }
    let terminal = traj.state_at(t_end);
    breakpoints.push(terminal.x);
    Ok(SegmentDecomposition {
        segments,
        breakpoints,
        x_terminal: terminal.x,
        y_terminal: terminal.y,
        t_terminal: t_end,
        start_speed: sys.f(traj.state_at(0.0))?.abs(),
        terminal_speed: sys.f(terminal)?.abs(),
    })
}

/// Sampled extremes of `|f|` along the trajectory on `[t_lo, t_hi]`,
/// polished by golden section around the best samples.
fn speed_extremes(
    sys: &PlanarSystem,
    traj: &Trajectory,
    t_lo: f64,
    t_hi: f64,
) -> Result<(f64, f64), ToleranceError> {
    let n = SEGMENT_SAMPLES;
    let mut vals = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = t_lo + (t_hi - t_lo) * j as f64 / n as f64;
        vals.push(sys.f(traj.state_at(t))?.abs());
    }
    let speed = |t: f64| sys.f(traj.state_at(t)).map(f64::abs).unwrap_or(f64::NAN);
    let at = |j: usize| t_lo + (t_hi - t_lo) * j as f64 / n as f64;

    let j_max = (0..=n).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let j_min = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let bracket = |j: usize| (at(j.saturating_sub(1)), at((j + 1).min(n)));

    let (lo, hi) = bracket(j_max);
    let polished_max = golden_max(lo, hi, &speed);
    let (lo, hi) = bracket(j_min);
    let polished_min = -golden_max(lo, hi, &|t| -speed(t));

    let sup = if polished_max.is_nan() { vals[j_max] } else { polished_max.max(vals[j_max]) };
    let inf = if polished_min.is_nan() { vals[j_min] } else { polished_min.min(vals[j_min]) };
    Ok((sup, inf))
}

fn golden_max(mut lo: f64, mut hi: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Passage-time bounds for a reference/perturbed pair of decompositions
/// sharing a terminal level.
#[derive(Clone, Debug)]
pub struct BoundReport {
    /// `sum |dx| / sup|f|` over the reference segments: the reference
    /// cannot arrive sooner than this.
    pub lower_reference_time: f64,
    /// `sum |dx| / inf|f|` over the perturbed segments: the perturbed
    /// trajectory cannot take longer.
    pub upper_perturbed_time: f64,
    /// Upper bound strictly beats lower bound: the perturbed trajectory
    /// provably arrives first, so it dips below the reference.
    pub condition: bool,
    /// A perturbed segment had (numerically) zero minimum speed, so its
    /// upper bound is infinite and the condition cannot hold.
    pub unbounded_perturbed_bound: bool,
    /// Largest `|f|` on the first reference segment. When the drive's
    /// magnitude peaks at the start this equals `|f(start)|`.
    pub c_reference: f64,
    /// `|f|` at the shared terminal point (the isocline through it).
    /// The interior sup of the final segment can exceed this; bounds
    /// use the sup, reported constants use the terminal value.
    pub c_terminal: f64,
    /// Smallest `|f|` along the perturbed piece.
    pub c_perturbed: f64,
    pub x_start: f64,
    /// Largest first component of the reference piece.
    pub x_max: f64,
    pub y_at_max: f64,
    pub x_terminal: f64,
    pub y_terminal: f64,
    /// Expanded guarantee level: starts below this (with the same
    /// terminal data) inherit the arrival argument. Present when the
    /// constants admit the formula.
    pub expanded_max: Option<f64>,
}

impl BoundReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lower_reference_time": self.lower_reference_time,
            "upper_perturbed_time": if self.upper_perturbed_time.is_finite() {
                serde_json::json!(self.upper_perturbed_time)
            } else {
                serde_json::json!("unbounded")
            },
            "condition": self.condition,
            "unbounded_perturbed_bound": self.unbounded_perturbed_bound,
            "c_reference": self.c_reference,
            "c_terminal": self.c_terminal,
            "c_perturbed": self.c_perturbed,
            "x_start": self.x_start,
            "x_max": self.x_max,
            "y_at_max": self.y_at_max,
            "x_terminal": self.x_terminal,
            "y_terminal": self.y_terminal,
            "expanded_max": self.expanded_max,
        })
    }
}

/// Compare passage-time bounds of the two decompositions.
pub fn passage_time_bounds(
    dec_reference: &SegmentDecomposition,
    dec_perturbed: &SegmentDecomposition,
) -> Result<BoundReport, ToleranceError> {
    if (dec_reference.x_terminal - dec_perturbed.x_terminal).abs() > 1e-9 {
        return Err(assumption(
            "both decompositions share the terminal level",
            format!(
                "reference ends at x = {}, perturbed at x = {}",
                dec_reference.x_terminal, dec_perturbed.x_terminal
            ),
        ));
    }

    let mut lower = 0.0;
    for s in &dec_reference.segments {
        if s.dx_abs() > 0.0 && s.sup_speed > 0.0 {
            lower += s.dx_abs() / s.sup_speed;
        }
    }
    let mut upper = 0.0f64;
    let mut unbounded = false;
    for s in &dec_perturbed.segments {
        if s.dx_abs() == 0.0 {
            continue;
        }
        if s.inf_speed <= UNBOUNDED_SPEED_EPS {
            unbounded = true;
            upper = f64::INFINITY;
            break;
        }
        upper += s.dx_abs() / s.inf_speed;
    }

    let x_start = dec_reference.breakpoints[0];
    let x_max = dec_reference.x_max();
    let y_at_max = dec_reference
        .segments
        .iter()
        .flat_map(|s| [(s.x_from, s.y_from), (s.x_to, s.y_to)])
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, y)| y)
        .unwrap_or(f64::NAN);
    let c_reference = dec_reference.segments.first().map(|s| s.sup_speed).unwrap_or(0.0);
    let c_terminal = dec_reference.terminal_speed;
    let c_perturbed = dec_perturbed
        .segments
        .iter()
        .map(|s| s.inf_speed)
        .fold(f64::INFINITY, f64::min);

    let expanded_max = expanded_bound(
        c_reference,
        c_terminal,
        c_perturbed,
        x_start,
        x_max,
        dec_reference.x_terminal,
    )
    .ok();

    Ok(BoundReport {
        lower_reference_time: lower,
        upper_perturbed_time: upper,
        condition: upper.is_finite() && upper < lower,
        unbounded_perturbed_bound: unbounded,
        c_reference,
        c_terminal,
        c_perturbed,
        x_start,
        x_max,
        y_at_max,
        x_terminal: dec_reference.x_terminal,
        y_terminal: dec_reference.y_terminal,
        expanded_max,
    })
}

/// Expanded guarantee level
/// `x_max + (c_p - c_t)/c_t (x_max - x_term) + c_p/c_r (x_max - x_start)`:
/// perturbed starts left of this level arrive before the reference's
/// lower bound allows. Exceeds `x_max` whenever `c_p > c_t`.
pub fn expanded_bound(
    c_r: f64,
    c_t: f64,
    c_p: f64,
    x_start: f64,
    x_max: f64,
    x_term: f64,
) -> Result<f64, ToleranceError> {
    let pre_ok = c_r > 0.0
        && c_t > 0.0
        && c_p > 0.0
        && c_r.is_finite()
        && c_t.is_finite()
        && c_p.is_finite()
        && x_max >= x_start
        && x_max >= x_term;
    if !pre_ok {
        return Err(assumption(
            "speed constants are positive and the maximum dominates both endpoints",
            format!(
                "c_r = {c_r}, c_t = {c_t}, c_p = {c_p}, x_start = {x_start}, x_max = {x_max}, x_term = {x_term}"
            ),
        ));
    }
    Ok(x_max + (c_p - c_t) / c_t * (x_max - x_term) + c_p / c_r * (x_max - x_start))
}

/// Closed form of the chord integral
/// `int_a^b du / (u^2/(1+w) - u)`: the travel time of the first
/// component from `a` to `b` when the second component is frozen at
/// `w` in the saturating system.
pub fn chord_time(w: f64, a: f64, b: f64) -> Result<f64, ToleranceError> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && w.is_finite()) {
        return Err(assumption(
            "chord endpoints are positive and finite",
            format!("w = {w}, a = {a}, b = {b}"),
        ));
    }
    if a == b {
        return Ok(0.0);
    }
    let s = 1.0 + w;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if s >= lo && s <= hi {
        return Err(assumption(
            "the integrand has no zero between the endpoints",
            format!("1 + w = {s} lies in [{lo}, {hi}]"),
        ));
    }
    Ok(((s - b).abs() / (s - a).abs()).ln() + (a / b).ln())
}

/// Verdict of the closed-form sufficient inequality.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionOutcome {
    /// The inequality holds: a dip below the reference is guaranteed.
    Holds,
    /// The inequality fails; nothing is concluded.
    Fails,
    /// A precondition fails; the formula does not speak to this input.
    Inapplicable { reason: String },
}

fn condition_rhs(y_b: f64, x_p: f64, x_f: f64) -> f64 {
    (1.0 + y_b - x_f) * x_p / (1.0 + y_b - x_p)
}

/// Closed-form sufficient dip condition for the built-in saturating
/// system (`ex2`) only; its algebra encodes that system's drive.
///
/// `x_m` is the reference's largest first component (for a descending
/// reference pass the start level), `x_f`/`y_f` the point where the
/// reference's second component peaks. The perturbed height is mapped
/// through the chord integral to a conservative height `y_b`, and the
/// inequality compares isocline ratios at the two starts.
pub fn example2_tolerance_condition(
    sys: &PlanarSystem,
    r0: Vec2,
    p0: Vec2,
    x_m: f64,
    x_f: f64,
    y_f: f64,
) -> Result<ConditionOutcome, ToleranceError> {
    if sys.builtin_id() != Some(BuiltinId::Ex2) {
        return Err(assumption(
            "the closed-form condition applies only to the built-in saturating system",
            format!("system is {}", sys.name()),
        ));
    }
    let na = |reason: String| Ok(ConditionOutcome::Inapplicable { reason });
    if !(p0.x > r0.x) {
        return na(format!(
            "perturbed start x = {} is not strictly right of the reference x = {}",
            p0.x, r0.x
        ));
    }
    if !(p0.y > y_f) {
        return na(format!(
            "perturbed height y = {} does not exceed the reference's peak height y = {y_f}",
            p0.y
        ));
    }
    let delta = match chord_time(y_f, p0.x, x_f) {
        Ok(d) => d,
        Err(e) => return na(format!("chord integral is singular: {e}")),
    };
    let y_b = y_f + (p0.y - y_f) * (-delta / 2.0).exp();

    let lhs_den = (1.0 - x_m + y_f) * (r0.x - 1.0 - r0.y);
    if lhs_den == 0.0 {
        return na("left side has a vanishing denominator".to_string());
    }
    let lhs = r0.x * (1.0 - x_f + y_f) * (x_m - 1.0 - r0.y) / lhs_den;
    let rhs_den = 1.0 + y_b - p0.x;
    if rhs_den == 0.0 {
        return na("right side has a vanishing denominator".to_string());
    }
    let rhs = condition_rhs(y_b, p0.x, x_f);
    if lhs <= 0.0 || rhs <= 0.0 {
        return na(format!("both sides must be positive (left = {lhs:.6}, right = {rhs:.6})"));
    }
    Ok(if lhs > rhs { ConditionOutcome::Holds } else { ConditionOutcome::Fails })
}

/// Time and state of the trajectory's highest second component,
/// polished by golden section between the neighbouring dense samples.
pub fn y_peak(traj: &Trajectory) -> (f64, Vec2) {
    let samples = traj.dense_samples(4);
    let j = (0..samples.len())
        .max_by(|&a, &b| samples[a].1.y.total_cmp(&samples[b].1.y))
        .unwrap();
    let lo = samples[j.saturating_sub(1)].0;
    let hi = samples[(j + 1).min(samples.len() - 1)].0;
    let mut best_t = samples[j].0;
    let mut best_y = samples[j].1.y;
    if hi > lo {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let (mut lo, mut hi) = (lo, hi);
        let mut c = hi - INV_PHI * (hi - lo);
        let mut d = lo + INV_PHI * (hi - lo);
        for _ in 0..80 {
            if hi - lo < 1e-13 * (1.0 + hi.abs()) {
                break;
            }
            if traj.y_at(c) > traj.y_at(d) {
                hi = d;
                d = c;
                c = hi - INV_PHI * (hi - lo);
            } else {
                lo = c;
                c = d;
                d = lo + INV_PHI * (hi - lo);
            }
        }
        let mid = 0.5 * (lo + hi);
        if traj.y_at(mid) > best_y {
            best_y = traj.y_at(mid);
            best_t = mid;
        }
    }
    let _ = best_y;
    (best_t, traj.state_at(best_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate, Direction, EventSpec};
    use crate::linalg::Mat2;
    use crate::system::PlanarSystem;
    use crate::tolerance::{ball_run, locate_node, PairContext, Outcome, ToleranceOptions};
    use rand::Rng;
    use rand::SeedableRng;

    fn ex(name: &str) -> PlanarSystem {
        PlanarSystem::builtin(name).unwrap()
    }

    fn pulse_run() -> (PlanarSystem, Trajectory) {
        let sys = ex("ex2");
        let o = ToleranceOptions::default();
        let node = locate_node(&sys, Vec2::new(4.0, 0.0), &o).unwrap();
        let traj = ball_run(&sys, Vec2::new(4.0, 0.0), "reference", &node, &o).unwrap();
        (sys, traj)
    }

    /// Adaptive Simpson quadrature, used as the independent oracle for
    /// the closed-form chord integral.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: usize,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn chord_quadrature(w: f64, a: f64, b: f64) -> f64 {
        let integrand = move |u: f64| 1.0 / (u * u / (1.0 + w) - u);
        simpson(&integrand, a, b, 1e-13)
    }

    #[test]
    fn pulse_splits_into_two_segments() {
        let (sys, traj) = pulse_run();
        let (_, peak) = y_peak(&traj);
        let dec = decompose_segments(&sys, &traj, peak.x).unwrap();
        assert_eq!(dec.segments.len(), 2);
        assert_eq!(dec.breakpoints.len(), 3);
        // The interior breakpoint is the first component's maximum.
        assert!((dec.breakpoints[1] - 4.751675).abs() < 1e-4);
        assert!((dec.x_max() - dec.breakpoints[1]).abs() < 1e-12);
        // Terminal data sits on the second component's crest.
        assert!((dec.x_terminal - 2.553459).abs() < 1e-3, "x_f = {}", dec.x_terminal);
        assert!((dec.y_terminal - 13.040302).abs() < 1e-2);
        // Segment times add up to the passage time.
        let sum: f64 = dec.segments.iter().map(GraphSegment::dt).sum();
        assert!((sum - dec.t_terminal).abs() < 1e-12);
        // Each segment is strictly monotone in the first component.
        for s in &dec.segments {
            let inc = s.x_to > s.x_from;
            let mut prev = traj.x_at(s.t_from);
            for k in 1..=50 {
                let t = s.t_from + (s.t_to - s.t_from) * k as f64 / 50.0;
                let x = traj.x_at(t);
                assert!(if inc { x >= prev } else { x <= prev });
                prev = x;
            }
        }
    }

    #[test]
    fn descending_run_is_one_segment() {
        let sys = ex("ex2");
        let o = ToleranceOptions::default();
        let node = locate_node(&sys, Vec2::new(4.0, 10.0), &o).unwrap();
        let traj = ball_run(&sys, Vec2::new(4.0, 10.0), "reference", &node, &o).unwrap();
        let dec = decompose_segments(&sys, &traj, 1.0).unwrap();
        assert_eq!(dec.segments.len(), 1);
        assert!(dec.segments[0].inf_speed > 0.0);
        assert!(dec.segments[0].sup_speed >= dec.segments[0].inf_speed);
    }

    #[test]
    fn unattained_terminal_names_the_range() {
        let (sys, traj) = pulse_run();
        let err = decompose_segments(&sys, &traj, 9.9).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("never reached"), "{msg}");
        assert!(msg.contains("4.75"), "{msg}");
    }

    #[test]
    fn passage_time_matches_level_event() {
        // The decomposition's terminal time against an independent
        // integration that stops at the level crossing.
        let (sys, traj) = pulse_run();
        let dec = decompose_segments(&sys, &traj, 2.6).unwrap();
        let o = ToleranceOptions::default();
        let mut io = o.integration.clone();
        io.stop_events = vec![EventSpec::XLevel(2.6)];
        io.horizon = 10.0;
        let run = integrate(&sys, Vec2::new(4.0, 0.0), Direction::Forward, &io).unwrap();
        assert!((dec.t_terminal - run.end_time()).abs() < 1e-9);
    }

    #[test]
    fn bounds_bracket_the_pulse_and_report_constants() {
        let (sys, traj) = pulse_run();
        let (_, peak) = y_peak(&traj);
        let dec = decompose_segments(&sys, &traj, peak.x).unwrap();
        let rep = passage_time_bounds(&dec, &dec).unwrap();
        // Bracketing. With identical inputs the condition can never
        // order the bounds strictly.
        assert!(rep.lower_reference_time <= dec.t_terminal + 1e-9);
        assert!(rep.upper_perturbed_time >= dec.t_terminal - 1e-9);
        assert!(!rep.condition);
        // The drive's magnitude at the start dominates the whole rising
        // segment here, so the first constant is exact.
        assert!((rep.c_reference - 12.0).abs() < 1e-9, "c_r = {}", rep.c_reference);
        assert!(rep.x_max > 4.5 && rep.x_max < 5.0);
        assert!(rep.x_terminal > 2.0 && rep.x_terminal < 3.0);
        assert!(rep.c_terminal > 1.55 && rep.c_terminal < 2.53, "c_t = {}", rep.c_terminal);
        // Terminal constant against the isocline formula on the crest
        // (where y = 2 x^2).
        let x_f = rep.x_terminal;
        let formula = (x_f * x_f / (1.0 + 2.0 * x_f * x_f) - x_f).abs();
        assert!((rep.c_terminal - formula).abs() < 1e-6);
        // The interior sup on the falling segment exceeds the terminal
        // value; the valid lower bound must use the sup.
        assert!(dec.segments[1].sup_speed > rep.c_terminal + 0.3);
    }

    #[test]
    fn descending_pair_bounds_bracket_and_order() {
        // Reference (4,10) against the faster perturbed start (5,25);
        // both descend through x = 2.
        let sys = ex("ex2");
        let o = ToleranceOptions::default();
        let node = locate_node(&sys, Vec2::new(4.0, 10.0), &o).unwrap();
        let phi = ball_run(&sys, Vec2::new(4.0, 10.0), "reference", &node, &o).unwrap();
        let psi = ball_run(&sys, Vec2::new(5.0, 25.0), "perturbed", &node, &o).unwrap();
        let dec_phi = decompose_segments(&sys, &phi, 2.0).unwrap();
        let dec_psi = decompose_segments(&sys, &psi, 2.0).unwrap();
        let rep = passage_time_bounds(&dec_phi, &dec_psi).unwrap();
        assert!(rep.lower_reference_time <= dec_phi.t_terminal + 1e-9);
        assert!(rep.upper_perturbed_time >= dec_psi.t_terminal - 1e-9);
        assert!(rep.c_perturbed > 0.0);
    }

    #[test]
    fn turning_point_inside_perturbed_piece_is_unbounded() {
        // The pulse run crosses f = 0, so using it as the perturbed
        // piece puts a zero minimum speed in the decomposition.
        let (sys, traj) = pulse_run();
        let dec = decompose_segments(&sys, &traj, 2.6).unwrap();
        let rep = passage_time_bounds(&dec, &dec).unwrap();
        assert!(rep.unbounded_perturbed_bound);
        assert!(rep.upper_perturbed_time.is_infinite());
        assert!(!rep.condition);
    }

    #[test]
    fn mismatched_terminals_are_rejected() {
        let (sys, traj) = pulse_run();
        let a = decompose_segments(&sys, &traj, 2.6).unwrap();
        let b = decompose_segments(&sys, &traj, 3.0).unwrap();
        assert!(passage_time_bounds(&a, &b).is_err());
    }

    #[test]
    fn random_linear_bounds_bracket_measured_times() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let o = ToleranceOptions::default();
        for _ in 0..100 {
            let l1 = -rng.random_range(0.2..3.0);
            let l2 = -rng.random_range(0.2..3.0);
            let sys = PlanarSystem::from_matrix("lin", Mat2::new(l1, 0.0, 0.0, l2));
            let x0 = rng.random_range(0.5..3.0);
            let y0 = rng.random_range(0.5..3.0);
            let node = locate_node(&sys, Vec2::new(x0, y0), &o).unwrap();
            let traj = ball_run(&sys, Vec2::new(x0, y0), "reference", &node, &o).unwrap();
            let dec = decompose_segments(&sys, &traj, x0 / 2.0).unwrap();
            let rep = passage_time_bounds(&dec, &dec).unwrap();
            // Exact passage time is ln 2 / |l1|.
            let exact = std::f64::consts::LN_2 / l1.abs();
            assert!((dec.t_terminal - exact).abs() < 1e-6);
            assert!(rep.lower_reference_time <= dec.t_terminal + 1e-9);
            assert!(rep.upper_perturbed_time >= dec.t_terminal - 1e-9);
        }
    }

    #[test]
    fn expanded_bound_worked_value() {
        let x = expanded_bound(12.0, 2.0, 4.0, 4.0, 4.7, 2.5).unwrap();
        assert!((x - (4.7 + 2.2 + 0.7 / 3.0)).abs() < 1e-12);
        assert!((x - 7.133333333333333).abs() < 1e-12);
    }

    #[test]
    fn expanded_bound_degenerate_and_growth() {
        // Equal speeds and a flat maximum collapse to the maximum.
        let x = expanded_bound(5.0, 3.0, 3.0, 2.0, 2.0, 1.0).unwrap();
        assert_eq!(x, 2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c_r = rng.random_range(0.5..20.0);
            let c_t = rng.random_range(0.5..5.0);
            let c_p = c_t + rng.random_range(0.01..5.0);
            let x_start = rng.random_range(0.0..3.0);
            let x_max = x_start + rng.random_range(0.1..3.0);
            let x_term = x_max - rng.random_range(0.1..3.0);
            let x = expanded_bound(c_r, c_t, c_p, x_start, x_max, x_term).unwrap();
            assert!(x > x_max, "faster perturbed speeds must expand the level");
        }
    }

    #[test]
    fn expanded_bound_rejects_bad_inputs() {
        assert!(expanded_bound(-1.0, 2.0, 3.0, 0.0, 1.0, 0.5).is_err());
        assert!(expanded_bound(1.0, 2.0, 3.0, 2.0, 1.0, 0.5).is_err());
        assert!(expanded_bound(1.0, 0.0, 3.0, 0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn chord_time_known_value() {
        // log(1/2) + log(4/3) = log(2/3).
        let d = chord_time(1.0, 4.0, 3.0).unwrap();
        assert!((d - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((d - chord_quadrature(1.0, 4.0, 3.0)).abs() < 1e-10);
        assert!((d + 0.4054651081081644).abs() < 1e-12);
    }

    #[test]
    fn chord_time_empty_and_singular() {
        assert_eq!(chord_time(3.7, 2.0, 2.0).unwrap(), 0.0);
        assert!(chord_time(2.0, 2.0, 4.0).is_err());
        assert!(chord_time(-0.5, 0.25, 0.75).is_err());
        assert!(chord_time(1.0, -1.0, 2.0).is_err());
    }

    #[test]
    fn chord_time_agrees_with_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let w = rng.random_range(0.0..8.0);
            let s = 1.0 + w;
            let (a, b) = if rng.random_bool(0.5) {
                // Both endpoints below the singular level.
                let lo = rng.random_range(0.05..s - 0.15);
                let hi = rng.random_range(lo..s - 0.1);
                (lo, hi)
            } else {
                let lo = rng.random_range(s + 0.1..s + 8.0);
                let hi = rng.random_range(lo..s + 10.0);
                (lo, hi)
            };
            let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            if a == b {
                continue;
            }
            let d = chord_time(w, a, b).unwrap();
            let q = chord_quadrature(w, a, b);
            assert!((d - q).abs() <= 1e-10, "w={w} a={a} b={b}: {d} vs {q}");
        }
    }

    #[test]
    fn chord_time_matches_short_travel() {
        // Travel time of the saturating system along a shrinking chord
        // approaches the frozen-height closed form at first order.
        let sys = ex("ex2");
        let o = ToleranceOptions::default();
        let err_at = |h: f64| {
            let mut io = o.integration.clone();
            io.stop_events = vec![EventSpec::XLevel(3.0 - h)];
            io.horizon = 5.0;
            let run = integrate(&sys, Vec2::new(3.0, 5.0), Direction::Forward, &io).unwrap();
            let d = chord_time(5.0, 3.0, 3.0 - h).unwrap();
            (run.end_time() / d - 1.0).abs()
        };
        let coarse = err_at(0.05);
        let fine = err_at(0.005);
        assert!(coarse < 0.05, "coarse relative error {coarse}");
        assert!(fine < 0.004, "fine relative error {fine}");
        assert!(fine < coarse / 5.0);
    }

    #[test]
    fn condition_holds_at_the_maximum() {
        let (sys, traj) = pulse_run();
        let (_, peak) = y_peak(&traj);
        let dec = decompose_segments(&sys, &traj, peak.x).unwrap();
        let out = example2_tolerance_condition(
            &sys,
            Vec2::new(4.0, 0.0),
            Vec2::new(dec.x_max(), 14.0),
            dec.x_max(),
            dec.x_terminal,
            dec.y_terminal,
        )
        .unwrap();
        assert_eq!(out, ConditionOutcome::Holds);
    }

    #[test]
    fn condition_inapplicable_below_peak_height() {
        let (sys, traj) = pulse_run();
        let (_, peak) = y_peak(&traj);
        let dec = decompose_segments(&sys, &traj, peak.x).unwrap();
        let out = example2_tolerance_condition(
            &sys,
            Vec2::new(4.0, 0.0),
            Vec2::new(5.0, dec.y_terminal - 1.0),
            dec.x_max(),
            dec.x_terminal,
            dec.y_terminal,
        )
        .unwrap();
        match out {
            ConditionOutcome::Inapplicable { reason } => {
                assert!(reason.contains("peak height"), "{reason}");
            }
            other => panic!("expected inapplicable, got {other:?}"),
        }
    }

    #[test]
    fn condition_is_gated_to_the_saturating_builtin() {
        let err = example2_tolerance_condition(
            &ex("ex1"),
            Vec2::new(2.0, 0.5),
            Vec2::new(3.0, 20.0),
            2.0,
            1.0,
            10.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("saturating"));
    }

    #[test]
    fn condition_right_side_decreases_in_height() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let x_f = rng.random_range(0.5..4.0);
            let x_p = x_f + rng.random_range(0.1..4.0);
            // Keep the denominator 1 + y_b - x_p positive.
            let y_b = x_p + rng.random_range(0.1..20.0);
            assert!(condition_rhs(y_b + 1.0, x_p, x_f) < condition_rhs(y_b, x_p, x_f));
        }
    }

    #[test]
    fn holds_verdicts_simulate_to_dips() {
        // Wherever the closed form claims a dip, the verdict engine
        // must agree.
        let (sys, traj) = pulse_run();
        let (_, peak) = y_peak(&traj);
        let dec = decompose_segments(&sys, &traj, peak.x).unwrap();
        let o = ToleranceOptions::default();
        let ctx = PairContext::new(&sys, Vec2::new(4.0, 0.0), &o).unwrap();
        let mut holds = 0;
        for i in 0..7 {
            for j in 0..7 {
                let p0 = Vec2::new(
                    4.05 + (7.5 - 4.05) * i as f64 / 6.0,
                    dec.y_terminal + 0.1 + 20.0 * j as f64 / 6.0,
                );
                let out = example2_tolerance_condition(
                    &sys,
                    Vec2::new(4.0, 0.0),
                    p0,
                    dec.x_max(),
                    dec.x_terminal,
                    dec.y_terminal,
                )
                .unwrap();
                if out == ConditionOutcome::Holds {
                    holds += 1;
                    let v = ctx.verdict(p0).unwrap();
                    assert_eq!(v.outcome, Outcome::Tolerance, "p0 = {p0}");
                }
            }
        }
        assert!(holds > 5, "grid produced only {holds} positive cases");
    }

    #[test]
    fn y_peak_finds_the_crest() {
        let (_, traj) = pulse_run();
        let (t, p) = y_peak(&traj);
        assert!((t - 1.189365).abs() < 1e-3);
        assert!((p.y - 13.040302).abs() < 1e-4);
        assert!((p.x - 2.553459).abs() < 1e-3);
    }

    #[test]
    fn bound_report_serializes() {
        let (sys, traj) = pulse_run();
        let dec = decompose_segments(&sys, &traj, 2.6).unwrap();
        let rep = passage_time_bounds(&dec, &dec).unwrap();
        let j = rep.to_json();
        assert_eq!(j["upper_perturbed_time"], serde_json::json!("unbounded"));
        assert!(j["condition"].as_bool() == Some(false));
    }
}
