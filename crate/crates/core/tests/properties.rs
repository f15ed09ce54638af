//! Cross-module invariants checked on the worked examples: verdicts
//! and predictions must be stable under integrator tightening, reported
//! onset windows must describe the gap they came from, and tolerance
//! must survive small perturbations of both starting points.

use tolerance_core::geometry::Classifier;
use tolerance_core::integrate::{integrate, Direction, IntegrationOptions};
use tolerance_core::linalg::Vec2;
use tolerance_core::linear::{analyze, decompose_point, LinearCase};
use tolerance_core::system::PlanarSystem;
use tolerance_core::tolerance::{
    robustness_balls, Outcome, PairContext, ToleranceOptions, EPSILON_TOL,
};

/// The figure-caption pairs: every (system, reference, perturbed)
/// triple the verdict engine is known to decide conclusively.
const PAIRS: &[(&str, (f64, f64), (f64, f64))] = &[
    ("ex2", (4.0, 0.0), (4.5, 5.0)),
    ("ex2", (4.0, 0.0), (4.5, 20.0)),
    ("ex2", (4.0, 0.0), (6.0, 10.0)),
    ("ex2", (4.0, 0.0), (7.0, 1.0)),
    ("ex2", (4.0, 10.0), (4.2, 2.0)),
    ("ex2", (4.0, 10.0), (5.0, 25.0)),
    ("ex2", (4.0, 10.0), (6.0, 5.0)),
    ("ex1", (2.0, 0.5), (5.0, 1.0)),
    ("ex1", (2.0, 0.5), (2.0, 0.0)),
    ("ex1", (2.0, 0.5), (2.2, 0.2)),
    ("ex3", (0.5, 2.0), (0.7, 4.0)),
    ("ex3", (0.5, 2.0), (0.7, 3.0)),
];

fn sys(name: &str) -> PlanarSystem {
    PlanarSystem::builtin(name).expect("builtin system")
}

#[test]
fn forward_then_backward_returns_to_the_start() {
    let cases = [
        ("ex1", (2.0, 0.5), 4.0),
        ("ex2", (4.0, 3.0), 3.0),
        ("ex2", (4.5, 5.0), 2.0),
        ("ex3", (0.5, 2.0), 4.0),
        ("ex3", (0.7, 4.0), 4.0),
    ];
    for (name, start, span) in cases {
        let s = sys(name);
        let start = Vec2::new(start.0, start.1);
        let mut opts = IntegrationOptions::default();
        opts.horizon = span;
        let fwd = integrate(&s, start, Direction::Forward, &opts).unwrap();
        let end = fwd.state_at(fwd.end_time());
        let back = integrate(&s, end, Direction::Backward, &opts).unwrap();
        let replay = back.state_at(back.end_time());
        let err = (replay - start).norm();
        assert!(
            err <= 1e-6,
            "{name} from {start}: round trip missed by {err:.3e}"
        );
    }
}

#[test]
fn tightening_never_flips_a_conclusive_verdict() {
    let opts = ToleranceOptions::default();
    let tight = opts.tightened(10.0);
    for &(name, r0, p0) in PAIRS {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let p0 = Vec2::new(p0.0, p0.1);
        let loose = PairContext::new(&s, r0, &opts)
            .unwrap()
            .verdict(p0)
            .unwrap();
        let strict = PairContext::new(&s, r0, &tight)
            .unwrap()
            .verdict(p0)
            .unwrap();
        if loose.outcome != Outcome::Inconclusive {
            assert_eq!(
                loose.outcome, strict.outcome,
                "{name} r0={r0} p0={p0} flipped under tightening"
            );
        }
    }
}

/// Re-derive the reported witness and onset with a 10x tighter
/// integrator: the dip at `tau` must clear the significance threshold,
/// the gap at `t1` must vanish, and the drive must favor the dip there.
#[test]
fn reported_witnesses_survive_reintegration() {
    let opts = ToleranceOptions::default();
    for &(name, r0, p0) in PAIRS {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let p0 = Vec2::new(p0.0, p0.1);
        let v = PairContext::new(&s, r0, &opts)
            .unwrap()
            .verdict(p0)
            .unwrap();
        if v.outcome != Outcome::Tolerance {
            continue;
        }
        let (t1, tau) = (v.t1.unwrap(), v.tau.unwrap());
        let mut io = opts.integration.tightened(10.0);
        io.horizon = (v.t2.unwrap_or(tau) + 1.0).max(tau * 1.05);
        let phi = integrate(&s, r0, Direction::Forward, &io).unwrap();
        let psi = integrate(&s, p0, Direction::Forward, &io).unwrap();
        let dip = psi.state_at(tau).x - phi.state_at(tau).x;
        assert!(
            dip < -EPSILON_TOL,
            "{name} p0={p0}: dip at tau={tau} is {dip:.3e}"
        );
        let gap = psi.state_at(t1).x - phi.state_at(t1).x;
        assert!(
            gap.abs() <= 1e-8,
            "{name} p0={p0}: gap at t1={t1} is {gap:.3e}"
        );
        let drive_psi = s.f(psi.state_at(t1)).unwrap();
        let drive_phi = s.f(phi.state_at(t1)).unwrap();
        assert!(
            drive_psi <= drive_phi + 1e-8,
            "{name} p0={p0}: f(psi(t1)) = {drive_psi} > f(phi(t1)) = {drive_phi}"
        );
    }
}

/// Before the onset the gap never dips significantly; strictly inside
/// the reported window it is negative.
#[test]
fn onset_windows_describe_the_gap() {
    let opts = ToleranceOptions::default();
    for &(name, r0, p0) in PAIRS {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let p0 = Vec2::new(p0.0, p0.1);
        let v = PairContext::new(&s, r0, &opts)
            .unwrap()
            .verdict(p0)
            .unwrap();
        if v.outcome != Outcome::Tolerance {
            continue;
        }
        let t1 = v.t1.unwrap();
        let t2 = v.t2.unwrap_or(v.horizon);
        let mut io = opts.integration.clone();
        io.horizon = t2 + 1.0;
        let phi = integrate(&s, r0, Direction::Forward, &io).unwrap();
        let psi = integrate(&s, p0, Direction::Forward, &io).unwrap();
        let d = |t: f64| psi.state_at(t).x - phi.state_at(t).x;
        for k in 0..200 {
            let t = t1 * k as f64 / 200.0;
            assert!(
                d(t) >= -EPSILON_TOL,
                "{name} p0={p0}: gap {:.3e} at t={t} before onset {t1}",
                d(t)
            );
        }
        for k in 0..64 {
            let t = t1 + (t2 - t1) * (0.05 + 0.9 * k as f64 / 63.0);
            assert!(
                d(t) < 0.0,
                "{name} p0={p0}: gap {:.3e} at t={t} inside ({t1}, {t2})",
                d(t)
            );
        }
    }
}

#[test]
fn predictions_survive_tightening() {
    let opts = ToleranceOptions::default();
    let tight = opts.tightened(10.0);
    let configs = [
        ("ex2", (4.0, 0.0), (4.0, 8.0), (0.0, 24.0)),
        ("ex1", (2.0, 0.5), (2.0, 6.0), (0.0, 3.0)),
    ];
    for (name, r0, xr, yr) in configs {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let loose = Classifier::new(&s, r0, &opts).unwrap();
        let strict = Classifier::new(&s, r0, &tight).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let p = Vec2::new(
                    xr.0 + (xr.1 - xr.0) * (i as f64 + 0.5) / 5.0,
                    yr.0 + (yr.1 - yr.0) * (j as f64 + 0.5) / 4.0,
                );
                let a = loose.classify(p);
                let b = strict.classify(p);
                match (a, b) {
                    (Ok(pa), Ok(pb)) => assert_eq!(
                        pa, pb,
                        "{name} candidate {p}: prediction changed under tightening"
                    ),
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("{name} candidate {p}: {a:?} vs {b:?}"),
                }
            }
        }
    }
}

/// Every dip found on the example pairs persists throughout small balls
/// around both starting points, within at most five radius halvings.
#[test]
fn tolerance_persists_in_small_balls() {
    let opts = ToleranceOptions::default();
    for &(name, r0, p0) in PAIRS {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let p0 = Vec2::new(p0.0, p0.1);
        let v = PairContext::new(&s, r0, &opts)
            .unwrap()
            .verdict(p0)
            .unwrap();
        if v.outcome != Outcome::Tolerance {
            continue;
        }
        let report = robustness_balls(&s, r0, p0, &v, 24, 1e-3, 7, &opts).unwrap();
        assert!(
            report.fraction == 1.0 && report.halvings <= 5,
            "{name} p0={p0}: fraction {} after {} halvings",
            report.fraction,
            report.halvings
        );
    }
}

/// For no-dip verdicts justified by the tail comparison, re-derive the
/// comparison from scratch: decompose both states near the node in the
/// eigenbasis of the local linearization and check that the dominant
/// surviving coefficient keeps the perturbed first component on top.
#[test]
fn asymptotic_justifications_match_the_eigenbasis() {
    let opts = ToleranceOptions::default();
    let mut checked = 0usize;
    for &(name, r0, p0) in PAIRS {
        let s = sys(name);
        let r0 = Vec2::new(r0.0, r0.1);
        let p0 = Vec2::new(p0.0, p0.1);
        let v = PairContext::new(&s, r0, &opts)
            .unwrap()
            .verdict(p0)
            .unwrap();
        if v.justification.as_deref() != Some("horizon+asymptotic") {
            continue;
        }
        let an = analyze(s.jacobian(v.node).unwrap()).unwrap();
        assert!(
            matches!(
                an.case,
                LinearCase::Generic | LinearCase::WeakVertical | LinearCase::StrongVertical
            ),
            "{name}: node has non-distinct eigenvalues"
        );
        let io = opts.integration.clone();
        let phi = integrate(&s, r0, Direction::Forward, &io).unwrap();
        let psi = integrate(&s, p0, Direction::Forward, &io).unwrap();
        // First sampled instant with both offsets inside a small ball,
        // where the linearization describes the tail.
        let radius = 1e-3;
        let t_end = phi.end_time().min(psi.end_time());
        let mut t_lin = None;
        let mut t = 0.0;
        while t <= t_end {
            if (phi.state_at(t) - v.node).norm() <= radius
                && (psi.state_at(t) - v.node).norm() <= radius
            {
                t_lin = Some(t);
                break;
            }
            t += 0.05;
        }
        let t_lin = t_lin.expect("both trajectories reach the node ball");
        let c_phi = decompose_point(&an, phi.state_at(t_lin) - v.node);
        let c_psi = decompose_point(&an, psi.state_at(t_lin) - v.node);
        // Nonlinear remainder inside the ball scales with radius^2.
        let band = radius * radius;
        let slow = (c_psi.c1 - c_phi.c1) * an.v.x;
        if slow.abs() > band {
            assert!(
                slow > 0.0,
                "{name} p0={p0}: slow-mode gap {slow:.3e} contradicts the verdict"
            );
        } else {
            let fast = (c_psi.c2 - c_phi.c2) * an.w.unwrap().x;
            assert!(
                fast >= -band,
                "{name} p0={p0}: fast-mode gap {fast:.3e} contradicts the verdict"
            );
        }
        checked += 1;
    }
    assert!(checked >= 4, "only {checked} tail justifications seen");
}
