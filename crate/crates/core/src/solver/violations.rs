//! Earliest violation of each path constraint on a candidate trajectory.

use serde::Serialize;

use crate::coordinator::{headway_surplus, QueueView, GAP_TOL};
use crate::model::ScenarioConfig;
use crate::trajectory::PiecewiseTrajectory;

/// Tolerance on state and control bounds.
pub const BOUND_TOL: f64 = 1e-9;
const SAMPLE: f64 = 1e-3;
const BISECT_TOL: f64 = 1e-9;

/// Path constraints, in activation priority order for tied violation times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum PathConstraint {
    Control,
    Speed,
    RearEnd,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: PathConstraint,
    /// First time the constraint is violated.
    pub time: f64,
    /// Largest excess found.
    pub excess: f64,
    /// `true` when the upper limit (u_max, v_max) is exceeded.
    pub upper: bool,
}

/// First time in `[t0, tf]` where `excess(t) > tol`, refined by bisection; also the
/// worst excess over the probes.
fn first_excess(
    excess: impl Fn(f64) -> f64,
    t0: f64,
    tf: f64,
    extra: &[f64],
    tol: f64,
) -> Option<(f64, f64)> {
    let n = ((tf - t0) / SAMPLE).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..=n).map(|j| (t0 + j as f64 * SAMPLE).min(tf)).collect();
    times.extend(extra.iter().copied().filter(|t| *t >= t0 && *t <= tf));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut worst = f64::NEG_INFINITY;
    let mut first = None;
    let mut prev = t0;
    for &t in &times {
        let e = excess(t);
        worst = worst.max(e);
        if e > tol && first.is_none() {
            let (mut lo, mut hi) = (prev, t);
            if excess(lo) > tol {
                hi = lo;
            }
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if excess(mid) > tol {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            first = Some(hi);
        }
        prev = t;
    }
    first.map(|t| (t, worst))
}

/// All violated path constraints, each with its earliest violation time.
pub fn violations(traj: &PiecewiseTrajectory, view: &QueueView<'_>, cfg: &ScenarioConfig) -> Vec<Violation> {
    let (t0, tf) = (traj.t0(), traj.tf());
    let ext = traj.extrema();
    let mut extra = traj.breakpoints();
    extra.extend(ext.u.iter().chain(ext.v.iter()).map(|x| x.0));
    let mut out = Vec::new();
    let u = |t: f64| traj.eval_extended(t).u;
    let v = |t: f64| traj.eval_extended(t).v;
    let checks: [(PathConstraint, bool, Box<dyn Fn(f64) -> f64>); 4] = [
        (PathConstraint::Control, true, Box::new(|t| u(t) - cfg.u_max)),
        (PathConstraint::Control, false, Box::new(|t| cfg.u_min - u(t))),
        (PathConstraint::Speed, true, Box::new(|t| v(t) - cfg.v_max)),
        (PathConstraint::Speed, false, Box::new(|t| cfg.v_min - v(t))),
    ];
    for (constraint, upper, f) in checks.iter() {
        if let Some((time, excess)) = first_excess(f, t0, tf, &extra, BOUND_TOL) {
            out.push(Violation { constraint: *constraint, time, excess, upper: *upper });
        }
    }
    if let Some(k) = &view.k {
        let mut probes = extra.clone();
        probes.extend(k.trajectory.breakpoints());
        let f = |t: f64| -headway_surplus(k.trajectory, traj, cfg, t);
        if let Some((time, excess)) = first_excess(f, t0, tf, &probes, GAP_TOL) {
            out.push(Violation { constraint: PathConstraint::RearEnd, time, excess, upper: true });
        }
    }
    if let Some(c) = &view.c {
        let tc = c.trajectory.tf();
        if tc > t0 {
            let p = traj.eval_extended(tc.min(tf)).p;
            let excess = if tc >= tf { cfg.l + 1.0 } else { p - cfg.l };
            if excess > BOUND_TOL {
                let time = traj.time_at_position(cfg.l).unwrap_or(t0).min(tc);
                out.push(Violation { constraint: PathConstraint::Lateral, time, excess, upper: true });
            }
        }
    }
    out
}

/// Violation to activate next: earliest time, ties broken by priority.
pub fn earliest(list: &[Violation]) -> Option<Violation> {
    list.iter().copied().min_by(|a, b| {
        let ta = (a.time / BISECT_TOL / 10.0).round();
        let tb = (b.time / BISECT_TOL / 10.0).round();
        ta.total_cmp(&tb).then(a.constraint.cmp(&b.constraint))
    })
}
