//! Independent checks of solved trajectories: constraint margins, continuity,
//! optimality-condition residuals, and comparison against the transcription oracle.

pub mod oracle;

use std::fmt;

use serde::Serialize;

use crate::coordinator::{worst_headway, QueueView, GAP_TOL};
use crate::model::ScenarioConfig;
use crate::solver::Structure;
use crate::trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory};

pub use oracle::{evaluate_control, sample_midpoints, transcription_oracle, OracleOptions, OracleProblem, OracleResult};

pub const BOUND_TOL: f64 = 1e-9;
pub const CONTINUITY_TOL: f64 = 1e-8;
pub const HAMILTONIAN_TOL: f64 = 1e-8;
pub const TERMINAL_TOL: f64 = 1e-8;
const ORDER_TOL: f64 = 1e-9;
const SAMPLE: f64 = 1e-3;

/// What the audit needs besides the trajectory.
#[derive(Debug, Clone, Copy)]
pub struct AuditContext<'a, 'b> {
    /// Vehicle-specific configuration.
    pub cfg: &'a ScenarioConfig,
    pub view: &'a QueueView<'b>,
    /// `(t0, v0)` to check the initial state against.
    pub initial: Option<(f64, f64)>,
    /// Exit time chosen optimally (enables the Hamiltonian check).
    pub free_exit: bool,
    /// Reported layout, enabling the structure-specific lemmas.
    pub structure: Option<Structure>,
}

impl<'a, 'b> AuditContext<'a, 'b> {
    pub fn new(cfg: &'a ScenarioConfig, view: &'a QueueView<'b>) -> Self {
        Self { cfg, view, initial: None, free_exit: false, structure: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    InitialState,
    TerminalPosition,
    ControlBounds,
    SpeedBounds,
    Continuity,
    RearEnd,
    Lateral,
    Fifo,
    Hamiltonian,
    /// Free-time unconstrained control is nonnegative and nonincreasing.
    FreeTimeControlShape,
    /// Free-time unconstrained solutions stay off the lower limits.
    FreeTimeLowerLimits,
    /// Fixed-time unconstrained control is monotone and single-signed.
    FixedTimeControlShape,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub kind: CheckKind,
    /// Worst violation amount (≤ 0 or within tolerance means satisfied).
    pub worst: f64,
    pub time: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Analytic vs oracle cost.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleComparison {
    pub analytic_j: f64,
    pub oracle_j: f64,
    /// `(analytic − oracle) / oracle`; ≤ 0.005 is acceptable.
    pub relative_gap: f64,
    pub oracle_violation: f64,
}

impl OracleComparison {
    pub fn passed(&self) -> bool {
        self.relative_gap <= 0.005
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub checks: Vec<Check>,
    /// Set when the trajectory cannot be audited at all.
    pub structural_error: Option<String>,
    /// Hamiltonian `(t, H)` on the trailing unconstrained arc for free exit times.
    pub hamiltonian_profile: Vec<(f64, f64)>,
    pub oracle: Option<OracleComparison>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.structural_error.is_none()
            && self.checks.iter().all(|c| c.passed)
            && self.oracle.is_none_or(|o| o.passed())
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, kind: CheckKind) -> Option<&Check> {
        self.checks.iter().find(|c| c.kind == kind)
    }

    fn push(&mut self, kind: CheckKind, worst: f64, time: f64, tol: f64) {
        self.checks.push(Check { kind, worst, time, tol, passed: worst <= tol });
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(e) = &self.structural_error {
            return writeln!(f, "structural error: {e}");
        }
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {:<4} worst={:+.3e} at t={:.6} tol={:.0e}",
                format!("{:?}", c.kind),
                if c.passed { "ok" } else { "FAIL" },
                c.worst,
                c.time,
                c.tol
            )?;
        }
        if let Some(o) = &self.oracle {
            writeln!(
                f,
                "{:<24} {:<4} analytic={:.9} oracle={:.9} gap={:+.3e}",
                "OracleCost",
                if o.passed() { "ok" } else { "FAIL" },
                o.analytic_j,
                o.oracle_j,
                o.relative_gap
            )?;
        }
        Ok(())
    }
}

fn sample_times(traj: &PiecewiseTrajectory) -> Vec<f64> {
    let (t0, tf) = (traj.t0(), traj.tf());
    let n = ((tf - t0) / SAMPLE).ceil() as usize;
    let mut times: Vec<f64> = (0..=n).map(|j| (t0 + j as f64 * SAMPLE).min(tf)).collect();
    times.extend(traj.breakpoints());
    let e = traj.extrema();
    times.extend(e.u.iter().chain(e.v.iter()).map(|x| x.0));
    times
}

/// Worst `f` over the arcs, evaluating each arc on its own closed interval so that
/// jumps at junctions are seen from both sides.
fn worst_over(traj: &PiecewiseTrajectory, times: &[f64], f: impl Fn(&ArcSegment, f64) -> f64) -> (f64, f64) {
    let mut worst = (f64::NEG_INFINITY, traj.t0());
    for arc in traj.arcs() {
        for &t in times.iter().filter(|t| **t >= arc.t_start && **t <= arc.t_end) {
            let x = f(arc, t);
            if x > worst.0 {
                worst = (x, t);
            }
        }
    }
    worst
}

fn u_jump_allowed(left: &ArcKind, right: &ArcKind) -> bool {
    matches!(
        (left, right),
        (ArcKind::SaturatedControl { .. }, ArcKind::Cruise { .. }) | (ArcKind::Cruise { .. }, ArcKind::SaturatedControl { .. })
    )
}

/// `λ_p` on the trailing unconstrained block, if there is one.
fn trailing_lambda_p(arcs: &[ArcSegment]) -> Option<(f64, usize)> {
    let n = arcs.len();
    match arcs[n - 1].kind {
        ArcKind::CubicPosition { a, .. } => Some((a, n - 1)),
        ArcKind::Cruise { .. } if n >= 2 => match arcs[n - 2].kind {
            ArcKind::CubicPosition { a, .. } => Some((a, n - 2)),
            _ => None,
        },
        _ => None,
    }
}

/// Evaluates every check on `traj`; never fails, problems are reported.
pub fn audit(traj: &PiecewiseTrajectory, ctx: &AuditContext<'_, '_>) -> AuditReport {
    let mut rep = AuditReport::default();
    let arcs = traj.arcs();
    if arcs.is_empty() {
        rep.structural_error = Some("trajectory has no arcs".into());
        return rep;
    }
    if arcs.iter().any(|a| !(a.t_end > a.t_start) || !a.t_end.is_finite()) {
        rep.structural_error = Some("trajectory has an empty or unbounded arc".into());
        return rep;
    }
    let cfg = ctx.cfg;
    let (t0, tf) = (traj.t0(), traj.tf());
    let times = sample_times(traj);

    if let Some((et0, ev0)) = ctx.initial {
        let s = arcs[0].state(t0);
        let worst = (t0 - et0).abs().max(s.p.abs()).max((s.v - ev0).abs());
        rep.push(CheckKind::InitialState, worst, t0, TERMINAL_TOL);
    }
    let end = arcs[arcs.len() - 1].state(tf);
    rep.push(CheckKind::TerminalPosition, (end.p - cfg.exit_position()).abs(), tf, TERMINAL_TOL);

    let (w, t) = worst_over(traj, &times, |a, t| {
        let u = a.state(t).u;
        (u - cfg.u_max).max(cfg.u_min - u)
    });
    rep.push(CheckKind::ControlBounds, w, t, BOUND_TOL);
    let (w, t) = worst_over(traj, &times, |a, t| {
        let v = a.state(t).v;
        (v - cfg.v_max).max(cfg.v_min - v)
    });
    rep.push(CheckKind::SpeedBounds, w, t, BOUND_TOL);

    let mut cont = (0.0f64, t0);
    for pair in arcs.windows(2) {
        let t = pair[0].t_end;
        let (l, r) = (pair[0].state(t), pair[1].state(t));
        let mut gap = (l.p - r.p).abs().max((l.v - r.v).abs()).max((t - pair[1].t_start).abs());
        if !u_jump_allowed(&pair[0].kind, &pair[1].kind) {
            gap = gap.max((l.u - r.u).abs());
        }
        if gap > cont.0 {
            cont = (gap, t);
        }
    }
    rep.push(CheckKind::Continuity, cont.0, cont.1, CONTINUITY_TOL);

    if let Some(k) = &ctx.view.k {
        let (m, t) = worst_headway(k.trajectory, traj, cfg);
        rep.push(CheckKind::RearEnd, -m, t, GAP_TOL);
    }
    if let Some(c) = &ctx.view.c {
        let tc = c.trajectory.tf();
        let entry = traj.time_at_position(cfg.l).unwrap_or(tf);
        let pc = if tc >= tf { f64::INFINITY } else { traj.eval_extended(tc.max(t0)).p - cfg.l };
        let worst = if tc <= t0 { tc - entry } else { pc.max(tc - entry) };
        rep.push(CheckKind::Lateral, worst, tc, BOUND_TOL);
    }
    let mut fifo = (f64::NEG_INFINITY, tf);
    for pred in [&ctx.view.k, &ctx.view.c, &ctx.view.o].into_iter().flatten() {
        fifo.0 = fifo.0.max(pred.trajectory.tf() - tf);
    }
    if fifo.0.is_finite() {
        rep.push(CheckKind::Fifo, fifo.0, fifo.1, ORDER_TOL);
    }

    if ctx.free_exit {
        match trailing_lambda_p(arcs) {
            Some((lam_p, from)) => {
                let start = arcs[from].t_start;
                let mut worst = (0.0f64, tf);
                for j in 0..=100 {
                    let t = start + (tf - start) * j as f64 / 100.0;
                    let arc = &arcs[traj.arc_index(t).max(from)];
                    let s = arc.state(t);
                    // λ_v = −u on the cubic; u = 0 on the cruise arc.
                    let h = cfg.gamma - 0.5 * s.u * s.u + lam_p * s.v;
                    rep.hamiltonian_profile.push((t, h));
                    if h.abs() > worst.0 {
                        worst = (h.abs(), t);
                    }
                }
                rep.push(CheckKind::Hamiltonian, worst.0, worst.1, HAMILTONIAN_TOL);
            }
            None => {}
        }
    }

    match (ctx.structure, arcs) {
        (Some(Structure::Unconstrained), [arc]) => {
            if let ArcKind::CubicPosition { a, b, .. } = arc.kind {
                let u0 = a * t0 + b;
                let uf = a * tf + b;
                let worst = a.max(-u0).max(-uf);
                rep.push(CheckKind::FreeTimeControlShape, worst, t0, BOUND_TOL);
                let (w, t) = worst_over(traj, &times, |arc, t| {
                    let s = arc.state(t);
                    (cfg.u_min - s.u).max(cfg.v_min - s.v)
                });
                // Touching is a violation here, so the margin must be strictly positive.
                rep.checks.push(Check {
                    kind: CheckKind::FreeTimeLowerLimits,
                    worst: w,
                    time: t,
                    tol: 0.0,
                    passed: w < 0.0,
                });
            }
        }
        (Some(Structure::FixedTime), [arc]) => {
            if let ArcKind::CubicPosition { a, b, .. } = arc.kind {
                let (u0, uf) = (a * t0 + b, a * tf + b);
                // u = a(t − tf) with u(tf) = 0: sign opposite to a throughout.
                let worst = (u0 * a).max(uf.abs() - TERMINAL_TOL);
                rep.push(CheckKind::FixedTimeControlShape, worst, t0, BOUND_TOL);
            }
        }
        _ => {}
    }
    rep
}

/// Oracle problem matching the constraints that bind `traj`'s vehicle.
pub fn oracle_problem<'a>(
    traj: &PiecewiseTrajectory,
    view: &QueueView<'a>,
    free_exit: bool,
) -> OracleProblem<'a> {
    let mut prob = OracleProblem::new(traj.t0(), traj.eval_extended(traj.t0()).v);
    if !free_exit {
        prob.tf = Some(traj.tf());
    }
    prob.leader = view.k.as_ref().map(|k| k.trajectory);
    prob.conflict_exit = view.c.as_ref().map(|c| c.trajectory.tf());
    prob
}

/// Compares the analytic cost with the oracle on `prob`.
pub fn compare_with_oracle(
    traj: &PiecewiseTrajectory,
    prob: &OracleProblem<'_>,
    cfg: &ScenarioConfig,
    opts: &OracleOptions,
) -> OracleComparison {
    let analytic_j = traj.cost(cfg.gamma).j;
    let r = transcription_oracle(prob, cfg, opts);
    OracleComparison {
        analytic_j,
        oracle_j: r.j,
        relative_gap: (analytic_j - r.j) / r.j.abs().max(1e-12),
        oracle_violation: r.max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::unconstrained::{solve_p0_free, solve_p1_fixed};

    #[test]
    fn free_unconstrained_passes_everything() {
        let cfg = ScenarioConfig { gamma: 0.1, ..Default::default() };
        let s = solve_p0_free(0.0, 10.0, &cfg).unwrap();
        let view = QueueView::alone(1);
        let ctx = AuditContext {
            initial: Some((0.0, 10.0)),
            free_exit: true,
            structure: Some(s.structure),
            ..AuditContext::new(&cfg, &view)
        };
        let rep = audit(&s.trajectory, &ctx);
        assert!(rep.passed(), "{rep}");
        assert!(rep.hamiltonian_profile.iter().all(|x| x.1.abs() < 1e-8));
    }

    #[test]
    fn fixed_time_audited_as_free_fails_hamiltonian() {
        let cfg = ScenarioConfig { gamma: 0.1, ..Default::default() };
        let s = solve_p1_fixed(0.0, 10.0, 36.0, &cfg).unwrap();
        let view = QueueView::alone(1);
        let ctx = AuditContext { free_exit: true, ..AuditContext::new(&cfg, &view) };
        let rep = audit(&s.trajectory, &ctx);
        assert!(!rep.check(CheckKind::Hamiltonian).unwrap().passed);
    }

    #[test]
    fn empty_trajectory_is_structural_error() {
        let cfg = ScenarioConfig::default();
        let view = QueueView::alone(1);
        let rep = audit(&PiecewiseTrajectory::new_unchecked(vec![]), &AuditContext::new(&cfg, &view));
        assert!(rep.structural_error.is_some() && !rep.passed());
    }
}
