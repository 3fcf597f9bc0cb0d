//! Rear-end constrained solutions.
//!
//! Both cases start with an unconstrained cubic that meets the headway boundary
//! tangentially at `τ` with continuous control, then track the leader. The
//! costate on a tracking arc obeys `λ̇_p = (λ_p − u̇)/φ`, so `λ_p(τ)` is a
//! decaying-weight integral of the control rate after `τ` plus the weighted
//! terminal/exit value ([`tracking::weighted_rate_integral`]).
//!
//! * No exit: the vehicle tracks until it leaves the merging zone; the exit time is
//!   set by the headway at exit, and `λ_p` there follows from the terminal
//!   multiplier of the headway condition.
//! * With exit: the entry sub-problem `(a, b, τ1)` is closed by the non-growing
//!   costate mode (weight integral to infinity along the leader), independently of
//!   the exit; the exit sub-problem then picks `τ2` so that a final cubic with
//!   continuous control reaches the exit with zero control (and zero Hamiltonian
//!   for a free exit time).

use nalgebra::{Matrix2, Vector2};

use super::newton::{self, from_after, from_window, to_after, to_window, NewtonOptions};
use super::tracking::{state_on, track, weighted_rate_integral};
use super::{CaseSolution, CostateArc, SafetyArcParams, SolveError, Structure, TerminalMode, UnconstrainedParams};
use crate::model::ScenarioConfig;
use crate::trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory, State};

const SCAN: usize = 240;

/// Hints for the constrained solves, usually from the previous round's trajectory.
#[derive(Debug, Clone, Copy)]
pub struct SafetyHint {
    /// Latest time worth scanning for the entry junction.
    pub t_hi: f64,
}

fn entry_arc(t0: f64, v0: f64, a: f64, b: f64) -> ArcSegment {
    ArcSegment::new(ArcKind::cubic_through(t0, 0.0, v0, a, b), t0, f64::INFINITY)
}

/// Cubic from `(t0, 0, v0)` that is tangent to the headway boundary at `τ` with
/// the control the tracking arc requires there.
fn tangent_cubic(t0: f64, v0: f64, tau: f64, leader: &PiecewiseTrajectory, cfg: &ScenarioConfig) -> Option<(f64, f64)> {
    let (phi, h) = (cfg.phi, tau - t0);
    let k = leader.eval_extended(tau);
    let m = Matrix2::new(
        h * h / 2.0 + phi * h,
        h.powi(3) / 6.0 + phi * h * h / 2.0,
        phi + h,
        phi * h + h * h / 2.0,
    );
    let rhs = Vector2::new(k.p - cfg.delta0 - v0 * h - phi * v0, k.v - v0);
    let x = m.lu().solve(&rhs)?;
    let (u0, a) = (x[0], x[1]);
    Some((a, u0 - a * t0))
}

fn headway_residuals(s: State, k: State, cfg: &ScenarioConfig) -> [f64; 2] {
    [s.p + cfg.phi * s.v + cfg.delta0 - k.p, s.u - (k.v - s.v) / cfg.phi]
}

/// Time at which a run of arcs first reaches position `target`.
fn time_at(arcs: &[ArcSegment], target: f64) -> Option<f64> {
    for arc in arcs {
        let tb = if arc.t_end.is_finite() { arc.t_end } else { arc.t_start + 1e4 };
        if arc.state(tb).p >= target {
            let (mut lo, mut hi) = (arc.t_start, tb);
            if arc.state(lo).p > target {
                return None;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if arc.state(mid).p < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 * hi.abs().max(1.0) {
                    break;
                }
            }
            return Some(0.5 * (lo + hi));
        }
    }
    None
}

/// `λ_p(T)` on a tracking arc ending at the exit with the headway active there.
fn terminal_lambda_p(s: State, vk: f64, cfg: &ScenarioConfig) -> f64 {
    -(cfg.gamma - 0.5 * s.u * s.u + s.u * vk / cfg.phi) / s.v
}

/// Brackets of sign changes of `f` over `(lo, hi)`, refined by bisection.
fn scan_roots(f: impl Fn(f64) -> Option<f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let xs: Vec<f64> = (1..SCAN).map(|j| lo + (hi - lo) * j as f64 / SCAN as f64).collect();
    let vals: Vec<Option<f64>> = xs.iter().map(|&x| f(x)).collect();
    for j in 1..xs.len() {
        let (Some(f0), Some(f1)) = (vals[j - 1], vals[j]) else { continue };
        if f0 == 0.0 {
            out.push(xs[j - 1]);
            continue;
        }
        if f0.signum() == f1.signum() {
            continue;
        }
        let (mut a, mut b, mut fa) = (xs[j - 1], xs[j], f0);
        let mut ok = true;
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            let Some(fm) = f(m) else {
                ok = false;
                break;
            };
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        // Reject poles: a genuine root has a small residual at the bracket.
        if ok && f(0.5 * (a + b)).is_some_and(|v| v.abs() < 1e-3 * (f0.abs() + f1.abs()) + 1e-9) {
            out.push(0.5 * (a + b));
        }
    }
    out
}

fn entry_feasible(t0: f64, v0: f64, a: f64, b: f64, tau: f64, leader: &PiecewiseTrajectory, cfg: &ScenarioConfig) -> bool {
    let arc = entry_arc(t0, v0, a, b);
    (0..=400).all(|j| {
        let t = t0 + (tau - t0) * j as f64 / 400.0;
        let s = arc.state(t);
        leader.eval_extended(t).p - s.p - cfg.phi * s.v - cfg.delta0 >= -1e-6
    })
}

fn mirrored(arc: &ArcSegment) -> ([f64; 4], Option<f64>) {
    match &arc.kind {
        ArcKind::ExponentialTracking { a, b, c, d, exp } => ([*a, *b, *c, *d], exp.absolute_amplitude()),
        _ => ([0.0; 4], None),
    }
}

/// Rear-end constraint active from `τ` until the merging-zone exit.
pub fn solve_safety_no_exit(
    t0: f64,
    v0: f64,
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    hint: SafetyHint,
) -> Result<CaseSolution, SolveError> {
    if cfg.phi <= 0.0 {
        return Err(SolveError::Structure("headway tracking needs a positive reaction time".into()));
    }
    let dist = cfg.exit_position();
    let horizon = leader.tf().max(hint.t_hi) + 1e3;
    // One-parameter family in τ: tangency fixes (a, b), the exit fixes T.
    let family = |tau: f64| -> Option<(f64, f64, f64, f64)> {
        let (a, b) = tangent_cubic(t0, v0, tau, leader, cfg)?;
        let s = entry_arc(t0, v0, a, b).state(tau);
        if s.p >= dist {
            return None;
        }
        let arcs = track(leader, cfg, tau, s.p, s.v, horizon).ok()?;
        let tf = time_at(&arcs, dist)?;
        let st = state_on(&arcs, tf);
        let lam = terminal_lambda_p(st, leader.eval_extended(tf).v, cfg);
        let f = a - ((-(tf - tau) / cfg.phi).exp() * lam + weighted_rate_integral(&arcs, tau, tf, cfg.phi));
        Some((a, b, tf, f))
    };
    let roots = scan_roots(|tau| family(tau).map(|x| x.3), t0, hint.t_hi);
    let residual = |y: &[f64]| {
        let (a, b) = (y[0], y[1]);
        let tau = to_after(y[2], t0);
        let tf = to_after(y[3], tau);
        let s = entry_arc(t0, v0, a, b).state(tau);
        let k = leader.eval_extended(tau);
        let [r1, r2] = headway_residuals(s, k, cfg);
        let arcs = track(leader, cfg, tau, s.p, s.v, tf).ok()?;
        let st = state_on(&arcs, tf);
        let lam = terminal_lambda_p(st, leader.eval_extended(tf).v, cfg);
        let r4 = a - ((-(tf - tau) / cfg.phi).exp() * lam + weighted_rate_integral(&arcs, tau, tf, cfg.phi));
        Some(vec![r1, r2, st.p - dist, r4])
    };
    let mut last_err = SolveError::Structure("no tangent entry into the headway boundary".into());
    for tau in roots {
        let Some((a, b, tf, _)) = family(tau) else { continue };
        if !entry_feasible(t0, v0, a, b, tau, leader, cfg) {
            continue;
        }
        let start = vec![a, b, from_after(tau, t0), from_after(tf, tau)];
        let sol = match newton::solve(residual, &[start], NewtonOptions::default()) {
            Ok(s) => s,
            Err(t) => {
                last_err = SolveError::newton("headway arc without exit", t);
                continue;
            }
        };
        let (a, b) = (sol.x[0], sol.x[1]);
        let tau = to_after(sol.x[2], t0);
        let tf = to_after(sol.x[3], tau);
        return assemble_no_exit(t0, v0, a, b, tau, tf, leader, cfg, sol.residual, sol.iterations);
    }
    Err(last_err)
}

#[allow(clippy::too_many_arguments)]
fn assemble_no_exit(
    t0: f64,
    v0: f64,
    a: f64,
    b: f64,
    tau: f64,
    tf: f64,
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    residual: f64,
    iterations: usize,
) -> Result<CaseSolution, SolveError> {
    let first = ArcSegment::new(ArcKind::cubic_through(t0, 0.0, v0, a, b), t0, tau);
    let s = first.state(tau);
    let tracking = track(leader, cfg, tau, s.p, s.v, tf)?;
    let (mirror, c_e1) = mirrored(&tracking[0]);
    let c_e2 = tracking.get(1).and_then(|arc| mirrored(arc).1);
    let nu_entry = (tracking[0].du(tau) - a) / cfg.phi;
    let mut arcs = vec![first];
    arcs.extend(tracking);
    let traj = PiecewiseTrajectory::new(arcs)?;
    let mut sol = CaseSolution::new(traj, Structure::SafetyNoExit);
    sol.junctions = vec![tau];
    sol.residual = residual;
    sol.iterations = iterations;
    sol.multipliers.costates.push(CostateArc::from_cubic(t0, tau, a, b));
    sol.multipliers.nu.push((tau, nu_entry));
    if let ArcKind::CubicPosition { c, d, .. } = sol.trajectory.arcs()[0].kind {
        sol.safety = Some(SafetyArcParams {
            entry_arc: UnconstrainedParams { a, b, c, d, tf: tau },
            mirrored: mirror,
            c_e1,
            c_e2,
            tau,
            tau2: None,
            exit_arc: None,
        });
    }
    if tau >= leader.tf() {
        sol.extension = Some("headway becomes active after the leader has left the merging zone".into());
    }
    Ok(sol)
}

/// Entry sub-problem: `(a, b, τ1)` from tangency, control continuity and the
/// non-growing costate mode along the tracking arc.
pub fn entry_subproblem(
    t0: f64,
    v0: f64,
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    t_hi: f64,
) -> Result<Vec<(f64, f64, f64, f64, usize)>, SolveError> {
    if cfg.phi <= 0.0 {
        return Err(SolveError::Structure("headway tracking needs a positive reaction time".into()));
    }
    let closure = |a: f64, tau: f64, s: State| -> Option<f64> {
        let arcs = track(leader, cfg, tau, s.p, s.v, f64::INFINITY).ok()?;
        Some(a - weighted_rate_integral(&arcs, tau, f64::INFINITY, cfg.phi))
    };
    let family = |tau: f64| {
        let (a, b) = tangent_cubic(t0, v0, tau, leader, cfg)?;
        closure(a, tau, entry_arc(t0, v0, a, b).state(tau))
    };
    let residual = |y: &[f64]| {
        let (a, b, tau) = (y[0], y[1], to_after(y[2], t0));
        let s = entry_arc(t0, v0, a, b).state(tau);
        let [r1, r2] = headway_residuals(s, leader.eval_extended(tau), cfg);
        Some(vec![r1, r2, closure(a, tau, s)?])
    };
    let mut out = Vec::new();
    for tau in scan_roots(family, t0, t_hi) {
        let Some((a, b)) = tangent_cubic(t0, v0, tau, leader, cfg) else { continue };
        if !entry_feasible(t0, v0, a, b, tau, leader, cfg) {
            continue;
        }
        if let Ok(sol) = newton::solve(residual, &[vec![a, b, from_after(tau, t0)]], NewtonOptions::default()) {
            out.push((sol.x[0], sol.x[1], to_after(sol.x[2], t0), sol.residual, sol.iterations));
        }
    }
    Ok(out)
}

/// Exit residual for a candidate `τ2` given the tracking state there.
/// Returns the final-arc slope `e`, the exit time and the position residual.
fn exit_conditions(s: State, tau2: f64, mode: TerminalMode, cfg: &ScenarioConfig) -> Option<(f64, f64, f64)> {
    let dist = cfg.exit_position();
    let delta = match mode {
        TerminalMode::Fixed(tf) => tf - tau2,
        TerminalMode::Free => {
            // zero Hamiltonian at exit: γ + e·v(tf) = 0 with e = −u/Δ, v(tf) = v + uΔ/2
            let den = cfg.gamma - 0.5 * s.u * s.u;
            if den <= 0.0 || s.u <= 0.0 {
                return None;
            }
            s.u * s.v / den
        }
        _ => return None,
    };
    if delta <= 0.0 {
        return None;
    }
    let e = -s.u / delta;
    Some((e, tau2 + delta, s.p + s.v * delta + s.u * delta * delta / 3.0 - dist))
}

/// Rear-end constraint active on `[τ1, τ2]` only; exit time free or fixed.
pub fn solve_safety_with_exit(
    t0: f64,
    v0: f64,
    leader: &PiecewiseTrajectory,
    mode: TerminalMode,
    cfg: &ScenarioConfig,
    hint: SafetyHint,
) -> Result<CaseSolution, SolveError> {
    if !matches!(mode, TerminalMode::Free | TerminalMode::Fixed(_)) {
        return Err(SolveError::Structure("exit from the headway arc needs a free or fixed exit time".into()));
    }
    let t_hi = match mode {
        TerminalMode::Fixed(tf) => tf,
        _ => hint.t_hi,
    };
    let entries = entry_subproblem(t0, v0, leader, cfg, t_hi)?;
    if entries.is_empty() {
        return Err(SolveError::Structure("no tangent entry into the headway boundary".into()));
    }
    let dist = cfg.exit_position();
    for (a, b, tau1, res1, it1) in entries {
        let s1 = entry_arc(t0, v0, a, b).state(tau1);
        let span = match mode {
            TerminalMode::Fixed(tf) => tf,
            _ => leader.tf().max(t_hi) + 1e3,
        };
        let arcs = track(leader, cfg, tau1, s1.p, s1.v, span)?;
        let reach = time_at(&arcs, dist).unwrap_or(span);
        let g = |tau2: f64| exit_conditions(state_on(&arcs, tau2), tau2, mode, cfg).map(|x| x.2);
        let roots = scan_roots(g, tau1, reach.min(span));
        let Some(&tau2) = roots.first() else {
            continue;
        };
        let hi = reach.min(span);
        let polish = newton::solve(
            |y: &[f64]| g(to_window(y[0], tau1, hi)).map(|r| vec![r]),
            &[vec![from_window(tau2, tau1, hi)]],
            NewtonOptions::default(),
        );
        let (tau2, res2, it2) = match polish {
            Ok(s) => (to_window(s.x[0], tau1, hi), s.residual, s.iterations),
            Err(_) => (tau2, g(tau2).map_or(f64::INFINITY, f64::abs), 0),
        };
        if res2 > 1e-10 {
            continue;
        }
        return assemble_with_exit(t0, v0, a, b, tau1, tau2, mode, leader, cfg, res1.max(res2), it1 + it2);
    }
    Err(SolveError::Structure(
        "no exit from the headway arc before the merging-zone exit (exit would precede entry)".into(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_with_exit(
    t0: f64,
    v0: f64,
    a: f64,
    b: f64,
    tau1: f64,
    tau2: f64,
    mode: TerminalMode,
    leader: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    residual: f64,
    iterations: usize,
) -> Result<CaseSolution, SolveError> {
    let first = ArcSegment::new(ArcKind::cubic_through(t0, 0.0, v0, a, b), t0, tau1);
    let s1 = first.state(tau1);
    let tracking = track(leader, cfg, tau1, s1.p, s1.v, tau2)?;
    let s2 = state_on(&tracking, tau2);
    let (e, tf, _) = exit_conditions(s2, tau2, mode, cfg)
        .ok_or_else(|| SolveError::Structure("exit conditions undefined at the exit junction".into()))?;
    let r = s2.u - e * tau2;
    let last_kind = ArcKind::cubic_through(tau2, s2.p, s2.v, e, r);
    let (q, m) = match last_kind {
        ArcKind::CubicPosition { c, d, .. } => (c, d),
        _ => unreachable!(),
    };
    let (mirror, c_e1) = mirrored(&tracking[0]);
    let c_e2 = tracking.get(1).and_then(|arc| mirrored(arc).1);
    let nu_entry = (tracking[0].du(tau1) - a) / cfg.phi;
    let tail = track(leader, cfg, tau2, s2.p, s2.v, f64::INFINITY)?;
    let lam_exit = weighted_rate_integral(&tail, tau2, f64::INFINITY, cfg.phi);
    let nu_exit = (tracking[tracking.len() - 1].du(tau2) - lam_exit) / cfg.phi;
    let mut arcs = vec![first];
    arcs.extend(tracking);
    arcs.push(ArcSegment::new(last_kind, tau2, tf));
    let traj = PiecewiseTrajectory::new(arcs)?;
    let mut sol = CaseSolution::new(traj, Structure::SafetyWithExit);
    sol.junctions = vec![tau1, tau2];
    sol.residual = residual;
    sol.iterations = iterations;
    sol.multipliers.costates.push(CostateArc::from_cubic(t0, tau1, a, b));
    sol.multipliers.costates.push(CostateArc::from_cubic(tau2, tf, e, r));
    sol.multipliers.nu = vec![(tau1, nu_entry), (tau2, nu_exit)];
    sol.multipliers.pi.push((tau2, lam_exit - e));
    if let ArcKind::CubicPosition { c, d, .. } = sol.trajectory.arcs()[0].kind {
        sol.safety = Some(SafetyArcParams {
            entry_arc: UnconstrainedParams { a, b, c, d, tf: tau1 },
            mirrored: mirror,
            c_e1,
            c_e2,
            tau: tau1,
            tau2: Some(tau2),
            exit_arc: Some([e, r, q, m]),
        });
    }
    if tau2 > leader.tf() {
        sol.extension = Some("exit from the headway arc after the leader has left the merging zone".into());
    }
    Ok(sol)
}

/// Entry and exit sub-problems stacked into one Newton solve; used to check that
/// the entry unknowns do not depend on the exit ones.
pub fn solve_safety_with_exit_joint(
    t0: f64,
    v0: f64,
    leader: &PiecewiseTrajectory,
    mode: TerminalMode,
    cfg: &ScenarioConfig,
    start: [f64; 4],
) -> Result<[f64; 4], SolveError> {
    let TerminalMode::Fixed(tf) = mode else {
        return Err(SolveError::Structure("joint check implemented for fixed exit time".into()));
    };
    let residual = |y: &[f64]| {
        let (a, b) = (y[0], y[1]);
        let tau1 = to_after(y[2], t0);
        let tau2 = to_window(y[3], tau1, tf);
        let s1 = entry_arc(t0, v0, a, b).state(tau1);
        let [r1, r2] = headway_residuals(s1, leader.eval_extended(tau1), cfg);
        let arcs = track(leader, cfg, tau1, s1.p, s1.v, f64::INFINITY).ok()?;
        let r3 = a - weighted_rate_integral(&arcs, tau1, f64::INFINITY, cfg.phi);
        let (_, _, r4) = exit_conditions(state_on(&arcs, tau2), tau2, mode, cfg)?;
        Some(vec![r1, r2, r3, r4])
    };
    let [a, b, tau1, tau2] = start;
    let y0 = vec![a, b, from_after(tau1, t0), from_window(tau2, tau1, tf)];
    let sol = newton::solve(residual, &[y0], NewtonOptions::default())
        .map_err(|t| SolveError::newton("joint headway-exit system", t))?;
    let tau1 = to_after(sol.x[2], t0);
    Ok([sol.x[0], sol.x[1], tau1, to_window(sol.x[3], tau1, tf)])
}
