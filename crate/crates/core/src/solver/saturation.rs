//! Control- and speed-limited solutions: `[u_lim] → cubic → [cruise at v_lim]`.
//!
//! The acceleration case uses `(u_max, v_max)`; the deceleration case mirrors it
//! with `(u_min, v_min)` for late fixed exit times.

use serde::Serialize;

use super::newton::{self, from_after, from_window, to_after, to_window, NewtonOptions};
use super::{CaseSolution, CostateArc, SolveError, Structure, TerminalMode};
use crate::bounds::{t_lower_speed_control, t_upper};
use crate::model::ScenarioConfig;
use crate::trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Accelerate,
    Decelerate,
}

impl Direction {
    fn limits(self, cfg: &ScenarioConfig) -> (f64, f64) {
        match self {
            Direction::Accelerate => (cfg.u_max, cfg.v_max),
            Direction::Decelerate => (cfg.u_min, cfg.v_min),
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Accelerate => 1.0,
            Direction::Decelerate => -1.0,
        }
    }
}

/// Which constrained arcs bracket the unconstrained middle arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    saturated: bool,
    cruise: bool,
}

struct Unpacked {
    a: f64,
    b: f64,
    tau1: f64,
    tau2: f64,
    tf: f64,
}

/// Full acceleration (deceleration) to the speed limit, then cruise: the profile
/// reaching the exit at the earliest (latest) feasible time.
pub fn extreme_profile(t0: f64, v0: f64, dir: Direction, cfg: &ScenarioConfig) -> Result<CaseSolution, SolveError> {
    let (u, v_lim) = dir.limits(cfg);
    let dist = cfg.exit_position();
    let (tf, structure) = match dir {
        Direction::Accelerate => (t_lower_speed_control(t0, v0, cfg).0, Structure::ExtremeAcceleration),
        Direction::Decelerate => (
            t_upper(t0, v0, cfg).ok_or_else(|| SolveError::Infeasible("vehicle can stop; no latest exit".into()))?,
            Structure::ExtremeDeceleration,
        ),
    };
    let reach = (v_lim - v0) / u;
    let mut arcs = Vec::new();
    let reaches_limit = match dir {
        Direction::Accelerate => 2.0 * dist * u + v0 * v0 > v_lim * v_lim,
        Direction::Decelerate => 2.0 * dist * u + v0 * v0 < v_lim * v_lim,
    };
    if reaches_limit && reach > 0.0 {
        let tau = t0 + reach;
        let sat = ArcSegment::new(ArcKind::SaturatedControl { u, v_start: v0, p_start: 0.0 }, t0, tau);
        let p = sat.state(tau).p;
        arcs.push(sat);
        arcs.push(ArcSegment::new(ArcKind::Cruise { v: v_lim, p_start: p }, tau, tf));
    } else {
        arcs.push(ArcSegment::new(ArcKind::SaturatedControl { u, v_start: v0, p_start: 0.0 }, t0, tf));
    }
    let junctions = if arcs.len() == 2 { vec![arcs[0].t_end] } else { vec![] };
    let mut sol = CaseSolution::new(PiecewiseTrajectory::new(arcs)?, structure);
    sol.junctions = junctions;
    if dir == Direction::Decelerate {
        sol.extension = Some("mirrored deceleration profile".into());
    }
    Ok(sol)
}

/// Saturated-control and/or limit-speed arcs around one unconstrained arc.
///
/// `control_hit` / `speed_hit` say which limits the previous solution violated;
/// the matching layout is tried first, then the others.
pub fn solve_umax_vmax(
    t0: f64,
    v0: f64,
    mode: TerminalMode,
    dir: Direction,
    control_hit: bool,
    speed_hit: bool,
    cfg: &ScenarioConfig,
) -> Result<CaseSolution, SolveError> {
    let primary = Layout { saturated: control_hit, cruise: speed_hit };
    let mut layouts = vec![primary];
    for l in [
        Layout { saturated: true, cruise: true },
        Layout { saturated: true, cruise: false },
        Layout { saturated: false, cruise: true },
    ] {
        if !layouts.contains(&l) {
            layouts.push(l);
        }
    }
    let mut last = SolveError::Structure("no saturated layout applies".into());
    for layout in layouts {
        if !layout.saturated && !layout.cruise {
            continue;
        }
        match solve_layout(t0, v0, mode, dir, layout, cfg) {
            Ok(sol) => return Ok(sol),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn solve_layout(
    t0: f64,
    v0: f64,
    mode: TerminalMode,
    dir: Direction,
    layout: Layout,
    cfg: &ScenarioConfig,
) -> Result<CaseSolution, SolveError> {
    let (u_lim, v_lim) = dir.limits(cfg);
    let (dist, gamma) = (cfg.exit_position(), cfg.gamma);
    let fixed_tf = match mode {
        TerminalMode::Fixed(tf) => Some(tf),
        TerminalMode::Free => None,
        _ => return Err(SolveError::Structure("saturated arcs need a free or fixed exit time".into())),
    };
    let unpack = |y: &[f64]| -> Unpacked {
        let mut i = 2;
        let mut next = || {
            i += 1;
            y[i - 1]
        };
        let tau1 = if layout.saturated {
            match fixed_tf {
                Some(tf) => to_window(next(), t0, tf),
                None => to_after(next(), t0),
            }
        } else {
            t0
        };
        let (tau2, tf) = match (layout.cruise, fixed_tf) {
            (true, Some(tf)) => (to_window(next(), tau1, tf), tf),
            (true, None) => {
                let t2 = to_after(next(), tau1);
                (t2, to_after(next(), t2))
            }
            (false, Some(tf)) => (tf, tf),
            (false, None) => {
                let t = to_after(next(), tau1);
                (t, t)
            }
        };
        Unpacked { a: y[0], b: y[1], tau1, tau2, tf }
    };
    let build = |x: &Unpacked| -> Vec<ArcSegment> {
        let mut arcs = Vec::new();
        let (mut p, mut v) = (0.0, v0);
        if layout.saturated {
            let sat = ArcSegment::new(ArcKind::SaturatedControl { u: u_lim, v_start: v0, p_start: 0.0 }, t0, x.tau1);
            let s = sat.state(x.tau1);
            (p, v) = (s.p, s.v);
            arcs.push(sat);
        }
        let mid = ArcSegment::new(ArcKind::cubic_through(x.tau1, p, v, x.a, x.b), x.tau1, x.tau2);
        if layout.cruise {
            let s = mid.state(x.tau2);
            arcs.push(mid);
            arcs.push(ArcSegment::new(ArcKind::Cruise { v: s.v, p_start: s.p }, x.tau2, x.tf));
        } else {
            arcs.push(mid);
        }
        arcs
    };
    let residual = |y: &[f64]| {
        let x = unpack(y);
        let arcs = build(&x);
        let mid = &arcs[usize::from(layout.saturated)];
        let mut r = Vec::with_capacity(y.len());
        if layout.saturated {
            r.push(x.a * x.tau1 + x.b - u_lim);
        }
        let end = mid.state(x.tau2);
        r.push(end.u);
        if layout.cruise {
            r.push(end.v - v_lim);
        }
        if fixed_tf.is_none() {
            r.push(gamma - 0.5 * end.u * end.u + x.a * end.v);
        }
        let last = &arcs[arcs.len() - 1];
        r.push(last.state(x.tf).p - dist);
        Some(r)
    };
    let starts = starting_points(t0, v0, mode, dir, layout, cfg);
    let sol = newton::solve(residual, &starts, NewtonOptions::default())
        .map_err(|t| SolveError::newton("saturated arcs", t))?;
    let x = unpack(&sol.x);
    let arcs = build(&x);
    // The middle arc must itself respect both limits.
    let mid = &arcs[usize::from(layout.saturated)];
    let tol = 1e-9;
    let mut check = vec![mid.state(mid.t_start), mid.state(mid.t_end)];
    check.extend(mid.extrema().v.iter().map(|&(t, _)| mid.state(t)));
    if check.iter().any(|s| s.u > cfg.u_max + tol || s.u < cfg.u_min - tol || s.v > cfg.v_max + tol || s.v < cfg.v_min - tol)
    {
        return Err(SolveError::Structure("middle arc leaves the admissible range".into()));
    }
    if layout.saturated && x.tau1 - t0 < 1e-9 || layout.cruise && x.tau2 - x.tau1 < 1e-9 {
        return Err(SolveError::Structure("degenerate middle arc".into()));
    }
    let (a, b) = (x.a, x.b);
    let traj = PiecewiseTrajectory::new(arcs)?;
    let structure = match dir {
        Direction::Accelerate => Structure::SaturatedAcceleration,
        Direction::Decelerate => Structure::SaturatedDeceleration,
    };
    let mut out = CaseSolution::new(traj, structure);
    if layout.saturated {
        out.junctions.push(x.tau1);
    }
    if layout.cruise {
        out.junctions.push(x.tau2);
    }
    out.residual = sol.residual;
    out.iterations = sol.iterations;
    // λ_p is the middle arc's slope throughout; λ_v = −(a t + b) extends over the saturated arc.
    out.multipliers.costates.push(CostateArc::from_cubic(t0, x.tf, a, b));
    if dir == Direction::Decelerate {
        out.extension = Some("mirrored deceleration arcs".into());
    }
    Ok(out)
}

fn starting_points(
    t0: f64,
    v0: f64,
    mode: TerminalMode,
    dir: Direction,
    layout: Layout,
    cfg: &ScenarioConfig,
) -> Vec<Vec<f64>> {
    let (u_lim, v_lim) = dir.limits(cfg);
    let sigma = dir.sign();
    let dist = cfg.exit_position();
    let fixed_tf = match mode {
        TerminalMode::Fixed(tf) => Some(tf),
        _ => None,
    };
    let horizon = fixed_tf.unwrap_or(t0 + dist / (0.5 * (v0 + v_lim)).max(1e-3)) - t0;
    let mut slopes = Vec::new();
    if fixed_tf.is_none() && layout.cruise && v_lim > 0.0 {
        slopes.push(-cfg.gamma / v_lim);
    }
    for frac in [0.8, 0.5, 0.3, 0.15, 1.2, 0.05, 2.0] {
        slopes.push(-sigma * u_lim.abs() / (frac * horizon));
    }
    let mut out = Vec::new();
    for a in slopes {
        if a == 0.0 || !a.is_finite() {
            continue;
        }
        let span = (-u_lim / a).abs();
        let tau1 = if layout.saturated {
            let v1 = if layout.cruise { v_lim - 0.5 * u_lim * span } else { v0 + 0.3 * (v_lim - v0) };
            (t0 + (v1 - v0) / u_lim).max(t0 + 0.02 * horizon)
        } else {
            t0
        };
        let b_sat = u_lim - a * tau1;
        let (b, tau2) = if layout.cruise {
            if layout.saturated {
                (b_sat, tau1 + span)
            } else {
                let d = (2.0 * (v_lim - v0) / (-a)).abs().sqrt();
                (-a * (t0 + d), t0 + d)
            }
        } else if layout.saturated {
            (b_sat, tau1 + span)
        } else {
            (0.0, t0 + horizon)
        };
        let mut y = vec![a, b];
        let end = fixed_tf.unwrap_or(t0 + horizon);
        if layout.saturated {
            y.push(match fixed_tf {
                Some(tf) => from_window(tau1.min(tf - 1e-3), t0, tf),
                None => from_after(tau1, t0),
            });
        }
        if layout.cruise {
            match fixed_tf {
                Some(tf) => y.push(from_window(tau2.clamp(tau1 + 1e-3, tf - 1e-3), tau1, tf)),
                None => {
                    y.push(from_after(tau2.max(tau1 + 1e-3), tau1));
                    let p2 = 0.5 * (v0 + v_lim) * (tau2 - t0);
                    let tf = tau2 + ((dist - p2) / v_lim.max(1e-3)).max(1.0);
                    y.push(from_after(tf, tau2.max(tau1 + 1e-3)));
                }
            }
        } else if fixed_tf.is_none() {
            y.push(from_after(end.max(tau1 + 1.0), tau1));
        }
        out.push(y);
    }
    out.truncate(8);
    out
}
