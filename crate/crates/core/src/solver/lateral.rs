//! Merging-zone entry held back until the conflicting vehicle has left: two cubics
//! joined at `t_c` with `p(t_c) = L` and continuous control.

use super::newton::{self, from_after, to_after, NewtonOptions};
use super::{CaseSolution, CostateArc, SolveError, Structure, TerminalMode};
use crate::model::ScenarioConfig;
use crate::trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory, State};

fn arcs_for(t0: f64, v0: f64, tc: f64, y: &[f64]) -> (ArcSegment, ArcSegment) {
    let (a, b, e, r) = (y[0], y[1], y[2], y[3]);
    let first = ArcSegment::new(ArcKind::cubic_through(t0, 0.0, v0, a, b), t0, tc);
    let s = first.state(tc);
    let second = ArcSegment::new(ArcKind::cubic_through(tc, s.p, s.v, e, r), tc, f64::INFINITY);
    (first, second)
}

/// `leader` is required for [`TerminalMode::Follower`].
pub fn solve_lateral_interior(
    t0: f64,
    v0: f64,
    tc: f64,
    mode: TerminalMode,
    leader: Option<&PiecewiseTrajectory>,
    cfg: &ScenarioConfig,
    warm_tf: f64,
) -> Result<CaseSolution, SolveError> {
    if !(tc > t0) {
        return Err(SolveError::Structure("conflicting vehicle exits before entry".into()));
    }
    if let TerminalMode::Fixed(tf) = mode {
        if tc >= tf {
            return Err(SolveError::Structure(format!("conflicting exit {tc} not before fixed exit {tf}")));
        }
    }
    let (l, dist, gamma, phi, delta0) = (cfg.l, cfg.exit_position(), cfg.gamma, cfg.phi, cfg.delta0);
    let junction = move |first: &ArcSegment, y: &[f64]| {
        let s = first.state(tc);
        [s.p - l, s.u - (y[2] * tc + y[3])]
    };
    let tail = |second: &ArcSegment, tf: f64| -> State { second.state(tf) };

    let fixed_solve = |tf: f64| {
        let f = |y: &[f64]| {
            let (first, second) = arcs_for(t0, v0, tc, y);
            let [r1, r2] = junction(&first, y);
            let s = tail(&second, tf);
            Some(vec![r1, r2, s.u, s.p - dist])
        };
        newton::solve(f, &[vec![0.0, 0.0, 0.0, 0.0]], NewtonOptions::default())
    };

    let guesses: Vec<f64> = [warm_tf, tc + 0.5 * (warm_tf - tc).max(0.5), tc + (dist - l) / v0, tc + 2.0 * (dist - l) / v0]
        .into_iter()
        .filter(|t| *t > tc)
        .collect();

    let (y, tf, residual, iterations, eta) = match mode {
        TerminalMode::Fixed(tf) => {
            let s = fixed_solve(tf).map_err(|t| SolveError::newton("merging-zone entry, fixed exit", t))?;
            (s.x, tf, s.residual, s.iterations, None)
        }
        TerminalMode::Free => {
            let f = |y: &[f64]| {
                let tf = to_after(y[4], tc);
                let (first, second) = arcs_for(t0, v0, tc, y);
                let [r1, r2] = junction(&first, y);
                let s = tail(&second, tf);
                Some(vec![r1, r2, s.u, s.p - dist, gamma - 0.5 * s.u * s.u + y[2] * s.v])
            };
            let starts: Vec<Vec<f64>> = guesses
                .iter()
                .filter_map(|&tf| fixed_solve(tf).ok().map(|s| [s.x, vec![from_after(tf, tc)]].concat()))
                .collect();
            let s = newton::solve(f, &starts, NewtonOptions::default())
                .map_err(|t| SolveError::newton("merging-zone entry, free exit", t))?;
            let tf = to_after(s.x[4], tc);
            (s.x, tf, s.residual, s.iterations, None)
        }
        TerminalMode::Follower => {
            let leader = leader.ok_or_else(|| SolveError::Structure("follower exit time without a leader".into()))?;
            let (tk, vk) = (leader.tf(), leader.vf());
            let f = |y: &[f64]| {
                let (eta, tf) = (y[4], to_after(y[5], tc));
                let (first, second) = arcs_for(t0, v0, tc, y);
                let [r1, r2] = junction(&first, y);
                let s = tail(&second, tf);
                Some(vec![
                    r1,
                    r2,
                    s.u - eta * phi,
                    s.p - dist,
                    gamma - 0.5 * s.u * s.u + y[2] * s.v + eta * vk,
                    tf - tk - (phi * s.v + delta0) / vk,
                ])
            };
            let mut starts = Vec::new();
            for &tf in &guesses {
                if let Ok(s) = fixed_solve(tf) {
                    starts.push([s.x, vec![0.0, from_after(tf, tc)]].concat());
                }
            }
            let s = newton::solve(f, &starts, NewtonOptions::default())
                .map_err(|t| SolveError::newton("merging-zone entry, follower exit", t))?;
            let tf = to_after(s.x[5], tc);
            let eta = s.x[4];
            (s.x, tf, s.residual, s.iterations, Some(eta))
        }
        TerminalMode::Prescribed { .. } => {
            return Err(SolveError::Structure("merging-zone entry with prescribed exit speed".into()))
        }
    };
    if !(tf > tc) {
        return Err(SolveError::Structure("exit before the conflicting vehicle leaves".into()));
    }
    let (first, mut second) = arcs_for(t0, v0, tc, &y);
    second.t_end = tf;
    let traj = PiecewiseTrajectory::new(vec![first, second])?;
    let structure = Structure::LateralInterior;
    let mut sol = CaseSolution::new(traj, structure);
    sol.junctions = vec![tc];
    sol.residual = residual;
    sol.iterations = iterations;
    sol.multipliers.costates.push(CostateArc::from_cubic(t0, tc, y[0], y[1]));
    sol.multipliers.costates.push(CostateArc::from_cubic(tc, tf, y[2], y[3]));
    sol.multipliers.zeta = Some(y[0] - y[2]);
    sol.multipliers.eta = eta;
    Ok(sol)
}
