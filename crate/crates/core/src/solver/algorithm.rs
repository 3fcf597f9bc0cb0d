//! Step-wise constrained solve for one vehicle: unconstrained problem, exit-time
//! window, then one violated path constraint at a time.

use serde::Serialize;

use super::lateral::solve_lateral_interior;
use super::safety::{solve_safety_no_exit, solve_safety_with_exit, SafetyHint};
use super::saturation::{extreme_profile, solve_umax_vmax, Direction};
use super::unconstrained::{solve_p0_free_from, solve_p1_fixed, solve_p1_follower, solve_prescribed};
use super::violations::{earliest, violations, PathConstraint};
use super::{
    CaseSolution, MultiplierRecord, SafetyArcParams, SolveError, Structure, TerminalMode, UnconstrainedParams,
};
use crate::bounds::{follower_exit_time, t_lower_composite, BindingTerm, TerminalBounds};
use crate::coordinator::QueueView;
use crate::model::{ScenarioConfig, VehicleArrival};
use crate::trajectory::PiecewiseTrajectory;

/// Activation rounds allowed before giving up.
pub const MAX_ROUNDS: usize = 10;
/// Slack on the exit-time window.
pub const EXIT_TOL: f64 = 1e-6;
const EXTREME_TOL: f64 = 1e-9;

/// What an activation round acted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintKind {
    Path(PathConstraint),
    ExitLowerBound(BindingTerm),
    ExitUpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Activation {
    pub kind: ConstraintKind,
    /// Earliest violation time (exit time for the window checks).
    pub time: f64,
    pub excess: f64,
    /// Layout and exit mode after the round; `None` if the round failed.
    pub structure: Option<Structure>,
    pub mode: TerminalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Exit-time window corrections.
    pub terminal: Vec<Activation>,
    /// Path-constraint activations in order.
    pub activations: Vec<Activation>,
    pub mode: TerminalMode,
    pub bounds: Option<TerminalBounds>,
    pub structure: Structure,
    /// Final residual and Newton iterations of each solve, in order.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub junctions: Vec<f64>,
    pub multipliers: MultiplierRecord,
    pub extension: Option<String>,
    pub unconstrained: Option<UnconstrainedParams>,
    pub safety: Option<SafetyArcParams>,
}

impl SolveReport {
    pub fn rounds(&self) -> usize {
        self.activations.len()
    }

    pub fn binding_term(&self) -> Option<BindingTerm> {
        self.bounds.map(|b| b.binding_term)
    }

    pub fn active_constraints(&self) -> Vec<ConstraintKind> {
        self.terminal.iter().chain(&self.activations).map(|a| a.kind).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PathCase {
    None,
    Saturation { dir: Direction, control: bool, speed: bool },
    SafetyExit,
    SafetyNoExit,
    Lateral,
}

struct Ctx<'a, 'b> {
    t0: f64,
    v0: f64,
    view: &'a QueueView<'b>,
    cfg: &'a ScenarioConfig,
    t_l: f64,
    t_u: Option<f64>,
}

impl Ctx<'_, '_> {
    fn leader(&self) -> Result<&PiecewiseTrajectory, SolveError> {
        self.view
            .k
            .as_ref()
            .map(|k| k.trajectory)
            .ok_or_else(|| SolveError::Structure("no same-lane leader".into()))
    }

    fn solve(&self, mode: TerminalMode, case: PathCase, warm: Option<&CaseSolution>) -> Result<CaseSolution, SolveError> {
        let (t0, v0, cfg) = (self.t0, self.v0, self.cfg);
        let warm_tf = warm.map_or(t0 + cfg.exit_position() / v0.max(1e-3), |w| w.trajectory.tf());
        if mode == TerminalMode::Follower && matches!(case, PathCase::Saturation { .. } | PathCase::SafetyExit) {
            return self.follower_fixed_point(case, warm_tf);
        }
        let unsupported = || {
            SolveError::Structure(format!("{case:?} with exit mode {mode:?} is not a supported combination"))
        };
        match case {
            PathCase::None => match mode {
                TerminalMode::Free => solve_p0_free_from(t0, v0, cfg, warm.and_then(|w| w.unconstrained)),
                TerminalMode::Fixed(tf) if (tf - self.t_l).abs() <= EXTREME_TOL => {
                    extreme_profile(t0, v0, Direction::Accelerate, cfg)
                }
                TerminalMode::Fixed(tf) if self.t_u.is_some_and(|tu| (tf - tu).abs() <= EXTREME_TOL) => {
                    extreme_profile(t0, v0, Direction::Decelerate, cfg)
                }
                TerminalMode::Fixed(tf) => solve_p1_fixed(t0, v0, tf, cfg),
                TerminalMode::Follower => solve_p1_follower(t0, v0, self.leader()?, cfg, warm.and_then(|w| w.unconstrained)),
                TerminalMode::Prescribed { tf, vf } => solve_prescribed(t0, v0, tf, vf, cfg),
            },
            PathCase::Saturation { dir, control, speed } => match mode {
                TerminalMode::Fixed(tf) if (tf - self.t_l).abs() <= EXTREME_TOL && dir == Direction::Accelerate => {
                    extreme_profile(t0, v0, dir, cfg)
                }
                TerminalMode::Fixed(tf)
                    if dir == Direction::Decelerate && self.t_u.is_some_and(|tu| (tf - tu).abs() <= EXTREME_TOL) =>
                {
                    extreme_profile(t0, v0, dir, cfg)
                }
                TerminalMode::Free | TerminalMode::Fixed(_) => solve_umax_vmax(t0, v0, mode, dir, control, speed, cfg),
                _ => Err(unsupported()),
            },
            PathCase::SafetyExit => match mode {
                TerminalMode::Free | TerminalMode::Fixed(_) => {
                    let leader = self.leader()?;
                    let hint = SafetyHint { t_hi: warm_tf.max(leader.tf()) + 10.0 };
                    solve_safety_with_exit(t0, v0, leader, mode, cfg, hint)
                }
                _ => Err(unsupported()),
            },
            PathCase::SafetyNoExit => match mode {
                TerminalMode::Free | TerminalMode::Follower => {
                    let leader = self.leader()?;
                    let hint = SafetyHint { t_hi: warm_tf.max(leader.tf()) + 10.0 };
                    solve_safety_no_exit(t0, v0, leader, cfg, hint)
                }
                _ => Err(unsupported()),
            },
            PathCase::Lateral => {
                let c = self.view.c.as_ref().ok_or_else(|| SolveError::Structure("no conflicting vehicle".into()))?;
                let leader = self.view.k.as_ref().map(|k| k.trajectory);
                solve_lateral_interior(t0, v0, c.trajectory.tf(), mode, leader, cfg, warm_tf)
            }
        }
    }

    /// Follower exit time for layouts without their own transversality condition:
    /// iterate the fixed exit time on the exit speed until the headway at exit is met.
    fn follower_fixed_point(&self, case: PathCase, warm_tf: f64) -> Result<CaseSolution, SolveError> {
        let leader = self.leader()?;
        let (tk, vk) = (leader.tf(), leader.vf());
        let mut tf = warm_tf;
        let mut iterations = 0;
        for _ in 0..50 {
            let mut sol = self.solve(TerminalMode::Fixed(tf), case, None)?;
            iterations += sol.iterations;
            let next = follower_exit_time(tk, vk, sol.trajectory.vf(), self.cfg);
            if (next - tf).abs() <= 1e-10 * tf.abs().max(1.0) {
                sol.iterations = iterations;
                sol.residual = sol.residual.max((next - tf).abs());
                sol.extension = Some("follower exit time closed by fixed-point iteration on the exit speed".into());
                return Ok(sol);
            }
            tf = next;
        }
        Err(SolveError::NoConvergence { what: "follower exit-time fixed point", residuals: vec![tf] })
    }
}

fn next_case(case: PathCase, constraint: PathConstraint, upper: bool, mode: TerminalMode) -> Option<PathCase> {
    let dir = if upper { Direction::Accelerate } else { Direction::Decelerate };
    match (case, constraint) {
        (PathCase::None, PathConstraint::Control) => Some(PathCase::Saturation { dir, control: true, speed: false }),
        (PathCase::None, PathConstraint::Speed) => Some(PathCase::Saturation { dir, control: false, speed: true }),
        (PathCase::Saturation { dir: d, control, speed }, PathConstraint::Control) if d == dir && !control => {
            Some(PathCase::Saturation { dir, control: true, speed })
        }
        (PathCase::Saturation { dir: d, control, speed }, PathConstraint::Speed) if d == dir && !speed => {
            Some(PathCase::Saturation { dir, control, speed: true })
        }
        (PathCase::None, PathConstraint::RearEnd) => Some(match mode {
            TerminalMode::Follower => PathCase::SafetyNoExit,
            _ => PathCase::SafetyExit,
        }),
        (PathCase::SafetyExit, PathConstraint::RearEnd) if mode == TerminalMode::Free => Some(PathCase::SafetyNoExit),
        (PathCase::None, PathConstraint::Lateral) => Some(PathCase::Lateral),
        _ => None,
    }
}

/// Solves one vehicle given its already-solved predecessors.
pub fn algorithm1(
    arrival: &VehicleArrival,
    view: &QueueView<'_>,
    cfg: &ScenarioConfig,
) -> Result<(PiecewiseTrajectory, SolveReport), SolveError> {
    let cfg_i = cfg.for_vehicle(arrival);
    arrival.validate(&cfg_i)?;
    let bounds0 = t_lower_composite(arrival, view, &cfg_i, arrival.v0)?;
    if !bounds0.feasible() {
        return Err(SolveError::Infeasible(format!(
            "earliest exit {} after latest exit {:?}",
            bounds0.t_l, bounds0.t_u
        )));
    }
    let ctx = Ctx { t0: arrival.t0, v0: arrival.v0, view, cfg: &cfg_i, t_l: bounds0.t_l, t_u: bounds0.t_u };
    let imposed = match (arrival.tf, arrival.vf) {
        (Some(tf), Some(vf)) => Some(TerminalMode::Prescribed { tf, vf }),
        (Some(tf), None) => Some(TerminalMode::Fixed(tf)),
        _ => None,
    };
    let mut mode = imposed.unwrap_or(TerminalMode::Free);
    let mut case = PathCase::None;
    let mut report = SolveReport {
        terminal: Vec::new(),
        activations: Vec::new(),
        mode,
        bounds: None,
        structure: Structure::Unconstrained,
        residuals: Vec::new(),
        iterations: Vec::new(),
        junctions: Vec::new(),
        multipliers: MultiplierRecord::default(),
        extension: None,
        unconstrained: None,
        safety: None,
    };
    let trace_err = |report: &SolveReport, reason: String| SolveError::InfeasibleWithTrace {
        reason,
        trace: report.terminal.iter().chain(&report.activations).cloned().collect(),
    };
    let mut sol = ctx.solve(mode, case, None)?;
    let mut extension: Option<String> = sol.extension.clone();
    report.residuals.push(sol.residual);
    report.iterations.push(sol.iterations);

    for _ in 0..=2 * MAX_ROUNDS {
        if report.terminal.len() + report.activations.len() > MAX_ROUNDS {
            break;
        }
        let bounds = t_lower_composite(arrival, view, &cfg_i, sol.trajectory.vf())?;
        report.bounds = Some(bounds);
        let tf = sol.trajectory.tf();
        // Exit-time window.
        let window = if tf < bounds.t_lower_composite - EXIT_TOL {
            Some((ConstraintKind::ExitLowerBound(bounds.binding_term), bounds.t_lower_composite - tf))
        } else {
            bounds.t_u.filter(|tu| tf > tu + EXIT_TOL).map(|tu| (ConstraintKind::ExitUpperBound, tf - tu))
        };
        if let Some((kind, excess)) = window {
            if imposed.is_some() {
                return Err(SolveError::Infeasible(format!("imposed exit time {tf} outside the feasible window")));
            }
            let new_mode = match kind {
                ConstraintKind::ExitLowerBound(BindingTerm::Follower) => TerminalMode::Follower,
                ConstraintKind::ExitLowerBound(BindingTerm::SpeedControl) => TerminalMode::Fixed(bounds.t_l),
                ConstraintKind::ExitLowerBound(_) => TerminalMode::Fixed(bounds.t_lower_composite),
                _ => TerminalMode::Fixed(bounds.t_u.unwrap_or(tf)),
            };
            let mut act = Activation { kind, time: tf, excess, structure: None, mode: new_mode };
            if new_mode == mode && !matches!(mode, TerminalMode::Fixed(_)) || case == PathCase::SafetyNoExit {
                report.terminal.push(act);
                return Err(trace_err(&report, "exit-time window not met by the current layout".into()));
            }
            match ctx.solve(new_mode, case, Some(&sol)) {
                Ok(s) => {
                    act.structure = Some(s.structure);
                    mode = new_mode;
                    sol = s;
                    extension = extension.or(sol.extension.clone());
                    report.residuals.push(sol.residual);
                    report.iterations.push(sol.iterations);
                    report.terminal.push(act);
                    continue;
                }
                Err(e) => {
                    report.terminal.push(act);
                    return Err(trace_err(&report, format!("exit-time window: {e}")));
                }
            }
        }
        // Path constraints.
        let list = violations(&sol.trajectory, view, &cfg_i);
        let Some(v) = earliest(&list) else {
            report.mode = mode;
            report.structure = sol.structure;
            report.junctions = sol.junctions.clone();
            report.multipliers = sol.multipliers.clone();
            report.extension = extension.or(sol.extension.clone());
            report.unconstrained = sol.unconstrained;
            report.safety = sol.safety.clone();
            return Ok((sol.trajectory, report));
        };
        let mut act = Activation {
            kind: ConstraintKind::Path(v.constraint),
            time: v.time,
            excess: v.excess,
            structure: None,
            mode,
        };
        let Some(next) = next_case(case, v.constraint, v.upper, mode) else {
            report.activations.push(act);
            return Err(trace_err(
                &report,
                format!("{:?} violated at t={:.6} on a {:?} layout; combination not supported", v.constraint, v.time, sol.structure),
            ));
        };
        let mut attempt = ctx.solve(mode, next, Some(&sol)).map(|s| (next, s));
        if let (Err(_), PathCase::SafetyExit, TerminalMode::Free) = (&attempt, next, mode) {
            attempt = ctx.solve(mode, PathCase::SafetyNoExit, Some(&sol)).map(|s| (PathCase::SafetyNoExit, s));
        }
        match attempt {
            Ok((c, s)) => {
                act.structure = Some(s.structure);
                case = c;
                sol = s;
                extension = extension.or(sol.extension.clone());
                report.residuals.push(sol.residual);
                report.iterations.push(sol.iterations);
                report.activations.push(act);
            }
            Err(e) => {
                report.activations.push(act);
                return Err(trace_err(&report, format!("{:?} case: {e}", v.constraint)));
            }
        }
    }
    Err(trace_err(&report, format!("constraints still violated after {MAX_ROUNDS} rounds")))
}
