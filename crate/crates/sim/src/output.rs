//! CSV and text reports of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cav_core::solver::{ConstraintKind, SolveError, TerminalMode};
use cav_core::PiecewiseTrajectory;

use crate::runner::{RunResult, VehicleStatus};
use crate::SimError;

fn io(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io(format!("{}: {e}", path.display()))
}

fn num(x: f64) -> String {
    format!("{x:.9}")
}

/// Sampling grid plus every arc breakpoint.
pub fn sample_times(traj: &PiecewiseTrajectory, step: f64) -> Vec<f64> {
    let (t0, tf) = (traj.t0(), traj.tf());
    let n = ((tf - t0) / step).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|j| t0 + j as f64 * step).filter(|t| *t <= tf).collect();
    times.extend(traj.breakpoints());
    times.push(tf);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    times
}

fn constraint_label(kind: &ConstraintKind) -> String {
    match kind {
        ConstraintKind::Path(p) => format!("{p:?}"),
        ConstraintKind::ExitLowerBound(b) => format!("ExitLowerBound({b:?})"),
        ConstraintKind::ExitUpperBound => "ExitUpperBound".into(),
    }
}

fn mode_label(mode: &TerminalMode) -> &'static str {
    match mode {
        TerminalMode::Free => "free",
        TerminalMode::Fixed(_) => "fixed",
        TerminalMode::Follower => "follower",
        TerminalMode::Prescribed { .. } => "prescribed",
    }
}

pub fn trajectories_csv(result: &RunResult) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| SimError::Io(e.to_string());
    w.write_record(["t", "p", "v", "u", "arc_kind", "cav_id"]).map_err(err)?;
    for v in &result.vehicles {
        let Some(traj) = v.trajectory() else { continue };
        let id = v.arrival.id.to_string();
        for t in sample_times(traj, result.scenario.run.sample_step) {
            let s = traj.eval_extended(t);
            let kind = traj.arcs()[traj.arc_index(t)].label();
            w.write_record([num(t), num(s.p), num(s.v), num(s.u), kind.to_string(), id.clone()]).map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Io(e.to_string()))
}

pub fn summary_csv(result: &RunResult) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| SimError::Io(e.to_string());
    w.write_record([
        "cav_id",
        "queue_index",
        "status",
        "t0",
        "tf",
        "travel_time",
        "energy",
        "J",
        "structure",
        "exit_mode",
        "binding_bound",
        "active_constraints",
        "junctions",
        "rounds",
        "audit",
        "oracle_J",
    ])
    .map_err(err)?;
    let gamma = result.scenario.config.gamma;
    for v in &result.vehicles {
        let mut row = vec![v.arrival.id.to_string(), v.queue_index.to_string()];
        match &v.status {
            VehicleStatus::Solved { trajectory, report, audit } => {
                let cost = trajectory.cost(gamma);
                let active: Vec<String> = report.active_constraints().iter().map(constraint_label).collect();
                row.extend([
                    "solved".to_string(),
                    num(trajectory.t0()),
                    num(trajectory.tf()),
                    num(cost.travel_time),
                    num(cost.energy),
                    num(cost.j),
                    format!("{:?}", report.structure),
                    mode_label(&report.mode).to_string(),
                    report.binding_term().map_or(String::new(), |b| format!("{b:?}")),
                    active.join(";"),
                    report.junctions.iter().map(|t| format!("{t:.6}")).collect::<Vec<_>>().join(";"),
                    report.rounds().to_string(),
                    if audit.passed() { "pass" } else { "fail" }.to_string(),
                    audit.oracle.map_or(String::new(), |o| num(o.oracle_j)),
                ]);
            }
            VehicleStatus::Infeasible(_) | VehicleStatus::Skipped => {
                let status = if matches!(v.status, VehicleStatus::Skipped) { "skipped" } else { "infeasible" };
                row.push(status.to_string());
                row.push(num(v.arrival.t0));
                row.extend(std::iter::repeat_n(String::new(), 12));
            }
        }
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Io(e.to_string()))
}

pub fn audit_text(result: &RunResult) -> String {
    let mut out = String::new();
    for v in &result.vehicles {
        let _ = writeln!(out, "== vehicle {} (queue #{}) ==", v.arrival.id, v.queue_index);
        match &v.status {
            VehicleStatus::Solved { report, audit, .. } => {
                let _ = writeln!(out, "structure {:?}, exit {}", report.structure, mode_label(&report.mode));
                if let Some(e) = &report.extension {
                    let _ = writeln!(out, "note: {e}");
                }
                out.push_str(&audit.to_string());
            }
            VehicleStatus::Infeasible(e) => {
                let _ = writeln!(out, "infeasible: {e}");
                if let SolveError::InfeasibleWithTrace { trace, .. } = e {
                    for (j, a) in trace.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "  round {}: {} at t={:.6}, excess {:+.3e} -> {}",
                            j + 1,
                            constraint_label(&a.kind),
                            a.time,
                            a.excess,
                            a.structure.map_or("failed".to_string(), |s| format!("{s:?}"))
                        );
                    }
                }
            }
            VehicleStatus::Skipped => out.push_str("skipped: an earlier vehicle could not be solved\n"),
        }
    }
    match &result.guarantees {
        Some(g) => {
            let _ = writeln!(out, "== schedule: {} pair(s) checked ==", g.pairs_checked);
            if let Some((m, t)) = g.worst_gap {
                let _ = writeln!(out, "worst headway surplus {m:+.6e} at t={t:.6}");
            }
            for x in &g.violations {
                let _ = writeln!(
                    out,
                    "FAIL {:?}: {} behind {} at t={:.6}, margin {:+.3e}",
                    x.kind, x.behind, x.ahead, x.time, x.margin
                );
            }
            if g.passed() {
                out.push_str("schedule ok\n");
            }
        }
        None => out.push_str("== schedule not audited ==\n"),
    }
    let _ = writeln!(out, "result: {}", if result.passed() { "PASS" } else { "FAIL" });
    out
}

/// Writes `trajectories.csv`, `summary.csv` and `audit.txt` into `dir`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files = [
        ("trajectories.csv", trajectories_csv(result)?),
        ("summary.csv", summary_csv(result)?),
        ("audit.txt", audit_text(result)),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
