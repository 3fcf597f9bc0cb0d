//! Solves a scenario vehicle by vehicle and audits the outcome.

use cav_core::coordinator::{check_guarantees, classify, Coordinator, GuaranteeReport, QueueView};
use cav_core::solver::{algorithm1, SolveError, SolveReport, TerminalMode};
use cav_core::verifier::{
    audit, compare_with_oracle, oracle_problem, AuditContext, AuditReport, OracleComparison, OracleOptions,
};
use cav_core::{PiecewiseTrajectory, ScenarioConfig, VehicleArrival};

use crate::scenario::Scenario;
use crate::{SimError, EXIT_FAILED, EXIT_OK};

/// Half-width of the exit-time bracket searched by the oracle around the analytic exit.
pub const ORACLE_BRACKET: f64 = 2.0;

#[derive(Debug, Clone)]
pub enum VehicleStatus {
    Solved { trajectory: PiecewiseTrajectory, report: Box<SolveReport>, audit: AuditReport },
    Infeasible(SolveError),
    /// Not attempted because an earlier vehicle failed.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct VehicleOutcome {
    pub arrival: VehicleArrival,
    /// 1-based FIFO queue number.
    pub queue_index: usize,
    pub status: VehicleStatus,
}

impl VehicleOutcome {
    pub fn trajectory(&self) -> Option<&PiecewiseTrajectory> {
        match &self.status {
            VehicleStatus::Solved { trajectory, .. } => Some(trajectory),
            _ => None,
        }
    }

    pub fn ok(&self) -> bool {
        matches!(&self.status, VehicleStatus::Solved { audit, .. } if audit.passed())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: Scenario,
    /// Outcomes in queue order.
    pub vehicles: Vec<VehicleOutcome>,
    /// Schedule-level safety audit; `None` for independent runs or when some vehicle failed.
    pub guarantees: Option<GuaranteeReport>,
}

impl RunResult {
    pub fn passed(&self) -> bool {
        self.vehicles.iter().all(VehicleOutcome::ok) && self.guarantees.as_ref().is_none_or(|g| g.passed())
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }

    pub fn vehicle(&self, id: u64) -> Option<&VehicleOutcome> {
        self.vehicles.iter().find(|v| v.arrival.id == id)
    }
}

/// Oracle cost for the vehicle's problem; free exit times are searched within
/// [`ORACLE_BRACKET`] of the analytic exit, never before the earliest feasible exit.
pub fn oracle_comparison(
    traj: &PiecewiseTrajectory,
    report: &SolveReport,
    view: &QueueView<'_>,
    cfg: &ScenarioConfig,
    opts: &OracleOptions,
) -> OracleComparison {
    let fixed = matches!(report.mode, TerminalMode::Fixed(_) | TerminalMode::Prescribed { .. });
    let mut prob = oracle_problem(traj, view, !fixed);
    if !fixed {
        let t_l = report.bounds.map_or(traj.t0(), |b| b.t_l);
        let tf = traj.tf();
        prob.tf_range = Some(((tf - ORACLE_BRACKET).max(t_l), tf + ORACLE_BRACKET));
        if report.mode == TerminalMode::Follower {
            prob.follower_exit = view.k.as_ref().map(|k| (k.trajectory.tf(), k.trajectory.vf()));
        }
    }
    compare_with_oracle(traj, &prob, cfg, opts)
}

/// Runs `scenario`: FIFO queueing, per-vehicle solve and audit, schedule audit.
pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario.validate()?;
    let cfg = &scenario.config;
    let mut coordinator = Coordinator::new(scenario.run.seed);
    coordinator.enqueue_batch(scenario.arrivals.clone())?;
    let queue = coordinator.queue().to_vec();
    let mut solved: Vec<PiecewiseTrajectory> = Vec::with_capacity(queue.len());
    let mut vehicles = Vec::with_capacity(queue.len());
    let mut blocked = false;
    let opts = OracleOptions { seed: scenario.run.seed, ..Default::default() };
    for (pos, arrival) in queue.iter().enumerate() {
        let index = pos + 1;
        if blocked {
            vehicles.push(VehicleOutcome { arrival: arrival.clone(), queue_index: index, status: VehicleStatus::Skipped });
            continue;
        }
        let view = if scenario.run.independent {
            QueueView::alone(index)
        } else {
            classify(index, &queue, &cfg.conflict)?.view(&queue, &solved)
        };
        let status = match algorithm1(arrival, &view, cfg) {
            Ok((trajectory, report)) => {
                let cfg_i = cfg.for_vehicle(arrival);
                let ctx = AuditContext {
                    initial: Some((arrival.t0, arrival.v0)),
                    free_exit: report.mode == TerminalMode::Free,
                    structure: Some(report.structure),
                    ..AuditContext::new(&cfg_i, &view)
                };
                let mut audit_report = audit(&trajectory, &ctx);
                if scenario.run.oracle {
                    audit_report.oracle = Some(oracle_comparison(&trajectory, &report, &view, &cfg_i, &opts));
                }
                VehicleStatus::Solved { trajectory, report: Box::new(report), audit: audit_report }
            }
            Err(e) => VehicleStatus::Infeasible(e),
        };
        match &status {
            VehicleStatus::Solved { trajectory, .. } => solved.push(trajectory.clone()),
            _ => blocked = !scenario.run.independent,
        }
        vehicles.push(VehicleOutcome { arrival: arrival.clone(), queue_index: index, status });
    }
    let guarantees = if scenario.run.independent || blocked {
        None
    } else {
        let schedule: Vec<(VehicleArrival, PiecewiseTrajectory)> = vehicles
            .iter()
            .filter_map(|v| v.trajectory().map(|t| (v.arrival.clone(), t.clone())))
            .collect();
        Some(check_guarantees(&schedule, cfg)?)
    };
    Ok(RunResult { scenario: scenario.clone(), vehicles, guarantees })
}
