//! FIFO crossing queue, predecessor classification and the schedule audit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ConflictMatrix, ModelError, ScenarioConfig, VehicleArrival};
use crate::trajectory::PiecewiseTrajectory;

/// Arrivals closer than this are treated as simultaneous.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("vehicle {id} arrives at {t0} before the last queued arrival at {last}")]
    OutOfOrder { id: u64, t0: f64, last: f64 },
}

/// A solved predecessor as seen by a later vehicle.
#[derive(Debug, Clone, Copy)]
pub struct Predecessor<'a> {
    /// 1-based queue number.
    pub index: usize,
    pub id: u64,
    pub trajectory: &'a PiecewiseTrajectory,
}

/// The predecessors that shape vehicle `index`'s problem.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueueView<'a> {
    pub index: usize,
    /// Last vehicle ahead in the same lane.
    pub k: Option<Predecessor<'a>>,
    /// Last vehicle on a conflicting approach.
    pub c: Option<Predecessor<'a>>,
    /// Last vehicle on the same road that cannot collide laterally.
    pub o: Option<Predecessor<'a>>,
}

impl QueueView<'_> {
    pub fn alone(index: usize) -> Self {
        Self { index, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// Same road and lane (rear-end interaction).
    SameLane,
    /// Lateral conflict in the merging zone.
    Conflicting,
    /// Same road, no possible collision.
    Opposite,
    /// Same road and direction, different lane.
    AdjacentLane,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub index: usize,
    /// Relation of every earlier vehicle, in queue order.
    pub relations: Vec<Relation>,
    pub k: Option<usize>,
    pub c: Option<usize>,
    pub o: Option<usize>,
}

impl Classification {
    pub fn members(&self, rel: Relation) -> Vec<usize> {
        self.relations
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == rel)
            .map(|(j, _)| j + 1)
            .collect()
    }

    pub fn view<'a>(&self, queue: &[VehicleArrival], solved: &'a [PiecewiseTrajectory]) -> QueueView<'a> {
        let pick = |j: Option<usize>| {
            j.map(|j| Predecessor { index: j, id: queue[j - 1].id, trajectory: &solved[j - 1] })
        };
        QueueView { index: self.index, k: pick(self.k), c: pick(self.c), o: pick(self.o) }
    }
}

pub fn relation(
    j: &VehicleArrival,
    i: &VehicleArrival,
    conflict: &ConflictMatrix,
) -> Result<Relation, ModelError> {
    let same_flow = j.road == i.road && j.movement == i.movement;
    if same_flow && j.lane == i.lane {
        return Ok(Relation::SameLane);
    }
    if same_flow {
        return Ok(Relation::AdjacentLane);
    }
    if conflict.conflict(&j.approach(), &i.approach())? {
        Ok(Relation::Conflicting)
    } else {
        Ok(Relation::Opposite)
    }
}

/// Classifies every vehicle ahead of queue number `index` (1-based).
pub fn classify(
    index: usize,
    queue: &[VehicleArrival],
    conflict: &ConflictMatrix,
) -> Result<Classification, ModelError> {
    assert!(index >= 1 && index <= queue.len(), "queue number out of range");
    let me = &queue[index - 1];
    conflict.index_of(&me.approach()).ok_or_else(|| {
        ModelError::Config(format!("approach ({}, {}) not in conflict matrix", me.road, me.movement))
    })?;
    let relations = queue[..index - 1]
        .iter()
        .map(|j| relation(j, me, conflict))
        .collect::<Result<Vec<_>, _>>()?;
    let last = |pred: &dyn Fn(Relation) -> bool| {
        relations.iter().rposition(|r| pred(*r)).map(|j| j + 1)
    };
    Ok(Classification {
        index,
        k: last(&|r| r == Relation::SameLane),
        c: last(&|r| r == Relation::Conflicting),
        o: last(&|r| matches!(r, Relation::Opposite | Relation::AdjacentLane)),
        relations,
    })
}

/// Assigns queue numbers in order of control-zone entry.
#[derive(Debug, Clone)]
pub struct Coordinator {
    rng: ChaCha8Rng,
    queue: Vec<VehicleArrival>,
}

impl Coordinator {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), queue: Vec::new() }
    }

    pub fn queue(&self) -> &[VehicleArrival] {
        &self.queue
    }

    /// Appends one arrival and returns its 1-based queue number.
    pub fn enqueue(&mut self, arrival: VehicleArrival) -> Result<usize, CoordinatorError> {
        if let Some(last) = self.queue.last() {
            if arrival.t0 < last.t0 - TIE_TOL {
                return Err(CoordinatorError::OutOfOrder { id: arrival.id, t0: arrival.t0, last: last.t0 });
            }
        }
        self.queue.push(arrival);
        Ok(self.queue.len())
    }

    /// Sorts a batch by entry time, orders simultaneous entries randomly, and enqueues it.
    pub fn enqueue_batch(&mut self, mut arrivals: Vec<VehicleArrival>) -> Result<Vec<usize>, CoordinatorError> {
        arrivals.sort_by(|a, b| a.t0.total_cmp(&b.t0));
        let mut start = 0;
        while start < arrivals.len() {
            let mut end = start + 1;
            while end < arrivals.len() && arrivals[end].t0 - arrivals[end - 1].t0 <= TIE_TOL {
                end += 1;
            }
            arrivals[start..end].shuffle(&mut self.rng);
            start = end;
        }
        arrivals.into_iter().map(|a| self.enqueue(a)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GuaranteeKind {
    RearEnd,
    Lateral,
    Fifo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeViolation {
    pub kind: GuaranteeKind,
    pub ahead: u64,
    pub behind: u64,
    pub time: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub violations: Vec<GuaranteeViolation>,
    /// Smallest headway surplus over all same-lane pairs, with its time.
    pub worst_gap: Option<(f64, f64)>,
    pub pairs_checked: usize,
}

impl GuaranteeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const GAP_TOL: f64 = 1e-6;
const ORDER_TOL: f64 = 1e-9;

/// Headway surplus `p_k − p_i − φ v_i − δ0` of `follower` behind `leader`.
pub fn headway_surplus(
    leader: &PiecewiseTrajectory,
    follower: &PiecewiseTrajectory,
    cfg: &ScenarioConfig,
    t: f64,
) -> f64 {
    let k = leader.eval_extended(t);
    let i = follower.eval_extended(t);
    k.p - i.p - cfg.phi * i.v - cfg.delta0
}

/// Worst headway surplus over the follower's horizon: 1 ms sampling plus breakpoints
/// and extrema of both trajectories.
pub fn worst_headway(leader: &PiecewiseTrajectory, follower: &PiecewiseTrajectory, cfg: &ScenarioConfig) -> (f64, f64) {
    let (t0, tf) = (follower.t0(), follower.tf());
    let mut times: Vec<f64> = Vec::new();
    let n = ((tf - t0) / 1e-3).ceil() as usize;
    times.extend((0..=n).map(|j| (t0 + j as f64 * 1e-3).min(tf)));
    for traj in [leader, follower] {
        times.extend(traj.breakpoints());
        let e = traj.extrema();
        times.extend(e.v.iter().chain(e.u.iter()).map(|x| x.0));
    }
    times.push(leader.tf());
    times
        .into_iter()
        .filter(|t| *t >= t0 && *t <= tf)
        .map(|t| (headway_surplus(leader, follower, cfg, t), t))
        .fold((f64::INFINITY, t0), |best, x| if x.0 < best.0 { x } else { best })
}

/// Audits a solved schedule (in queue order) for rear-end, lateral and ordering safety.
pub fn check_guarantees(
    schedule: &[(VehicleArrival, PiecewiseTrajectory)],
    cfg: &ScenarioConfig,
) -> Result<GuaranteeReport, ModelError> {
    let queue: Vec<VehicleArrival> = schedule.iter().map(|(a, _)| a.clone()).collect();
    let mut report = GuaranteeReport::default();
    for i in 1..schedule.len() {
        let (ai, ti) = &schedule[i];
        let t_entry = ti.time_at_position(cfg.l).unwrap_or(ti.tf());
        for j in 0..i {
            let (aj, tj) = &schedule[j];
            report.pairs_checked += 1;
            let mut found = Vec::new();
            match relation(&queue[j], &queue[i], &cfg.conflict)? {
                Relation::SameLane => {
                    let (m, t) = worst_headway(tj, ti, cfg);
                    if report.worst_gap.is_none_or(|(w, _)| m < w) {
                        report.worst_gap = Some((m, t));
                    }
                    if m < -GAP_TOL {
                        found.push((GuaranteeKind::RearEnd, t, m));
                    }
                }
                Relation::Conflicting => {
                    let m = t_entry - tj.tf();
                    if m < -ORDER_TOL {
                        found.push((GuaranteeKind::Lateral, t_entry, m));
                    }
                }
                _ => {}
            }
            let m = ti.tf() - tj.tf();
            if m < -ORDER_TOL {
                found.push((GuaranteeKind::Fifo, ti.tf(), m));
            }
            report.violations.extend(found.into_iter().map(|(kind, time, margin)| GuaranteeViolation {
                kind,
                ahead: aj.id,
                behind: ai.id,
                time,
                margin,
            }));
        }
    }
    Ok(report)
}
