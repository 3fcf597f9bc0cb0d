//! Feasible window for the merging-zone exit time.

use serde::Serialize;
use thiserror::Error;

use crate::coordinator::QueueView;
use crate::model::{ScenarioConfig, VehicleArrival};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("leader {id} exits with non-positive speed {vf}; follower bound undefined")]
    StoppedLeader { id: u64, vf: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BindingTerm {
    SpeedControl,
    Follower,
    OppositeOrAdjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalBounds {
    pub t_l: f64,
    /// `None` when the vehicle may stop inside the zone, so no finite bound exists.
    pub t_u: Option<f64>,
    pub t_lower_composite: f64,
    pub binding_term: BindingTerm,
}

impl TerminalBounds {
    pub fn feasible(&self) -> bool {
        self.t_u.is_none_or(|tu| self.t_l <= tu)
    }
}

/// Earliest exit under full acceleration, and the exit speed of that profile.
pub fn t_lower_speed_control(t0: f64, v0: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    let dist = cfg.exit_position();
    let (u, vmax) = (cfg.u_max, cfg.v_max);
    if 2.0 * dist * u + v0 * v0 > vmax * vmax {
        (t0 + dist / vmax + (vmax - v0).powi(2) / (2.0 * u * vmax), vmax)
    } else {
        let vf = (2.0 * dist * u + v0 * v0).sqrt();
        (t0 + (vf - v0) / u, vf)
    }
}

/// Latest exit under full deceleration; `None` if the vehicle can come to rest first.
pub fn t_upper(t0: f64, v0: f64, cfg: &ScenarioConfig) -> Option<f64> {
    let dist = cfg.exit_position();
    let (u, vmin) = (cfg.u_min, cfg.v_min);
    let radicand = 2.0 * dist * u + v0 * v0;
    if radicand < vmin * vmin {
        if vmin == 0.0 {
            return None;
        }
        Some(t0 + dist / vmin + (vmin - v0).powi(2) / (2.0 * u * vmin))
    } else {
        Some(t0 + (radicand.sqrt() - v0) / u)
    }
}

/// Follower term: the exit time at which the headway to `k` is exactly met at exit.
pub fn follower_exit_time(tf_k: f64, vf_k: f64, vf_i: f64, cfg: &ScenarioConfig) -> f64 {
    tf_k + (cfg.phi * vf_i + cfg.delta0) / vf_k
}

/// Largest of the speed/control bound, the follower term and the preceding exit.
pub fn t_lower_composite(
    i: &VehicleArrival,
    q: &QueueView<'_>,
    cfg: &ScenarioConfig,
    vf_i: f64,
) -> Result<TerminalBounds, BoundsError> {
    let cfg = cfg.for_vehicle(i);
    let (t_l, _) = t_lower_speed_control(i.t0, i.v0, &cfg);
    let t_u = t_upper(i.t0, i.v0, &cfg);
    let mut best = (t_l, BindingTerm::SpeedControl);
    if let Some(k) = &q.k {
        let vf_k = k.trajectory.vf();
        if vf_k <= 0.0 {
            return Err(BoundsError::StoppedLeader { id: k.id, vf: vf_k });
        }
        let t = follower_exit_time(k.trajectory.tf(), vf_k, vf_i, &cfg);
        if t > best.0 {
            best = (t, BindingTerm::Follower);
        }
    }
    if let Some(o) = &q.o {
        let t = o.trajectory.tf();
        if t > best.0 {
            best = (t, BindingTerm::OppositeOrAdjacent);
        }
    }
    Ok(TerminalBounds { t_l, t_u, t_lower_composite: best.0, binding_term: best.1 })
}
