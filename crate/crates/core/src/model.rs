//! Scenario configuration and per-vehicle arrival records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid arrival for vehicle {id}: {reason}")]
    Arrival { id: u64, reason: String },
    #[error("time {t} outside trajectory domain [{t0}, {tf}]")]
    Domain { t: f64, t0: f64, tf: f64 },
    #[error("trajectory has no arcs")]
    Empty,
    #[error("arcs not contiguous at t={t}")]
    NotContiguous { t: f64 },
    #[error("degenerate arc [{t_start}, {t_end}]")]
    DegenerateArc { t_start: f64, t_end: f64 },
    #[error("state jump at t={t}: dp={dp:e}, dv={dv:e}")]
    Discontinuous { t: f64, dp: f64, dv: f64 },
}

/// Approach key used by the conflict matrix: a road and a direction of travel on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Approach {
    pub road: String,
    pub movement: String,
}

impl Approach {
    pub fn new(road: impl Into<String>, movement: impl Into<String>) -> Self {
        Self { road: road.into(), movement: movement.into() }
    }
}

/// Symmetric lateral-conflict relation over approaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictMatrix {
    pub approaches: Vec<Approach>,
    pub conflicts: Vec<Vec<bool>>,
}

impl ConflictMatrix {
    /// Four single-lane approaches on two perpendicular roads, through movements only.
    pub fn four_way() -> Self {
        let approaches = vec![
            Approach::new("NS", "southbound"),
            Approach::new("NS", "northbound"),
            Approach::new("EW", "eastbound"),
            Approach::new("EW", "westbound"),
        ];
        let conflicts = (0..4)
            .map(|i| (0..4).map(|j| approaches[i].road != approaches[j].road).collect())
            .collect();
        Self { approaches, conflicts }
    }

    pub fn index_of(&self, a: &Approach) -> Option<usize> {
        self.approaches.iter().position(|x| x == a)
    }

    pub fn conflict(&self, a: &Approach, b: &Approach) -> Result<bool, ModelError> {
        let unknown = |x: &Approach| {
            ModelError::Config(format!("approach ({}, {}) not in conflict matrix", x.road, x.movement))
        };
        let i = self.index_of(a).ok_or_else(|| unknown(a))?;
        let j = self.index_of(b).ok_or_else(|| unknown(b))?;
        Ok(self.conflicts[i][j])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.approaches.len();
        if self.conflicts.len() != n || self.conflicts.iter().any(|r| r.len() != n) {
            return Err(ModelError::Config("conflict matrix shape does not match approaches".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if self.conflicts[i][j] != self.conflicts[j][i] {
                    return Err(ModelError::Config("conflict matrix is not symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// Intersection geometry, limits and weights shared by every vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Control-zone length (m).
    pub l: f64,
    /// Merging-zone side (m).
    pub s: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Weight of travel time against control effort.
    pub gamma: f64,
    /// Reaction time of the rear-end headway (s).
    pub phi: f64,
    /// Standstill distance of the rear-end headway (m).
    pub delta0: f64,
    pub conflict: ConflictMatrix,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            l: 370.0,
            s: 30.0,
            v_min: 0.0,
            v_max: 25.0,
            u_min: -3.0,
            u_max: 3.0,
            gamma: 0.1,
            phi: 1.0,
            delta0: 0.0,
            conflict: ConflictMatrix::four_way(),
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Distance from the control-zone entry to the merging-zone exit.
    pub fn exit_position(&self) -> f64 {
        self.l + self.s
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        let finite = [
            self.l, self.s, self.v_min, self.v_max, self.u_min, self.u_max, self.gamma, self.phi,
            self.delta0,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(self.l > self.s && self.s > 0.0) {
            return bad("need L > S > 0");
        }
        if !(0.0 <= self.v_min && self.v_min < self.v_max) {
            return bad("need 0 <= v_min < v_max");
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return bad("need u_min < 0 < u_max");
        }
        if self.gamma < 0.0 || self.phi < 0.0 || self.delta0 < 0.0 {
            return bad("gamma, phi and delta0 must be non-negative");
        }
        self.conflict.validate()
    }

    /// Copy with the vehicle's own acceleration limits applied.
    pub fn for_vehicle(&self, arrival: &VehicleArrival) -> ScenarioConfig {
        let mut c = self.clone();
        if let Some(u) = arrival.u_min {
            c.u_min = u;
        }
        if let Some(u) = arrival.u_max {
            c.u_max = u;
        }
        c
    }
}

/// Control-zone entry record of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleArrival {
    pub id: u64,
    pub t0: f64,
    pub v0: f64,
    pub road: String,
    pub lane: String,
    pub movement: String,
    #[serde(default)]
    pub u_min: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
    /// Imposed exit time; the vehicle is then solved with a fixed terminal time.
    #[serde(default)]
    pub tf: Option<f64>,
    /// Imposed exit speed; only meaningful together with `tf`.
    #[serde(default)]
    pub vf: Option<f64>,
}

impl VehicleArrival {
    pub fn new(id: u64, t0: f64, v0: f64, road: &str, lane: &str, movement: &str) -> Self {
        Self {
            id,
            t0,
            v0,
            road: road.into(),
            lane: lane.into(),
            movement: movement.into(),
            u_min: None,
            u_max: None,
            tf: None,
            vf: None,
        }
    }

    /// Southbound on the north-south road, lane "1".
    pub fn southbound(id: u64, t0: f64, v0: f64) -> Self {
        Self::new(id, t0, v0, "NS", "1", "southbound")
    }

    pub fn approach(&self) -> Approach {
        Approach::new(self.road.clone(), self.movement.clone())
    }

    pub fn with_exit(mut self, tf: f64, vf: Option<f64>) -> Self {
        self.tf = Some(tf);
        self.vf = vf;
        self
    }

    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<(), ModelError> {
        let err = |reason: String| Err(ModelError::Arrival { id: self.id, reason });
        if !self.t0.is_finite() || !self.v0.is_finite() {
            return err("non-finite entry state".into());
        }
        let c = cfg.for_vehicle(self);
        if !(c.v_min < self.v0 && self.v0 < c.v_max) {
            return err(format!("entry speed {} not strictly inside ({}, {})", self.v0, c.v_min, c.v_max));
        }
        if !(c.u_min < 0.0 && 0.0 < c.u_max) {
            return err("acceleration override must satisfy u_min < 0 < u_max".into());
        }
        match (self.tf, self.vf) {
            (Some(tf), _) if !(tf > self.t0) => err(format!("imposed exit time {tf} not after entry")),
            (None, Some(_)) => err("exit speed given without exit time".into()),
            _ => Ok(()),
        }
    }
}
