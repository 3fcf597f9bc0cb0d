//! TOML scenario files and the built-in fixtures.

use std::path::Path;

use cav_core::{ConflictMatrix, ScenarioConfig, VehicleArrival};
use serde::Deserialize;

use crate::SimError;

pub const SCHEMA_VERSION: u32 = 1;

/// Built-in scenarios, by name.
pub const FIXTURES: &[(&str, &str)] = &[
    ("fig2_unconstrained", include_str!("../fixtures/fig2_unconstrained.toml")),
    ("fig3_safety_no_exit", include_str!("../fixtures/fig3_safety_no_exit.toml")),
    ("fig4_safety_packed", include_str!("../fixtures/fig4_safety_packed.toml")),
    ("fig5_safety_exit", include_str!("../fixtures/fig5_safety_exit.toml")),
    ("fig6_lateral", include_str!("../fixtures/fig6_lateral.toml")),
    ("fig7_uvmax", include_str!("../fixtures/fig7_uvmax.toml")),
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(default)]
    config: ConfigSection,
    #[serde(default)]
    run: RunOptions,
    arrivals: Vec<ArrivalSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSection {
    l: Option<f64>,
    s: Option<f64>,
    v_min: Option<f64>,
    v_max: Option<f64>,
    u_min: Option<f64>,
    u_max: Option<f64>,
    gamma: Option<f64>,
    phi: Option<f64>,
    delta0: Option<f64>,
    conflict: Option<ConflictMatrix>,
}

/// Options that affect how a scenario is run rather than what it contains.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Trajectory output sampling step (s).
    pub sample_step: f64,
    /// Compare every solved vehicle with the transcription oracle.
    pub oracle: bool,
    /// Seed for ordering simultaneous arrivals.
    pub seed: u64,
    /// Solve every vehicle as if alone in the control zone.
    pub independent: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { sample_step: 0.05, oracle: false, seed: 0, independent: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalSpec {
    id: u64,
    t0: f64,
    v0: f64,
    #[serde(default = "default_road")]
    road: String,
    #[serde(default = "default_lane")]
    lane: String,
    #[serde(default = "default_movement")]
    movement: String,
    u_min: Option<f64>,
    u_max: Option<f64>,
    tf: Option<f64>,
    vf: Option<f64>,
}

fn default_road() -> String {
    "NS".into()
}

fn default_lane() -> String {
    "1".into()
}

fn default_movement() -> String {
    "southbound".into()
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub arrivals: Vec<VehicleArrival>,
    pub run: RunOptions,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(SimError::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let d = ScenarioConfig::default();
        let c = file.config;
        let config = ScenarioConfig {
            l: c.l.unwrap_or(d.l),
            s: c.s.unwrap_or(d.s),
            v_min: c.v_min.unwrap_or(d.v_min),
            v_max: c.v_max.unwrap_or(d.v_max),
            u_min: c.u_min.unwrap_or(d.u_min),
            u_max: c.u_max.unwrap_or(d.u_max),
            gamma: c.gamma.unwrap_or(d.gamma),
            phi: c.phi.unwrap_or(d.phi),
            delta0: c.delta0.unwrap_or(d.delta0),
            conflict: c.conflict.unwrap_or(d.conflict),
            rng_seed: file.run.seed,
        };
        let arrivals = file
            .arrivals
            .into_iter()
            .map(|a| VehicleArrival {
                id: a.id,
                t0: a.t0,
                v0: a.v0,
                road: a.road,
                lane: a.lane,
                movement: a.movement,
                u_min: a.u_min,
                u_max: a.u_max,
                tf: a.tf,
                vf: a.vf,
            })
            .collect();
        let scenario = Scenario { config, arrivals, run: file.run };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn fixture(name: &str) -> Result<Self, SimError> {
        let text = FIXTURES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| SimError::UnknownFixture(name.to_string()))?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.config.validate()?;
        if self.arrivals.is_empty() {
            return Err(SimError::Parse("scenario has no arrivals".into()));
        }
        if !(self.run.sample_step > 0.0 && self.run.sample_step.is_finite()) {
            return Err(SimError::Parse("sample_step must be positive".into()));
        }
        let mut ids: Vec<u64> = self.arrivals.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SimError::Parse(format!("duplicate vehicle id {}", w[0])));
        }
        for a in &self.arrivals {
            a.validate(&self.config)?;
            if self.config.conflict.index_of(&a.approach()).is_none() {
                return Err(SimError::Parse(format!(
                    "vehicle {}: approach ({}, {}) not in conflict matrix",
                    a.id, a.road, a.movement
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_parses() {
        for (name, _) in FIXTURES {
            Scenario::fixture(name).unwrap();
        }
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let s = Scenario::from_toml("schema_version = 1\n[[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\n").unwrap();
        assert_eq!(s.config, ScenarioConfig::default());
        assert_eq!(s.arrivals[0].road, "NS");
        assert_eq!(s.run, RunOptions::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = Scenario::from_toml("schema_version = 1\ngama = 0.2\n[[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\n");
        assert!(matches!(e, Err(SimError::Parse(_))));
    }
}
