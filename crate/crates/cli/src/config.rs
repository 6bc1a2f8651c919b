//! Scenario configuration files (TOML). Every table rejects unknown keys and
//! every key except `scenario` has a default.

use crate::CliError;
use serde::{Deserialize, Serialize};
use slff_core::hybrid::ArcFormat;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    PendulumBackstep,
    PendulumSmoothed,
    Custom,
}

impl ScenarioId {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::PendulumBackstep => "pendulum_backstep",
            ScenarioId::PendulumSmoothed => "pendulum_smoothed",
            ScenarioId::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub pendulum: PendulumConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub campaign: CampaignConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomConfig>,
}

fn default_seed() -> u64 {
    2024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumConfig {
    /// Diagonal of `J`, kg·m².
    pub inertia: [f64; 3],
    pub mass: f64,
    pub gravity: f64,
    /// Pivot to centre of mass, m.
    pub nu: [f64; 3],
    pub modes: usize,
    pub warp_gain: f64,
    /// `Ξ = xi_gain · I`.
    pub xi_gain: f64,
    /// Safety fraction applied to the smallest sampled gap.
    pub beta: f64,
    pub certify_seeds: usize,
    /// `δ` of the smoothed loop as a fraction of the certified `c`.
    pub smoothing_scale: f64,
    /// Defaults to half of the smoothed `δ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `k_p` in `ṗ = -k_p (p - e_q) + …`.
    pub logic_gain: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            inertia: [0.03, 0.04, 0.05],
            mass: 1.0,
            gravity: 9.81,
            nu: [0.0, 0.0, 0.1],
            modes: 2,
            warp_gain: 0.5,
            xi_gain: 0.5,
            beta: 0.9,
            certify_seeds: 10_000,
            smoothing_scale: 2.0 / 3.0,
            epsilon: None,
            logic_gain: slff_core::pendulum::DEFAULT_LOGIC_GAIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon_t: f64,
    pub horizon_j: usize,
    pub step: f64,
    /// Runs stop once this close to the attractor; `0` disables the stop.
    pub stop_distance: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon_t: 30.0,
            horizon_j: 1000,
            step: 1e-3,
            stop_distance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub samples: usize,
    /// Bound on the unconstrained part of each initial state.
    pub init_radius: f64,
    pub target_distance: f64,
    pub max_jumps: usize,
    /// The first `export_arcs` runs are written out in full.
    pub export_arcs: usize,
    pub arc_format: ArcFormat,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            init_radius: 5.0,
            target_distance: 1e-2,
            max_jumps: 5,
            export_arcs: 3,
            arc_format: ArcFormat::Csv,
        }
    }
}

/// Quadratic wells `V(q, z) = |z - c_q|² + b_q - min b` on `ℝᵈ` for `ż = u`,
/// with `κ(q, z) = -gain (z - c_q)`. The well with the smallest offset holds
/// the attractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub centres: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_custom_seeds")]
    pub certify_seeds: usize,
}

fn one() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.9
}

fn default_custom_seeds() -> usize {
    200
}

/// Command-line values that replace config keys one for one.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon_t: Option<f64>,
    pub samples: Option<usize>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.horizon_t {
            self.simulation.horizon_t = t;
        }
        if let Some(n) = o.samples {
            self.campaign.samples = n;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.pendulum;
        for (name, v) in [
            ("pendulum.mass", p.mass),
            ("pendulum.beta", p.beta),
            ("pendulum.smoothing_scale", p.smoothing_scale),
            ("pendulum.logic_gain", p.logic_gain),
            ("simulation.horizon_t", self.simulation.horizon_t),
            ("simulation.step", self.simulation.step),
            ("campaign.init_radius", self.campaign.init_radius),
            ("campaign.target_distance", self.campaign.target_distance),
        ] {
            positive(name, v)?;
        }
        if p.inertia.iter().any(|&j| !(j > 0.0)) {
            return Err(bad("pendulum.inertia entries must be positive"));
        }
        if !(p.beta < 1.0) {
            return Err(bad("pendulum.beta must be below 1"));
        }
        if !(p.smoothing_scale < 1.0) {
            return Err(bad("pendulum.smoothing_scale must be below 1"));
        }
        if let Some(e) = p.epsilon {
            positive("pendulum.epsilon", e)?;
        }
        if !(p.xi_gain >= 0.0) {
            return Err(bad("pendulum.xi_gain must be nonnegative"));
        }
        if !(self.simulation.stop_distance >= 0.0) {
            return Err(bad("simulation.stop_distance must be nonnegative"));
        }
        if self.campaign.samples == 0 {
            return Err(bad("campaign.samples must be at least 1"));
        }
        match (&self.scenario, &self.custom) {
            (ScenarioId::Custom, None) => Err(bad("scenario = \"custom\" needs a [custom] table")),
            (ScenarioId::Custom, Some(c)) => c.validate(),
            _ => Ok(()),
        }
    }
}

impl CustomConfig {
    pub fn dim(&self) -> usize {
        self.centres.first().map_or(0, Vec::len)
    }

    /// Index of the well with the smallest offset.
    pub fn target(&self) -> usize {
        (0..self.offsets.len())
            .min_by(|&a, &b| self.offsets[a].total_cmp(&self.offsets[b]))
            .unwrap_or(0)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.centres.len() < 2 {
            return Err(bad("custom.centres needs at least two wells"));
        }
        let d = self.dim();
        if d == 0 || self.centres.iter().any(|c| c.len() != d) {
            return Err(bad("custom.centres must all have the same nonzero length"));
        }
        if self.offsets.len() != self.centres.len() {
            return Err(bad("custom.offsets needs one entry per centre"));
        }
        if self
            .centres
            .iter()
            .flatten()
            .chain(&self.offsets)
            .any(|v| !v.is_finite())
        {
            return Err(bad("custom values must be finite"));
        }
        let t = self.target();
        if self
            .offsets
            .iter()
            .enumerate()
            .any(|(i, &b)| i != t && !(b > self.offsets[t]))
        {
            return Err(bad("custom.offsets must have a unique smallest entry"));
        }
        positive("custom.gain", self.gain)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(bad("custom.beta must lie in (0, 1)"));
        }
        if self.certify_seeds == 0 {
            return Err(bad("custom.certify_seeds must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::parse("scenario = \"pendulum_smoothed\"").unwrap();
        assert_eq!(cfg.seed, 2024);
        assert_eq!(cfg.pendulum, PendulumConfig::default());
        assert_eq!(cfg.campaign.samples, 100);
    }

    #[test]
    fn serialization_round_trips() {
        let text = r#"
scenario = "custom"
seed = 7

[pendulum]
epsilon = 0.05
smoothing_scale = 0.6666666666666666

[custom]
centres = [[0.0, 0.0], [3.0, 1.0]]
offsets = [0.0, 1.5]
"#;
        let cfg = ScenarioConfig::parse(text).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "scenario = \"pendulum_backstep\"\nsed = 1",
            "scenario = \"pendulum_backstep\"\n[pendulum]\nwarp = 0.2",
            "scenario = \"pendulum_backstep\"\n[extra]\nx = 1",
        ] {
            assert!(matches!(
                ScenarioConfig::parse(text),
                Err(CliError::Config(_))
            ));
        }
    }

    #[test]
    fn overrides_replace_keys() {
        let mut cfg = ScenarioConfig::parse("scenario = \"pendulum_backstep\"").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            horizon_t: Some(5.0),
            samples: Some(3),
        })
        .unwrap();
        assert_eq!(
            (cfg.seed, cfg.simulation.horizon_t, cfg.campaign.samples),
            (9, 5.0, 3)
        );
        assert!(cfg
            .apply(&Overrides {
                samples: Some(0),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn custom_needs_a_unique_minimum() {
        let text =
            "scenario = \"custom\"\n[custom]\ncentres = [[0.0], [2.0]]\noffsets = [1.0, 1.0]";
        assert!(ScenarioConfig::parse(text).is_err());
        assert!(ScenarioConfig::parse("scenario = \"custom\"").is_err());
    }
}
