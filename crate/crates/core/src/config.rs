//! Experiment configuration: one file wiring every module's config plus a
//! master seed. Unknown keys are rejected; defaults reproduce the published
//! environment hyperparameters. Loads from TOML or JSON by extension.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::asset::SampleRanges;
use crate::control::ControlConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::planner::IkOptions;
use crate::randomization::RandomizationConfig;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub ik: IkOptions,
    pub weight_translation: f64,
    pub weight_rotation: f64,
    pub weight_smoothness: f64,
    pub weight_limits: f64,
    pub weight_collision: f64,
    pub collision_margin: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            ik: IkOptions::default(),
            weight_translation: 10.0,
            weight_rotation: 2.0,
            weight_smoothness: 1.0,
            weight_limits: 50.0,
            weight_collision: 100.0,
            collision_margin: 0.005,
            max_iters: 60,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Closed-loop success tolerance on the keypoint distance, m.
    pub epsilon: f64,
    /// Evaluator step budget per rollout.
    pub step_budget: usize,
    /// Target rate for trajectory downsampling, Hz.
    pub downsample_hz: f64,
    /// Lift-off truncation threshold above the table, m.
    pub liftoff_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            step_budget: 600,
            downsample_hz: 3.0,
            liftoff_threshold: 0.10,
        }
    }
}

/// Mesh tessellation knobs for exported tools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetConfig {
    pub ranges: SampleRanges,
    /// Segment count for capsule tessellation.
    pub mesh_segments: usize,
}

impl Default for AssetConfig {
    fn default() -> Self {
        Self {
            ranges: SampleRanges::default(),
            mesh_segments: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub env: EnvConfig,
    pub control: ControlConfig,
    pub reward: RewardConfig,
    pub dr: RandomizationConfig,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
    pub asset: AssetConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.control.validate()?;
        self.reward.validate()?;
        self.dr.validate()?;
        self.asset.ranges.validate()?;
        if !(self.eval.epsilon > 0.0) {
            return Err(Error::validation("eval.epsilon", "must be > 0"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let config: ExperimentConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                location: format!("line {}, column {}", e.line(), e.column()),
                reason: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                location: e
                    .span()
                    .map(|s| format!("bytes {}..{}", s.start, s.end))
                    .unwrap_or_else(|| "unknown".into()),
                reason: e.message().to_string(),
            })?
        };
        config.validate()?;
        Ok(config)
    }

    /// Effective config as TOML, the `--dump-config` format.
    pub fn dump_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let text = if is_json {
            serde_json::to_string_pretty(self).expect("config serializes")
        } else {
            self.dump_toml()
        };
        crate::io::write_atomic(path, text.as_bytes())
    }
}
