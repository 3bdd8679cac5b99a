//! Pipeline configuration shared by every stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the imperceptibility coefficient.
pub const LAMBDA_CAP: f64 = 0.05;

/// PSNR floor (dB) that realizes the imperceptibility budget.
pub const PSNR_FLOOR_DB: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_reviewer: bool,
    pub no_integration: bool,
    pub posthoc_protection: bool,
    pub no_hitl: bool,
}

/// What the review gate does with a component that never clears `tau`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewPolicy {
    #[default]
    AcceptBest,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub resolution: usize,
    pub negative_prompt: String,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance_scale: 7.5,
            resolution: 128,
            negative_prompt: "blurry, distorted, low quality".into(),
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps < 1 {
            return Err(ConfigError("generator steps must be at least 1".into()));
        }
        if !(self.guidance_scale > 0.0 && self.guidance_scale.is_finite()) {
            return Err(ConfigError("guidance_scale must be positive".into()));
        }
        if self.resolution < 32 {
            return Err(ConfigError(
                "generator resolution must be at least 32".into(),
            ));
        }
        Ok(())
    }
}

/// Default chip amplitude on the `[0, 1]` luma scale.
pub const DEFAULT_AMPLITUDE: f64 = 0.022;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtectionParams {
    pub amplitude: f64,
    /// `None` picks the largest value the image supports.
    pub chips_per_bit: Option<usize>,
}

impl Default for ProtectionParams {
    fn default() -> Self {
        Self {
            amplitude: DEFAULT_AMPLITUDE,
            chips_per_bit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub planner_model: String,
    pub generator_model: String,
    pub tau: f64,
    pub max_retries: u32,
    pub lambda: f64,
    pub alpha: f64,
    pub ablations: Ablations,
    pub seed: u64,
    pub scene_size: usize,
    pub review_policy: ReviewPolicy,
    pub generator: GeneratorParams,
    pub protection: ProtectionParams,
    /// Run the quick attack suite after embedding to measure recoverability.
    pub robustness_suite: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            planner_model: "grammar-planner/1".into(),
            generator_model: "procedural-glyphs/1".into(),
            tau: 0.25,
            max_retries: 3,
            lambda: 0.001,
            alpha: 1.0,
            ablations: Ablations::default(),
            seed: 0,
            scene_size: 256,
            review_policy: ReviewPolicy::default(),
            generator: GeneratorParams::default(),
            protection: ProtectionParams::default(),
            robustness_suite: true,
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.into()));
        if !(0.0..=1.0).contains(&self.tau) {
            return err("tau must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda <= LAMBDA_CAP) {
            return err("lambda must lie in [0, 0.05]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return err("alpha must be non-negative");
        }
        if self.scene_size < 32 || !self.scene_size.is_multiple_of(8) {
            return err("scene_size must be a multiple of 8 and at least 32");
        }
        if !(self.protection.amplitude >= 0.0 && self.protection.amplitude.is_finite()) {
            return err("protection amplitude must be non-negative");
        }
        if self.protection.chips_per_bit == Some(0) {
            return err("chips_per_bit must be positive");
        }
        if self.planner_model.is_empty() || self.generator_model.is_empty() {
            return err("model identifiers must be non-empty");
        }
        self.generator.validate()
    }
}
