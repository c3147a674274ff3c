//! Run configuration: a TOML file, `--seed` and dotted `--set key=value`
//! overrides, resolved into one [`RunConfig`].
//!
//! Every key is optional; omitted keys take the defaults shown by
//! `fusiondet config`. Unknown keys are rejected.

use std::path::Path;

use fusiondet::kitti::SyntheticSceneSpec;
use fusiondet::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model initialization and point sampling.
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Training and evaluation scenes; scene `i` uses `scene.seed + i`.
    pub scene: SyntheticSceneSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Number of scenes trained on together (one or two).
    pub scenes: usize,
    /// Steps at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Scenes generated for checkpoint evaluation.
    pub scenes: usize,
    /// Offset added to `scene.seed` for the first evaluation scene.
    pub seed_offset: u64,
    /// Factor applied to ground-truth 2D box heights before difficulty
    /// classification. Unset: 1 for label directories, and
    /// `KITTI_IMAGE_HEIGHT / scene.image_height` for generated scenes.
    pub height_scale: Option<f64>,
}

/// Image height of the KITTI camera whose pixel thresholds define the difficulties.
pub const KITTI_IMAGE_HEIGHT: f64 = 375.0;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            scenes: 1,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenes: 4,
            seed_offset: 1000,
            height_scale: None,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, base: f64, step: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| step >= m).count();
        base * self.lr_gamma.powi(passed as i32)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(1..=2).contains(&self.train.scenes) {
            return Err(CliError::Config("train.scenes must be 1 or 2".into()));
        }
        if !(self.train.lr_gamma.is_finite() && self.train.lr_gamma >= 0.0) {
            return Err(CliError::Config("train.lr_gamma must be finite and non-negative".into()));
        }
        if self.eval.height_scale.is_some_and(|h| !(h.is_finite() && h > 0.0)) {
            return Err(CliError::Config("eval.height_scale must be positive".into()));
        }
        if self.eval.scenes == 0 {
            return Err(CliError::Config("eval.scenes must be positive".into()));
        }
        let stride = self.pipeline.encoder.stride();
        if !self.scene.image_height.is_multiple_of(stride) || !self.scene.image_width.is_multiple_of(stride) {
            return Err(CliError::Config(format!(
                "scene image {}×{} is not divisible by the encoder stride {stride}",
                self.scene.image_width, self.scene.image_height
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults), then applies the seed and overrides in order.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
            None => Self::default(),
        };
        for o in overrides {
            config = config.with_override(o)?;
        }
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `dotted.key=value` override. The value is read as a TOML
    /// literal, falling back to a bare string. Unknown keys are rejected.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

        let mut root = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("{key}: {} is not a table", parts[..i].join("."))))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value.clone());
                break;
            }
            node = table
                .entry((*part).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        root.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{key}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("sed = 3"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[train]\nstep = 3"), Err(CliError::Config(_))));
        assert!(RunConfig::default().with_override("pipeline.nope=1").is_err());
    }

    #[test]
    fn overrides_are_typed() {
        let c = RunConfig::default()
            .with_override("pipeline.network.combine_mode=concat")
            .unwrap()
            .with_override("train.steps = 7")
            .unwrap()
            .with_override("pipeline.optimizer.lr=0")
            .unwrap()
            .with_override("pipeline.network.attn_modes.ptd=\"multiply\"")
            .unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.pipeline.optimizer.lr, 0.0);
        assert_eq!(c.pipeline.network.combine_mode, fusiondet::fusion::CombineMode::Concat);
        assert_eq!(c.pipeline.network.attn_modes.ptd, fusiondet::fusion::AttnMode::Multiply);
        assert!(RunConfig::default().with_override("train.steps=many").is_err());
        assert!(RunConfig::default().with_override("nope.deeper=1").is_err());
        let h = RunConfig::default().with_override("eval.height_scale=2.5").unwrap();
        assert_eq!(h.eval.height_scale, Some(2.5));
    }

    #[test]
    fn milestones_decay_the_rate() {
        let t = TrainConfig {
            lr_milestones: vec![10, 20],
            lr_gamma: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(t.lr_at(0.01, 9), 0.01);
        assert_eq!(t.lr_at(0.01, 10), 0.005);
        assert_eq!(t.lr_at(0.01, 25), 0.0025);
    }
}
