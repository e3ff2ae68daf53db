//! Pipeline configuration file (TOML). Every section is optional and
//! unknown keys are rejected at any depth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::ObjectCentricThresholds;
use crate::dataset::{AugmentConfig, DatasetConfig};
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, MotionConfig};
use crate::sim::ScenarioConfig;
use crate::tco::TcoConfig;
use crate::tracking::{TrackMode, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentConfig {
    /// Minimum temporal IoU for a track-level match.
    pub tiou_threshold: f64,
    pub object_centric: ObjectCentricThresholds,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self { tiou_threshold: 0.3, object_centric: ObjectCentricThresholds::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub mode: TrackMode,
    pub remove_empty: bool,
    /// Add the two extra rotations to the four flip variants.
    pub tta_rotations: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { mode: TrackMode::Bidirectional, remove_empty: true, tta_rotations: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed for augmentation; the simulator keeps its own.
    pub seed: u64,
    pub sim: ScenarioConfig,
    pub tracker: TrackerConfig,
    pub postprocess: PostprocessConfig,
    pub assignment: AssignmentConfig,
    pub dataset: DatasetConfig,
    pub augment: AugmentConfig,
    pub tco: TcoConfig,
    pub eval: EvalConfig,
    pub motion: MotionConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, file: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "document".into());
            Error::Schema { file: file.to_string(), location, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let t = self.assignment.tiou_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Invalid(format!("assignment.tiou_threshold {t} outside [0, 1]")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml(), "c").unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::from_toml("", "c").unwrap(), c);
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let c = PipelineConfig::from_toml("seed = 3\n[tracker]\ngate_iou = 0.2\n", "c").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.tracker.gate_iou, 0.2);
        assert_eq!(c.tracker.noise, TrackerConfig::default().noise);
        let e = PipelineConfig::from_toml("seed = 3\n[tracker]\ngate_iuo = 0.2\n", "c").unwrap_err();
        match e {
            Error::Schema { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
        assert!(PipelineConfig::from_toml("[assignment]\ntiou_threshold = 1.5\n", "c").is_err());
        assert!(PipelineConfig::from_toml("[postprocess]\nmode = \"sideways\"\n", "c").is_err());
    }
}
