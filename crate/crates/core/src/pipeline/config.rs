use super::synthetic::SyntheticSpec;
use super::PipelineError;
use crate::dataset::{PreprocessParams, WindowParams, TRANSITION_MARGIN_FRAMES, WINDOW_LENGTH, WINDOW_STRIDE};
use crate::eval::ExperimentConfig;
use crate::skeleton::{JointMap, MinMaxParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `*.ndjson` recordings.
    pub raw: PathBuf,
    /// Parent of the `single`, `grouped` and `pair` dataset directories.
    pub datasets: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            raw: "data/raw".into(),
            datasets: "data/datasets".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub joint_map: JointMap,
    pub window_length: usize,
    pub window_stride: usize,
    pub minmax: MinMaxParams,
    pub transition_margin_seconds: f64,
    pub fps: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            joint_map: JointMap::default(),
            window_length: WINDOW_LENGTH,
            window_stride: WINDOW_STRIDE,
            minmax: MinMaxParams::default(),
            transition_margin_seconds: TRANSITION_MARGIN_FRAMES as f64 / 30.0,
            fps: 30.0,
        }
    }
}

impl PreprocessConfig {
    pub fn params(&self) -> Result<PreprocessParams, PipelineError> {
        let window = WindowParams::new(self.window_length, self.window_stride).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(PreprocessParams {
            window,
            minmax: self.minmax.clone(),
            joint_map: self.joint_map.clone(),
        })
    }

    /// Transition margin in frames, rounded to the nearest frame.
    pub fn margin_frames(&self) -> usize {
        (self.transition_margin_seconds * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.params()?;
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(PipelineError::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.transition_margin_seconds >= 0.0 && self.transition_margin_seconds.is_finite()) {
            return Err(PipelineError::Config("transition margin must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything the command-line pipeline needs, loaded from one JSON
/// document. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub model: ExperimentConfig,
    pub synthetic: SyntheticSpec,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.preprocess.validate()?;
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.synthetic.validate().map_err(PipelineError::Config)?;
        Ok(())
    }

    /// SHA-256 over the settings that determine datasets and models.
    pub fn config_hash(&self) -> String {
        let relevant = serde_json::json!({
            "preprocess": self.preprocess,
            "model": self.model,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(relevant.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.preprocess.margin_frames(), 60);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"sede": 3}"#),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn hash_ignores_paths() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.reports = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
