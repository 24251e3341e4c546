//! Run configuration: one JSON document covering every tunable section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::model::ModelConfig;
use crate::training::Hyperparams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub mfcc: MfccConfig,
    pub hyper: Hyperparams,
    pub policy: AugmentationPolicy,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mfcc.validate()?;
        self.hyper.validate()?;
        self.policy.validate()?;
        let frames_ok = self.model.in_coeffs == crate::features::MODEL_COEFFS
            && self.model.in_frames == crate::features::MODEL_FRAMES
            && self.mfcc.n_ceps * 3 == crate::features::STACKED_COEFFS;
        if !frames_ok {
            return Err(Error::InvalidConfig(format!(
                "model input {}×{} with {} cepstra does not match the {}×{} feature stack",
                self.model.in_coeffs,
                self.model.in_frames,
                self.mfcc.n_ceps,
                crate::features::MODEL_COEFFS,
                crate::features::MODEL_FRAMES
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_entry(path.display().to_string()))
    }
}
