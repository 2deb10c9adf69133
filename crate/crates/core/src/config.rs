use serde::{Deserialize, Serialize};

use crate::encoders::{FineEncoderConfig, SaxConfig};
use crate::{MugError, Result};

/// Selects an encoder implementation by registry name, with its own config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EncoderSpec {
    pub fn new(kind: &str, config: impl Serialize) -> Self {
        Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
        }
    }
}

/// Cross-granularity block sizes. `key_dim = None` means the fine model dim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub key_dim: Option<usize>,
    pub ff_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            key_dim: None,
            ff_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Retrieval batch size; also the candidate count `n` of each query.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Soft-rank sigmoid temperature.
    pub temperature: f64,
    /// Similarity clamp before the logarithm.
    pub clamp_eps: f64,
    /// Weight of the distractor (label 0) terms.
    pub distractor_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            learning_rate: 1e-3,
            temperature: 0.5,
            clamp_eps: 1e-7,
            distractor_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(MugError::config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(MugError::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(MugError::config(format!(
                "clamp_eps must lie in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        if self.distractor_weight.is_nan() || self.distractor_weight < 0.0 {
            return Err(MugError::config(format!(
                "distractor_weight must be >= 0, got {}",
                self.distractor_weight
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(MugError::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Everything needed to build and train a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MugConfig {
    /// Segments per series (`K`).
    pub segments: usize,
    pub fine: EncoderSpec,
    pub coarse: EncoderSpec,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for MugConfig {
    fn default() -> Self {
        Self {
            segments: 4,
            fine: EncoderSpec::new("transformer", FineEncoderConfig::default()),
            coarse: EncoderSpec::new("sax", SaxConfig::default()),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl MugConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(MugError::config("segments must be >= 1"));
        }
        if self.fusion.ff_dim == 0 || self.fusion.key_dim == Some(0) {
            return Err(MugError::config("fusion dimensions must be >= 1"));
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = MugConfig::from_json(r#"{"segments": 2, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.segments, 2);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.fine.kind, "transformer");
        cfg.validate().unwrap();
    }

    #[test]
    fn train_config_invariants() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.batch_size = 1));
        assert!(bad(|c| c.temperature = 0.0));
        assert!(bad(|c| c.clamp_eps = 0.5));
        assert!(bad(|c| c.distractor_weight = -1.0));
    }
}
