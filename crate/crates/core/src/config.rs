//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [features]
//! sample_rate = 22050
//! fft_size = 2048
//! hop = 1024
//! mel_bins = 256
//! chunk_seconds = 30.0
//!
//! [model]
//! extra_frames = 10
//! dense_width = 50
//! activation = "prelu"
//! [[model.layers]]
//! hidden_width = 220
//! order = 4
//! bandwidth = 40
//! overlap = -10
//!
//! [training]
//! learning_rate = 0.01
//! ...
//! ```
//!
//! Every key is optional; missing keys take the `table3` preset's value.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::features::{FeatureError, FeaturePipeline};
use crate::layers::ActivationKind;
use crate::model::{LayerSpec, ModelSpec};
use crate::training::{Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset {0:?} (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: &[&str] = &["table3", "small", "gradcheck"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// Centred excerpt length in seconds; 0 keeps the whole clip.
    pub chunk_seconds: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            sample_rate: crate::features::DEFAULT_SAMPLE_RATE,
            fft_size: crate::features::DEFAULT_FFT_SIZE,
            hop: crate::features::DEFAULT_HOP,
            mel_bins: crate::features::DEFAULT_MEL_BINS,
            chunk_seconds: crate::features::DEFAULT_CHUNK_SECONDS,
        }
    }
}

impl FeatureSection {
    pub fn pipeline(&self) -> Result<FeaturePipeline, FeatureError> {
        let chunk = (self.chunk_seconds > 0.0).then_some(self.chunk_seconds);
        FeaturePipeline::new(self.sample_rate, self.fft_size, self.hop, self.mel_bins, chunk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub hidden_width: usize,
    pub order: usize,
    /// Both or neither of `bandwidth` and `overlap`; neither gives an
    /// unmasked layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: Vec<LayerSection>,
    pub extra_frames: usize,
    pub dense_width: usize,
    pub activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSection {
                    hidden_width: 220,
                    order: 4,
                    bandwidth: Some(40),
                    overlap: Some(-10),
                },
                LayerSection {
                    hidden_width: 200,
                    order: 4,
                    bandwidth: Some(10),
                    overlap: Some(3),
                },
            ],
            extra_frames: 10,
            dense_width: crate::model::DEFAULT_DENSE_WIDTH,
            activation: "prelu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// `"momentum"` or `"sgd"`.
    pub optimizer: String,
    pub momentum: f64,
    /// Frames between training segment starts; 0 means the segment size
    /// (non-overlapping segments).
    pub segment_hop: usize,
    /// Frames between segment starts when scoring validation and test clips.
    pub eval_segment_hop: usize,
    pub folds: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 200,
            patience: 10,
            seed: 1337,
            optimizer: "momentum".into(),
            momentum: 0.9,
            segment_hop: 0,
            eval_segment_hop: 1,
            folds: 10,
            validation_fraction: 0.1,
        }
    }
}

/// Input and output locations. Command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
    /// Test fold of a k-fold plan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub features: FeatureSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        match name {
            "table3" => {}
            // fast settings for smoke runs on short synthetic clips
            "small" => {
                c.features = FeatureSection {
                    sample_rate: 8000,
                    fft_size: 256,
                    hop: 128,
                    mel_bins: 16,
                    chunk_seconds: 0.0,
                };
                c.model = ModelSection {
                    layers: vec![LayerSection {
                        hidden_width: 12,
                        order: 2,
                        bandwidth: Some(6),
                        overlap: Some(2),
                    }],
                    extra_frames: 4,
                    dense_width: 8,
                    activation: "prelu".into(),
                };
                c.training.epochs = 10;
                c.training.batch_size = 16;
                c.training.patience = 5;
                c.training.folds = 5;
            }
            "gradcheck" => {
                c.features.mel_bins = 8;
                c.model = ModelSection {
                    layers: vec![
                        LayerSection {
                            hidden_width: 6,
                            order: 2,
                            bandwidth: Some(3),
                            overlap: Some(1),
                        },
                        LayerSection {
                            hidden_width: 6,
                            order: 2,
                            bandwidth: Some(2),
                            overlap: Some(-1),
                        },
                    ],
                    extra_frames: 3,
                    dense_width: 5,
                    activation: "prelu".into(),
                };
            }
            other => return Err(ConfigError::UnknownPreset(other.into())),
        }
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_toml(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn activation(&self) -> Result<ActivationKind, ConfigError> {
        ActivationKind::parse(&self.model.activation)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown activation {:?}", self.model.activation)))
    }

    /// Model architecture for `class_count` classes over `mel_bins` features.
    pub fn model_spec(&self, class_count: usize) -> Result<ModelSpec, ConfigError> {
        let layers = self
            .model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match (l.bandwidth, l.overlap) {
                (Some(bw), Some(ov)) => Ok(LayerSpec::masked(l.hidden_width, l.order, bw, ov)),
                (None, None) => Ok(LayerSpec::unmasked(l.hidden_width, l.order)),
                _ => Err(ConfigError::Invalid(format!(
                    "model.layers[{i}]: give both bandwidth and overlap, or neither"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let spec = ModelSpec {
            feature_length: self.features.mel_bins,
            layers,
            extra_frames: self.model.extra_frames,
            dense_width: self.model.dense_width,
            class_count,
            activation: self.activation()?,
            allow_zero_order: false,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    /// Training segment hop for a model with segment size `q`.
    pub fn segment_hop(&self, q: usize) -> usize {
        if self.training.segment_hop == 0 {
            q
        } else {
            self.training.segment_hop
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.training;
        let optimizer = match t.optimizer.as_str() {
            "momentum" => Optimizer::Momentum(t.momentum),
            "sgd" => Optimizer::GradientDescent,
            other => return Err(ConfigError::Invalid(format!("unknown optimizer {other:?}"))),
        };
        let c = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            patience: t.patience,
            hop: t.segment_hop,
            optimizer,
        };
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }

    /// Checks everything that doesn't depend on the dataset.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.features
            .pipeline()
            .map_err(|e| ConfigError::Invalid(format!("features: {e}")))?;
        let chunk = self.features.chunk_seconds;
        if !(chunk >= 0.0 && chunk.is_finite()) {
            return Err(ConfigError::Invalid("features.chunk_seconds must be >= 0".into()));
        }
        self.model_spec(1)?;
        self.train_config()?;
        if self.training.eval_segment_hop == 0 {
            return Err(ConfigError::Invalid("training.eval_segment_hop must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.training.validation_fraction) {
            return Err(ConfigError::Invalid(
                "training.validation_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}
