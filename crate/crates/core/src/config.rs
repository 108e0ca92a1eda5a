//! Run configuration: a JSON document with one section per pipeline stage.
//! Unknown keys are rejected; absent keys fall back to the stated defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_corrupt_rate() -> f64 {
    0.5
}
fn d_mode() -> String {
    "random".into()
}
fn d_sigma_low() -> f64 {
    0.01
}
fn d_sigma_high() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Training/eval corruption severity.
    pub rate: f64,
    pub mode: String,
    /// Gaussian perturbation scale (fraction of bbox diagonal), low severity.
    pub sigma_low: f64,
    /// Gaussian perturbation scale, high severity.
    pub sigma_high: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            rate: d_corrupt_rate(),
            mode: d_mode(),
            sigma_low: d_sigma_low(),
            sigma_high: d_sigma_high(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionConfig {
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            embed_dim: 34,
            num_blocks: 8,
            seq_len: 16,
            steps: 2000,
            lr_max: 1e-5,
            lr_min: 5e-8,
            weight_decay: 1e-4,
            seed: 304,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionConfig {
    pub strong_primitive_prob: f64,
    pub strong_crop_ratio_min: f64,
    pub frame_drop_prob: f64,
    pub noise_sigma_frac: f64,
    pub axis_mask_prob: f64,
    pub bone_scale_min: f64,
    pub bone_scale_max: f64,
    pub dropout_prob: f64,
    pub weak_crop_ratio_min: f64,
    pub flip_prob: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            strong_primitive_prob: 0.5,
            strong_crop_ratio_min: 0.6,
            frame_drop_prob: 0.1,
            noise_sigma_frac: 0.02,
            axis_mask_prob: 0.2,
            bone_scale_min: 0.9,
            bone_scale_max: 1.1,
            dropout_prob: 0.05,
            weak_crop_ratio_min: 0.9,
            flip_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSectionConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub fusion_dim: usize,
}

impl Default for DynamicsSectionConfig {
    fn default() -> Self {
        DynamicsSectionConfig {
            feature_dim: 32,
            hidden_dim: 64,
            fusion_dim: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognitionConfig {
    pub channels: Vec<usize>,
    pub lambda: f64,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        RecognitionConfig {
            channels: vec![4, 32, 64],
            lambda: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 50,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corruption: CorruptionConfig,
    pub completion: CompletionConfig,
    pub decomposition: DecompositionConfig,
    pub dynamics: DynamicsSectionConfig,
    pub recognition: RecognitionConfig,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<RunConfig> {
        serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_json(&text)
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}
