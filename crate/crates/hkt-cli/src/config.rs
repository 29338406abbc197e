use std::path::Path;

use hkt_core::data::ListOpsSpec;
use hkt_core::model::ModelConfig;
use hkt_core::trainer::TrainConfig;
use hkt_core::{HktError, Result};
use serde::{Deserialize, Serialize};

/// Desk-scale defaults: small enough that the full pipeline runs on one CPU
/// core in minutes while keeping the architecture's moving parts exercised.
pub fn desk_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_levels: 3,
        stride: 2,
        n_layers: 2,
        conv_kernel: 3,
        dropout: 0.0,
        vocab_size: hkt_core::data::LISTOPS_VOCAB,
        n_classes: 10,
        causal: true,
        max_seq_len: 128,
    }
}

pub fn desk_data_spec() -> ListOpsSpec {
    ListOpsSpec {
        n_train: 2000,
        n_val: 500,
        n_test: 500,
        ..Default::default()
    }
}

pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        batch_size: 32,
        warmup_epochs: 2,
        ..Default::default()
    }
}

/// Experiment configuration file: [model], [train], [data] TOML sections,
/// each falling back to the desk-scale defaults when omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: ListOpsSpec,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            model: desk_model_config(),
            train: desk_train_config(),
            data: desk_data_spec(),
        }
    }
}

impl FullConfig {
    pub fn load(path: Option<&Path>) -> Result<FullConfig> {
        let Some(path) = path else {
            return Ok(FullConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let cfg: FullConfig =
            toml::from_str(&text).map_err(|e| HktError::Config(format!("{}: {e}", path.display())))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
