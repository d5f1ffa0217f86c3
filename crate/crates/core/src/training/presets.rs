//! Named configuration presets.
//!
//! `desk` is sized to run each stage in minutes on one CPU core. The
//! `ubuntu-style` and `ecommerce-style` presets carry the published mask
//! rates, decoder depths and learning rates at desk model size;
//! `ubuntu-paper-scale` records the full-size regime for reference.

use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelConfig,
    pub post_train: TrainConfig,
    pub fine_tune: TrainConfig,
}

pub const PRESET_NAMES: [&str; 4] = ["desk", "ubuntu-style", "ecommerce-style", "ubuntu-paper-scale"];

pub fn desk_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 2000,
        hidden_dim: 32,
        n_heads: 4,
        ffn_dim: 64,
        n_enc_layers: 2,
        n_dec_layers: 1,
        max_enc_len: 64,
        max_dec_len: 16,
        dropout_rate: 0.0,
        layernorm_eps: 1e-5,
    }
}

pub fn desk_post_train() -> TrainConfig {
    TrainConfig {
        base_lr: 1e-3,
        max_steps: 2000,
        batch_size: 32,
        enc_mask_rate: 0.30,
        dec_mask_rate: 0.75,
        ..TrainConfig::default()
    }
}

pub fn desk_fine_tune() -> TrainConfig {
    TrainConfig {
        base_lr: 5e-4,
        max_steps: 500,
        batch_size: 32,
        enc_mask_rate: 0.0,
        dec_mask_rate: 0.0,
        ..TrainConfig::default()
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    let desk = Preset { name: "desk", model: desk_model(), post_train: desk_post_train(), fine_tune: desk_fine_tune() };
    match name {
        "desk" => Ok(desk),
        "ubuntu-style" => Ok(Preset {
            name: "ubuntu-style",
            model: ModelConfig { n_dec_layers: 1, ..desk.model },
            post_train: TrainConfig { enc_mask_rate: 0.30, dec_mask_rate: 0.75, base_lr: 3e-4, ..desk.post_train },
            fine_tune: TrainConfig { base_lr: 5e-5, batch_size: 64, ..desk.fine_tune },
        }),
        "ecommerce-style" => Ok(Preset {
            name: "ecommerce-style",
            model: ModelConfig { n_dec_layers: 2, ..desk.model },
            post_train: TrainConfig { enc_mask_rate: 0.30, dec_mask_rate: 0.45, base_lr: 1e-4, ..desk.post_train },
            fine_tune: TrainConfig { base_lr: 1e-4, batch_size: 128, ..desk.fine_tune },
        }),
        "ubuntu-paper-scale" => Ok(Preset {
            name: "ubuntu-paper-scale",
            model: ModelConfig {
                vocab_size: 30522,
                hidden_dim: 768,
                n_heads: 12,
                ffn_dim: 3072,
                n_enc_layers: 12,
                n_dec_layers: 1,
                max_enc_len: 256,
                max_dec_len: 64,
                dropout_rate: 0.1,
                layernorm_eps: 1e-12,
            },
            post_train: TrainConfig {
                enc_mask_rate: 0.30,
                dec_mask_rate: 0.75,
                base_lr: 3e-4,
                batch_size: 1000,
                max_steps: 15_000,
                ..desk.post_train
            },
            fine_tune: TrainConfig { base_lr: 5e-5, batch_size: 64, ..desk.fine_tune },
        }),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; valid presets: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
