//! Optimization machinery plus the post-training and fine-tuning loops.

mod fine_tune;
mod loss;
mod optim;
mod post_train;
pub mod presets;

pub use fine_tune::{contrastive_forward_backward, fine_tune, response_input, BiEncoder, FineTuned, Side, CONTEXT_PREFIX, RESPONSE_PREFIX};
pub use loss::{contrastive_loss, cross_entropy_mlm, score_pair, LossReport};
pub use optim::{adamw_step, lr_at, OptimState, TrainConfig};
pub use post_train::{post_train, PairStream, PostTrained};

use serde::Serialize;

use crate::model::{EncoderParams, ModelParams};
use crate::tensor::Mat;

/// Anything whose tensors can be enumerated in a fixed canonical order.
pub trait Parameterized {
    fn named(&self) -> Vec<(String, &Mat)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Mat)>;
}

impl Parameterized for ModelParams {
    fn named(&self) -> Vec<(String, &Mat)> {
        ModelParams::named(self)
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        ModelParams::named_mut(self)
    }
}

impl Parameterized for EncoderParams {
    fn named(&self) -> Vec<(String, &Mat)> {
        EncoderParams::named(self, crate::model::params::ENCODER_PREFIX)
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        EncoderParams::named_mut(self, crate::model::params::ENCODER_PREFIX)
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_enc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_dec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_ft: Option<f64>,
}

impl StepLog {
    pub fn csv_header(fine_tune: bool) -> &'static str {
        if fine_tune {
            "step,lr,l_ft"
        } else {
            "step,lr,l_enc,l_dec,l_total"
        }
    }

    pub fn csv_row(&self) -> String {
        match self.l_ft {
            Some(ft) => format!("{},{},{}", self.step, self.lr, ft),
            None => format!(
                "{},{},{},{},{}",
                self.step,
                self.lr,
                self.l_enc.unwrap_or(0.0),
                self.l_dec.unwrap_or(0.0),
                self.l_total.unwrap_or(0.0)
            ),
        }
    }
}
