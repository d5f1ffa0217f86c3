use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskStrategy;
use crate::model::decays;
use crate::tensor::Mat;

use super::Parameterized;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub enc_mask_rate: f64,
    pub dec_mask_rate: f64,
    #[serde(default)]
    pub mask_strategy: MaskStrategy,
    /// Softmax temperature of the contrastive loss (fine-tuning only).
    pub temperature: f64,
    pub tie_towers: bool,
    /// Context/response pairs drawn per session per pass over the corpus.
    pub pairs_per_session: usize,
    pub max_ctx_turns: usize,
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            warmup_ratio: 0.1,
            max_steps: 2000,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            enc_mask_rate: 0.30,
            dec_mask_rate: 0.75,
            mask_strategy: MaskStrategy::Replace,
            temperature: 1.0,
            tie_towers: false,
            pairs_per_session: 4,
            max_ctx_turns: 10,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0) {
            return fail("base_lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return fail("warmup_ratio must lie in [0, 1]");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.enc_mask_rate) || !(0.0..=1.0).contains(&self.dec_mask_rate) {
            return fail("mask rates must lie in [0, 1]");
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if self.pairs_per_session < 1 || self.max_ctx_turns < 1 || self.min_freq < 1 {
            return fail("pairs_per_session, max_ctx_turns and min_freq must be at least 1");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.max_steps as f64).round() as usize
    }
}

/// Linear warmup from 0 to `base_lr`, then linear decay to 0 at `max_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let warmup = config.warmup_steps();
    let total = config.max_steps;
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return config.base_lr * step as f64 / warmup as f64;
    }
    config.base_lr * (total - step) as f64 / (total - warmup) as f64
}

/// AdamW moments, one pair per parameter tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl OptimState {
    pub fn new<P: Parameterized>(params: &P) -> Self {
        let zeros: Vec<Mat> = params.named().iter().map(|(_, t)| t.zeros_like()).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One AdamW update with decoupled weight decay.
///
/// Biases and layernorm tensors are not decayed. Non-finite gradients abort
/// the step before anything is modified.
pub fn adamw_step<P: Parameterized>(
    params: &mut P,
    grads: &P,
    state: &mut OptimState,
    config: &TrainConfig,
    lr_t: f64,
) -> Result<()> {
    let grads = grads.named();
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(name.clone()));
    }
    let mut params = params.named_mut();
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Shape("parameter, gradient and optimizer layouts differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (((name, p), (_, g)), (m, v)) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", p.shape(), g.shape())));
        }
        let decay = if decays(name) { lr_t * config.weight_decay } else { 0.0 };
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = config.beta1 * m.data[i] + (1.0 - config.beta1) * gi;
            v.data[i] = config.beta2 * v.data[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= decay * p.data[i];
            p.data[i] -= lr_t * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(())
}
