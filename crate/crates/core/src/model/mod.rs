//! Asymmetric encoder-decoder transformer with exact reverse-mode gradients.
//!
//! The encoder is a pre-layernorm bidirectional stack whose position-0 output
//! is the context embedding. The decoder is a shallow stack of the same kind
//! whose position-0 input embedding is replaced by that context embedding, so
//! the decoder only sees the context through this single vector. Both sides
//! reconstruct masked tokens through an MLM head tied to the token embedding.

pub mod layers;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, CLS_ID, SPECIALS};
use crate::error::{Error, Result};
use crate::masking::MaskingOutcome;
use crate::rng::{self, Rng};
use crate::tensor::{dot, log_sum_exp, Mat};
use crate::training::LossReport;

use layers::{stack_backward, stack_forward, Dropout, StackCache};
pub use params::{decays, DecoderParams, EncoderParams, GradientSet, LayerParams, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub n_enc_layers: usize,
    /// Zero means no decoder: plain encoder-side MLM.
    pub n_dec_layers: usize,
    pub max_enc_len: usize,
    pub max_dec_len: usize,
    pub dropout_rate: f64,
    pub layernorm_eps: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size <= SPECIALS.len() {
            return fail(format!("vocab_size {} leaves no room for regular tokens", self.vocab_size));
        }
        if self.hidden_dim == 0 || self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return fail(format!("hidden_dim {} must be a positive multiple of n_heads {}", self.hidden_dim, self.n_heads));
        }
        if self.ffn_dim == 0 || self.n_enc_layers == 0 {
            return fail("ffn_dim and n_enc_layers must be positive".into());
        }
        if self.n_enc_layers < self.n_dec_layers {
            return fail(format!(
                "decoder ({} layers) must not be deeper than the encoder ({} layers)",
                self.n_dec_layers, self.n_enc_layers
            ));
        }
        if self.max_enc_len < 2 || self.max_dec_len < 2 {
            return fail("max_enc_len and max_dec_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.layernorm_eps > 0.0) {
            return fail("layernorm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn has_decoder(&self) -> bool {
        self.n_dec_layers > 0
    }
}

/// Seeded truncated-normal (std 0.02) weights, unit layernorm scales, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    Ok(ModelParams::init(config, &mut rng::stream(seed, "init")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub cls_embedding: Vec<f64>,
    pub hidden: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub cls_slot: Vec<f64>,
    pub hidden: Mat,
}

fn check_ids(ids: &[u32], max_len: usize, vocab_size: usize, side: &str) -> Result<()> {
    if ids.is_empty() || ids.len() > max_len {
        return Err(Error::Invalid(format!("{side} input length {} outside 1..={max_len}", ids.len())));
    }
    if ids[0] != CLS_ID {
        return Err(Error::Invalid(format!("{side} input must start with [CLS]")));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::Invalid(format!("{side} token id {bad} outside vocabulary of {vocab_size}")));
    }
    Ok(())
}

fn dropout_for<'a>(config: &ModelConfig, rng: Option<&'a mut Rng>) -> Option<Dropout<'a>> {
    rng.filter(|_| config.dropout_rate > 0.0)
        .map(|rng| Dropout { rate: config.dropout_rate, rng })
}

/// Encoder forward over `ids`, where keys at `attn_len..` are padding.
pub fn encoder_forward(
    enc: &EncoderParams,
    config: &ModelConfig,
    ids: &[u32],
    attn_len: usize,
    rng: Option<&mut Rng>,
) -> Result<(Mat, StackCache)> {
    check_ids(ids, config.max_enc_len, config.vocab_size, "encoder")?;
    let d = config.hidden_dim;
    let mut x0 = Mat::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        let row = x0.row_mut(i);
        for ((o, &t), &p) in row.iter_mut().zip(enc.tok_emb.row(id as usize)).zip(enc.pos_emb.row(i)) {
            *o = t + p;
        }
    }
    let mut dropout = dropout_for(config, rng);
    Ok(stack_forward(
        &enc.layers,
        &enc.final_gamma,
        &enc.final_beta,
        x0,
        config.n_heads,
        attn_len.max(1),
        config.layernorm_eps,
        dropout.as_mut(),
    ))
}

pub fn encoder_backward(enc: &EncoderParams, ids: &[u32], cache: &StackCache, dout: &Mat, g: &mut EncoderParams) {
    let dx0 = stack_backward(
        &enc.layers,
        &enc.final_gamma,
        cache,
        dout,
        &mut g.layers,
        &mut g.final_gamma,
        &mut g.final_beta,
    );
    for (i, &id) in ids.iter().enumerate() {
        let dr = dx0.row(i);
        for (o, &v) in g.tok_emb.row_mut(id as usize).iter_mut().zip(dr) {
            *o += v;
        }
        for (o, &v) in g.pos_emb.row_mut(i).iter_mut().zip(dr) {
            *o += v;
        }
    }
}

/// Decoder forward: slot 0 takes `cls_c` verbatim, the remaining positions
/// take token plus decoder-position embeddings.
pub fn decoder_forward(
    params: &ModelParams,
    config: &ModelConfig,
    cls_c: &[f64],
    ids: &[u32],
    attn_len: usize,
    rng: Option<&mut Rng>,
) -> Result<(Mat, StackCache)> {
    let dec = params
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no decoder".into()))?;
    check_ids(ids, config.max_dec_len, config.vocab_size, "decoder")?;
    let d = config.hidden_dim;
    if cls_c.len() != d {
        return Err(Error::Shape(format!("context embedding has dim {}, expected {d}", cls_c.len())));
    }
    let mut x0 = Mat::zeros(ids.len(), d);
    x0.row_mut(0).copy_from_slice(cls_c);
    for (i, &id) in ids.iter().enumerate().skip(1) {
        let row = x0.row_mut(i);
        for ((o, &t), &p) in row.iter_mut().zip(params.encoder.tok_emb.row(id as usize)).zip(dec.pos_emb.row(i)) {
            *o = t + p;
        }
    }
    let mut dropout = dropout_for(config, rng);
    Ok(stack_forward(
        &dec.layers,
        &dec.final_gamma,
        &dec.final_beta,
        x0,
        config.n_heads,
        attn_len.max(1),
        config.layernorm_eps,
        dropout.as_mut(),
    ))
}

/// Backpropagates through the decoder; returns the gradient w.r.t. `cls_c`.
/// Token-embedding gradients land in `g.encoder.tok_emb` (shared table).
pub fn decoder_backward(params: &ModelParams, ids: &[u32], cache: &StackCache, dout: &Mat, g: &mut GradientSet) -> Vec<f64> {
    let dec = params.decoder.as_ref().expect("decoder_backward without decoder");
    let gd = g.decoder.as_mut().expect("gradient set without decoder");
    let dx0 = stack_backward(
        &dec.layers,
        &dec.final_gamma,
        cache,
        dout,
        &mut gd.layers,
        &mut gd.final_gamma,
        &mut gd.final_beta,
    );
    for (i, &id) in ids.iter().enumerate().skip(1) {
        let dr = dx0.row(i);
        for (o, &v) in g.encoder.tok_emb.row_mut(id as usize).iter_mut().zip(dr) {
            *o += v;
        }
        for (o, &v) in gd.pos_emb.row_mut(i).iter_mut().zip(dr) {
            *o += v;
        }
    }
    dx0.row(0).to_vec()
}

/// Encodes a full (padded) sequence; row 0 of the output is the context embedding.
pub fn encode(params: &ModelParams, input: &TokenSeq, config: &ModelConfig) -> Result<EncoderOutput> {
    encode_with(&params.encoder, input, config)
}

pub fn encode_with(enc: &EncoderParams, input: &TokenSeq, config: &ModelConfig) -> Result<EncoderOutput> {
    let (hidden, _) = encoder_forward(enc, config, &input.ids, input.attention_len, None)?;
    Ok(EncoderOutput { cls_embedding: hidden.row(0).to_vec(), hidden })
}

/// The context embedding alone, computed over the non-pad prefix only.
pub fn cls_embedding(enc: &EncoderParams, input: &TokenSeq, config: &ModelConfig) -> Result<Vec<f64>> {
    let (hidden, _) = encoder_forward(enc, config, input.active(), input.attention_len, None)?;
    Ok(hidden.row(0).to_vec())
}

pub fn decode(params: &ModelParams, cls_c: &[f64], input: &TokenSeq, config: &ModelConfig) -> Result<DecoderOutput> {
    let (hidden, _) = decoder_forward(params, config, cls_c, &input.ids, input.attention_len, None)?;
    Ok(DecoderOutput { cls_slot: hidden.row(0).to_vec(), hidden })
}

/// `hidden[positions] · Eᵀ + bias` with the head tied to the token embedding.
pub fn mlm_logits(params: &ModelParams, hidden: &Mat, positions: &[usize]) -> Result<Mat> {
    let emb = &params.encoder.tok_emb;
    if hidden.cols != emb.cols {
        return Err(Error::Shape(format!("hidden dim {} vs embedding dim {}", hidden.cols, emb.cols)));
    }
    let mut out = Mat::zeros(positions.len(), emb.rows);
    for (r, &p) in positions.iter().enumerate() {
        if p >= hidden.rows {
            return Err(Error::Invalid(format!("position {p} out of range for {} rows", hidden.rows)));
        }
        let h = hidden.row(p);
        for (v, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = dot(h, emb.row(v)) + params.mlm_bias.data[v];
        }
    }
    Ok(out)
}

/// Sum of cross-entropies at `positions`; gradients (scaled by `scale`) are
/// accumulated into `d_hidden`, the tied embedding and the head bias.
fn mlm_loss_backward(
    params: &ModelParams,
    hidden: &Mat,
    positions: &[usize],
    labels: &[u32],
    scale: f64,
    d_hidden: &mut Mat,
    g: &mut GradientSet,
) -> Result<f64> {
    let logits = mlm_logits(params, hidden, positions)?;
    let emb = &params.encoder.tok_emb;
    let mut total = 0.0;
    let mut dlog = vec![0.0; logits.cols];
    for (r, (&p, &label)) in positions.iter().zip(labels).enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        total += lse - row[label as usize];
        for (v, dl) in dlog.iter_mut().enumerate() {
            *dl = (row[v] - lse).exp() * scale;
        }
        dlog[label as usize] -= scale;

        let h = hidden.row(p);
        let dh = d_hidden.row_mut(p);
        for (v, &dl) in dlog.iter().enumerate() {
            g.mlm_bias.data[v] += dl;
            for (o, &e) in dh.iter_mut().zip(emb.row(v)) {
                *o += dl * e;
            }
            for (o, &hv) in g.encoder.tok_emb.row_mut(v).iter_mut().zip(h) {
                *o += dl * hv;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FbOptions {
    pub enc_loss: bool,
    pub dec_loss: bool,
    /// Treat the context embedding as a constant on the decoder side.
    pub detach_cls: bool,
}

impl Default for FbOptions {
    fn default() -> Self {
        Self { enc_loss: true, dec_loss: true, detach_cls: false }
    }
}

/// Joint MLM objective `L = L_enc + L_dec` and its exact gradient.
pub fn forward_backward(
    params: &ModelParams,
    enc_batch: &[MaskingOutcome],
    dec_batch: &[MaskingOutcome],
    config: &ModelConfig,
) -> Result<(LossReport, GradientSet)> {
    forward_backward_with(params, enc_batch, dec_batch, config, FbOptions::default(), None)
}

/// Examples are processed in batch order and gradients accumulate into one
/// buffer, so the result is independent of scheduling.
pub fn forward_backward_with(
    params: &ModelParams,
    enc_batch: &[MaskingOutcome],
    dec_batch: &[MaskingOutcome],
    config: &ModelConfig,
    opts: FbOptions,
    mut rng: Option<&mut Rng>,
) -> Result<(LossReport, GradientSet)> {
    if enc_batch.len() != dec_batch.len() {
        return Err(Error::Invalid(format!(
            "encoder batch has {} items but decoder batch has {}",
            enc_batch.len(),
            dec_batch.len()
        )));
    }
    let use_dec = opts.dec_loss && params.decoder.is_some();
    let n_enc: usize = enc_batch.iter().map(|m| m.masked_positions.len()).sum();
    let n_dec: usize = if use_dec { dec_batch.iter().map(|m| m.masked_positions.len()).sum() } else { 0 };
    let enc_scale = if n_enc > 0 { 1.0 / n_enc as f64 } else { 0.0 };
    let dec_scale = if n_dec > 0 { 1.0 / n_dec as f64 } else { 0.0 };

    let mut grads = ModelParams::zeros(config);
    let (mut sum_enc, mut sum_dec) = (0.0, 0.0);
    for (em, dm) in enc_batch.iter().zip(dec_batch) {
        let e_ids = em.masked_ids.active();
        let (h_enc, e_cache) = encoder_forward(&params.encoder, config, e_ids, e_ids.len(), rng.as_deref_mut())?;
        let mut d_enc = h_enc.zeros_like();
        let mut touched = false;
        if opts.enc_loss && !em.masked_positions.is_empty() {
            sum_enc += mlm_loss_backward(params, &h_enc, &em.masked_positions, &em.original_ids, enc_scale, &mut d_enc, &mut grads)?;
            touched = true;
        }
        if use_dec && !dm.masked_positions.is_empty() {
            let d_ids = dm.masked_ids.active();
            let (h_dec, d_cache) =
                decoder_forward(params, config, h_enc.row(0), d_ids, d_ids.len(), rng.as_deref_mut())?;
            let mut d_dec = h_dec.zeros_like();
            sum_dec += mlm_loss_backward(params, &h_dec, &dm.masked_positions, &dm.original_ids, dec_scale, &mut d_dec, &mut grads)?;
            let d_cls = decoder_backward(params, d_ids, &d_cache, &d_dec, &mut grads);
            if !opts.detach_cls {
                for (o, v) in d_enc.row_mut(0).iter_mut().zip(d_cls) {
                    *o += v;
                }
                touched = true;
            }
        }
        if touched {
            encoder_backward(&params.encoder, e_ids, &e_cache, &d_enc, &mut grads.encoder);
        }
    }

    let l_enc = sum_enc * enc_scale;
    let l_dec = sum_dec * dec_scale;
    let mut warnings = Vec::new();
    if opts.enc_loss && n_enc == 0 {
        warnings.push("encoder batch has no masked tokens".to_string());
    }
    if use_dec && n_dec == 0 {
        warnings.push("decoder batch has no masked tokens".to_string());
    }
    let report = LossReport {
        l_enc,
        l_dec,
        l_total: l_enc + l_dec,
        l_ft: None,
        enc_masked: n_enc,
        dec_masked: n_dec,
        warnings,
    };
    Ok((report, grads))
}
