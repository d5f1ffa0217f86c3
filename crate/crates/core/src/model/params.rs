use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Mat;

use super::ModelConfig;

const INIT_STD: f64 = 0.02;

/// One pre-layernorm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Mat,
    pub ln1_beta: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_gamma: Mat,
    pub ln2_beta: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(
            ln1_gamma => "ln1.gamma",
            ln1_beta => "ln1.beta",
            wq => "attn.q.weight",
            bq => "attn.q.bias",
            wk => "attn.k.weight",
            bk => "attn.k.bias",
            wv => "attn.v.weight",
            bv => "attn.v.bias",
            wo => "attn.o.weight",
            bo => "attn.o.bias",
            ln2_gamma => "ln2.gamma",
            ln2_beta => "ln2.beta",
            w1 => "ffn.in.weight",
            b1 => "ffn.in.bias",
            w2 => "ffn.out.weight",
            b2 => "ffn.out.bias"
        )
    };
}

impl LayerParams {
    pub fn init(d: usize, ffn: usize, rng: &mut Rng) -> Self {
        Self {
            ln1_gamma: Mat::filled(1, d, 1.0),
            ln1_beta: Mat::zeros(1, d),
            wq: Mat::trunc_normal(d, d, INIT_STD, rng),
            bq: Mat::zeros(1, d),
            wk: Mat::trunc_normal(d, d, INIT_STD, rng),
            bk: Mat::zeros(1, d),
            wv: Mat::trunc_normal(d, d, INIT_STD, rng),
            bv: Mat::zeros(1, d),
            wo: Mat::trunc_normal(d, d, INIT_STD, rng),
            bo: Mat::zeros(1, d),
            ln2_gamma: Mat::filled(1, d, 1.0),
            ln2_beta: Mat::zeros(1, d),
            w1: Mat::trunc_normal(d, ffn, INIT_STD, rng),
            b1: Mat::zeros(1, ffn),
            w2: Mat::trunc_normal(ffn, d, INIT_STD, rng),
            b2: Mat::zeros(1, d),
        }
    }

    pub fn zeros(d: usize, ffn: usize) -> Self {
        Self {
            ln1_gamma: Mat::zeros(1, d),
            ln1_beta: Mat::zeros(1, d),
            wq: Mat::zeros(d, d),
            bq: Mat::zeros(1, d),
            wk: Mat::zeros(d, d),
            bk: Mat::zeros(1, d),
            wv: Mat::zeros(d, d),
            bv: Mat::zeros(1, d),
            wo: Mat::zeros(d, d),
            bo: Mat::zeros(1, d),
            ln2_gamma: Mat::zeros(1, d),
            ln2_beta: Mat::zeros(1, d),
            w1: Mat::zeros(d, ffn),
            b1: Mat::zeros(1, ffn),
            w2: Mat::zeros(ffn, d),
            b2: Mat::zeros(1, d),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        macro_rules! go {
            ($($field:ident => $name:literal),*) => { $( f(format!("{prefix}.{}", $name), &self.$field); )* };
        }
        layer_fields!(go);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Mat)) {
        macro_rules! go {
            ($($field:ident => $name:literal),*) => { $( f(format!("{prefix}.{}", $name), &mut self.$field); )* };
        }
        layer_fields!(go);
    }
}

/// Token embedding, encoder positions, encoder stack and its final layernorm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Mat,
    pub final_beta: Mat,
}

impl EncoderParams {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let d = config.hidden_dim;
        Self {
            tok_emb: Mat::trunc_normal(config.vocab_size, d, INIT_STD, rng),
            pos_emb: Mat::trunc_normal(config.max_enc_len, d, INIT_STD, rng),
            layers: (0..config.n_enc_layers).map(|_| LayerParams::init(d, config.ffn_dim, rng)).collect(),
            final_gamma: Mat::filled(1, d, 1.0),
            final_beta: Mat::zeros(1, d),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        Self {
            tok_emb: Mat::zeros(config.vocab_size, d),
            pos_emb: Mat::zeros(config.max_enc_len, d),
            layers: (0..config.n_enc_layers).map(|_| LayerParams::zeros(d, config.ffn_dim)).collect(),
            final_gamma: Mat::zeros(1, d),
            final_beta: Mat::zeros(1, d),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(format!("{prefix}.tok_emb"), &self.tok_emb);
        f(format!("{prefix}.pos_emb"), &self.pos_emb);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layers.{i}"), f);
        }
        f(format!("{prefix}.final_ln.gamma"), &self.final_gamma);
        f(format!("{prefix}.final_ln.beta"), &self.final_beta);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Mat)) {
        f(format!("{prefix}.tok_emb"), &mut self.tok_emb);
        f(format!("{prefix}.pos_emb"), &mut self.pos_emb);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layers.{i}"), f);
        }
        f(format!("{prefix}.final_ln.gamma"), &mut self.final_gamma);
        f(format!("{prefix}.final_ln.beta"), &mut self.final_beta);
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, m| out.push((n, m)));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        self.visit_mut(prefix, &mut |n, m| out.push((n, m)));
        out
    }
}

/// Decoder positions, the shallow decoder stack and its final layernorm.
/// Token embeddings are borrowed from the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub pos_emb: Mat,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Mat,
    pub final_beta: Mat,
}

impl DecoderParams {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let d = config.hidden_dim;
        Self {
            pos_emb: Mat::trunc_normal(config.max_dec_len, d, INIT_STD, rng),
            layers: (0..config.n_dec_layers).map(|_| LayerParams::init(d, config.ffn_dim, rng)).collect(),
            final_gamma: Mat::filled(1, d, 1.0),
            final_beta: Mat::zeros(1, d),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        Self {
            pos_emb: Mat::zeros(config.max_dec_len, d),
            layers: (0..config.n_dec_layers).map(|_| LayerParams::zeros(d, config.ffn_dim)).collect(),
            final_gamma: Mat::zeros(1, d),
            final_beta: Mat::zeros(1, d),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(format!("{prefix}.pos_emb"), &self.pos_emb);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layers.{i}"), f);
        }
        f(format!("{prefix}.final_ln.gamma"), &self.final_gamma);
        f(format!("{prefix}.final_ln.beta"), &self.final_beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Mat)) {
        f(format!("{prefix}.pos_emb"), &mut self.pos_emb);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layers.{i}"), f);
        }
        f(format!("{prefix}.final_ln.gamma"), &mut self.final_gamma);
        f(format!("{prefix}.final_ln.beta"), &mut self.final_beta);
    }
}

/// All learnable tensors of the post-training model.
///
/// `decoder` is `None` for the encoder-only MLM baseline. The MLM head is
/// tied to `encoder.tok_emb` and only owns its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: Option<DecoderParams>,
    pub mlm_bias: Mat,
}

/// Gradients share the parameter layout.
pub type GradientSet = ModelParams;

pub const ENCODER_PREFIX: &str = "enc";
pub const DECODER_PREFIX: &str = "dec";
pub const MLM_BIAS: &str = "mlm.bias";

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let encoder = EncoderParams::init(config, rng);
        let decoder = (config.n_dec_layers > 0).then(|| DecoderParams::init(config, rng));
        Self { encoder, decoder, mlm_bias: Mat::zeros(1, config.vocab_size) }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            encoder: EncoderParams::zeros(config),
            decoder: (config.n_dec_layers > 0).then(|| DecoderParams::zeros(config)),
            mlm_bias: Mat::zeros(1, config.vocab_size),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Mat)) {
        self.encoder.visit(ENCODER_PREFIX, f);
        if let Some(dec) = &self.decoder {
            dec.visit(DECODER_PREFIX, f);
        }
        f(MLM_BIAS.to_string(), &self.mlm_bias);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Mat)) {
        self.encoder.visit_mut(ENCODER_PREFIX, f);
        if let Some(dec) = &mut self.decoder {
            dec.visit_mut(DECODER_PREFIX, f);
        }
        f(MLM_BIAS.to_string(), &mut self.mlm_bias);
    }

    /// Tensors in canonical order.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        self.visit(&mut |n, m| out.push((n, m)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, m| out.push((n, m)));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.all_finite())
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let rhs = other.named();
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(rhs) {
            a.add_assign(b);
        }
    }

    /// Fills a freshly shaped parameter set from named tensors; every name must match exactly.
    pub fn from_named(config: &ModelConfig, mut tensors: BTreeMap<String, Mat>) -> Result<Self> {
        let mut params = Self::zeros(config);
        fill_named(params.named_mut(), &mut tensors)?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }
}

pub fn fill_named(slots: Vec<(String, &mut Mat)>, tensors: &mut BTreeMap<String, Mat>) -> Result<()> {
    for (name, slot) in slots {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, found {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

/// Layernorm scales/shifts and biases are exempt from weight decay.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
}
