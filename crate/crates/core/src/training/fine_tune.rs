use serde::{Deserialize, Serialize};

use crate::corpus::{assemble_encoder_input, DialogueSession, TokenSeq, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{cls_embedding, encoder_backward, encoder_forward, EncoderParams, ModelConfig};
use crate::rng::{self, Rng};
use crate::tensor::Mat;

use super::{adamw_step, contrastive_loss, lr_at, OptimState, PairStream, Parameterized, PostTrained, StepLog, TrainConfig};

pub const CONTEXT_PREFIX: &str = "ctx";
pub const RESPONSE_PREFIX: &str = "resp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Context,
    Response,
}

/// Context tower `f_c` and response tower `f_r`. A tied bi-encoder stores a
/// single tower used for both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    pub config: ModelConfig,
    pub context: EncoderParams,
    pub response: Option<EncoderParams>,
}

impl BiEncoder {
    /// Both towers start as copies of `encoder`.
    pub fn from_encoder(config: &ModelConfig, encoder: &EncoderParams, tie: bool) -> Self {
        Self {
            config: config.clone(),
            context: encoder.clone(),
            response: (!tie).then(|| encoder.clone()),
        }
    }

    pub fn is_tied(&self) -> bool {
        self.response.is_none()
    }

    pub fn tower(&self, side: Side) -> &EncoderParams {
        match (side, &self.response) {
            (Side::Response, Some(r)) => r,
            _ => &self.context,
        }
    }

    /// The `[CLS]` output of the chosen tower on an unmasked sequence.
    pub fn embed(&self, side: Side, input: &TokenSeq) -> Result<Vec<f64>> {
        cls_embedding(self.tower(side), input, &self.config)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            context: EncoderParams::zeros(&self.config),
            response: self.response.as_ref().map(|_| EncoderParams::zeros(&self.config)),
        }
    }
}

impl Parameterized for BiEncoder {
    fn named(&self) -> Vec<(String, &Mat)> {
        let mut out = self.context.named(CONTEXT_PREFIX);
        if let Some(r) = &self.response {
            out.extend(r.named(RESPONSE_PREFIX));
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = self.context.named_mut(CONTEXT_PREFIX);
        if let Some(r) = &mut self.response {
            out.extend(r.named_mut(RESPONSE_PREFIX));
        }
        out
    }
}

/// Encoder input for a candidate response: the response as a one-turn context.
pub fn response_input(response: &Utterance, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    assemble_encoder_input(std::slice::from_ref(response), vocab, max_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuned {
    pub bi: BiEncoder,
    pub vocab: Vocabulary,
    pub train_config: TrainConfig,
    pub optim: OptimState,
    pub logs: Vec<StepLog>,
    pub warnings: Vec<String>,
}

/// In-batch contrastive loss `L_ft` over assembled (context, response)
/// inputs and its exact gradient with respect to both towers.
pub fn contrastive_forward_backward(
    bi: &BiEncoder,
    batch: &[(TokenSeq, TokenSeq)],
    temperature: f64,
    mut rng: Option<&mut Rng>,
) -> Result<(f64, BiEncoder)> {
    let config = &bi.config;
    let (b, d) = (batch.len(), config.hidden_dim);
    let mut ctx_vecs = Mat::zeros(b, d);
    let mut resp_vecs = Mat::zeros(b, d);
    let mut traces = Vec::with_capacity(b);
    for (i, (c, r)) in batch.iter().enumerate() {
        let (hc, cc) = encoder_forward(bi.tower(Side::Context), config, c.active(), c.attention_len, rng.as_deref_mut())?;
        let (hr, cr) = encoder_forward(bi.tower(Side::Response), config, r.active(), r.attention_len, rng.as_deref_mut())?;
        ctx_vecs.row_mut(i).copy_from_slice(hc.row(0));
        resp_vecs.row_mut(i).copy_from_slice(hr.row(0));
        traces.push((cc, hc.rows, cr, hr.rows));
    }
    let (loss, d_ctx, d_resp) = contrastive_loss(&ctx_vecs, &resp_vecs, temperature)?;

    let mut grads = bi.zeros_like();
    for (i, ((c, r), (cc, c_rows, cr, r_rows))) in batch.iter().zip(&traces).enumerate() {
        let mut dout = Mat::zeros(*c_rows, d);
        dout.row_mut(0).copy_from_slice(d_ctx.row(i));
        encoder_backward(bi.tower(Side::Context), c.active(), cc, &dout, &mut grads.context);

        let mut dout = Mat::zeros(*r_rows, d);
        dout.row_mut(0).copy_from_slice(d_resp.row(i));
        let g = match grads.response.as_mut() {
            Some(g) => g,
            None => &mut grads.context,
        };
        encoder_backward(bi.tower(Side::Response), r.active(), cr, &dout, g);
    }
    Ok((loss, grads))
}

/// Contrastive fine-tuning with in-batch negatives. The decoder is dropped;
/// both towers start from the post-trained encoder and see unmasked input.
pub fn fine_tune(post: &PostTrained, sessions: &[DialogueSession], train_config: &TrainConfig) -> Result<FineTuned> {
    train_config.validate()?;
    if sessions.is_empty() {
        return Err(Error::Empty("fine-tuning corpus is empty".into()));
    }
    let config = &post.model_config;
    let vocab = &post.vocab;
    let mut bi = BiEncoder::from_encoder(config, &post.params.encoder, train_config.tie_towers);
    let mut optim = OptimState::new(&bi);
    let mut warnings = Vec::new();
    if train_config.batch_size < 2 {
        warnings.push("batch_size < 2: no in-batch negatives, contrastive loss is identically 0".to_string());
    }

    let seed = train_config.seed;
    let mut pairs = PairStream::exhaustive(sessions, rng::derive_seed(seed, "fine_tune"), train_config.max_ctx_turns);
    let mut dropout_rng = rng::stream(seed, "fine_tune/dropout");
    let mut logs = Vec::with_capacity(train_config.max_steps);

    for step in 1..=train_config.max_steps {
        let batch = pairs
            .next_batch(train_config.batch_size)?
            .into_iter()
            .map(|p| {
                let c = assemble_encoder_input(&p.context, vocab, config.max_enc_len)?;
                let r = response_input(&p.response, vocab, config.max_enc_len)?;
                Ok((c, r))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = contrastive_forward_backward(&bi, &batch, train_config.temperature, Some(&mut dropout_rng))?;
        let lr = lr_at(step, train_config);
        adamw_step(&mut bi, &grads, &mut optim, train_config, lr)?;
        logs.push(StepLog { step, lr, l_enc: None, l_dec: None, l_total: None, l_ft: Some(loss) });
    }

    Ok(FineTuned { bi, vocab: vocab.clone(), train_config: train_config.clone(), optim, logs, warnings })
}
