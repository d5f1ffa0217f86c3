use rand::seq::SliceRandom;

use crate::corpus::{
    all_pairs, assemble_decoder_input, assemble_encoder_input, build_vocab, sample_pairs, ContextResponsePair,
    DialogueSession, Vocabulary,
};
use crate::error::{Error, Result};
use crate::masking::{mask_tokens_with, MaskingOutcome};
use crate::model::{forward_backward_with, init_params, FbOptions, ModelConfig, ModelParams};
use crate::rng;

use super::{adamw_step, lr_at, OptimState, StepLog, TrainConfig};

/// Endless stream of context/response pairs.
///
/// Each pass over the corpus draws fresh pairs and a fresh order from the
/// sub-stream `pairs/<pass>`, so a run that exhausts the corpus reshuffles
/// deterministically.
pub struct PairStream<'a> {
    sessions: &'a [DialogueSession],
    seed: u64,
    /// `None` takes every split point of every session.
    per_session: Option<usize>,
    max_ctx_turns: usize,
    pass: usize,
    queue: Vec<ContextResponsePair>,
    pos: usize,
}

impl<'a> PairStream<'a> {
    pub fn sampled(sessions: &'a [DialogueSession], seed: u64, per_session: usize, max_ctx_turns: usize) -> Self {
        Self { sessions, seed, per_session: Some(per_session), max_ctx_turns, pass: 0, queue: Vec::new(), pos: 0 }
    }

    pub fn exhaustive(sessions: &'a [DialogueSession], seed: u64, max_ctx_turns: usize) -> Self {
        Self { sessions, seed, per_session: None, max_ctx_turns, pass: 0, queue: Vec::new(), pos: 0 }
    }

    fn refill(&mut self) -> Result<()> {
        self.pass += 1;
        let mut rng = rng::stream(self.seed, &format!("pairs/{}", self.pass));
        let mut queue = Vec::new();
        for (id, s) in self.sessions.iter().enumerate() {
            match self.per_session {
                Some(n) => queue.extend(sample_pairs(s, id, &mut rng, n, self.max_ctx_turns)?),
                None => queue.extend(all_pairs(s, id, self.max_ctx_turns)),
            }
        }
        if queue.is_empty() {
            return Err(Error::Empty("corpus yields no context/response pairs".into()));
        }
        queue.shuffle(&mut rng);
        self.queue = queue;
        self.pos = 0;
        Ok(())
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Vec<ContextResponsePair>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.queue.len() {
                self.refill()?;
            }
            out.push(self.queue[self.pos].clone());
            self.pos += 1;
        }
        Ok(out)
    }

    /// Number of completed or in-progress passes.
    pub fn passes(&self) -> usize {
        self.pass
    }
}

/// Result of post-training: the full encoder-decoder plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PostTrained {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub optim: OptimState,
    pub logs: Vec<StepLog>,
}

/// Joint encoder/decoder MLM post-training.
///
/// `model_config.vocab_size` is an upper bound; the stored config carries the
/// size of the vocabulary actually built from `sessions`. With
/// `max_steps = 0` this returns the seeded initialization.
pub fn post_train(sessions: &[DialogueSession], model_config: &ModelConfig, train_config: &TrainConfig) -> Result<PostTrained> {
    train_config.validate()?;
    if sessions.is_empty() {
        return Err(Error::Empty("post-training corpus is empty".into()));
    }
    let vocab = build_vocab(sessions, train_config.min_freq, model_config.vocab_size)?;
    let config = ModelConfig { vocab_size: vocab.len(), ..model_config.clone() };
    let seed = train_config.seed;
    let mut params = init_params(&config, seed)?;
    let mut optim = OptimState::new(&params);

    let mut pairs = PairStream::sampled(sessions, seed, train_config.pairs_per_session, train_config.max_ctx_turns);
    let mut mask_rng = rng::stream(seed, "masking");
    let mut dropout_rng = rng::stream(seed, "dropout");
    let mut logs = Vec::with_capacity(train_config.max_steps);

    for step in 1..=train_config.max_steps {
        let batch = pairs.next_batch(train_config.batch_size)?;
        let mut enc = Vec::with_capacity(batch.len());
        let mut dec = Vec::with_capacity(batch.len());
        for pair in &batch {
            let c = assemble_encoder_input(&pair.context, &vocab, config.max_enc_len)?;
            enc.push(mask_tokens_with(&c, train_config.enc_mask_rate, train_config.mask_strategy, config.vocab_size, &mut mask_rng)?);
            let r = assemble_decoder_input(&pair.response, &vocab, config.max_dec_len)?;
            dec.push(if config.has_decoder() {
                mask_tokens_with(&r, train_config.dec_mask_rate, train_config.mask_strategy, config.vocab_size, &mut mask_rng)?
            } else {
                MaskingOutcome::unmasked(r)
            });
        }
        let (report, grads) =
            forward_backward_with(&params, &enc, &dec, &config, FbOptions::default(), Some(&mut dropout_rng))?;
        let lr = lr_at(step, train_config);
        adamw_step(&mut params, &grads, &mut optim, train_config, lr)?;
        logs.push(StepLog {
            step,
            lr,
            l_enc: Some(report.l_enc),
            l_dec: Some(report.l_dec),
            l_total: Some(report.l_total),
            l_ft: None,
        });
    }

    Ok(PostTrained { model_config: config, train_config: train_config.clone(), vocab, params, optim, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_synthetic_corpus;

    fn small_model() -> ModelConfig {
        ModelConfig {
            vocab_size: 200,
            hidden_dim: 16,
            n_heads: 2,
            ffn_dim: 32,
            n_enc_layers: 2,
            n_dec_layers: 1,
            max_enc_len: 32,
            max_dec_len: 12,
            dropout_rate: 0.0,
            layernorm_eps: 1e-5,
        }
    }

    #[test]
    fn pair_stream_reshuffles_deterministically() {
        let sessions = gen_synthetic_corpus(1, 3, 40, 3).unwrap();
        let mut a = PairStream::sampled(&sessions, 5, 2, 4);
        let mut b = PairStream::sampled(&sessions, 5, 2, 4);
        let xa = a.next_batch(15).unwrap();
        assert_eq!(xa, b.next_batch(15).unwrap());
        assert!(a.passes() >= 3);

        let mut all = PairStream::exhaustive(&sessions, 5, 4);
        let mut first = all.next_batch(6).unwrap();
        first.sort_by_key(|p| (p.session_id, p.split_index));
        let keys: Vec<_> = first.iter().map(|p| (p.session_id, p.split_index)).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (1, 1), (1, 2), (2, 1), (2, 2)]);
    }

    #[test]
    fn loss_identity_and_reproducibility() {
        let sessions = gen_synthetic_corpus(3, 20, 60, 4).unwrap();
        let tc = TrainConfig { max_steps: 5, batch_size: 4, base_lr: 1e-3, ..Default::default() };
        let a = post_train(&sessions, &small_model(), &tc).unwrap();
        let b = post_train(&sessions, &small_model(), &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.logs.len(), 5);
        for l in &a.logs {
            assert_eq!(l.l_total.unwrap(), l.l_enc.unwrap() + l.l_dec.unwrap());
        }
        assert_eq!(a.model_config.vocab_size, a.vocab.len());
        assert_eq!(a.optim.step, 5);
    }

    #[test]
    fn zero_steps_is_initialization() {
        let sessions = gen_synthetic_corpus(3, 5, 60, 4).unwrap();
        let tc = TrainConfig { max_steps: 0, ..Default::default() };
        let p = post_train(&sessions, &small_model(), &tc).unwrap();
        assert_eq!(p.params, init_params(&p.model_config, tc.seed).unwrap());
        assert!(p.logs.is_empty());
    }

    #[test]
    fn no_decoder_baseline_allocates_nothing() {
        let sessions = gen_synthetic_corpus(3, 5, 60, 4).unwrap();
        let tc = TrainConfig { max_steps: 2, batch_size: 2, dec_mask_rate: 0.0, enc_mask_rate: 0.15, ..Default::default() };
        let cfg = ModelConfig { n_dec_layers: 0, ..small_model() };
        let p = post_train(&sessions, &cfg, &tc).unwrap();
        assert!(p.params.decoder.is_none());
        assert!(p.params.named().iter().all(|(n, _)| !n.starts_with("dec.")));
        assert!(p.logs.iter().all(|l| l.l_dec == Some(0.0)));
    }

    #[test]
    fn rejects_empty_corpus() {
        assert!(post_train(&[], &small_model(), &TrainConfig::default()).is_err());
    }
}
