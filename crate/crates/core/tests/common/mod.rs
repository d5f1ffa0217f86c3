//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use dialmae::corpus::{TokenSeq, CLS_ID, FIRST_REGULAR_ID, PAD_ID, SEG_ID};
use dialmae::masking::{mask_tokens, MaskingOutcome};
use dialmae::model::{init_params, ModelConfig, ModelParams};
use dialmae::rng;
use dialmae::training::Parameterized;
use rand::Rng as _;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor so entries whose true gradient is ~0 are judged on absolute error.
pub const FLOOR: f64 = 1e-5;
pub const SAMPLES_PER_TENSOR: usize = 6;

pub fn audit_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        hidden_dim: 16,
        n_heads: 2,
        ffn_dim: 32,
        n_enc_layers: 2,
        n_dec_layers: 1,
        max_enc_len: 14,
        max_dec_len: 8,
        dropout_rate: 0.0,
        layernorm_eps: 1e-5,
    }
}

pub fn random_seq(r: &mut rng::Rng, max_len: usize, active: usize, vocab: u32) -> TokenSeq {
    let mut ids = vec![CLS_ID];
    while ids.len() < active {
        ids.push(if r.random_bool(0.15) { SEG_ID } else { r.random_range(FIRST_REGULAR_ID..vocab) });
    }
    ids.resize(max_len, PAD_ID);
    TokenSeq { ids, attention_len: active }
}

pub fn mlm_batch(cfg: &ModelConfig) -> (Vec<MaskingOutcome>, Vec<MaskingOutcome>) {
    let mut r = rng::stream(5, "audit/batch");
    let v = cfg.vocab_size as u32;
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    for (ea, da) in [(14, 8), (9, 6), (11, 5)] {
        let e = random_seq(&mut r, cfg.max_enc_len, ea, v);
        let d = random_seq(&mut r, cfg.max_dec_len, da, v);
        enc.push(mask_tokens(&e, 0.30, &mut r).unwrap());
        dec.push(mask_tokens(&d, 0.75, &mut r).unwrap());
    }
    (enc, dec)
}

pub struct Worst {
    pub rel: f64,
    pub at: String,
    pub checked: usize,
}

/// Checks sampled entries of every tensor of `params` against `loss`.
pub fn audit<P: Parameterized + Clone>(params: &P, grads: &P, loss: impl Fn(&P) -> f64, seed: u64) -> Worst {
    let mut r = rng::stream(seed, "audit/entries");
    let mut worst = Worst { rel: 0.0, at: String::new(), checked: 0 };
    let names: Vec<(String, usize)> = params.named().into_iter().map(|(n, t)| (n, t.len())).collect();
    let analytic: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, t)| t.data.clone()).collect();
    let mut probe = params.clone();
    for (ti, (name, len)) in names.iter().enumerate() {
        let picks: Vec<usize> = if *len <= SAMPLES_PER_TENSOR {
            (0..*len).collect()
        } else {
            (0..SAMPLES_PER_TENSOR).map(|_| r.random_range(0..*len)).collect()
        };
        for idx in picks {
            let orig = probe.named()[ti].1.data[idx];
            probe.named_mut()[ti].1.data[idx] = orig + H;
            let up = loss(&probe);
            probe.named_mut()[ti].1.data[idx] = orig - H;
            let down = loss(&probe);
            probe.named_mut()[ti].1.data[idx] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[ti][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst.checked += 1;
            if rel > worst.rel {
                worst = Worst { rel, at: format!("{name}[{idx}] analytic {a:e} numeric {numeric:e}"), ..worst };
            }
        }
    }
    worst
}

pub fn perturbed_params(cfg: &ModelConfig) -> ModelParams {
    // Non-trivial layernorm affine terms and biases so every path is exercised.
    let mut p = init_params(cfg, 3).unwrap();
    let mut r = rng::stream(3, "audit/perturb");
    for (_, t) in p.named_mut() {
        for x in &mut t.data {
            *x += r.random_range(-0.05..0.05);
        }
    }
    p
}


/// Untied bi-encoder with numerically distinct towers and a fixed batch of four pairs.
pub fn ft_fixture(cfg: &ModelConfig) -> (dialmae::training::BiEncoder, Vec<(TokenSeq, TokenSeq)>) {
    let post = perturbed_params(cfg);
    let mut bi = dialmae::training::BiEncoder::from_encoder(cfg, &post.encoder, false);
    let mut r = rng::stream(8, "audit/towers");
    for x in bi.response.as_mut().unwrap().tok_emb.data.iter_mut() {
        *x += r.random_range(-0.05..0.05);
    }
    let mut br = rng::stream(9, "audit/pairs");
    let v = cfg.vocab_size as u32;
    let batch = [(12, 5), (7, 4), (14, 6), (9, 3)]
        .into_iter()
        .map(|(c, rl)| (random_seq(&mut br, cfg.max_enc_len, c, v), random_seq(&mut br, cfg.max_enc_len, rl, v)))
        .collect();
    (bi, batch)
}

pub fn audit_joint_loss() -> Worst {
    let cfg = audit_config();
    let params = perturbed_params(&cfg);
    let (enc, dec) = mlm_batch(&cfg);
    let (report, grads) = dialmae::model::forward_backward(&params, &enc, &dec, &cfg).unwrap();
    assert!(report.enc_masked > 0 && report.dec_masked > 0);
    let loss = |p: &ModelParams| dialmae::model::forward_backward(p, &enc, &dec, &cfg).unwrap().0.l_total;
    audit(&params, &grads, loss, 1)
}

pub fn audit_contrastive_loss() -> Worst {
    use dialmae::training::{contrastive_forward_backward, BiEncoder};
    let cfg = audit_config();
    let (bi, batch) = ft_fixture(&cfg);
    let (_, grads) = contrastive_forward_backward(&bi, &batch, 1.0, None).unwrap();
    let loss = |b: &BiEncoder| contrastive_forward_backward(b, &batch, 1.0, None).unwrap().0;
    audit(&bi, &grads, loss, 2)
}
