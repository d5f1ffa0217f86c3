//! Exact-count random masking for the encoder and decoder inputs.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocabulary, FIRST_REGULAR_ID, MASK_ID};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingOutcome {
    pub masked_ids: TokenSeq,
    /// Strictly increasing positions that were selected for reconstruction.
    pub masked_positions: Vec<usize>,
    /// Original ids at `masked_positions`.
    pub original_ids: Vec<u32>,
}

impl MaskingOutcome {
    /// An outcome with nothing masked.
    pub fn unmasked(seq: TokenSeq) -> Self {
        Self { masked_ids: seq, masked_positions: Vec::new(), original_ids: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Every selected position becomes `[MASK]`.
    #[default]
    Replace,
    /// BERT-style: 80% `[MASK]`, 10% random regular token, 10% unchanged.
    Bert801010,
}

/// `round(rate * n)` with ties rounded up.
pub fn mask_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + 0.5).floor() as usize
}

fn maskable(seq: &TokenSeq) -> Vec<usize> {
    seq.active()
        .iter()
        .enumerate()
        .filter(|(_, &id)| !Vocabulary::is_special(id))
        .map(|(i, _)| i)
        .collect()
}

pub fn mask_tokens(seq: &TokenSeq, rate: f64, rng: &mut Rng) -> Result<MaskingOutcome> {
    mask_tokens_with(seq, rate, MaskStrategy::Replace, 0, rng)
}

/// Masks exactly `round(rate * n_maskable)` non-special, non-pad positions
/// chosen uniformly without replacement.
///
/// `vocab_size` is only consulted by [`MaskStrategy::Bert801010`].
pub fn mask_tokens_with(
    seq: &TokenSeq,
    rate: f64,
    strategy: MaskStrategy,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<MaskingOutcome> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("mask rate must lie in [0, 1], got {rate}")));
    }
    let candidates = maskable(seq);
    let k = mask_count(rate, candidates.len()).min(candidates.len());
    let mut masked_positions: Vec<usize> = index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    masked_positions.sort_unstable();

    let mut masked_ids = seq.clone();
    let original_ids = masked_positions.iter().map(|&p| seq.ids[p]).collect();
    for &p in &masked_positions {
        masked_ids.ids[p] = match strategy {
            MaskStrategy::Replace => MASK_ID,
            MaskStrategy::Bert801010 => {
                let roll: f64 = rng.random();
                if roll < 0.8 || vocab_size as u32 <= FIRST_REGULAR_ID {
                    MASK_ID
                } else if roll < 0.9 {
                    rng.random_range(FIRST_REGULAR_ID..vocab_size as u32)
                } else {
                    seq.ids[p]
                }
            }
        };
    }
    Ok(MaskingOutcome { masked_ids, masked_positions, original_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CLS_ID, PAD_ID, SEG_ID};
    use crate::rng;
    use proptest::prelude::*;

    fn seq_of(ids: Vec<u32>, attention_len: usize) -> TokenSeq {
        TokenSeq { ids, attention_len }
    }

    fn ten_tokens() -> TokenSeq {
        let mut ids = vec![CLS_ID];
        ids.extend(10..15);
        ids.push(SEG_ID);
        ids.extend(20..25);
        ids.push(SEG_ID);
        let n = ids.len();
        ids.extend([PAD_ID; 3]);
        seq_of(ids, n)
    }

    #[test]
    fn exact_count() {
        let out = mask_tokens(&ten_tokens(), 0.30, &mut rng::stream(1, "m")).unwrap();
        assert_eq!(out.masked_positions.len(), 3);
        assert_eq!(mask_count(0.15, 10), 2);
        assert_eq!(mask_count(0.75, 10), 8);
        assert_eq!(mask_count(0.45, 10), 5);
    }

    #[test]
    fn rate_zero_is_identity() {
        let s = ten_tokens();
        let out = mask_tokens(&s, 0.0, &mut rng::stream(1, "m")).unwrap();
        assert!(out.masked_positions.is_empty());
        assert_eq!(out.masked_ids, s);
    }

    #[test]
    fn rate_one_saturates() {
        let s = ten_tokens();
        let out = mask_tokens(&s, 1.0, &mut rng::stream(1, "m")).unwrap();
        let expected: Vec<usize> = (0..s.attention_len).filter(|&i| s.ids[i] >= FIRST_REGULAR_ID).collect();
        assert_eq!(out.masked_positions, expected);
        assert!(out.masked_positions.iter().all(|&p| out.masked_ids.ids[p] == MASK_ID));
    }

    #[test]
    fn nothing_maskable() {
        let s = seq_of(vec![CLS_ID, SEG_ID, PAD_ID], 2);
        let out = mask_tokens(&s, 0.5, &mut rng::stream(1, "m")).unwrap();
        assert!(out.masked_positions.is_empty());
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(mask_tokens(&ten_tokens(), 1.5, &mut rng::stream(1, "m")).is_err());
    }

    #[test]
    fn bert_strategy_keeps_labels() {
        let s = ten_tokens();
        let out = mask_tokens_with(&s, 1.0, MaskStrategy::Bert801010, 40, &mut rng::stream(3, "m")).unwrap();
        assert_eq!(out.masked_positions.len(), 10);
        for (&p, &orig) in out.masked_positions.iter().zip(&out.original_ids) {
            assert_eq!(s.ids[p], orig);
            assert!(out.masked_ids.ids[p] == MASK_ID || out.masked_ids.ids[p] >= FIRST_REGULAR_ID);
        }
    }

    fn arb_seq() -> impl Strategy<Value = TokenSeq> {
        (prop::collection::vec(0u32..30, 1..40), 0usize..5).prop_map(|(mut body, pads)| {
            body.insert(0, CLS_ID);
            for id in body.iter_mut() {
                if *id == PAD_ID {
                    *id = SEG_ID;
                }
            }
            let n = body.len();
            body.extend(std::iter::repeat_n(PAD_ID, pads));
            seq_of(body, n)
        })
    }

    proptest! {
        #[test]
        fn masking_invariants(seq in arb_seq(), rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let a = mask_tokens(&seq, rate, &mut rng::stream(seed, "m")).unwrap();
            let b = mask_tokens(&seq, rate, &mut rng::stream(seed, "m")).unwrap();
            prop_assert_eq!(&a, &b);

            let n_maskable = maskable(&seq).len();
            prop_assert_eq!(a.masked_positions.len(), mask_count(rate, n_maskable));
            prop_assert!(a.masked_positions.windows(2).all(|w| w[0] < w[1]));
            for (&p, &orig) in a.masked_positions.iter().zip(&a.original_ids) {
                prop_assert!(p < seq.attention_len);
                prop_assert!(!Vocabulary::is_special(seq.ids[p]));
                prop_assert_eq!(seq.ids[p], orig);
                prop_assert_eq!(a.masked_ids.ids[p], MASK_ID);
            }
            for i in 0..seq.len() {
                if a.masked_positions.binary_search(&i).is_err() {
                    prop_assert_eq!(a.masked_ids.ids[i], seq.ids[i]);
                }
            }
        }
    }
}
