use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, log_sum_exp, Mat};

/// Per-step losses. `l_total` is always `l_enc + l_dec`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_enc: f64,
    pub l_dec: f64,
    pub l_total: f64,
    /// Contrastive loss, fine-tuning only.
    pub l_ft: Option<f64>,
    pub enc_masked: usize,
    pub dec_masked: usize,
    pub warnings: Vec<String>,
}

/// Mean over rows of `-log softmax(row)[label]`.
///
/// Returns the loss and whether the input was empty (loss 0).
pub fn cross_entropy_mlm(logits: &Mat, labels: &[u32]) -> Result<(f64, bool)> {
    if labels.len() != logits.rows {
        return Err(Error::Shape(format!("{} labels for {} logit rows", labels.len(), logits.rows)));
    }
    if labels.is_empty() {
        return Ok((0.0, true));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let label = label as usize;
        if label >= row.len() {
            return Err(Error::Invalid(format!("label {label} outside {} classes", row.len())));
        }
        total += log_sum_exp(row) - row[label];
    }
    Ok((total / labels.len() as f64, false))
}

/// In-batch-negative InfoNCE over dot-product scores `s_ij = ctx_i · resp_j / τ`.
///
/// Returns `(loss, d_loss/d_ctx, d_loss/d_resp)`.
pub fn contrastive_loss(ctx: &Mat, resp: &Mat, temperature: f64) -> Result<(f64, Mat, Mat)> {
    if ctx.shape() != resp.shape() {
        return Err(Error::Shape(format!("context {:?} vs response {:?}", ctx.shape(), resp.shape())));
    }
    let b = ctx.rows;
    if b == 0 {
        return Err(Error::Invalid("contrastive loss needs a non-empty batch".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let inv_t = 1.0 / temperature;
    let mut scores = ctx.matmul_t(resp);
    scores.scale(inv_t);

    let mut loss = 0.0;
    let mut ds = Mat::zeros(b, b);
    for i in 0..b {
        let row = scores.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[i];
        for (j, d) in ds.row_mut(i).iter_mut().enumerate() {
            *d = (row[j] - lse).exp() / b as f64;
        }
        ds.data[i * b + i] -= 1.0 / b as f64;
    }
    ds.scale(inv_t);

    let d_ctx = ds.matmul(resp);
    let mut d_resp = Mat::zeros(b, ctx.cols);
    ds.t_matmul_into(ctx, &mut d_resp);
    Ok((loss / b as f64, d_ctx, d_resp))
}

/// Plain dot-product score.
pub fn score_pair(c: &[f64], r: &[f64]) -> f64 {
    dot(c, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn uniform_logits_give_log_v() {
        let v = 37;
        let logits = Mat::filled(4, v, 0.3);
        let (loss, empty) = cross_entropy_mlm(&logits, &[0, 5, 9, 36]).unwrap();
        assert!(!empty);
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_zero() {
        let mut logits = Mat::zeros(1, 10);
        logits.data[3] = 800.0;
        assert!(cross_entropy_mlm(&logits, &[3]).unwrap().0 < 1e-300);
    }

    #[test]
    fn empty_labels_warn() {
        assert_eq!(cross_entropy_mlm(&Mat::zeros(0, 5), &[]).unwrap(), (0.0, true));
        assert!(cross_entropy_mlm(&Mat::zeros(2, 5), &[1]).is_err());
    }

    #[test]
    fn matches_unstabilized_formula() {
        let logits = Mat::uniform(3, 7, -3.0, 3.0, &mut rng::stream(8, "ce"));
        let labels = [2u32, 6, 0];
        let naive: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = logits.row(r);
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                -(row[l as usize].exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        assert!((cross_entropy_mlm(&logits, &labels).unwrap().0 - naive).abs() < 1e-10);
    }

    #[test]
    fn contrastive_special_cases() {
        let mut r = rng::stream(1, "cl");
        let one = Mat::uniform(1, 4, -1.0, 1.0, &mut r);
        let (l, dc, dr) = contrastive_loss(&one, &one.clone(), 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(dc.data.iter().chain(&dr.data).all(|&x| x == 0.0));

        let v = Mat::uniform(1, 4, -1.0, 1.0, &mut r);
        let same = Mat::from_vec(2, 4, [v.data.clone(), v.data.clone()].concat());
        let (l, _, _) = contrastive_loss(&same, &same, 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        assert!(contrastive_loss(&Mat::zeros(0, 4), &Mat::zeros(0, 4), 1.0).is_err());
        assert!(contrastive_loss(&one, &Mat::zeros(2, 4), 1.0).is_err());
    }

    /// Direct softmax-fraction evaluation, independent of the log-sum-exp path.
    fn brute_force(ctx: &Mat, resp: &Mat, t: f64) -> f64 {
        let b = ctx.rows;
        let mut total = 0.0;
        for i in 0..b {
            let num = (dot(ctx.row(i), resp.row(i)) / t).exp();
            let den: f64 = (0..b).map(|j| (dot(ctx.row(i), resp.row(j)) / t).exp()).sum();
            total += -(num / den).ln();
        }
        total / b as f64
    }

    #[test]
    fn contrastive_matches_brute_force_and_finite_differences() {
        let mut r = rng::stream(2, "cl");
        let ctx = Mat::uniform(4, 5, -1.0, 1.0, &mut r);
        let resp = Mat::uniform(4, 5, -1.0, 1.0, &mut r);
        let t = 0.7;
        let (l, dc, dr) = contrastive_loss(&ctx, &resp, t).unwrap();
        assert!((l - brute_force(&ctx, &resp, t)).abs() < 1e-10);

        let h = 1e-6;
        for idx in 0..ctx.len() {
            let (mut cp, mut cm) = (ctx.clone(), ctx.clone());
            cp.data[idx] += h;
            cm.data[idx] -= h;
            let fd = (brute_force(&cp, &resp, t) - brute_force(&cm, &resp, t)) / (2.0 * h);
            assert!((fd - dc.data[idx]).abs() <= 1e-5 * fd.abs().max(1e-3), "ctx {idx}");

            let (mut rp, mut rm) = (resp.clone(), resp.clone());
            rp.data[idx] += h;
            rm.data[idx] -= h;
            let fd = (brute_force(&ctx, &rp, t) - brute_force(&ctx, &rm, t)) / (2.0 * h);
            assert!((fd - dr.data[idx]).abs() <= 1e-5 * fd.abs().max(1e-3), "resp {idx}");
        }
    }

    #[test]
    fn contrastive_permutation_invariant() {
        let mut r = rng::stream(3, "cl");
        let ctx = Mat::uniform(5, 3, -1.0, 1.0, &mut r);
        let resp = Mat::uniform(5, 3, -1.0, 1.0, &mut r);
        let perm = [3, 0, 4, 1, 2];
        let pick = |m: &Mat| Mat::from_vec(5, 3, perm.iter().flat_map(|&i| m.row(i).to_vec()).collect());
        let a = contrastive_loss(&ctx, &resp, 1.0).unwrap().0;
        let b = contrastive_loss(&pick(&ctx), &pick(&resp), 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn contrastive_decreases_with_positive_score() {
        // Only s_00 depends on `a`.
        let ctx = Mat::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let resp = |a: f64| Mat::from_vec(2, 3, vec![a, 0.0, 0.5, 0.3, 1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for a in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let l = contrastive_loss(&ctx, &resp(a), 1.0).unwrap().0;
            assert!(l < prev);
            prev = l;
        }
    }
}
