//! Forward and reverse-mode passes of the pre-layernorm transformer block.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{dot, softmax_in_place, Mat};

use super::params::LayerParams;

/// Inverted dropout applied to the two residual branches while training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Mat {
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..rows * cols)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        Mat::from_vec(rows, cols, data)
    }
}

fn apply_mask(x: &mut Mat, mask: &Option<Mat>) {
    if let Some(m) = mask {
        for (a, &b) in x.data.iter_mut().zip(&m.data) {
            *a *= b;
        }
    }
}

pub struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat, eps: f64) -> (Mat, LnCache) {
    let d = x.cols;
    let mut xhat = Mat::zeros(x.rows, d);
    let mut out = Mat::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let xh = xhat.row_mut(i);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * inv;
        }
        let xh = xhat.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gamma.data[j] * xh[j] + beta.data[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward(dy: &Mat, cache: &LnCache, gamma: &Mat, dgamma: &mut Mat, dbeta: &mut Mat) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dy.rows {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgamma.data[j] += g[j] * xh[j];
            dbeta.data[j] += g[j];
            dxhat[j] = g[j] * gamma.data[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        let inv = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = x.matmul(w);
    y.add_row_vec(b);
    y
}

/// Gradient of `y = x·w + b`; returns `dx`.
fn linear_backward(x: &Mat, w: &Mat, dy: &Mat, dw: &mut Mat, db: &mut Mat) -> Mat {
    x.t_matmul_into(dy, dw);
    dy.col_sums_into(db);
    dy.matmul_t(w)
}

pub struct BlockCache {
    ln1: LnCache,
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per-head attention weights, `rows × attn_len`.
    probs: Vec<Mat>,
    ctx: Mat,
    drop1: Option<Mat>,
    ln2: LnCache,
    b: Mat,
    pre: Mat,
    act: Mat,
    drop2: Option<Mat>,
}

impl BlockCache {
    pub fn attention(&self) -> &[Mat] {
        &self.probs
    }
}

/// One block: `x + Attn(LN1(x))`, then `+ FFN(LN2(·))`. Keys at positions
/// `>= attn_len` are padding and receive zero attention weight.
pub fn block_forward(
    p: &LayerParams,
    x: &Mat,
    n_heads: usize,
    attn_len: usize,
    eps: f64,
    mut dropout: Option<&mut Dropout>,
) -> (Mat, BlockCache) {
    let (n, d) = x.shape();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = layer_norm(x, &p.ln1_gamma, &p.ln1_beta, eps);
    let q = linear(&a, &p.wq, &p.bq);
    let k = linear(&a, &p.wk, &p.bk);
    let v = linear(&a, &p.wv, &p.bv);

    let mut ctx = Mat::zeros(n, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut pm = Mat::zeros(n, attn_len);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = pm.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(row);
            let out = &mut ctx.row_mut(i)[cols.clone()];
            for (j, &w) in pm.row(i).iter().enumerate() {
                for (o, &vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += w * vv;
                }
            }
        }
        probs.push(pm);
    }

    let mut attn_out = linear(&ctx, &p.wo, &p.bo);
    let drop1 = dropout.as_deref_mut().map(|dr| dr.mask(n, d));
    apply_mask(&mut attn_out, &drop1);
    let mut x1 = x.clone();
    x1.add_assign(&attn_out);

    let (b, ln2) = layer_norm(&x1, &p.ln2_gamma, &p.ln2_beta, eps);
    let pre = linear(&b, &p.w1, &p.b1);
    let mut act = pre.clone();
    act.data.iter_mut().for_each(|z| *z = gelu(*z));
    let mut ffn_out = linear(&act, &p.w2, &p.b2);
    let drop2 = dropout.map(|dr| dr.mask(n, d));
    apply_mask(&mut ffn_out, &drop2);
    let mut y = x1;
    y.add_assign(&ffn_out);

    (y, BlockCache { ln1, a, q, k, v, probs, ctx, drop1, ln2, b, pre, act, drop2 })
}

/// Accumulates parameter gradients into `g` and returns the input gradient.
pub fn block_backward(p: &LayerParams, c: &BlockCache, dy: &Mat, g: &mut LayerParams) -> Mat {
    let (n, d) = dy.shape();
    let n_heads = c.probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward branch
    let mut d_f = dy.clone();
    apply_mask(&mut d_f, &c.drop2);
    let mut d_pre = linear_backward(&c.act, &p.w2, &d_f, &mut g.w2, &mut g.b2);
    for (dz, &z) in d_pre.data.iter_mut().zip(&c.pre.data) {
        *dz *= gelu_grad(z);
    }
    let d_b = linear_backward(&c.b, &p.w1, &d_pre, &mut g.w1, &mut g.b1);
    let mut d_x1 = layer_norm_backward(&d_b, &c.ln2, &p.ln2_gamma, &mut g.ln2_gamma, &mut g.ln2_beta);
    d_x1.add_assign(dy);

    // attention branch
    let mut d_o = d_x1.clone();
    apply_mask(&mut d_o, &c.drop1);
    let d_ctx = linear_backward(&c.ctx, &p.wo, &d_o, &mut g.wo, &mut g.bo);

    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    for (h, pm) in c.probs.iter().enumerate() {
        let cols = h * dh..(h + 1) * dh;
        let attn_len = pm.cols;
        let mut ds = vec![0.0; attn_len];
        for i in 0..n {
            let dci = &d_ctx.row(i)[cols.clone()];
            let pi = pm.row(i);
            for j in 0..attn_len {
                ds[j] = dot(dci, &c.v.row(j)[cols.clone()]);
                let dvj = &mut dv.row_mut(j)[cols.clone()];
                for (o, &gc) in dvj.iter_mut().zip(dci) {
                    *o += pi[j] * gc;
                }
            }
            let weighted = dot(pi, &ds);
            for j in 0..attn_len {
                ds[j] = pi[j] * (ds[j] - weighted) * scale;
            }
            let qi: Vec<f64> = c.q.row(i)[cols.clone()].to_vec();
            {
                let dqi = &mut dq.row_mut(i)[cols.clone()];
                for (j, &dsj) in ds.iter().enumerate().take(attn_len) {
                    for (o, &kk) in dqi.iter_mut().zip(&c.k.row(j)[cols.clone()]) {
                        *o += dsj * kk;
                    }
                }
            }
            for (j, &dsj) in ds.iter().enumerate().take(attn_len) {
                let dkj = &mut dk.row_mut(j)[cols.clone()];
                for (o, &qq) in dkj.iter_mut().zip(&qi) {
                    *o += dsj * qq;
                }
            }
        }
    }

    let mut da = linear_backward(&c.a, &p.wq, &dq, &mut g.wq, &mut g.bq);
    da.add_assign(&linear_backward(&c.a, &p.wk, &dk, &mut g.wk, &mut g.bk));
    da.add_assign(&linear_backward(&c.a, &p.wv, &dv, &mut g.wv, &mut g.bv));
    let mut dx = layer_norm_backward(&da, &c.ln1, &p.ln1_gamma, &mut g.ln1_gamma, &mut g.ln1_beta);
    dx.add_assign(&d_x1);
    dx
}

pub struct StackCache {
    pub blocks: Vec<BlockCache>,
    final_ln: LnCache,
}

/// Runs every block then the stack's final layernorm.
#[allow(clippy::too_many_arguments)]
pub fn stack_forward(
    layers: &[LayerParams],
    final_gamma: &Mat,
    final_beta: &Mat,
    x0: Mat,
    n_heads: usize,
    attn_len: usize,
    eps: f64,
    mut dropout: Option<&mut Dropout>,
) -> (Mat, StackCache) {
    let mut x = x0;
    let mut blocks = Vec::with_capacity(layers.len());
    for p in layers {
        let (y, c) = block_forward(p, &x, n_heads, attn_len, eps, dropout.as_deref_mut());
        blocks.push(c);
        x = y;
    }
    let (out, final_ln) = layer_norm(&x, final_gamma, final_beta, eps);
    (out, StackCache { blocks, final_ln })
}

pub fn stack_backward(
    layers: &[LayerParams],
    final_gamma: &Mat,
    cache: &StackCache,
    dout: &Mat,
    g_layers: &mut [LayerParams],
    g_gamma: &mut Mat,
    g_beta: &mut Mat,
) -> Mat {
    let mut dx = layer_norm_backward(dout, &cache.final_ln, final_gamma, g_gamma, g_beta);
    for ((p, c), g) in layers.iter().zip(&cache.blocks).zip(g_layers.iter_mut()).rev() {
        dx = block_backward(p, c, &dx, g);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn finite_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.7, 0.0, 0.3, 2.5] {
            assert!((gelu_grad(x) - finite_diff(gelu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut r = rng::stream(2, "ln");
        let x = Mat::uniform(3, 5, -1.0, 1.0, &mut r);
        let gamma = Mat::uniform(1, 5, 0.5, 1.5, &mut r);
        let beta = Mat::uniform(1, 5, -0.1, 0.1, &mut r);
        let w = Mat::uniform(3, 5, -1.0, 1.0, &mut r);
        let loss = |x: &Mat| dot(&layer_norm(x, &gamma, &beta, 1e-5).0.data, &w.data);

        let (_, cache) = layer_norm(&x, &gamma, &beta, 1e-5);
        let (mut dg, mut db) = (gamma.zeros_like(), beta.zeros_like());
        let dx = layer_norm_backward(&w, &cache, &gamma, &mut dg, &mut db);
        for idx in 0..x.len() {
            let f = |v: f64| {
                let mut xp = x.clone();
                xp.data[idx] = v;
                loss(&xp)
            };
            assert!((dx.data[idx] - finite_diff(f, x.data[idx])).abs() < 1e-7);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_skip_pads() {
        let mut r = rng::stream(4, "attn");
        let p = LayerParams::init(8, 16, &mut r);
        let x = Mat::uniform(6, 8, -1.0, 1.0, &mut r);
        let (_, cache) = block_forward(&p, &x, 2, 4, 1e-5, None);
        for pm in cache.attention() {
            assert_eq!(pm.cols, 4);
            for i in 0..pm.rows {
                assert!((pm.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
