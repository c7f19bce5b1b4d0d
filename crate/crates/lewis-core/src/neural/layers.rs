//! Transformer building blocks with explicit forward caches and
//! hand-written backward passes.
//!
//! Every `forward` returns the activation plus a cache; the matching
//! `backward` consumes the cache, accumulates parameter gradients into
//! the layer's tensors, and returns the gradient w.r.t. the input.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::mat::{matmul, matmul_abt, matmul_atb, Mat};
use super::Tensor;

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,         // [in, out]
    pub b: Option<Tensor>, // [1, out]
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha20Rng) -> Linear {
        Linear {
            w: Tensor::randn(input, output, rng),
            b: Some(Tensor::zeros(1, output)),
        }
    }

    /// Bias-free projection. Used for attention keys, where a bias would
    /// shift every key equally and cancel in the softmax — an exactly
    /// unlearnable parameter.
    pub fn new_no_bias(input: usize, output: usize, rng: &mut ChaCha20Rng) -> Linear {
        Linear {
            w: Tensor::randn(input, output, rng),
            b: None,
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = matmul(x, &self.w.w);
        if let Some(b) = &self.b {
            for i in 0..y.rows {
                for (v, bv) in y.row_mut(i).iter_mut().zip(b.w.row(0)) {
                    *v += bv;
                }
            }
        }
        y
    }

    /// Accumulates dw/db and returns dx. `x` is the forward input.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        self.w.g.add_assign(&matmul_atb(x, dy));
        if let Some(b) = &mut self.b {
            for i in 0..dy.rows {
                for (g, d) in b.g.row_mut(0).iter_mut().zip(dy.row(i)) {
                    *g += d;
                }
            }
        }
        matmul_abt(dy, &self.w.w)
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(format!("{prefix}.w"), &mut self.w)];
        if let Some(b) = &mut self.b {
            out.push((format!("{prefix}.b"), b));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor, // [1, d]
    pub bias: Tensor, // [1, d]
}

pub struct LayerNormCache {
    x_hat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        let mut gain = Tensor::zeros(1, dim);
        gain.w.data.iter_mut().for_each(|v| *v = 1.0);
        LayerNorm {
            gain,
            bias: Tensor::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols;
        let mut x_hat = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut y = Mat::zeros(x.rows, d);
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(istd);
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                x_hat.set(i, j, xh);
                y.set(i, j, xh * self.gain.w.at(0, j) + self.bias.w.at(0, j));
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Mat {
        let d = dy.cols as f64;
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        for i in 0..dy.rows {
            let xh = cache.x_hat.row(i);
            let dyr = dy.row(i);
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..dy.cols {
                let dxhat = dyr[j] * self.gain.w.at(0, j);
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh[j];
                self.gain.g.row_mut(0)[j] += dyr[j] * xh[j];
                self.bias.g.row_mut(0)[j] += dyr[j];
            }
            let istd = cache.inv_std[i];
            for j in 0..dy.cols {
                let dxhat = dyr[j] * self.gain.w.at(0, j);
                dx.set(
                    i,
                    j,
                    istd * (dxhat - sum_dxhat / d - xh[j] * sum_dxhat_xhat / d),
                );
            }
        }
        dx
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.g"), &mut self.gain),
            (format!("{prefix}.b"), &mut self.bias),
        ]
    }
}

// ---------------------------------------------------------------------------
// Embedding (token + learned positional)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Embedding {
    pub tok: Tensor, // [vocab, d]
    pub pos: Tensor, // [max_len, d]
}

impl Embedding {
    pub fn new(vocab: usize, max_len: usize, dim: usize, rng: &mut ChaCha20Rng) -> Embedding {
        Embedding {
            tok: Tensor::randn(vocab, dim, rng),
            pos: Tensor::randn(max_len, dim, rng),
        }
    }

    pub fn forward(&self, ids: &[u32]) -> Mat {
        let d = self.tok.w.cols;
        let mut out = Mat::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            let row = out.row_mut(i);
            for ((v, t), p) in row
                .iter_mut()
                .zip(self.tok.w.row(id as usize))
                .zip(self.pos.w.row(i))
            {
                *v = t + p;
            }
        }
        out
    }

    pub fn backward(&mut self, ids: &[u32], dy: &Mat) {
        for (i, &id) in ids.iter().enumerate() {
            let dyr = dy.row(i);
            for ((tg, pg), d) in self
                .tok
                .g
                .row_mut(id as usize)
                .iter_mut()
                .zip(self.pos.g.row_mut(i))
                .zip(dyr)
            {
                *tg += d;
                *pg += d;
            }
        }
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.tok"), &mut self.tok),
            (format!("{prefix}.pos"), &mut self.pos),
        ]
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. Returns the (possibly) masked activation and the
/// mask for backward; `None` rng means inference, where this is the
/// identity.
pub fn dropout_forward(x: Mat, ctx: &mut super::TrainCtx<'_>) -> (Mat, Option<Vec<f64>>) {
    match ctx {
        Some((rng, p)) if *p > 0.0 => {
            let keep = 1.0 - *p;
            let mut x = x;
            let mask: Vec<f64> = (0..x.data.len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (v, m) in x.data.iter_mut().zip(&mask) {
                *v *= m;
            }
            (x, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward(dy: Mat, mask: &Option<Vec<f64>>) -> Mat {
    match mask {
        Some(mask) => {
            let mut dy = dy;
            for (v, m) in dy.data.iter_mut().zip(mask) {
                *v *= m;
            }
            dy
        }
        None => dy,
    }
}

// ---------------------------------------------------------------------------
// GELU (tanh approximation — smooth, so finite differences behave)
// ---------------------------------------------------------------------------

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

// ---------------------------------------------------------------------------
// Feed-forward block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct FeedForwardCache {
    x: Mat,
    pre_act: Mat,
    act: Mat,
}

impl FeedForward {
    pub fn new(dim: usize, ff_dim: usize, rng: &mut ChaCha20Rng) -> FeedForward {
        FeedForward {
            lin1: Linear::new(dim, ff_dim, rng),
            lin2: Linear::new(ff_dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, FeedForwardCache) {
        let pre_act = self.lin1.forward(x);
        let mut act = pre_act.clone();
        for v in &mut act.data {
            *v = gelu(*v);
        }
        let y = self.lin2.forward(&act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Mat) -> Mat {
        let mut d_act = self.lin2.backward(&cache.act, dy);
        for (d, &p) in d_act.data.iter_mut().zip(&cache.pre_act.data) {
            *d *= gelu_grad(p);
        }
        self.lin1.backward(&cache.x, &d_act)
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = self.lin1.params_mut(&format!("{prefix}.lin1"));
        out.extend(self.lin2.params_mut(&format!("{prefix}.lin2")));
        out
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

pub struct AttentionCache {
    x_q: Mat,
    x_kv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Post-softmax attention per head, `[n_q, n_kv]` each.
    pub probs: Vec<Mat>,
    concat: Mat,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha20Rng) -> MultiHeadAttention {
        MultiHeadAttention {
            heads,
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new_no_bias(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
        }
    }

    /// `x_q` attends over `x_kv`. Self-attention passes the same matrix
    /// for both; `causal` masks out keys beyond each query position.
    pub fn forward(&self, x_q: &Mat, x_kv: &Mat, causal: bool) -> (Mat, AttentionCache) {
        let d = x_q.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(x_q);
        let k = self.wk.forward(x_kv);
        let v = self.wv.forward(x_kv);
        let mut concat = Mat::zeros(x_q.rows, d);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.col_band(h * dh, dh);
            let kh = k.col_band(h * dh, dh);
            let vh = v.col_band(h * dh, dh);
            let mut scores = matmul_abt(&qh, &kh);
            scores.scale(scale);
            if causal {
                for i in 0..scores.rows {
                    for j in (i + 1)..scores.cols {
                        scores.set(i, j, f64::NEG_INFINITY);
                    }
                }
            }
            scores.softmax_rows();
            let ctx = matmul(&scores, &vh);
            concat.add_col_band(h * dh, &ctx);
            probs.push(scores);
        }
        let out = self.wo.forward(&concat);
        (
            out,
            AttentionCache {
                x_q: x_q.clone(),
                x_kv: x_kv.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    /// Returns (dx_q, dx_kv); for self-attention the caller adds them.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Mat) -> (Mat, Mat) {
        let d = cache.x_q.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d_concat = self.wo.backward(&cache.concat, dy);
        let mut dq = Mat::zeros(cache.q.rows, d);
        let mut dk = Mat::zeros(cache.k.rows, d);
        let mut dv = Mat::zeros(cache.v.rows, d);
        for h in 0..self.heads {
            let d_ctx = d_concat.col_band(h * dh, dh);
            let probs = &cache.probs[h];
            let kh = cache.k.col_band(h * dh, dh);
            let vh = cache.v.col_band(h * dh, dh);
            let qh = cache.q.col_band(h * dh, dh);

            let d_probs = matmul_abt(&d_ctx, &vh);
            let dvh = matmul_atb(probs, &d_ctx);
            // Row-wise softmax backward: ds = p ∘ (dp - <dp, p>).
            let mut d_scores = Mat::zeros(probs.rows, probs.cols);
            for i in 0..probs.rows {
                let p_row = probs.row(i);
                let dp_row = d_probs.row(i);
                let dot: f64 = p_row.iter().zip(dp_row).map(|(p, dp)| p * dp).sum();
                for j in 0..probs.cols {
                    d_scores.set(i, j, p_row[j] * (dp_row[j] - dot) * scale);
                }
            }
            let dqh = matmul(&d_scores, &kh);
            let dkh = matmul_atb(&d_scores, &qh);
            dq.add_col_band(h * dh, &dqh);
            dk.add_col_band(h * dh, &dkh);
            dv.add_col_band(h * dh, &dvh);
        }
        let dx_q = self.wq.backward(&cache.x_q, &dq);
        let mut dx_kv = self.wk.backward(&cache.x_kv, &dk);
        dx_kv.add_assign(&self.wv.backward(&cache.x_kv, &dv));
        (dx_q, dx_kv)
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = self.wq.params_mut(&format!("{prefix}.wq"));
        out.extend(self.wk.params_mut(&format!("{prefix}.wk")));
        out.extend(self.wv.params_mut(&format!("{prefix}.wv")));
        out.extend(self.wo.params_mut(&format!("{prefix}.wo")));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_forward_shape_and_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut lin = Linear::new(3, 2, &mut rng);
        lin.b.as_mut().unwrap().w.data = vec![1.0, -1.0];
        let x = Mat::zeros(2, 3);
        let y = lin.forward(&x);
        assert_eq!((y.rows, y.cols), (2, 2));
        assert_eq!(y.row(0), &[1.0, -1.0]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::new(4);
        let x = Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let (y, _) = ln.forward(&x);
        let mean: f64 = y.row(0).iter().sum::<f64>() / 4.0;
        let var: f64 = y.row(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let attn = MultiHeadAttention::new(8, 2, &mut rng);
        let x = Mat::from_vec(3, 8, (0..24).map(|i| (i as f64) * 0.1 - 1.0).collect());
        let (_, cache) = attn.forward(&x, &x, false);
        for p in &cache.probs {
            for i in 0..p.rows {
                let sum: f64 = p.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn causal_mask_zeroes_future_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let attn = MultiHeadAttention::new(4, 1, &mut rng);
        let x = Mat::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.3).collect());
        let (_, cache) = attn.forward(&x, &x, true);
        let p = &cache.probs[0];
        assert_eq!(p.at(0, 1), 0.0);
        assert_eq!(p.at(0, 2), 0.0);
        assert_eq!(p.at(1, 2), 0.0);
        assert!((p.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_key_attention_weight_is_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let attn = MultiHeadAttention::new(4, 2, &mut rng);
        let x = Mat::from_vec(1, 4, vec![0.5, -0.2, 0.1, 0.9]);
        let (_, cache) = attn.forward(&x, &x, false);
        for p in &cache.probs {
            assert_eq!(p.at(0, 0), 1.0);
        }
    }

    #[test]
    fn dropout_identity_at_inference() {
        let x = Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let mut ctx: crate::neural::TrainCtx = None;
        let (y, mask) = dropout_forward(x.clone(), &mut ctx);
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
