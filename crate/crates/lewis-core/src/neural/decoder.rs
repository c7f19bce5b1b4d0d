//! Pre-norm transformer decoder: causal self-attention, cross-attention
//! over encoder states, and a vocabulary projection.

use rand_chacha::ChaCha20Rng;

use super::layers::{
    dropout_backward, dropout_forward, AttentionCache, Embedding, FeedForward, FeedForwardCache,
    LayerNorm, LayerNormCache, Linear, MultiHeadAttention,
};
use super::mat::Mat;
use super::{NeuralError, Parameterized, Seq2SeqConfig, Tensor, TrainCtx};

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
}

pub struct DecoderLayerCache {
    ln1: LayerNormCache,
    self_attn: AttentionCache,
    self_drop: Option<Vec<f64>>,
    ln2: LayerNormCache,
    cross_attn: AttentionCache,
    cross_drop: Option<Vec<f64>>,
    ln3: LayerNormCache,
    ff: FeedForwardCache,
    ff_drop: Option<Vec<f64>>,
}

impl DecoderLayer {
    fn new(dim: usize, heads: usize, ff_dim: usize, rng: &mut ChaCha20Rng) -> DecoderLayer {
        DecoderLayer {
            ln1: LayerNorm::new(dim),
            self_attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            cross_attn: MultiHeadAttention::new(dim, heads, rng),
            ln3: LayerNorm::new(dim),
            ff: FeedForward::new(dim, ff_dim, rng),
        }
    }

    fn forward(
        &self,
        x: &Mat,
        enc_out: &Mat,
        ctx: &mut TrainCtx<'_>,
    ) -> (Mat, DecoderLayerCache) {
        let (normed, ln1) = self.ln1.forward(x);
        let (self_out, self_attn) = self.self_attn.forward(&normed, &normed, true);
        let (self_out, self_drop) = dropout_forward(self_out, ctx);
        let mut a = x.clone();
        a.add_assign(&self_out);

        let (normed2, ln2) = self.ln2.forward(&a);
        let (cross_out, cross_attn) = self.cross_attn.forward(&normed2, enc_out, false);
        let (cross_out, cross_drop) = dropout_forward(cross_out, ctx);
        let mut b = a;
        b.add_assign(&cross_out);

        let (normed3, ln3) = self.ln3.forward(&b);
        let (ff_out, ff) = self.ff.forward(&normed3);
        let (ff_out, ff_drop) = dropout_forward(ff_out, ctx);
        let mut y = b;
        y.add_assign(&ff_out);
        (
            y,
            DecoderLayerCache {
                ln1,
                self_attn,
                self_drop,
                ln2,
                cross_attn,
                cross_drop,
                ln3,
                ff,
                ff_drop,
            },
        )
    }

    /// Returns (dx, d_enc_out contribution).
    fn backward(&mut self, cache: &DecoderLayerCache, dy: &Mat) -> (Mat, Mat) {
        let d_ff_out = dropout_backward(dy.clone(), &cache.ff_drop);
        let d_normed3 = self.ff.backward(&cache.ff, &d_ff_out);
        let mut db = self.ln3.backward(&cache.ln3, &d_normed3);
        db.add_assign(dy);

        let d_cross_out = dropout_backward(db.clone(), &cache.cross_drop);
        let (d_normed2, d_enc) = self.cross_attn.backward(&cache.cross_attn, &d_cross_out);
        let mut da = self.ln2.backward(&cache.ln2, &d_normed2);
        da.add_assign(&db);

        let d_self_out = dropout_backward(da.clone(), &cache.self_drop);
        let (dq, dkv) = self.self_attn.backward(&cache.self_attn, &d_self_out);
        let mut d_normed = dq;
        d_normed.add_assign(&dkv);
        let mut dx = self.ln1.backward(&cache.ln1, &d_normed);
        dx.add_assign(&da);
        (dx, d_enc)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub max_len: usize,
    pub emb: Embedding,
    pub layers: Vec<DecoderLayer>,
    pub ln_f: LayerNorm,
    pub out_proj: Linear,
}

pub struct DecoderCache {
    ids: Vec<u32>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<DecoderLayerCache>,
    ln_f: LayerNormCache,
    final_hidden: Mat,
}

impl Decoder {
    pub fn new(cfg: &Seq2SeqConfig, rng: &mut ChaCha20Rng) -> Decoder {
        let enc = &cfg.encoder;
        Decoder {
            max_len: cfg.decoder_max_len,
            emb: Embedding::new(enc.vocab_size, cfg.decoder_max_len, enc.model_dim, rng),
            layers: (0..cfg.decoder_layers)
                .map(|_| DecoderLayer::new(enc.model_dim, enc.heads, enc.ff_dim, rng))
                .collect(),
            ln_f: LayerNorm::new(enc.model_dim),
            out_proj: Linear::new(enc.model_dim, enc.vocab_size, rng),
        }
    }

    /// Next-token logits for every prefix position, `[n, vocab]`.
    pub fn forward(
        &self,
        ids: &[u32],
        enc_out: &Mat,
        ctx: &mut TrainCtx<'_>,
    ) -> Result<(Mat, DecoderCache), NeuralError> {
        if ids.len() > self.max_len {
            return Err(NeuralError::LengthError {
                len: ids.len(),
                max: self.max_len,
            });
        }
        let (mut x, emb_drop) = dropout_forward(self.emb.forward(ids), ctx);
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, enc_out, ctx);
            x = y;
            layer_caches.push(cache);
        }
        let (hidden, ln_f) = self.ln_f.forward(&x);
        let logits = self.out_proj.forward(&hidden);
        Ok((
            logits,
            DecoderCache {
                ids: ids.to_vec(),
                emb_drop,
                layers: layer_caches,
                ln_f,
                final_hidden: hidden,
            },
        ))
    }

    /// Accumulates gradients and returns d(enc_out).
    pub fn backward(&mut self, cache: &DecoderCache, d_logits: &Mat, enc_rows: usize) -> Mat {
        let d_hidden = self.out_proj.backward(&cache.final_hidden, d_logits);
        let mut dx = self.ln_f.backward(&cache.ln_f, &d_hidden);
        let mut d_enc = Mat::zeros(enc_rows, dx.cols);
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let (next_dx, d_enc_part) = layer.backward(lc, &dx);
            dx = next_dx;
            d_enc.add_assign(&d_enc_part);
        }
        let dx = dropout_backward(dx, &cache.emb_drop);
        self.emb.backward(&cache.ids, &dx);
        d_enc
    }
}

impl Parameterized for Decoder {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.emb.params_mut("emb");
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.ln1.params_mut(&format!("l{i}.ln1")));
            out.extend(layer.self_attn.params_mut(&format!("l{i}.self")));
            out.extend(layer.ln2.params_mut(&format!("l{i}.ln2")));
            out.extend(layer.cross_attn.params_mut(&format!("l{i}.cross")));
            out.extend(layer.ln3.params_mut(&format!("l{i}.ln3")));
            out.extend(layer.ff.params_mut(&format!("l{i}.ff")));
        }
        out.extend(self.ln_f.params_mut("ln_f"));
        out.extend(self.out_proj.params_mut("out"));
        out
    }
}
