//! Pre-norm transformer encoder stack.

use rand_chacha::ChaCha20Rng;

use super::layers::{
    dropout_backward, dropout_forward, AttentionCache, Embedding, FeedForward, FeedForwardCache,
    LayerNorm, LayerNormCache, MultiHeadAttention,
};
use super::mat::Mat;
use super::{EncoderConfig, NeuralError, Parameterized, Tensor, TrainCtx};

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

pub struct EncoderLayerCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    attn_drop: Option<Vec<f64>>,
    ln2: LayerNormCache,
    ff: FeedForwardCache,
    ff_drop: Option<Vec<f64>>,
}

impl EncoderLayer {
    fn new(cfg: &EncoderConfig, rng: &mut ChaCha20Rng) -> EncoderLayer {
        EncoderLayer {
            ln1: LayerNorm::new(cfg.model_dim),
            attn: MultiHeadAttention::new(cfg.model_dim, cfg.heads, rng),
            ln2: LayerNorm::new(cfg.model_dim),
            ff: FeedForward::new(cfg.model_dim, cfg.ff_dim, rng),
        }
    }

    fn forward(&self, x: &Mat, ctx: &mut TrainCtx<'_>) -> (Mat, EncoderLayerCache) {
        let (normed, ln1) = self.ln1.forward(x);
        let (attn_out, attn) = self.attn.forward(&normed, &normed, false);
        let (attn_out, attn_drop) = dropout_forward(attn_out, ctx);
        let mut a = x.clone();
        a.add_assign(&attn_out);
        let (normed2, ln2) = self.ln2.forward(&a);
        let (ff_out, ff) = self.ff.forward(&normed2);
        let (ff_out, ff_drop) = dropout_forward(ff_out, ctx);
        let mut y = a;
        y.add_assign(&ff_out);
        (
            y,
            EncoderLayerCache {
                ln1,
                attn,
                attn_drop,
                ln2,
                ff,
                ff_drop,
            },
        )
    }

    fn backward(&mut self, cache: &EncoderLayerCache, dy: &Mat) -> Mat {
        // y = a + drop(ff(ln2(a))), a = x + drop(attn(ln1(x)))
        let d_ff_out = dropout_backward(dy.clone(), &cache.ff_drop);
        let d_normed2 = self.ff.backward(&cache.ff, &d_ff_out);
        let mut da = self.ln2.backward(&cache.ln2, &d_normed2);
        da.add_assign(dy);
        let d_attn_out = dropout_backward(da.clone(), &cache.attn_drop);
        let (dq, dkv) = self.attn.backward(&cache.attn, &d_attn_out);
        let mut d_normed = dq;
        d_normed.add_assign(&dkv);
        let mut dx = self.ln1.backward(&cache.ln1, &d_normed);
        dx.add_assign(&da);
        dx
    }
}

/// Per-layer, per-head post-softmax attention, `[layer][head][query][key]`.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Mat>>,
}

impl AttentionRecord {
    /// The penultimate layer's per-head attention matrices.
    pub fn penultimate(&self) -> &[Mat] {
        &self.layers[self.layers.len() - 2]
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub emb: Embedding,
    pub layers: Vec<EncoderLayer>,
    pub ln_f: LayerNorm,
}

pub struct EncoderCache {
    ids: Vec<u32>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<EncoderLayerCache>,
    ln_f: LayerNormCache,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, rng: &mut ChaCha20Rng) -> Encoder {
        let emb = Embedding::new(cfg.vocab_size, cfg.max_len, cfg.model_dim, rng);
        let layers = (0..cfg.layers).map(|_| EncoderLayer::new(&cfg, rng)).collect();
        let ln_f = LayerNorm::new(cfg.model_dim);
        Encoder {
            cfg,
            emb,
            layers,
            ln_f,
        }
    }

    pub fn check_len(&self, len: usize) -> Result<(), NeuralError> {
        if len > self.cfg.max_len {
            return Err(NeuralError::LengthError {
                len,
                max: self.cfg.max_len,
            });
        }
        Ok(())
    }

    /// Hidden states `[n, d]` after the final layer norm.
    pub fn forward(
        &self,
        ids: &[u32],
        ctx: &mut TrainCtx<'_>,
    ) -> Result<(Mat, EncoderCache), NeuralError> {
        self.check_len(ids.len())?;
        let (mut x, emb_drop) = dropout_forward(self.emb.forward(ids), ctx);
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, ctx);
            x = y;
            layer_caches.push(cache);
        }
        let (y, ln_f) = self.ln_f.forward(&x);
        Ok((
            y,
            EncoderCache {
                ids: ids.to_vec(),
                emb_drop,
                layers: layer_caches,
                ln_f,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache, dy: &Mat) {
        let mut dx = self.ln_f.backward(&cache.ln_f, dy);
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dx = layer.backward(lc, &dx);
        }
        let dx = dropout_backward(dx, &cache.emb_drop);
        self.emb.backward(&cache.ids, &dx);
    }

    /// Copies the attention probabilities out of a forward cache.
    pub fn attention_record(cache: &EncoderCache) -> AttentionRecord {
        AttentionRecord {
            layers: cache
                .layers
                .iter()
                .map(|lc| lc.attn.probs.clone())
                .collect(),
        }
    }
}

impl Parameterized for Encoder {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.emb.params_mut("emb");
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.ln1.params_mut(&format!("l{i}.ln1")));
            out.extend(layer.attn.params_mut(&format!("l{i}.attn")));
            out.extend(layer.ln2.params_mut(&format!("l{i}.ln2")));
            out.extend(layer.ff.params_mut(&format!("l{i}.ff")));
        }
        out.extend(self.ln_f.params_mut("ln_f"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            max_len: 16,
            dropout: 0.0,
            vocab_size: 20,
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let enc = Encoder::new(tiny_cfg(), &mut ChaCha20Rng::seed_from_u64(5));
        let ids = [1u32, 4, 9, 2];
        let (a, _) = enc.forward(&ids, &mut None).unwrap();
        let (b, _) = enc.forward(&ids, &mut None).unwrap();
        assert_eq!(a.data, b.data); // bitwise
    }

    #[test]
    fn attention_record_rows_normalized() {
        let enc = Encoder::new(tiny_cfg(), &mut ChaCha20Rng::seed_from_u64(6));
        let ids = [3u32, 7, 1, 0, 5];
        let (_, cache) = enc.forward(&ids, &mut None).unwrap();
        let rec = Encoder::attention_record(&cache);
        assert_eq!(rec.layers.len(), 2);
        for layer in &rec.layers {
            for head in layer {
                for q in 0..head.rows {
                    let sum: f64 = head.row(q).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn overlength_input_errors() {
        let enc = Encoder::new(tiny_cfg(), &mut ChaCha20Rng::seed_from_u64(7));
        let ids: Vec<u32> = (0..17).map(|i| i % 20).collect();
        assert!(matches!(
            enc.forward(&ids, &mut None),
            Err(NeuralError::LengthError { len: 17, max: 16 })
        ));
    }
}
