//! Task heads over the encoder/decoder stacks, and the cross-entropy
//! plumbing shared by every role.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::decoder::Decoder;
use super::encoder::{Encoder, EncoderCache};
use super::layers::Linear;
use super::mat::Mat;
use super::{EncoderConfig, NeuralError, Parameterized, Seq2SeqConfig, Tensor, TrainCtx};

/// Sum of per-position cross-entropies and the logit gradients.
/// Positions with a `None` target are skipped (zero gradient).
pub fn softmax_ce(logits: &Mat, targets: &[Option<u32>]) -> (f64, usize, Mat) {
    debug_assert_eq!(logits.rows, targets.len());
    let mut d = Mat::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    let mut count = 0usize;
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = target else { continue };
        count += 1;
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[*t as usize];
        let d_row = d.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            d_row[j] = (v - lse).exp();
        }
        d_row[*t as usize] -= 1.0;
    }
    (loss, count, d)
}

/// Log-softmax of a single logit row.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// Classification or tagging head over encoder states.
#[derive(Debug, Clone)]
pub enum Head {
    /// Two-way style head read at the CLS position (row 0).
    Classifier(Linear),
    /// Per-position insert flag (2-way) and edit op (3-way) heads.
    Tagger { insert: Linear, op: Linear },
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub encoder: Encoder,
    pub head: Head,
}

impl EncoderModel {
    pub fn new_classifier(cfg: EncoderConfig, seed: u64) -> Result<EncoderModel, NeuralError> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let encoder = Encoder::new(cfg.clone(), &mut rng);
        let head = Head::Classifier(Linear::new(cfg.model_dim, 2, &mut rng));
        Ok(EncoderModel { encoder, head })
    }

    pub fn new_tagger(cfg: EncoderConfig, seed: u64) -> Result<EncoderModel, NeuralError> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let encoder = Encoder::new(cfg.clone(), &mut rng);
        let head = Head::Tagger {
            insert: Linear::new(cfg.model_dim, 2, &mut rng),
            op: Linear::new(cfg.model_dim, 3, &mut rng),
        };
        Ok(EncoderModel { encoder, head })
    }

    /// Class probabilities `[p(style0), p(style1)]` from the CLS row.
    /// Also returns the encoder cache so callers can pull attention.
    pub fn classify_forward(
        &self,
        ids: &[u32],
    ) -> Result<([f64; 2], EncoderCache), NeuralError> {
        let Head::Classifier(head) = &self.head else {
            return Err(NeuralError::FormatError("model has no classifier head".into()));
        };
        let (hidden, cache) = self.encoder.forward(ids, &mut None)?;
        let cls = Mat::from_vec(1, hidden.cols, hidden.row(0).to_vec());
        let logits = head.forward(&cls);
        let logp = log_softmax_row(logits.row(0));
        Ok(([logp[0].exp(), logp[1].exp()], cache))
    }

    /// One training example: forward, cross-entropy on the CLS logits,
    /// backward. Returns (loss_sum, position_count = 1).
    pub fn classifier_step(
        &mut self,
        ids: &[u32],
        target: u32,
        ctx: &mut TrainCtx<'_>,
    ) -> Result<(f64, usize), NeuralError> {
        let Head::Classifier(_) = &self.head else {
            return Err(NeuralError::FormatError("model has no classifier head".into()));
        };
        let (hidden, cache) = self.encoder.forward(ids, ctx)?;
        let cls = Mat::from_vec(1, hidden.cols, hidden.row(0).to_vec());
        let Head::Classifier(head) = &mut self.head else { unreachable!() };
        let logits = head.forward(&cls);
        let (loss, count, d_logits) = softmax_ce(&logits, &[Some(target)]);
        let d_cls = head.backward(&cls, &d_logits);
        let mut d_hidden = Mat::zeros(hidden.rows, hidden.cols);
        d_hidden.row_mut(0).copy_from_slice(d_cls.row(0));
        self.encoder.backward(&cache, &d_hidden);
        Ok((loss, count))
    }

    /// Per-position insert/op logits: `([n,2], [n,3])`.
    pub fn tagger_forward(&self, ids: &[u32]) -> Result<(Mat, Mat), NeuralError> {
        let Head::Tagger { insert, op } = &self.head else {
            return Err(NeuralError::FormatError("model has no tagger head".into()));
        };
        let (hidden, _) = self.encoder.forward(ids, &mut None)?;
        Ok((insert.forward(&hidden), op.forward(&hidden)))
    }

    /// One tagging example with per-position targets (`None` = untagged
    /// position). Returns (loss_sum, counted positions).
    pub fn tagger_step(
        &mut self,
        ids: &[u32],
        insert_targets: &[Option<u32>],
        op_targets: &[Option<u32>],
        ctx: &mut TrainCtx<'_>,
    ) -> Result<(f64, usize), NeuralError> {
        let (hidden, cache) = self.encoder.forward(ids, ctx)?;
        let Head::Tagger { insert, op } = &mut self.head else {
            return Err(NeuralError::FormatError("model has no tagger head".into()));
        };
        let insert_logits = insert.forward(&hidden);
        let op_logits = op.forward(&hidden);
        let (loss_i, count_i, d_insert) = softmax_ce(&insert_logits, insert_targets);
        let (loss_o, count_o, d_op) = softmax_ce(&op_logits, op_targets);
        let mut d_hidden = insert.backward(&hidden, &d_insert);
        d_hidden.add_assign(&op.backward(&hidden, &d_op));
        self.encoder.backward(&cache, &d_hidden);
        Ok((loss_i + loss_o, count_i + count_o))
    }
}

impl Parameterized for EncoderModel {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .encoder
            .params_mut()
            .into_iter()
            .map(|(n, t)| (format!("enc.{n}"), t))
            .collect();
        match &mut self.head {
            Head::Classifier(lin) => out.extend(lin.params_mut("head.cls")),
            Head::Tagger { insert, op } => {
                out.extend(insert.params_mut("head.insert"));
                out.extend(op.params_mut("head.op"));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub cfg: Seq2SeqConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Seq2SeqModel {
    pub fn new(cfg: Seq2SeqConfig, seed: u64) -> Result<Seq2SeqModel, NeuralError> {
        cfg.encoder.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let encoder = Encoder::new(cfg.encoder.clone(), &mut rng);
        let decoder = Decoder::new(&cfg, &mut rng);
        Ok(Seq2SeqModel {
            cfg,
            encoder,
            decoder,
        })
    }

    /// Teacher-forced step: encode `src`, decode `tgt_in`, cross-entropy
    /// against `tgt_out` (parallel to `tgt_in`), backward through both
    /// stacks. Returns (loss_sum, token count).
    pub fn step(
        &mut self,
        src: &[u32],
        tgt_in: &[u32],
        tgt_out: &[u32],
        ctx: &mut TrainCtx<'_>,
    ) -> Result<(f64, usize), NeuralError> {
        debug_assert_eq!(tgt_in.len(), tgt_out.len());
        let (enc_out, enc_cache) = self.encoder.forward(src, ctx)?;
        let (logits, dec_cache) = self.decoder.forward(tgt_in, &enc_out, ctx)?;
        let targets: Vec<Option<u32>> = tgt_out.iter().map(|&t| Some(t)).collect();
        let (loss, count, d_logits) = softmax_ce(&logits, &targets);
        let d_enc = self.decoder.backward(&dec_cache, &d_logits, enc_out.rows);
        self.encoder.backward(&enc_cache, &d_enc);
        Ok((loss, count))
    }

    /// Encoder states for decoding.
    pub fn encode(&self, src: &[u32]) -> Result<Mat, NeuralError> {
        Ok(self.encoder.forward(src, &mut None)?.0)
    }

    /// Next-token logits after `prefix`, given precomputed encoder states.
    pub fn next_logits(&self, enc_out: &Mat, prefix: &[u32]) -> Result<Vec<f64>, NeuralError> {
        let (logits, _) = self.decoder.forward(prefix, enc_out, &mut None)?;
        Ok(logits.row(logits.rows - 1).to_vec())
    }
}

impl Parameterized for Seq2SeqModel {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .encoder
            .params_mut()
            .into_iter()
            .map(|(n, t)| (format!("enc.{n}"), t))
            .collect();
        out.extend(
            self.decoder
                .params_mut()
                .into_iter()
                .map(|(n, t)| (format!("dec.{n}"), t)),
        );
        out
    }
}

/// Either stack, as stored in a model bundle.
#[derive(Debug, Clone)]
pub enum Model {
    Encoder(EncoderModel),
    Seq2Seq(Seq2SeqModel),
}

impl Model {
    pub fn as_encoder(&self) -> Option<&EncoderModel> {
        match self {
            Model::Encoder(m) => Some(m),
            Model::Seq2Seq(_) => None,
        }
    }

    pub fn as_seq2seq(&self) -> Option<&Seq2SeqModel> {
        match self {
            Model::Seq2Seq(m) => Some(m),
            Model::Encoder(_) => None,
        }
    }
}

impl Parameterized for Model {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Model::Encoder(m) => m.params_mut(),
            Model::Seq2Seq(m) => m.params_mut(),
        }
    }
}
