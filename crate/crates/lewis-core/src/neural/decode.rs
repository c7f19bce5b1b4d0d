//! Beam search and seeded sampling over a seq2seq decoder.
//!
//! No incremental state is kept: each step re-runs the decoder over the
//! prefix. At desk scale this is fast enough and keeps one forward path.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::models::{log_softmax_row, Seq2SeqModel};
use super::NeuralError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, without BOS or the terminating EOS.
    pub ids: Vec<u32>,
    /// Total log-probability of the generated tokens (incl. EOS).
    pub score: f64,
}

struct Beam {
    prefix: Vec<u32>, // starts with BOS
    score: f64,
    done: bool,
}

/// Standard beam search; returns finished hypotheses sorted by score
/// descending. Beams that hit `max_len` without EOS are returned as-is.
pub fn beam_search(
    model: &Seq2SeqModel,
    src: &[u32],
    bos: u32,
    eos: u32,
    banned: &[u32],
    cfg: DecodeConfig,
) -> Result<Vec<Hypothesis>, NeuralError> {
    let enc_out = model.encode(src)?;
    let width = cfg.beam_width.max(1);
    let mut beams = vec![Beam {
        prefix: vec![bos],
        score: 0.0,
        done: false,
    }];
    for _ in 0..cfg.max_len {
        if beams.iter().all(|b| b.done) {
            break;
        }
        // (source beam, token, new score); finished beams carry through.
        let mut candidates: Vec<(usize, Option<u32>, f64)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.done {
                candidates.push((bi, None, beam.score));
                continue;
            }
            let logits = model.next_logits(&enc_out, &beam.prefix)?;
            let logp = log_softmax_row(&logits);
            for (tok, lp) in logp.iter().enumerate() {
                let tok = tok as u32;
                if tok == bos || banned.contains(&tok) {
                    continue;
                }
                candidates.push((bi, Some(tok), beam.score + lp));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        candidates.truncate(width);
        beams = candidates
            .into_iter()
            .map(|(bi, tok, score)| match tok {
                None => Beam {
                    prefix: beams[bi].prefix.clone(),
                    score,
                    done: true,
                },
                Some(tok) => {
                    let mut prefix = beams[bi].prefix.clone();
                    prefix.push(tok);
                    Beam {
                        prefix,
                        score,
                        done: tok == eos,
                    }
                }
            })
            .collect();
    }
    let mut hyps: Vec<Hypothesis> = beams
        .into_iter()
        .map(|b| {
            let mut ids = b.prefix[1..].to_vec();
            if ids.last() == Some(&eos) {
                ids.pop();
            }
            Hypothesis {
                ids,
                score: b.score,
            }
        })
        .collect();
    hyps.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    Ok(hyps)
}

/// Temperature sampling from the allowed next-token distribution until
/// EOS or the length cap. Fully determined by the rng state.
pub fn sample_decode(
    model: &Seq2SeqModel,
    src: &[u32],
    bos: u32,
    eos: u32,
    banned: &[u32],
    max_len: usize,
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<u32>, NeuralError> {
    let enc_out = model.encode(src)?;
    let mut prefix = vec![bos];
    let mut out = Vec::new();
    for _ in 0..max_len {
        let logits = model.next_logits(&enc_out, &prefix)?;
        let tok = sample_token(&logits, &|t| t != bos && !banned.contains(&t), temperature, rng);
        if tok == eos {
            break;
        }
        prefix.push(tok);
        out.push(tok);
    }
    Ok(out)
}

/// Samples one token id from softmax(logits / temperature) restricted to
/// `allowed`. Temperature 0 means argmax.
pub fn sample_token(
    logits: &[f64],
    allowed: &dyn Fn(u32) -> bool,
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> u32 {
    if temperature <= 0.0 {
        return logits
            .iter()
            .enumerate()
            .filter(|(t, _)| allowed(*t as u32))
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(t, _)| t as u32)
            .expect("no allowed token");
    }
    let scaled: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t as u32))
        .map(|(t, &l)| (t as u32, l / temperature))
        .collect();
    assert!(!scaled.is_empty(), "no allowed token");
    let max = scaled
        .iter()
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|(_, l)| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for ((tok, _), w) in scaled.iter().zip(&weights) {
        draw -= w;
        if draw <= 0.0 {
            return *tok;
        }
    }
    scaled.last().unwrap().0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{EncoderConfig, Seq2SeqConfig};
    use rand::SeedableRng;

    fn tiny_model(seed: u64) -> Seq2SeqModel {
        let cfg = Seq2SeqConfig {
            encoder: EncoderConfig {
                layers: 2,
                heads: 2,
                model_dim: 8,
                ff_dim: 16,
                max_len: 8,
                dropout: 0.0,
                vocab_size: 10,
            },
            decoder_layers: 2,
            decoder_max_len: 8,
        };
        Seq2SeqModel::new(cfg, seed).unwrap()
    }

    #[test]
    fn beam_search_is_deterministic_and_sorted() {
        let model = tiny_model(41);
        let cfg = DecodeConfig {
            beam_width: 3,
            max_len: 6,
        };
        let a = beam_search(&model, &[1, 2, 3], 2, 3, &[0], cfg).unwrap();
        let b = beam_search(&model, &[1, 2, 3], 2, 3, &[0], cfg).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        assert!(a.len() <= 3);
    }

    #[test]
    fn banned_tokens_never_appear() {
        let model = tiny_model(42);
        let cfg = DecodeConfig {
            beam_width: 4,
            max_len: 8,
        };
        let banned = [0u32, 5, 6];
        let hyps = beam_search(&model, &[4, 1], 2, 3, &banned, cfg).unwrap();
        for hyp in &hyps {
            for id in &hyp.ids {
                assert!(!banned.contains(id));
            }
        }
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let model = tiny_model(43);
        let mut r1 = ChaCha20Rng::seed_from_u64(9);
        let mut r2 = ChaCha20Rng::seed_from_u64(9);
        let a = sample_decode(&model, &[1, 2], 2, 3, &[0], 8, 1.0, &mut r1).unwrap();
        let b = sample_decode(&model, &[1, 2], 2, 3, &[0], 8, 1.0, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let logits = vec![0.1, 2.0, -1.0, 1.9];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let tok = sample_token(&logits, &|_| true, 0.0, &mut rng);
        assert_eq!(tok, 1);
        let tok = sample_token(&logits, &|t| t != 1, 0.0, &mut rng);
        assert_eq!(tok, 3);
    }
}
