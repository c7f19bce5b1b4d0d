//! Evaluation metrics: corpus/sentence BLEU, Self-BLEU against the
//! source, and transfer accuracy under an external style classifier.
//!
//! BLEU is the standard modified n-gram precision geometric mean times a
//! brevity penalty. Unsmoothed scores return 0 when any n-gram precision
//! is 0; orders longer than the hypothesis contribute no counts and are
//! skipped, so `bleu(x, x) = 100` holds for short sequences too.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, StyleJudge};
use crate::corpus::{StyleLabel, TokenSeq};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {hyps} hypotheses vs {refs} references")]
    ShapeError { hyps: usize, refs: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Any zero n-gram precision zeroes the score.
    None,
    /// Zero match counts are floored at 0.1.
    AddEpsilon,
}

const EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::None,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total hypothesis n-grams for one order.
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let total: usize = hyp_counts.values().sum();
    let matches: usize = hyp_counts
        .iter()
        .map(|(gram, c)| (*c).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, total)
}

fn bleu_from_counts(
    matches: &[usize],
    totals: &[usize],
    hyp_len: usize,
    ref_len: usize,
    smoothing: Smoothing,
) -> f64 {
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for (&m, &t) in matches.iter().zip(totals) {
        if t == 0 {
            continue; // hypothesis too short for this order everywhere
        }
        orders += 1;
        let numerator = match smoothing {
            Smoothing::None => {
                if m == 0 {
                    return 0.0;
                }
                m as f64
            }
            Smoothing::AddEpsilon => {
                if m == 0 {
                    EPSILON
                } else {
                    m as f64
                }
            }
        };
        log_sum += (numerator / t as f64).ln();
    }
    if orders == 0 {
        return 0.0;
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * (log_sum / orders as f64).exp()
}

/// Corpus BLEU: n-gram counts are micro-averaged across all sentence
/// pairs and a single brevity penalty is applied.
pub fn corpus_bleu(hyps: &[TokenSeq], refs: &[TokenSeq], cfg: BleuConfig) -> Result<f64, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::ShapeError {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut matches = vec![0usize; cfg.max_n];
    let mut totals = vec![0usize; cfg.max_n];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=cfg.max_n {
            let (m, t) = clipped_matches(hyp.tokens(), reference.tokens(), n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    Ok(bleu_from_counts(
        &matches,
        &totals,
        hyp_len,
        ref_len,
        cfg.smoothing,
    ))
}

/// Sentence BLEU in [0, 100].
pub fn sentence_bleu(hyp: &TokenSeq, reference: &TokenSeq, cfg: BleuConfig) -> f64 {
    corpus_bleu(
        std::slice::from_ref(hyp),
        std::slice::from_ref(reference),
        cfg,
    )
    .expect("singleton corpus")
}

/// BLEU of outputs against their sources: a content-preservation proxy.
pub fn self_bleu(
    outputs: &[TokenSeq],
    sources: &[TokenSeq],
    cfg: BleuConfig,
) -> Result<f64, EvalError> {
    corpus_bleu(outputs, sources, cfg)
}

/// Percentage of outputs the judge assigns to the target style.
pub fn transfer_accuracy(
    outputs: &[TokenSeq],
    target_style: StyleLabel,
    judge: &dyn StyleJudge,
) -> Result<f64, EvalError> {
    if outputs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut correct = 0usize;
    for out in outputs {
        let probs = judge.style_probs(out)?;
        if probs[target_style.index()] >= 0.5 {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / outputs.len() as f64)
}

/// One evaluated example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleRow {
    pub source: String,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    pub sbleu: f64,
    pub cls_prob: f64,
    pub correct: bool,
}

/// Corpus metrics plus per-example rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub self_bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    pub examples: usize,
    pub rows: Vec<ExampleRow>,
}

/// Scores outputs against sources (and references when present) with the
/// given evaluation judge. References, if provided, must be parallel.
pub fn evaluate(
    sources: &[TokenSeq],
    outputs: &[TokenSeq],
    references: Option<&[TokenSeq]>,
    target_style: StyleLabel,
    judge: &dyn StyleJudge,
    cfg: BleuConfig,
) -> Result<EvalReport, EvalError> {
    if sources.len() != outputs.len() {
        return Err(EvalError::ShapeError {
            hyps: outputs.len(),
            refs: sources.len(),
        });
    }
    if let Some(refs) = references {
        if refs.len() != outputs.len() {
            return Err(EvalError::ShapeError {
                hyps: outputs.len(),
                refs: refs.len(),
            });
        }
    }
    if outputs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut rows = Vec::with_capacity(outputs.len());
    let mut correct = 0usize;
    for (i, (src, out)) in sources.iter().zip(outputs).enumerate() {
        let probs = judge.style_probs(out)?;
        let cls_prob = probs[target_style.index()];
        let is_correct = cls_prob >= 0.5;
        correct += usize::from(is_correct);
        let reference = references.map(|r| &r[i]);
        rows.push(ExampleRow {
            source: src.text(),
            output: out.text(),
            reference: reference.map(TokenSeq::text),
            bleu: reference.map(|r| sentence_bleu(out, r, cfg)),
            sbleu: sentence_bleu(out, src, cfg),
            cls_prob,
            correct: is_correct,
        });
    }
    Ok(EvalReport {
        accuracy: 100.0 * correct as f64 / outputs.len() as f64,
        self_bleu: self_bleu(outputs, sources, cfg)?,
        bleu: references
            .map(|refs| corpus_bleu(outputs, refs, cfg))
            .transpose()?,
        examples: outputs.len(),
        rows,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl EvalReport {
    /// Writes the per-example rows as CSV. The first line is a comment
    /// carrying the producing config hash.
    pub fn write_csv(&self, path: impl AsRef<Path>, config_hash: &str) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# config_hash={config_hash}")?;
        writeln!(f, "source,output,reference,bleu,sbleu,cls_prob,correct")?;
        for row in &self.rows {
            let bleu = row.bleu.map(|b| format!("{b:.4}")).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{:.4},{:.6},{}",
                csv_field(&row.source),
                csv_field(&row.output),
                csv_field(row.reference.as_deref().unwrap_or("")),
                bleu,
                row.sbleu,
                row.cls_prob,
                row.correct,
            )?;
        }
        Ok(())
    }
}
