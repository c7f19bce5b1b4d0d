//! Minimal transformer encoder and encoder-decoder with hand-written
//! analytic gradients, an Adam optimizer, gradient checking, and model
//! serialization.
//!
//! All math runs in f64; parameters are rounded to f32-representable
//! values at initialization and after every optimizer step, so the
//! on-disk f32 format round-trips bitwise. Everything is sequential:
//! fixed seeds give bitwise-reproducible training and inference.

pub mod bundle;
pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod models;
pub mod train;

pub use bundle::{load_bundle, save_bundle, ModelBundle, Role};
pub use decode::DecodeConfig;
pub use encoder::AttentionRecord;
pub use gradcheck::gradient_check;
pub use mat::Mat;
pub use models::{EncoderModel, Head, Model, Seq2SeqModel};
pub use train::{run_training, TrainConfig, TrainOutcome};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input length {len} exceeds maximum {max}")]
    LengthError { len: usize, max: usize },
    #[error("training diverged (loss became NaN) at step {step}")]
    Divergence { step: usize },
    #[error("dataset is empty or degenerate: {0}")]
    DegenerateData(String),
    #[error("model file format error: {0}")]
    FormatError(String),
    #[error("model was trained with vocabulary hash {expected}, got {got}")]
    VocabMismatch { expected: String, got: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encoder architecture. `model_dim` must be divisible by `heads`, and at
/// least two layers are required so a penultimate layer exists for
/// attention readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub vocab_size: usize,
}

impl EncoderConfig {
    /// Desk-scale default: 4 layers, 4 heads, dim 128, ff 256.
    pub fn desk_default(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 256,
            max_len: 128,
            dropout: 0.1,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.layers < 2 {
            return Err(NeuralError::DegenerateData(
                "encoder needs at least 2 layers".into(),
            ));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(NeuralError::DegenerateData(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Encoder-decoder architecture; the decoder reuses the encoder's width,
/// heads, ff size, and dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub encoder: EncoderConfig,
    pub decoder_layers: usize,
    /// Decoder-side position budget (generated sequences can be longer
    /// or shorter than encoder inputs).
    pub decoder_max_len: usize,
}

impl Seq2SeqConfig {
    pub fn desk_default(vocab_size: usize) -> Seq2SeqConfig {
        Seq2SeqConfig {
            encoder: EncoderConfig::desk_default(vocab_size),
            decoder_layers: 2,
            decoder_max_len: 128,
        }
    }
}

/// One learnable matrix: values plus a gradient accumulator.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub w: Mat,
    pub g: Mat,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            w: Mat::zeros(rows, cols),
            g: Mat::zeros(rows, cols),
        }
    }

    /// Gaussian init (std 0.02), rounded to f32-representable values.
    pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor {
        let mut t = Tensor::zeros(rows, cols);
        for v in &mut t.w.data {
            // Box-Muller from two uniforms keeps the dependency surface tiny.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *v = (0.02 * z) as f32 as f64;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.w.data.len()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.g.data {
            *g = 0.0;
        }
    }
}

/// Anything exposing a flat, deterministically ordered parameter list.
/// The visitation order defines the serialization and optimizer-state
/// order.
pub trait Parameterized {
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_scalar_count(&mut self) -> usize {
        self.params_mut().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }
}

/// Per-example dropout/noise context: `None` means inference (dropout
/// off, fully deterministic).
pub type TrainCtx<'a> = Option<(&'a mut ChaCha20Rng, f64)>;
