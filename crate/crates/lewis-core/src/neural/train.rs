//! Adam with linear warmup, and the shared training loop.
//!
//! The loop is sequential and fully seeded: batch order, dropout masks,
//! and parameter updates are all drawn from one ChaCha stream, so a
//! fixed (seed, config, data) triple reproduces the loss curve exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{NeuralError, Parameterized, Tensor, TrainCtx};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean per-position loss at every step.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_curve.first().copied().unwrap_or(0.0)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(0.0)
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    t: u64,
    state: Vec<(Vec<f64>, Vec<f64>)>, // (m, v) per tensor, in visitation order
}

impl Adam {
    pub fn new() -> Adam {
        Adam {
            t: 0,
            state: Vec::new(),
        }
    }

    /// One update over the full parameter list. Values are rounded to
    /// f32-representable numbers afterwards so serialized models
    /// round-trip bitwise.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor)>, lr: f64) {
        self.t += 1;
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|(_, t)| (vec![0.0; t.len()], vec![0.0; t.len()]))
                .collect();
        }
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((_, tensor), (m, v)) in params.into_iter().zip(&mut self.state) {
            for (i, w) in tensor.w.data.iter_mut().enumerate() {
                let g = tensor.g.data[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                *w = *w as f32 as f64;
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}

fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr;
    }
    let warm = ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0);
    cfg.lr * warm
}

/// Runs `cfg.steps` optimizer steps. `example_step` does one example's
/// forward/backward, accumulating gradients into the model, and returns
/// (loss_sum, position_count).
pub fn run_training<M: Parameterized, E>(
    model: &mut M,
    examples: &[E],
    cfg: &TrainConfig,
    dropout: f64,
    mut example_step: impl FnMut(&mut M, &E, &mut TrainCtx<'_>) -> Result<(f64, usize), NeuralError>,
) -> Result<TrainOutcome, NeuralError> {
    if examples.is_empty() {
        return Err(NeuralError::DegenerateData("no training examples".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        model.zero_grads();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let example = &examples[order[cursor]];
            cursor += 1;
            let mut ctx: TrainCtx = Some((&mut rng, dropout));
            let (l, c) = example_step(model, example, &mut ctx)?;
            loss_sum += l;
            count += c;
        }
        let denom = count.max(1) as f64;
        let mean_loss = loss_sum / denom;
        if !mean_loss.is_finite() {
            return Err(NeuralError::Divergence { step });
        }
        for (_, t) in model.params_mut() {
            t.g.scale(1.0 / denom);
        }
        adam.step(model.params_mut(), lr_at(cfg, step));
        curve.push(mean_loss);
    }
    Ok(TrainOutcome { loss_curve: curve })
}
