//! Finite-difference gradient checking.
//!
//! Central differences with h = 1e-5 carry an absolute truncation error
//! around h²·|f'''|/6 ≈ 1e-10, so a relative comparison is only
//! meaningful for gradients above that noise floor. Coordinates where
//! both the analytic and numerical values sit under `RESOLUTION_FLOOR`
//! are instead required to agree absolutely within `ZERO_TOL` (the same
//! tolerance used for provably-unused parameters).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Parameterized;

const H: f64 = 1e-5;
const RESOLUTION_FLOOR: f64 = 1e-5;
const ZERO_TOL: f64 = 1e-8;

fn with_flat_scalar<M: Parameterized>(
    model: &mut M,
    flat: usize,
    f: impl FnOnce(&mut f64) -> f64,
) -> f64 {
    let mut offset = 0usize;
    for (_, tensor) in model.params_mut() {
        if flat < offset + tensor.len() {
            return f(&mut tensor.w.data[flat - offset]);
        }
        offset += tensor.len();
    }
    panic!("flat index {flat} out of range");
}

fn grad_at<M: Parameterized>(model: &mut M, flat: usize) -> f64 {
    let mut offset = 0usize;
    for (_, tensor) in model.params_mut() {
        if flat < offset + tensor.len() {
            return tensor.g.data[flat - offset];
        }
        offset += tensor.len();
    }
    panic!("flat index {flat} out of range");
}

/// One coordinate's error contribution: relative where the gradient is
/// resolvable, absolute-as-failure below the noise floor.
pub fn coordinate_error(analytic: f64, fd: f64) -> f64 {
    if analytic.abs().max(fd.abs()) < RESOLUTION_FLOOR {
        if (analytic - fd).abs() < ZERO_TOL {
            0.0
        } else {
            1.0
        }
    } else {
        (analytic - fd).abs() / (analytic.abs() + fd.abs() + 1e-12)
    }
}

/// Compares analytic gradients against central finite differences on a
/// random sample of parameters and returns the maximum relative error
/// `|analytic − fd| / (|analytic| + |fd| + 1e-12)` over resolvable
/// coordinates (sub-floor coordinates must agree within `ZERO_TOL`).
///
/// `backward` must zero gradients and run forward/backward on a fixed
/// batch; `forward_loss` must evaluate exactly the scalar those
/// gradients differentiate (same batch, no dropout).
pub fn gradient_check<M: Parameterized>(
    model: &mut M,
    mut forward_loss: impl FnMut(&mut M) -> f64,
    mut backward: impl FnMut(&mut M),
    samples: usize,
    seed: u64,
) -> f64 {
    backward(model);
    let total = model.param_scalar_count();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let flat = rng.gen_range(0..total);
        let analytic = grad_at(model, flat);
        let original = with_flat_scalar(model, flat, |w| {
            let orig = *w;
            *w = orig + H;
            orig
        });
        let loss_plus = forward_loss(model);
        with_flat_scalar(model, flat, |w| {
            *w = original - H;
            0.0
        });
        let loss_minus = forward_loss(model);
        with_flat_scalar(model, flat, |w| {
            *w = original;
            0.0
        });
        let fd = (loss_plus - loss_minus) / (2.0 * H);
        max_rel = max_rel.max(coordinate_error(analytic, fd));
    }
    max_rel
}
