//! MSE, adversarial, and combined losses.
//!
//! The discriminator loss is
//!   L_D = -(1/2n) Σ [log D(real_i) + log(1 - D(fake_i))]
//! and the generator trains against the non-saturating objective
//!   L_G = -(1/n) Σ log D(fake_i).

use crate::error::{PgnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorRef};

/// Probability clamp applied inside logs.
pub const PROB_EPS: f64 = 1e-7;

/// Pixel-sum squared error, averaged over the batch (graph op wrapper).
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: TensorRef, target: TensorRef) -> Result<TensorRef> {
    g.mse(pred, target)
}

/// Plain (off-graph) pixel-sum squared error between two frames.
pub fn frame_sq_error(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// L_D over batched probability vectors d_real, d_fake of shape [n].
pub fn discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    d_real: TensorRef,
    d_fake: TensorRef,
) -> Result<TensorRef> {
    let n = g.value(d_real).len();
    if g.value(d_fake).len() != n {
        return Err(PgnError::dim("discriminator_loss", "real/fake batch sizes differ"));
    }
    let eps = T::from_f64(PROB_EPS);
    let log_real = g.log_clamped(d_real, eps)?;
    let s_real = g.sum_all(log_real)?;
    let one_minus = g.scale_add(d_fake, -T::ONE, T::ONE)?;
    let log_fake = g.log_clamped(one_minus, eps)?;
    let s_fake = g.sum_all(log_fake)?;
    let s = g.add(s_real, s_fake)?;
    g.scale_add(s, T::from_f64(-0.5 / n as f64), T::ZERO)
}

/// Non-saturating generator objective: minimize -(1/n) Σ log D(fake).
pub fn generator_adversarial_loss<T: Scalar>(g: &mut Graph<T>, d_fake: TensorRef) -> Result<TensorRef> {
    let n = g.value(d_fake).len();
    let eps = T::from_f64(PROB_EPS);
    let log_fake = g.log_clamped(d_fake, eps)?;
    let s = g.sum_all(log_fake)?;
    g.scale_add(s, T::from_f64(-1.0 / n as f64), T::ZERO)
}

/// L_G^(tot) = L_G^(MSE) + λ·L_G^(AL).
pub fn combined_generator_loss<T: Scalar>(
    g: &mut Graph<T>,
    mse: TensorRef,
    al: TensorRef,
    lambda: f64,
) -> Result<TensorRef> {
    if lambda < 0.0 {
        return Err(PgnError::Arg(format!("lambda must be >= 0, got {}", lambda)));
    }
    let scaled = g.scale_add(al, T::from_f64(lambda), T::ZERO)?;
    g.add(mse, scaled)
}

/// Count of probabilities outside [eps, 1-eps]; nonzero flags saturation.
pub fn saturation_count<T: Scalar>(probs: &[T]) -> usize {
    let eps = T::from_f64(PROB_EPS);
    let hi = T::ONE - eps;
    probs.iter().filter(|&&p| p < eps || p > hi).count()
}
