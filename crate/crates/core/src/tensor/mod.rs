//! Dense arrays, reverse-mode differentiation and the RMSprop optimizer.

mod array;
mod graph;
mod optim;
mod scalar;

pub use array::Array;
pub use graph::{Gradients, Graph, Var};
pub use optim::RmspropState;
pub use scalar::Scalar;

use thiserror::Error;

/// Clamp applied to predicted probabilities before taking logarithms.
pub const KL_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
}

fn check_distribution(name: &str, dist: &[f64]) -> Result<(), TensorError> {
    if let Some((i, v)) = dist.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(TensorError::InvalidDistribution(format!("{name}[{i}] = {v} is negative or NaN")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(TensorError::InvalidDistribution(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

/// `Σ_t p_t · ln(p_t / q_t)` with `0 · ln 0 = 0` and `q_t` clamped to [`KL_EPS`].
pub fn kl_divergence(true_dist: &[f64], pred_dist: &[f64]) -> Result<f64, TensorError> {
    weighted_kl(true_dist, pred_dist, None)
}

/// KL divergence with an optional per-term weight.
pub fn weighted_kl(true_dist: &[f64], pred_dist: &[f64], weights: Option<&[f64]>) -> Result<f64, TensorError> {
    if true_dist.len() != pred_dist.len() {
        return Err(TensorError::InvalidDistribution(format!(
            "length mismatch: {} vs {}",
            true_dist.len(),
            pred_dist.len()
        )));
    }
    check_distribution("true", true_dist)?;
    check_distribution("pred", pred_dist)?;
    let mut total = 0.0;
    for (i, (&p, &q)) in true_dist.iter().zip(pred_dist).enumerate() {
        if p == 0.0 {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * p * (p.ln() - q.max(KL_EPS).ln());
    }
    Ok(total)
}
