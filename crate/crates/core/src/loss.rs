//! Binary cross-entropy on sigmoid probabilities.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    /// Batch-mean loss.
    pub loss: f64,
    /// `d loss / d p` per sample, already scaled by `1 / B`.
    pub grad: Vec<f32>,
}

/// `-mean(y ln p + (1 - y) ln(1 - p))`. The gradient is taken at the clamped
/// probability, so it stays finite for saturated outputs.
pub fn bce_loss(predicted: &[f32], labels: &[f32]) -> Result<BceOutput> {
    if predicted.len() != labels.len() || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "bce needs equal non-empty batches, got {} predictions and {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let n = predicted.len() as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(predicted.len());
    for (&p, &y) in predicted.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidLabel(y));
        }
        let y = y as f64;
        let p = (p as f64).clamp(EPSILON, 1.0 - EPSILON);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((((p - y) / (p * (1.0 - p))) / n) as f32);
    }
    Ok(BceOutput {
        loss: total / n,
        grad,
    })
}
