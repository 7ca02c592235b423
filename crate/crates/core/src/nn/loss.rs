//! Loss functions with analytic gradients w.r.t. the prediction tensor.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    BinaryCrossEntropy,
    MeanSquaredError,
}

const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over the batch; predictions are clamped into
/// [1e-7, 1 - 1e-7] before the logs.
pub fn bce_loss(pred: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    check_shapes(pred, targets)?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.dims.clone());
    for (i, (&p_raw, &y)) in pred.data.iter().zip(targets).enumerate() {
        let p = p_raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.data[i] = ((p - y) / (p * (1.0 - p))) / n;
    }
    Ok((loss / n, grad))
}

/// Mean squared error over the batch; gradient 2 (p - t) / n.
pub fn mse_loss(pred: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    check_shapes(pred, targets)?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.dims.clone());
    for (i, (&p, &y)) in pred.data.iter().zip(targets).enumerate() {
        let d = p - y;
        loss += d * d;
        grad.data[i] = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

pub fn evaluate_loss(kind: LossKind, pred: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::BinaryCrossEntropy => bce_loss(pred, targets),
        LossKind::MeanSquaredError => mse_loss(pred, targets),
    }
}

fn check_shapes(pred: &Tensor, targets: &[f64]) -> Result<()> {
    if pred.len() != targets.len() {
        return Err(CoreError::Mismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(CoreError::Empty("empty loss batch".into()));
    }
    Ok(())
}
