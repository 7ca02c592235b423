//! Gradient verification against central finite differences.

use crate::error::Result;

use super::loss::{evaluate_loss, LossKind};
use super::net::Network;
use super::tensor::Tensor;

const FD_EPSILON: f64 = 1e-5;

/// Loss of the network on one batch without touching gradients. Runs the
/// training-mode forward (batch statistics), which is the path the analytic
/// gradients describe.
fn loss_only(net: &mut Network, x: &Tensor, targets: &[f64], loss: LossKind) -> Result<f64> {
    let pred = net.forward(x.clone(), true)?;
    let (value, _) = evaluate_loss(loss, &pred, targets)?;
    Ok(value)
}

/// Analytic parameter gradients, flattened in visit order.
pub fn analytic_gradients(
    net: &mut Network,
    x: &Tensor,
    targets: &[f64],
    loss: LossKind,
) -> Result<Vec<f64>> {
    net.zero_grads();
    let pred = net.forward(x.clone(), true)?;
    let (_, dloss) = evaluate_loss(loss, &pred, targets)?;
    net.backward(dloss)?;
    Ok(net.gradients_flat())
}

/// Central finite difference of the loss for one flat parameter index.
pub fn numeric_gradient(
    net: &mut Network,
    x: &Tensor,
    targets: &[f64],
    loss: LossKind,
    index: usize,
) -> Result<f64> {
    net.param_add(index, FD_EPSILON);
    let hi = loss_only(net, x, targets, loss)?;
    net.param_add(index, -2.0 * FD_EPSILON);
    let lo = loss_only(net, x, targets, loss)?;
    net.param_add(index, FD_EPSILON);
    Ok((hi - lo) / (2.0 * FD_EPSILON))
}

/// Relative disagreement between analytic and numeric gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Worst relative error over a deterministic subsample of parameters
/// (`max_per_tensor` evenly spaced indices per parameter tensor).
pub fn gradient_check(
    net: &mut Network,
    x: &Tensor,
    targets: &[f64],
    loss: LossKind,
    max_per_tensor: usize,
) -> Result<f64> {
    let analytic = analytic_gradients(net, x, targets, loss)?;
    let indices = sample_indices(net, max_per_tensor);
    let mut worst = 0.0f64;
    for idx in indices {
        let numeric = numeric_gradient(net, x, targets, loss, idx)?;
        worst = worst.max(relative_error(analytic[idx], numeric));
    }
    Ok(worst)
}

/// Evenly spaced flat indices, `max_per_tensor` from each parameter tensor.
pub fn sample_indices(net: &mut Network, max_per_tensor: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for layer in net.layers.iter_mut() {
        for (p, _) in layer.params() {
            let len = p.len();
            let take = max_per_tensor.min(len).max(1);
            let stride = len / take;
            for k in 0..take {
                out.push(offset + k * stride);
            }
            offset += len;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::net::{nest_cnn, Head};
    use super::*;
    use crate::rng::Rng;

    fn toy_input(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(
            vec![n, h, w, c],
            (0..n * h * w * c).map(|_| rng.normal() * 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_dense_layer_grads_are_tight() {
        let mut rng = Rng::new(11);
        let mut net = Network {
            layers: vec![
                super::super::layers::Layer::Flatten(Default::default()),
                super::super::layers::Layer::Dense(super::super::layers::Dense::new(8, 1, &mut rng)),
                super::super::layers::Layer::Sigmoid(Default::default()),
            ],
        };
        let x = toy_input(3, 2, 2, 2, 5);
        let err = gradient_check(&mut net, &x, &[1.0, 0.0, 1.0], LossKind::BinaryCrossEntropy, 16)
            .unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn small_cnn_grads_match_finite_differences() {
        let mut rng = Rng::new(12);
        let mut net = nest_cnn((8, 8, 2), (3, 4, 5), 6, Head::Sigmoid, &mut rng).unwrap();
        let x = toy_input(2, 8, 8, 2, 6);
        let err = gradient_check(&mut net, &x, &[1.0, 0.0], LossKind::BinaryCrossEntropy, 4).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = Rng::new(13);
        let mut net = nest_cnn((8, 8, 2), (3, 4, 5), 6, Head::Sigmoid, &mut rng).unwrap();
        let x = toy_input(2, 8, 8, 2, 7);
        let targets = [1.0, 0.0];
        let mut analytic =
            analytic_gradients(&mut net, &x, &targets, LossKind::BinaryCrossEntropy).unwrap();
        // Corrupt every analytic gradient by 50%.
        for g in analytic.iter_mut() {
            *g *= 1.5;
        }
        let indices = sample_indices(&mut net, 3);
        let mut worst = 0.0f64;
        for idx in indices {
            let numeric =
                numeric_gradient(&mut net, &x, &targets, LossKind::BinaryCrossEntropy, idx)
                    .unwrap();
            if numeric.abs() > 1e-5 {
                worst = worst.max(relative_error(analytic[idx], numeric));
            }
        }
        assert!(worst > 1e-2, "corruption went unnoticed: {worst}");
    }
}
