//! Sequential network container and the two nest-mapping architectures.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::layers::{BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool2, Relu, SigmoidLayer};
use super::tensor::Tensor;

/// Output head: sigmoid for detection probability, ReLU for a non-negative
/// size regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sigmoid,
    Relu,
}

/// Network size profile. The full profile matches the reference
/// architecture on 61x61x8 patches; the downscaled profile (31x31x4 inputs,
/// filter counts 16/32/64) is the default for desk-scale training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetProfile {
    Full,
    Downscaled,
}

impl NetProfile {
    pub fn input_hwc(&self) -> (usize, usize, usize) {
        match self {
            NetProfile::Full => (61, 61, 8),
            NetProfile::Downscaled => (31, 31, 4),
        }
    }

    pub fn filters(&self) -> (usize, usize, usize) {
        match self {
            NetProfile::Full => (64, 128, 256),
            NetProfile::Downscaled => (16, 32, 64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn forward(&mut self, mut x: Tensor, training: bool) -> Result<Tensor> {
        for layer in self.layers.iter_mut() {
            x = layer.forward(x, training)?;
        }
        Ok(x)
    }

    /// Pure inference pass; uses running statistics and writes no caches.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    /// Propagate the loss gradient; parameter gradients accumulate into each
    /// layer's grad buffers.
    pub fn backward(&mut self, mut dy: Tensor) -> Result<Tensor> {
        for layer in self.layers.iter_mut().rev() {
            dy = layer.backward(dy)?;
        }
        Ok(dy)
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers.iter_mut() {
            layer.zero_grads();
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params().into_iter().map(|(p, _)| p.len()))
            .sum()
    }

    /// Flattened copy of all gradients in visit order.
    pub fn gradients_flat(&mut self) -> Vec<f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params().into_iter().flat_map(|(_, g)| g.clone()))
            .collect()
    }

    /// Read or perturb a single parameter by its flat visit-order index.
    pub fn param_get(&mut self, index: usize) -> f64 {
        let mut offset = 0usize;
        for layer in self.layers.iter_mut() {
            for (p, _) in layer.params() {
                if index < offset + p.len() {
                    return p[index - offset];
                }
                offset += p.len();
            }
        }
        panic!("parameter index {index} out of range {offset}");
    }

    pub fn param_add(&mut self, index: usize, delta: f64) {
        let mut offset = 0usize;
        for layer in self.layers.iter_mut() {
            for (p, _) in layer.params() {
                if index < offset + p.len() {
                    p[index - offset] += delta;
                    return;
                }
                offset += p.len();
            }
        }
        panic!("parameter index {index} out of range {offset}");
    }
}

/// The nest-mapping CNN body: two 3x3 convolutions per block with ReLU,
/// batch norm and 2x2 max pooling after the first two blocks, a third
/// conv pair, then Flatten -> Dense -> ReLU -> Dense(1) -> head.
pub fn nest_cnn(
    input_hwc: (usize, usize, usize),
    filters: (usize, usize, usize),
    dense_width: usize,
    head: Head,
    rng: &mut Rng,
) -> Result<Network> {
    let (h, w, c) = input_hwc;
    if h < 4 || w < 4 || c == 0 {
        return Err(CoreError::Parameter(format!(
            "input {h}x{w}x{c} too small for two pooling stages"
        )));
    }
    let (f1, f2, f3) = filters;
    let mut layers = vec![
        Layer::Conv(Conv2d::new(c, f1, rng)),
        Layer::Relu(Relu::default()),
        Layer::Conv(Conv2d::new(f1, f1, rng)),
        Layer::Relu(Relu::default()),
        Layer::Bn(BatchNorm::new(f1)),
        Layer::Pool(MaxPool2::default()),
        Layer::Conv(Conv2d::new(f1, f2, rng)),
        Layer::Relu(Relu::default()),
        Layer::Conv(Conv2d::new(f2, f2, rng)),
        Layer::Relu(Relu::default()),
        Layer::Bn(BatchNorm::new(f2)),
        Layer::Pool(MaxPool2::default()),
        Layer::Conv(Conv2d::new(f2, f3, rng)),
        Layer::Relu(Relu::default()),
        Layer::Conv(Conv2d::new(f3, f3, rng)),
        Layer::Relu(Relu::default()),
        Layer::Flatten(Flatten::default()),
    ];
    let flat = (h / 2 / 2) * (w / 2 / 2) * f3;
    layers.push(Layer::Dense(Dense::new(flat, dense_width, rng)));
    layers.push(Layer::Relu(Relu::default()));
    layers.push(Layer::Dense(Dense::new(dense_width, 1, rng)));
    layers.push(match head {
        Head::Sigmoid => Layer::Sigmoid(SigmoidLayer::default()),
        Head::Relu => Layer::Relu(Relu::default()),
    });
    Ok(Network { layers })
}

/// Detection network for the given profile (sigmoid head).
pub fn detection_network(profile: NetProfile, rng: &mut Rng) -> Result<Network> {
    nest_cnn(profile.input_hwc(), profile.filters(), 64, Head::Sigmoid, rng)
}

/// Size-estimation network for the given profile (ReLU head). The output
/// bias starts positive so the rectified head has a live gradient from the
/// first step.
pub fn size_network(profile: NetProfile, rng: &mut Rng) -> Result<Network> {
    let mut net = nest_cnn(profile.input_hwc(), profile.filters(), 64, Head::Relu, rng)?;
    if let Some(Layer::Dense(d)) = net
        .layers
        .iter_mut()
        .rev()
        .find(|l| matches!(l, Layer::Dense(_)))
    {
        d.bias[0] = 0.5;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = Rng::new(1);
        let mut conv = Conv2d::new(1, 1, &mut rng);
        conv.kernels.iter_mut().for_each(|v| *v = 0.0);
        conv.kernels[4] = 1.0; // center tap of the 3x3 kernel
        conv.bias[0] = 0.0;
        let x = Tensor::from_vec(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.forward(x.clone(), false).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_all_ones_kernel_sums_neighborhood() {
        let mut rng = Rng::new(1);
        let mut conv = Conv2d::new(1, 1, &mut rng);
        conv.kernels.iter_mut().for_each(|v| *v = 1.0);
        conv.bias[0] = 0.0;
        // 2x2 input [[1,2],[3,4]]: every same-padded window sums all four.
        let x = Tensor::from_vec(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(x, false).unwrap();
        assert_eq!(y.data, vec![10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn shape_trace_of_full_profile() {
        let mut rng = Rng::new(7);
        let mut net = detection_network(NetProfile::Full, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 61, 61, 8]);
        let mut cur = x;
        let mut trace = Vec::new();
        for layer in net.layers.iter_mut() {
            cur = layer.forward(cur, true).unwrap();
            trace.push((layer.kind(), cur.dims.clone()));
        }
        // 61 -> 30 -> 15 spatially; 8 -> 64 -> 128 -> 256 channels; scalar out.
        assert!(trace.contains(&(("maxpool"), vec![2, 30, 30, 64])));
        assert!(trace.contains(&(("maxpool"), vec![2, 15, 15, 128])));
        assert!(trace.iter().any(|(k, d)| *k == "conv" && d == &vec![2, 15, 15, 256]));
        assert_eq!(trace.last().unwrap().1, vec![2, 1]);
        // Sigmoid head output in (0, 1).
        assert!(cur.data.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn downscaled_profile_shapes() {
        let mut rng = Rng::new(8);
        let mut net = size_network(NetProfile::Downscaled, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 31, 31, 4]);
        let y = net.forward(x, true).unwrap();
        assert_eq!(y.dims, vec![2, 1]);
        // ReLU head output non-negative.
        assert!(y.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sigmoid_examples() {
        let mut s = SigmoidLayer::default();
        let y = s
            .forward(Tensor::from_vec(vec![1, 3], vec![0.0, 10.0, -10.0]).unwrap(), false)
            .unwrap();
        assert!((y.data[0] - 0.5).abs() < 1e-15);
        assert!(y.data[1] > 0.999 && y.data[2] < 0.001);
    }

    #[test]
    fn relu_examples() {
        let mut r = Relu::default();
        let y = r
            .forward(Tensor::from_vec(vec![1, 3], vec![-2.0, 0.0, 3.5]).unwrap(), false)
            .unwrap();
        assert_eq!(y.data, vec![0.0, 0.0, 3.5]);
    }

    #[test]
    fn maxpool_61_truncates_to_30() {
        let mut p = MaxPool2::default();
        let y = p.forward(Tensor::zeros(vec![1, 61, 61, 2]), false).unwrap();
        assert_eq!(y.dims, vec![1, 30, 30, 2]);

        let konst = p
            .forward(Tensor::from_vec(vec![1, 4, 4, 1], vec![2.5; 16]).unwrap(), false)
            .unwrap();
        assert!(konst.data.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn batchnorm_normalizes_and_infers_with_running_stats() {
        let mut bn = BatchNorm::new(1);
        // Batch with mean 2, variance 1 over 4 samples of 1x1x1.
        let x = Tensor::from_vec(vec![4, 1, 1, 1], vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let y = bn.forward(x, true).unwrap();
        let mean: f64 = y.data.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((y.data[1] - 1.0).abs() < 0.01); // (3-2)/sqrt(1+eps)

        // Constant channel collapses to beta.
        let mut bn2 = BatchNorm::new(1);
        bn2.beta[0] = 0.25;
        let konst = Tensor::from_vec(vec![2, 1, 2, 1], vec![5.0; 4]).unwrap();
        let out = bn2.forward(konst, true).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));

        // Batch of one is rejected in training mode.
        let mut bn3 = BatchNorm::new(1);
        assert!(bn3.forward(Tensor::zeros(vec![1, 2, 2, 1]), true).is_err());
    }

    #[test]
    fn infer_matches_forward_for_stateless_nets() {
        // Without batchnorm updates, infer and a non-training forward agree.
        let mut rng = Rng::new(4);
        let mut net = nest_cnn((8, 8, 2), (3, 4, 5), 6, Head::Sigmoid, &mut rng).unwrap();
        let x = Tensor::from_vec(
            vec![2, 8, 8, 2],
            (0..256).map(|i| (i % 13) as f64 * 0.1 - 0.6).collect(),
        )
        .unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.forward(x, false).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
