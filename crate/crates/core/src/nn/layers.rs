//! Network layers with hand-written backward passes.
//!
//! Training forward passes cache whatever backward needs; `infer` is a pure
//! pass used for validation and map generation. Batch work parallelizes over
//! samples with disjoint output slices, and weight-gradient contributions are
//! reduced in fixed sample order, so results do not depend on scheduling.

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// 3x3 same-padded stride-1 cross-correlation.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernels as [ky][kx][ci][co], row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_kernels: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        // He-normal for ReLU stacks.
        let fan_in = (9 * in_channels) as f64;
        let std = (2.0 / fan_in).sqrt();
        let kernels = (0..9 * in_channels * out_channels)
            .map(|_| rng.normal() * std)
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            kernels,
            bias: vec![0.0; out_channels],
            grad_kernels: vec![0.0; 9 * in_channels * out_channels],
            grad_bias: vec![0.0; out_channels],
            cache_input: None,
        }
    }

    fn forward_sample(&self, inp: &[f64], out: &mut [f64], h: usize, w: usize) {
        let cin = self.in_channels;
        let cout = self.out_channels;
        let k = &self.kernels;
        for y in 0..h {
            for x in 0..w {
                let o = (y * w + x) * cout;
                out[o..o + cout].copy_from_slice(&self.bias);
                for ky in 0..3usize {
                    let yy = y + ky;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    let yy = yy - 1;
                    for kx in 0..3usize {
                        let xx = x + kx;
                        if xx < 1 || xx > w {
                            continue;
                        }
                        let xx = xx - 1;
                        let ip = (yy * w + xx) * cin;
                        let kp = (ky * 3 + kx) * cin * cout;
                        for ci in 0..cin {
                            let a = inp[ip + ci];
                            let krow = &k[kp + ci * cout..kp + (ci + 1) * cout];
                            let orow = &mut out[o..o + cout];
                            for co in 0..cout {
                                orow[co] += a * krow[co];
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_sample(
        &self,
        inp: &[f64],
        dy: &[f64],
        dx: &mut [f64],
        dk: &mut [f64],
        db: &mut [f64],
        h: usize,
        w: usize,
    ) {
        let cin = self.in_channels;
        let cout = self.out_channels;
        let k = &self.kernels;
        for y in 0..h {
            for x in 0..w {
                let dyrow = &dy[(y * w + x) * cout..(y * w + x + 1) * cout];
                for co in 0..cout {
                    db[co] += dyrow[co];
                }
                for ky in 0..3usize {
                    let yy = y + ky;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    let yy = yy - 1;
                    for kx in 0..3usize {
                        let xx = x + kx;
                        if xx < 1 || xx > w {
                            continue;
                        }
                        let xx = xx - 1;
                        let ip = (yy * w + xx) * cin;
                        let kp = (ky * 3 + kx) * cin * cout;
                        for ci in 0..cin {
                            let a = inp[ip + ci];
                            let krow = &k[kp + ci * cout..kp + (ci + 1) * cout];
                            let dkrow = &mut dk[kp + ci * cout..kp + (ci + 1) * cout];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                dkrow[co] += a * dyrow[co];
                                acc += krow[co] * dyrow[co];
                            }
                            dx[ip + ci] += acc;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        if c != self.in_channels {
            return Err(CoreError::Mismatch(format!(
                "conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut out = Tensor::zeros(vec![n, h, w, self.out_channels]);
        let in_sz = h * w * c;
        let out_sz = h * w * self.out_channels;

        let fill = |(inp, outp): (&[f64], &mut [f64])| self.forward_sample(inp, outp, h, w);
        #[cfg(feature = "parallel")]
        x.data
            .par_chunks(in_sz)
            .zip(out.data.par_chunks_mut(out_sz))
            .for_each(fill);
        #[cfg(not(feature = "parallel"))]
        x.data
            .chunks(in_sz)
            .zip(out.data.chunks_mut(out_sz))
            .for_each(fill);

        if training {
            self.cache_input = Some(x);
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let x = self
            .cache_input
            .take()
            .ok_or_else(|| CoreError::Numeric("conv backward without forward".into()))?;
        let (n, h, w, c) = x.dims4()?;
        let in_sz = h * w * c;
        let out_sz = h * w * self.out_channels;
        let mut dx = Tensor::zeros(vec![n, h, w, c]);
        let klen = self.grad_kernels.len();

        // Samples are grouped into chunks that share one local gradient
        // buffer: chunk outputs are reduced in order, so the result is
        // deterministic regardless of scheduling, and buffer zeroing stays
        // cheap relative to the convolution itself.
        const CHUNK: usize = 8;
        let work = |((inp, dyp), dxp): ((&[f64], &[f64]), &mut [f64])| -> (Vec<f64>, Vec<f64>) {
            let mut dk = vec![0.0; klen];
            let mut db = vec![0.0; self.out_channels];
            for ((i, d), xslice) in inp
                .chunks(in_sz)
                .zip(dyp.chunks(out_sz))
                .zip(dxp.chunks_mut(in_sz))
            {
                self.backward_sample(i, d, xslice, &mut dk, &mut db, h, w);
            }
            (dk, db)
        };
        #[cfg(feature = "parallel")]
        let partials: Vec<(Vec<f64>, Vec<f64>)> = x
            .data
            .par_chunks(in_sz * CHUNK)
            .zip(dy.data.par_chunks(out_sz * CHUNK))
            .zip(dx.data.par_chunks_mut(in_sz * CHUNK))
            .map(work)
            .collect();
        #[cfg(not(feature = "parallel"))]
        let partials: Vec<(Vec<f64>, Vec<f64>)> = x
            .data
            .chunks(in_sz * CHUNK)
            .zip(dy.data.chunks(out_sz * CHUNK))
            .zip(dx.data.chunks_mut(in_sz * CHUNK))
            .map(work)
            .collect();

        // Fixed-order reduction keeps gradients bit-reproducible.
        for (dk, db) in partials {
            for (g, v) in self.grad_kernels.iter_mut().zip(&dk) {
                *g += v;
            }
            for (g, v) in self.grad_bias.iter_mut().zip(&db) {
                *g += v;
            }
        }
        let _ = n;
        Ok(dx)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        if c != self.in_channels {
            return Err(CoreError::Mismatch(format!(
                "conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut out = Tensor::zeros(vec![n, h, w, self.out_channels]);
        let in_sz = h * w * c;
        let out_sz = h * w * self.out_channels;
        let fill = |(inp, outp): (&[f64], &mut [f64])| self.forward_sample(inp, outp, h, w);
        #[cfg(feature = "parallel")]
        x.data
            .par_chunks(in_sz)
            .zip(out.data.par_chunks_mut(out_sz))
            .for_each(fill);
        #[cfg(not(feature = "parallel"))]
        x.data
            .chunks(in_sz)
            .zip(out.data.chunks_mut(out_sz))
            .for_each(fill);
        Ok(out)
    }
}

/// Per-channel batch normalization with momentum-0.9 running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    dims: Vec<usize>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        if c != self.channels {
            return Err(CoreError::Mismatch(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels
            )));
        }
        if !training {
            return self.infer(&x);
        }
        if n < 2 {
            return Err(CoreError::Parameter(
                "batchnorm training requires batch >= 2".into(),
            ));
        }
        let count = (n * h * w) as f64;
        let mut mean = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut var = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for ci in 0..c {
                let d = px[ci] - mean[ci];
                var[ci] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= count;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut out = Tensor::zeros(x.dims.clone());
        let mut x_hat = vec![0.0; x.data.len()];
        for (i, px) in x.data.chunks_exact(c).enumerate() {
            let base = i * c;
            for ci in 0..c {
                let xh = (px[ci] - mean[ci]) * inv_std[ci];
                x_hat[base + ci] = xh;
                out.data[base + ci] = self.gamma[ci] * xh + self.beta[ci];
            }
        }
        for ci in 0..c {
            self.running_mean[ci] = self.momentum * self.running_mean[ci] + (1.0 - self.momentum) * mean[ci];
            self.running_var[ci] = self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var[ci];
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            dims: x.dims.clone(),
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| CoreError::Numeric("batchnorm backward without forward".into()))?;
        let c = self.channels;
        let count = (cache.x_hat.len() / c) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, px) in dy.data.chunks_exact(c).enumerate() {
            let base = i * c;
            for ci in 0..c {
                dgamma[ci] += px[ci] * cache.x_hat[base + ci];
                dbeta[ci] += px[ci];
            }
        }
        let mut dx = Tensor::zeros(cache.dims.clone());
        for (i, px) in dy.data.chunks_exact(c).enumerate() {
            let base = i * c;
            for ci in 0..c {
                let term = px[ci] - dbeta[ci] / count - cache.x_hat[base + ci] * dgamma[ci] / count;
                dx.data[base + ci] = self.gamma[ci] * cache.inv_std[ci] * term;
            }
        }
        for ci in 0..c {
            self.grad_gamma[ci] += dgamma[ci];
            self.grad_beta[ci] += dbeta[ci];
        }
        Ok(dx)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, _, c) = x.dims4()?;
        if c != self.channels {
            return Err(CoreError::Mismatch("batchnorm channel mismatch".into()));
        }
        let scale: Vec<f64> = (0..c)
            .map(|ci| self.gamma[ci] / (self.running_var[ci] + self.eps).sqrt())
            .collect();
        let mut out = Tensor::zeros(x.dims.clone());
        for (i, px) in x.data.chunks_exact(c).enumerate() {
            let base = i * c;
            for ci in 0..c {
                out.data[base + ci] = scale[ci] * (px[ci] - self.running_mean[ci]) + self.beta[ci];
            }
        }
        Ok(out)
    }
}

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped (61 -> 30).
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input dims, argmax flat indices)
}

impl MaxPool2 {
    fn pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (n, h, w, c) = x.dims4()?;
        if h < 2 || w < 2 {
            return Err(CoreError::Mismatch(format!(
                "maxpool needs h, w >= 2, got {h}x{w}"
            )));
        }
        let oh = h / 2;
        let ow = w / 2;
        let mut out = Tensor::zeros(vec![n, oh, ow, c]);
        let mut argmax = vec![0usize; out.len()];
        let sample_in = h * w * c;
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let obase = ((ni * oh + oy) * ow + ox) * c;
                    for ci in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2usize {
                            for dx in 0..2usize {
                                let iy = oy * 2 + dy;
                                let ix = ox * 2 + dx;
                                let idx = ni * sample_in + (iy * w + ix) * c + ci;
                                // First strict maximum wins ties.
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.data[obase + ci] = best;
                        argmax[obase + ci] = best_idx;
                    }
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        let (out, argmax) = Self::pool(&x)?;
        if training {
            self.cache = Some((x.dims.clone(), argmax));
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let (dims, argmax) = self
            .cache
            .take()
            .ok_or_else(|| CoreError::Numeric("maxpool backward without forward".into()))?;
        let mut dx = Tensor::zeros(dims);
        for (i, &src) in argmax.iter().enumerate() {
            dx.data[src] += dy.data[i];
        }
        Ok(dx)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Self::pool(x)?.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor, training: bool) -> Result<Tensor> {
        if training {
            self.mask = Some(x.data.iter().map(|&v| v > 0.0).collect());
        }
        for v in x.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| CoreError::Numeric("relu backward without forward".into()))?;
        for (v, keep) in dy.data.iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(dy)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SigmoidLayer {
    output: Option<Vec<f64>>,
}

impl SigmoidLayer {
    pub fn forward(&mut self, mut x: Tensor, training: bool) -> Result<Tensor> {
        for v in x.data.iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        if training {
            self.output = Some(x.data.clone());
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Result<Tensor> {
        let y = self
            .output
            .take()
            .ok_or_else(|| CoreError::Numeric("sigmoid backward without forward".into()))?;
        for (d, y) in dy.data.iter_mut().zip(y) {
            *d *= y * (1.0 - y);
        }
        Ok(dy)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for v in out.data.iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        Ok(out)
    }
}

/// (n, h, w, c) -> (n, h*w*c). The memory layout is unchanged.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    dims: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        let n = x.batch();
        let f = x.sample_len();
        if training {
            self.dims = Some(x.dims.clone());
        }
        Tensor::from_vec(vec![n, f], x.data)
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let dims = self
            .dims
            .take()
            .ok_or_else(|| CoreError::Numeric("flatten backward without forward".into()))?;
        Tensor::from_vec(dims, dy.data)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::from_vec(vec![x.batch(), x.sample_len()], x.data.clone())
    }
}

/// Fully connected affine map.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// Weights as [fi][fo], row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / in_features as f64).sqrt();
        let weights = (0..in_features * out_features)
            .map(|_| rng.normal() * std)
            .collect();
        Dense {
            in_features,
            out_features,
            weights,
            bias: vec![0.0; out_features],
            grad_weights: vec![0.0; in_features * out_features],
            grad_bias: vec![0.0; out_features],
            cache_input: None,
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, f) = x.dims2()?;
        if f != self.in_features {
            return Err(CoreError::Mismatch(format!(
                "dense expects {} features, got {f}",
                self.in_features
            )));
        }
        let fo = self.out_features;
        let mut out = Tensor::zeros(vec![n, fo]);
        for ni in 0..n {
            let xrow = &x.data[ni * f..(ni + 1) * f];
            let orow = &mut out.data[ni * fo..(ni + 1) * fo];
            orow.copy_from_slice(&self.bias);
            for fi in 0..f {
                let a = xrow[fi];
                if a == 0.0 {
                    continue;
                }
                let wrow = &self.weights[fi * fo..(fi + 1) * fo];
                for o in 0..fo {
                    orow[o] += a * wrow[o];
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        let out = self.apply(&x)?;
        if training {
            self.cache_input = Some(x);
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        let x = self
            .cache_input
            .take()
            .ok_or_else(|| CoreError::Numeric("dense backward without forward".into()))?;
        let (n, f) = x.dims2()?;
        let fo = self.out_features;
        let mut dx = Tensor::zeros(vec![n, f]);
        for ni in 0..n {
            let dyrow = &dy.data[ni * fo..(ni + 1) * fo];
            let xrow = &x.data[ni * f..(ni + 1) * f];
            for o in 0..fo {
                self.grad_bias[o] += dyrow[o];
            }
            let dxrow = &mut dx.data[ni * f..(ni + 1) * f];
            for fi in 0..f {
                let a = xrow[fi];
                let wrow = &self.weights[fi * fo..(fi + 1) * fo];
                let gwrow = &mut self.grad_weights[fi * fo..(fi + 1) * fo];
                let mut acc = 0.0;
                for o in 0..fo {
                    gwrow[o] += a * dyrow[o];
                    acc += wrow[o] * dyrow[o];
                }
                dxrow[fi] = acc;
            }
        }
        Ok(dx)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x)
    }
}

/// The layer set needed by the two network architectures.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Bn(BatchNorm),
    Pool(MaxPool2),
    Relu(Relu),
    Flatten(Flatten),
    Dense(Dense),
    Sigmoid(SigmoidLayer),
}

impl Layer {
    pub fn forward(&mut self, x: Tensor, training: bool) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x, training),
            Layer::Bn(l) => l.forward(x, training),
            Layer::Pool(l) => l.forward(x, training),
            Layer::Relu(l) => l.forward(x, training),
            Layer::Flatten(l) => l.forward(x, training),
            Layer::Dense(l) => l.forward(x, training),
            Layer::Sigmoid(l) => l.forward(x, training),
        }
    }

    pub fn backward(&mut self, dy: Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::Bn(l) => l.backward(dy),
            Layer::Pool(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::Flatten(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
            Layer::Sigmoid(l) => l.backward(dy),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::Bn(l) => l.infer(x),
            Layer::Pool(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::Flatten(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Sigmoid(l) => l.infer(x),
        }
    }

    /// Mutable (parameter, gradient) slice pairs in a fixed order.
    pub fn params(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv(l) => vec![
                (&mut l.kernels, &mut l.grad_kernels),
                (&mut l.bias, &mut l.grad_bias),
            ],
            Layer::Bn(l) => vec![
                (&mut l.gamma, &mut l.grad_gamma),
                (&mut l.beta, &mut l.grad_beta),
            ],
            Layer::Dense(l) => vec![
                (&mut l.weights, &mut l.grad_weights),
                (&mut l.bias, &mut l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, g) in self.params() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Bn(_) => "batchnorm",
            Layer::Pool(_) => "maxpool",
            Layer::Relu(_) => "relu",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Sigmoid(_) => "sigmoid",
        }
    }
}
