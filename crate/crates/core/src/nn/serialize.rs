//! Trained-model persistence: little-endian f32 tensors plus a JSON topology
//! sidecar (`tomosar-weights/1`). The input pipeline travels with the weights
//! so inference reproduces the training transform exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::input::InputPipeline;
use super::layers::{BatchNorm, Conv2d, Dense, Layer};
use super::net::{Head, Network};

pub const WEIGHTS_VERSION: &str = "tomosar-weights/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerSpec {
    Conv { in_channels: usize, out_channels: usize },
    Batchnorm { channels: usize },
    Maxpool,
    Relu,
    Flatten,
    Dense { in_features: usize, out_features: usize },
    Sigmoid,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: String,
    head: Head,
    pipeline: InputPipeline,
    layers: Vec<LayerSpec>,
}

/// A trained network bundled with its input transform.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub head: Head,
    pub pipeline: InputPipeline,
}

fn topology_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

fn layer_tensors(layer: &Layer) -> Vec<&[f64]> {
    match layer {
        Layer::Conv(l) => vec![&l.kernels, &l.bias],
        Layer::Bn(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
        Layer::Dense(l) => vec![&l.weights, &l.bias],
        _ => Vec::new(),
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let specs: Vec<LayerSpec> = model
        .network
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => LayerSpec::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
            },
            Layer::Bn(b) => LayerSpec::Batchnorm { channels: b.channels },
            Layer::Pool(_) => LayerSpec::Maxpool,
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense {
                in_features: d.in_features,
                out_features: d.out_features,
            },
            Layer::Sigmoid(_) => LayerSpec::Sigmoid,
        })
        .collect();
    let file = ModelFile {
        version: WEIGHTS_VERSION.to_string(),
        head: model.head,
        pipeline: model.pipeline.clone(),
        layers: specs,
    };
    let tp = topology_path(path);
    let json =
        serde_json::to_string_pretty(&file).map_err(|e| CoreError::header(&tp, e.to_string()))?;
    fs::write(&tp, json).map_err(|e| CoreError::io(&tp, e))?;

    let mut payload = Vec::new();
    for layer in &model.network.layers {
        for tensor in layer_tensors(layer) {
            for &v in tensor {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, payload).map_err(|e| CoreError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let tp = topology_path(path);
    let text = fs::read_to_string(&tp).map_err(|e| CoreError::io(&tp, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CoreError::header(&tp, e.to_string()))?;
    if file.version != WEIGHTS_VERSION {
        return Err(CoreError::header(
            &tp,
            format!("bad version {:?}, expected {WEIGHTS_VERSION:?}", file.version),
        ));
    }
    // Layer constructors consume randomness we immediately overwrite.
    let mut scratch_rng = Rng::new(0);
    let mut layers = Vec::with_capacity(file.layers.len());
    for spec in &file.layers {
        layers.push(match spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
            } => Layer::Conv(Conv2d::new(*in_channels, *out_channels, &mut scratch_rng)),
            LayerSpec::Batchnorm { channels } => Layer::Bn(BatchNorm::new(*channels)),
            LayerSpec::Maxpool => Layer::Pool(Default::default()),
            LayerSpec::Relu => Layer::Relu(Default::default()),
            LayerSpec::Flatten => Layer::Flatten(Default::default()),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Layer::Dense(Dense::new(*in_features, *out_features, &mut scratch_rng)),
            LayerSpec::Sigmoid => Layer::Sigmoid(Default::default()),
        });
    }
    let mut network = Network { layers };

    let payload = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let expected: usize = network
        .layers
        .iter()
        .map(|l| layer_tensors(l).iter().map(|t| t.len()).sum::<usize>())
        .sum::<usize>()
        * 4;
    if payload.len() != expected {
        return Err(CoreError::Header {
            path: path.to_path_buf(),
            message: format!(
                "weight payload is {} bytes, topology implies {expected}",
                payload.len()
            ),
        });
    }
    let mut offset = 0usize;
    for layer in network.layers.iter_mut() {
        let tensors: Vec<&mut Vec<f64>> = match layer {
            Layer::Conv(l) => vec![&mut l.kernels, &mut l.bias],
            Layer::Bn(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            _ => Vec::new(),
        };
        for t in tensors {
            for v in t.iter_mut() {
                let bytes = [
                    payload[offset],
                    payload[offset + 1],
                    payload[offset + 2],
                    payload[offset + 3],
                ];
                *v = f32::from_le_bytes(bytes) as f64;
                offset += 4;
            }
        }
    }
    Ok(Model {
        network,
        head: file.head,
        pipeline: file.pipeline,
    })
}

#[cfg(test)]
mod tests {
    use super::super::net::{detection_network, NetProfile};
    use super::super::tensor::Tensor;
    use super::*;

    #[test]
    fn model_round_trip_preserves_inference() {
        let dir = std::env::temp_dir().join(format!("tomosar-weights-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("det.weights");

        let mut rng = Rng::new(77);
        let network = detection_network(NetProfile::Downscaled, &mut rng).unwrap();
        let mut pipeline = InputPipeline::new(61, 8, (31, 31, 4), true).unwrap();
        pipeline.standardize = Some((-40.0, 12.0));
        let model = Model {
            network,
            head: Head::Sigmoid,
            pipeline,
        };
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.head, Head::Sigmoid);
        assert_eq!(back.pipeline, model.pipeline);

        let x = Tensor::from_vec(
            vec![1, 31, 31, 4],
            (0..31 * 31 * 4).map(|i| ((i % 17) as f64 - 8.0) * 0.1).collect(),
        )
        .unwrap();
        let a = model.network.infer(&x).unwrap();
        let b = back.network.infer(&x).unwrap();
        // f32 storage bounds the round-trip drift.
        assert!((a.data[0] - b.data[0]).abs() < 1e-4, "{} vs {}", a.data[0], b.data[0]);
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let dir = std::env::temp_dir().join(format!("tomosar-weights2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("det.weights");
        let mut rng = Rng::new(78);
        let model = Model {
            network: detection_network(NetProfile::Downscaled, &mut rng).unwrap(),
            head: Head::Sigmoid,
            pipeline: InputPipeline::new(61, 8, (31, 31, 4), false).unwrap(),
        };
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_model(&path).is_err());
    }
}
