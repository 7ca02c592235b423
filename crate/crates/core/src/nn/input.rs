//! Patch-to-network input transform.
//!
//! Patches come out of the dataset as 61x61x8 linear magnitudes. The
//! downscaled network profile consumes 31x31x4 inputs: spatial decimation by
//! two (even indices) and averaging of adjacent depth-channel pairs. An
//! optional log scaling compresses the speckle dynamic range, and a
//! standardizer fitted on the training set zero-means the inputs. The fitted
//! transform is stored with the trained weights so inference applies exactly
//! the same mapping.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPipeline {
    pub source_tile_px: usize,
    pub source_channels: usize,
    /// Network input (h, w, c).
    pub input_hwc: (usize, usize, usize),
    /// Convert magnitudes to decibels (20 log10, floored at 1e-9) first.
    pub log_scale: bool,
    /// Global (mean, std) applied after the other transforms.
    pub standardize: Option<(f64, f64)>,
}

impl InputPipeline {
    pub fn new(
        source_tile_px: usize,
        source_channels: usize,
        input_hwc: (usize, usize, usize),
        log_scale: bool,
    ) -> Result<Self> {
        let (h, w, c) = input_hwc;
        let pass = h == source_tile_px && w == source_tile_px && c == source_channels;
        let down = h == source_tile_px.div_ceil(2)
            && w == source_tile_px.div_ceil(2)
            && source_channels == 2 * c;
        if !(pass || down) {
            return Err(CoreError::Parameter(format!(
                "no transform from {source_tile_px}x{source_tile_px}x{source_channels} patches to {h}x{w}x{c} inputs"
            )));
        }
        Ok(InputPipeline {
            source_tile_px,
            source_channels,
            input_hwc,
            log_scale,
            standardize: None,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_hwc.0 * self.input_hwc.1 * self.input_hwc.2
    }

    /// Apply decimation/log without the standardizer.
    fn transform_raw(&self, data: &[f32]) -> Result<Vec<f64>> {
        let src_px = self.source_tile_px;
        let src_c = self.source_channels;
        if data.len() != src_px * src_px * src_c {
            return Err(CoreError::Mismatch(format!(
                "patch has {} values, expected {}",
                data.len(),
                src_px * src_px * src_c
            )));
        }
        let (h, w, c) = self.input_hwc;
        let mut out = Vec::with_capacity(h * w * c);
        if h == src_px && c == src_c {
            out.extend(data.iter().map(|&v| v as f64));
        } else {
            for y in 0..h {
                for x in 0..w {
                    let src = ((y * 2) * src_px + x * 2) * src_c;
                    for ci in 0..c {
                        let a = data[src + 2 * ci] as f64;
                        let b = data[src + 2 * ci + 1] as f64;
                        out.push(0.5 * (a + b));
                    }
                }
            }
        }
        if self.log_scale {
            for v in out.iter_mut() {
                *v = 20.0 * v.max(1e-9).log10();
            }
        }
        Ok(out)
    }

    /// Full transform into network input values.
    pub fn transform(&self, data: &[f32]) -> Result<Vec<f64>> {
        let mut out = self.transform_raw(data)?;
        if let Some((mean, std)) = self.standardize {
            let inv = 1.0 / std;
            for v in out.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        Ok(out)
    }

    /// Fit the global standardizer on training patches.
    pub fn fit_standardizer<'a, I>(&mut self, patches: I) -> Result<()>
    where
        I: Iterator<Item = &'a [f32]>,
    {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for p in patches {
            for v in self.transform_raw(p)? {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(CoreError::Empty("no patches to fit the standardizer".into()));
        }
        let mean = sum / count as f64;
        let var = (sum_sq / count as f64 - mean * mean).max(1e-12);
        self.standardize = Some((mean, var.sqrt()));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_keeps_values() {
        let pipe = InputPipeline::new(4, 2, (4, 4, 2), false).unwrap();
        let data: Vec<f32> = (0..32).map(|i| i as f32).collect();
        let out = pipe.transform(&data).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(out[5], 5.0);
    }

    #[test]
    fn downscale_61_to_31_and_8_to_4() {
        let pipe = InputPipeline::new(61, 8, (31, 31, 4), false).unwrap();
        let data = vec![2.0f32; 61 * 61 * 8];
        let out = pipe.transform(&data).unwrap();
        assert_eq!(out.len(), 31 * 31 * 4);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn channel_pairs_average() {
        let pipe = InputPipeline::new(2, 2, (1, 1, 1), false).unwrap();
        // Single surviving pixel is (0,0); channels 3 and 5 average to 4.
        let data = vec![3.0f32, 5.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0];
        let out = pipe.transform(&data).unwrap();
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn standardizer_zero_means_training_data() {
        let mut pipe = InputPipeline::new(2, 2, (1, 1, 1), false).unwrap();
        let patches: Vec<Vec<f32>> = vec![
            vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![3.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        pipe.fit_standardizer(patches.iter().map(|p| p.as_slice())).unwrap();
        let (mean, std) = pipe.standardize.unwrap();
        assert!((mean - 2.0).abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        assert_eq!(pipe.transform(&patches[0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn impossible_mapping_is_rejected() {
        assert!(InputPipeline::new(61, 8, (20, 20, 3), false).is_err());
    }
}
