//! Nest mapping: run the trained networks over full tomographic stacks,
//! refine size estimates with the detection mask, extract discrete
//! detections, and compute the evaluation metrics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{extract_tile, TileParams};
use crate::error::{CoreError, Result};
use crate::image::{Raster, RealImage, RealStack};
use crate::nn::{Model, Tensor};
use crate::scene::NestRecord;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Replicate a single-layer stack across the channel axis so stacks from a
/// linear (non-tomographic) flight can feed the 8-channel networks.
pub fn replicate_channels(stack: &RealStack, channels: usize) -> Result<RealStack> {
    if stack.plane_count() == channels {
        return Ok(stack.clone());
    }
    if stack.plane_count() != 1 {
        return Err(CoreError::Mismatch(format!(
            "cannot replicate a {}-layer stack to {channels} channels",
            stack.plane_count()
        )));
    }
    let depths: Vec<f64> = (0..channels).map(|k| k as f64 * 0.3).collect();
    let grid = stack.grid().with_depths(depths)?;
    let plane = stack.plane(0).to_vec();
    let invalid = stack.invalid_indices().remove(0);
    let mut out = Raster::from_planes(grid, vec![plane; channels])?;
    out.set_invalid_indices(&vec![invalid; channels])?;
    Ok(out)
}

/// Evaluate the model on every tile of the stack and write the prediction at
/// each tile-center pixel of an output image aligned to the stack grid.
/// All other pixels are zero.
pub fn prediction_map(model: &Model, stack: &RealStack, params: &TileParams) -> Result<RealImage> {
    let grid = stack.grid();
    params.validate(grid.spacing)?;
    let tile_px = params.tile_px(grid.spacing);
    let stride_px = params.stride_px(grid.spacing);
    if grid.nx < tile_px || grid.ny < tile_px {
        return Err(CoreError::Parameter(format!(
            "grid {}x{} smaller than one {tile_px} px tile",
            grid.nx, grid.ny
        )));
    }
    let stack = if stack.plane_count() == model.pipeline.source_channels {
        stack.clone()
    } else {
        replicate_channels(stack, model.pipeline.source_channels)?
    };
    if tile_px != model.pipeline.source_tile_px {
        return Err(CoreError::Mismatch(format!(
            "model expects {} px tiles, tiling produced {tile_px}",
            model.pipeline.source_tile_px
        )));
    }

    let xs: Vec<usize> = (0..=(grid.nx - tile_px)).step_by(stride_px).collect();
    let ys: Vec<usize> = (0..=(grid.ny - tile_px)).step_by(stride_px).collect();
    let half = (tile_px - 1) / 2;
    let origins: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&oy| xs.iter().map(move |&ox| (ox, oy)))
        .collect();

    let (h, w, c) = model.pipeline.input_hwc;
    let predict_chunk = |chunk: &[(usize, usize)]| -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(chunk.len() * h * w * c);
        for &(ox, oy) in chunk {
            let tile = extract_tile(&stack, ox, oy, tile_px);
            data.extend(model.pipeline.transform(&tile)?);
        }
        let x = Tensor::from_vec(vec![chunk.len(), h, w, c], data)?;
        Ok(model.network.infer(&x)?.data)
    };

    let chunks: Vec<&[(usize, usize)]> = origins.chunks(32).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<f64>>> = chunks.par_iter().map(|c| predict_chunk(c)).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<f64>>> = chunks.iter().map(|c| predict_chunk(c)).collect();

    let mut out = Raster::<f32>::zeros(grid.with_depths(vec![0.0])?);
    let mut it = origins.iter();
    for block in results {
        for value in block? {
            let (ox, oy) = *it.next().expect("origin/prediction mismatch");
            let idx = (oy + half) * grid.nx + (ox + half);
            out.plane_mut(0)[idx] = value as f32;
        }
    }
    Ok(out)
}

/// Detection-probability map (sigmoid-head model).
pub fn detect_map(model: &Model, stack: &RealStack, params: &TileParams) -> Result<RealImage> {
    prediction_map(model, stack, params)
}

/// Size map in m^2 (ReLU-head model); negative predictions clamp to zero.
pub fn size_map(model: &Model, stack: &RealStack, params: &TileParams) -> Result<RealImage> {
    let mut map = prediction_map(model, stack, params)?;
    for v in map.plane_mut(0).iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(map)
}

/// Visualization companion to the size map: each positive tile center drawn
/// as a disc of the equivalent area.
pub fn render_size_discs(size_map: &RealImage, min_size_m2: f64) -> Result<RealImage> {
    let grid = size_map.grid();
    let plane = size_map.single()?;
    let nests: Vec<NestRecord> = plane
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v as f64 > min_size_m2)
        .map(|(idx, &v)| NestRecord {
            id: idx,
            center_xy: grid.pixel_to_world(((idx % grid.nx) as f64, (idx / grid.nx) as f64)),
            area_m2: v as f64,
        })
        .collect();
    crate::dataset::render_reference(&nests, grid, crate::dataset::LabelMode::Size)
}

/// Pixel-wise product of the size map with the binarized detection map:
/// sizes survive only where detection probability reaches the threshold.
pub fn refine(size_image: &RealImage, detection_image: &RealImage, p_threshold: f64) -> Result<RealImage> {
    if size_image.grid() != detection_image.grid() {
        return Err(CoreError::Mismatch(
            "size and detection maps have different grids".into(),
        ));
    }
    let mut out = size_image.clone();
    let det = detection_image.single()?;
    for (v, &p) in out.plane_mut(0).iter_mut().zip(det) {
        if (p as f64) < p_threshold {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// A clustered nest detection.
#[derive(Debug, Clone, Serialize)]
pub struct Detection {
    pub xy: (f64, f64),
    pub size_m2: f64,
    pub score: f64,
}

/// How a cluster of tile predictions becomes one size estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SizeAggregation {
    /// The cluster's largest refined value. Accurate when nests cover a
    /// whole label central region.
    Max,
    /// Invert the central-mean label dilution: tile labels of one nest sum
    /// to area^2 / C over the tiling, so area = sqrt(C * sum). `C` is the
    /// central-region area in m^2. Exact for nests smaller than the central
    /// region and identical to `Max` when a single tile holds the nest.
    Integrated { central_area_m2: f64 },
}

/// Greedy clustering of above-threshold detection pixels: the highest score
/// seeds a cluster that absorbs everything within `cluster_radius`; the
/// centroid becomes the detection position and the cluster's maximum refined
/// value its size.
pub fn extract_detections(
    detection_image: &RealImage,
    refined_size: &RealImage,
    p_threshold: f64,
    cluster_radius_m: f64,
) -> Result<Vec<Detection>> {
    extract_detections_with(
        detection_image,
        refined_size,
        p_threshold,
        cluster_radius_m,
        SizeAggregation::Max,
    )
}

/// [`extract_detections`] with an explicit size-aggregation rule.
pub fn extract_detections_with(
    detection_image: &RealImage,
    refined_size: &RealImage,
    p_threshold: f64,
    cluster_radius_m: f64,
    aggregation: SizeAggregation,
) -> Result<Vec<Detection>> {
    if detection_image.grid() != refined_size.grid() {
        return Err(CoreError::Mismatch(
            "detection and refined maps have different grids".into(),
        ));
    }
    let grid = detection_image.grid();
    let det = detection_image.single()?;
    let sizes = refined_size.single()?;
    let mut hot: Vec<(usize, f64)> = det
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p as f64 >= p_threshold)
        .map(|(i, &p)| (i, p as f64))
        .collect();
    hot.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let pos = |idx: usize| -> (f64, f64) {
        grid.pixel_to_world(((idx % grid.nx) as f64, (idx / grid.nx) as f64))
    };
    let r2 = cluster_radius_m * cluster_radius_m;
    let mut used = vec![false; hot.len()];
    let mut detections = Vec::new();
    for seed in 0..hot.len() {
        if used[seed] {
            continue;
        }
        let seed_xy = pos(hot[seed].0);
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut count = 0usize;
        let mut best_size = 0.0f64;
        let mut size_sum = 0.0f64;
        let mut best_score = 0.0f64;
        for j in seed..hot.len() {
            if used[j] {
                continue;
            }
            let p = pos(hot[j].0);
            let dx = p.0 - seed_xy.0;
            let dy = p.1 - seed_xy.1;
            if dx * dx + dy * dy <= r2 {
                used[j] = true;
                cx += p.0;
                cy += p.1;
                count += 1;
                best_size = best_size.max(sizes[hot[j].0] as f64);
                size_sum += sizes[hot[j].0] as f64;
                best_score = best_score.max(hot[j].1);
            }
        }
        let size_m2 = match aggregation {
            SizeAggregation::Max => best_size,
            SizeAggregation::Integrated { central_area_m2 } => {
                (central_area_m2 * size_sum).sqrt()
            }
        };
        detections.push(Detection {
            xy: (cx / count as f64, cy / count as f64),
            size_m2,
            score: best_score,
        });
    }
    Ok(detections)
}

/// Size-estimation quality metrics.
#[derive(Debug, Clone, Serialize)]
pub struct SizeMetrics {
    pub mean_pct_error: f64,
    pub rmse_m2: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
}

/// Evaluation of detections against ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_truths: usize,
    pub n_detections: usize,
    pub matched_truths: usize,
    pub false_alarms: usize,
    /// Matched truths over all truths, percent.
    pub detection_rate_pct: f64,
    /// Unassociated detections over all detections, percent.
    pub false_alarm_rate_pct: f64,
    /// Distance from each associated detection to its truth, meters.
    pub planimetric_errors_m: Vec<f64>,
    /// Sample standard deviation of the planimetric errors.
    pub planimetric_std_m: f64,
    pub size: Option<SizeMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "n_truths,{}", self.n_truths);
        let _ = writeln!(out, "n_detections,{}", self.n_detections);
        let _ = writeln!(out, "detection_rate_pct,{}", self.detection_rate_pct);
        let _ = writeln!(out, "false_alarm_rate_pct,{}", self.false_alarm_rate_pct);
        let _ = writeln!(out, "planimetric_std_m,{}", self.planimetric_std_m);
        if let Some(s) = &self.size {
            let _ = writeln!(out, "size_mean_pct_error,{}", s.mean_pct_error);
            let _ = writeln!(out, "size_rmse_m2,{}", s.rmse_m2);
            let _ = writeln!(out, "size_r2,{}", s.r2);
            let _ = writeln!(out, "size_adjusted_r2,{}", s.adjusted_r2);
        }
        out
    }

    /// F1 from the detection rate (recall) and false-alarm rate (1 - precision).
    pub fn f1(&self) -> f64 {
        if self.n_detections == 0 || self.n_truths == 0 {
            return 0.0;
        }
        let recall = self.detection_rate_pct / 100.0;
        let precision = 1.0 - self.false_alarm_rate_pct / 100.0;
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two
/// values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Associate each detection with the nearest ground-truth nest within
/// `assoc_radius_m` (many detections may share one truth). Unassociated
/// detections are false alarms; the detection rate counts matched truths.
pub fn evaluate(
    detections: &[Detection],
    truths: &[NestRecord],
    assoc_radius_m: f64,
) -> MetricsReport {
    let mut matched = vec![false; truths.len()];
    let mut errors = Vec::new();
    let mut false_alarms = 0usize;
    for det in detections {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            let dx = det.xy.0 - truth.center_xy.0;
            let dy = det.xy.1 - truth.center_xy.1;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= assoc_radius_m && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((t, d));
            }
        }
        match best {
            Some((t, d)) => {
                matched[t] = true;
                errors.push(d);
            }
            None => false_alarms += 1,
        }
    }
    let matched_count = matched.iter().filter(|&&m| m).count();
    MetricsReport {
        n_truths: truths.len(),
        n_detections: detections.len(),
        matched_truths: matched_count,
        false_alarms,
        detection_rate_pct: if truths.is_empty() {
            0.0
        } else {
            100.0 * matched_count as f64 / truths.len() as f64
        },
        false_alarm_rate_pct: if detections.is_empty() {
            0.0
        } else {
            100.0 * false_alarms as f64 / detections.len() as f64
        },
        planimetric_std_m: sample_std(&errors),
        planimetric_errors_m: errors,
        size: None,
    }
}

/// Mean percent error, RMSE, R^2 and adjusted R^2 (one predictor) for paired
/// size estimates.
pub fn size_metrics(estimates: &[f64], truths: &[f64]) -> Result<SizeMetrics> {
    if estimates.len() != truths.len() {
        return Err(CoreError::Mismatch(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let n = truths.len();
    if n < 3 {
        return Err(CoreError::Parameter(
            "adjusted R^2 needs at least 3 samples".into(),
        ));
    }
    if truths.iter().any(|&t| t <= 0.0) {
        return Err(CoreError::Parameter(
            "true sizes must be positive for percent errors".into(),
        ));
    }
    let nf = n as f64;
    let mean_pct_error = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs() / t)
        .sum::<f64>()
        / nf
        * 100.0;
    let ss_res: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t) * (e - t)).sum();
    let rmse = (ss_res / nf).sqrt();
    let mean_truth = truths.iter().sum::<f64>() / nf;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean_truth) * (t - mean_truth)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    let adjusted_r2 = 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - 2.0);
    Ok(SizeMetrics {
        mean_pct_error,
        rmse_m2: rmse,
        r2,
        adjusted_r2,
    })
}

/// Detections as CSV: `x,y,size_m2,score`.
pub fn detections_to_csv(detections: &[Detection]) -> String {
    let mut out = String::from("x,y,size_m2,score\n");
    for d in detections {
        let _ = writeln!(out, "{},{},{},{}", d.xy.0, d.xy.1, d.size_m2, d.score);
    }
    out
}

/// Parse the CSV written by [`detections_to_csv`].
pub fn parse_detections_csv(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CoreError::Mismatch(format!(
                "detections CSV line {} has {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| CoreError::Mismatch(format!("bad number {s:?} in detections CSV")))
        };
        out.push(Detection {
            xy: (parse(fields[0])?, parse(fields[1])?),
            size_m2: parse(fields[2])?,
            score: parse(fields[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoGrid;

    fn image_with(values: &[(usize, usize, f32)], nx: usize) -> RealImage {
        let grid = GeoGrid::surface((0.0, 0.0), 0.2, nx, nx).unwrap();
        let mut img = Raster::<f32>::zeros(grid.clone());
        for &(ix, iy, v) in values {
            let idx = grid.index(ix, iy);
            img.plane_mut(0)[idx] = v;
        }
        img
    }

    #[test]
    fn refine_keeps_only_masked_sizes() {
        let size = image_with(&[(2, 2, 10.0), (5, 5, 7.0)], 8);
        let det = image_with(&[(2, 2, 0.9)], 8);
        let refined = refine(&size, &det, 0.5).unwrap();
        assert_eq!(refined.plane(0)[size.grid().index(2, 2)], 10.0);
        assert_eq!(refined.plane(0)[size.grid().index(5, 5)], 0.0);

        // All detections above threshold: identity.
        let hot = image_with(&[(2, 2, 1.0), (5, 5, 1.0)], 8);
        let same = refine(&size, &hot, 0.5).unwrap();
        assert_eq!(same.plane(0), size.plane(0));

        // All below threshold: zero image.
        let cold = image_with(&[], 8);
        let zeroed = refine(&size, &cold, 0.5).unwrap();
        assert!(zeroed.plane(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refine_is_idempotent() {
        let size = image_with(&[(2, 2, 10.0), (5, 5, 7.0), (3, 6, 2.0)], 8);
        let det = image_with(&[(2, 2, 0.9), (3, 6, 0.6)], 8);
        let once = refine(&size, &det, 0.5).unwrap();
        let twice = refine(&once, &det, 0.5).unwrap();
        assert_eq!(once.plane(0), twice.plane(0));
    }

    #[test]
    fn integrated_size_inverts_label_dilution() {
        // A 6.25 m^2 nest split across two tiles: labels sum to A^2 / C.
        let central_area = 17.64f64;
        let a = 6.25f64;
        let l1 = 0.7 * a * a / central_area;
        let l2 = 0.3 * a * a / central_area;
        let det = image_with(&[(10, 10, 0.9), (30, 10, 0.8)], 64);
        let sizes = image_with(&[(10, 10, l1 as f32), (30, 10, l2 as f32)], 64);
        let dets = extract_detections_with(
            &det,
            &sizes,
            0.5,
            8.0,
            SizeAggregation::Integrated {
                central_area_m2: central_area,
            },
        )
        .unwrap();
        assert_eq!(dets.len(), 1);
        assert!((dets[0].size_m2 - a).abs() < 1e-4, "size {}", dets[0].size_m2);

        // Single tile holding the whole nest: integrated == max == label.
        let det1 = image_with(&[(10, 10, 0.9)], 64);
        let sizes1 = image_with(&[(10, 10, a as f32)], 64);
        let d_int = extract_detections_with(
            &det1,
            &sizes1,
            0.5,
            8.0,
            SizeAggregation::Integrated {
                central_area_m2: a, // disc exactly fills the central region
            },
        )
        .unwrap();
        let d_max = extract_detections(&det1, &sizes1, 0.5, 8.0).unwrap();
        assert!((d_int[0].size_m2 - d_max[0].size_m2).abs() < 1e-6);
    }

    #[test]
    fn extraction_clusters_nearby_centers() {
        // Two hot pixels 4 m apart -> one cluster with radius 8.
        let det = image_with(&[(10, 10, 0.9), (30, 10, 0.8)], 64);
        let sizes = image_with(&[(10, 10, 12.0), (30, 10, 20.0)], 64);
        let dets = extract_detections(&det, &sizes, 0.5, 8.0).unwrap();
        assert_eq!(dets.len(), 1);
        assert!((dets[0].xy.0 - 4.0).abs() < 1e-9); // centroid of 2 m and 6 m
        assert_eq!(dets[0].size_m2, 20.0);

        // Same map, radius 2 -> two clusters.
        let dets2 = extract_detections(&det, &sizes, 0.5, 2.0).unwrap();
        assert_eq!(dets2.len(), 2);

        // Empty map -> empty list.
        let empty = image_with(&[], 16);
        let zeros = image_with(&[], 16);
        assert!(extract_detections(&empty, &zeros, 0.5, 8.0).unwrap().is_empty());
    }

    fn truth(id: usize, x: f64, y: f64) -> NestRecord {
        NestRecord {
            id,
            center_xy: (x, y),
            area_m2: 10.0,
        }
    }

    fn det(x: f64, y: f64) -> Detection {
        Detection {
            xy: (x, y),
            size_m2: 10.0,
            score: 1.0,
        }
    }

    #[test]
    fn table_error_column_reproduces_reported_std() {
        // Planimetric error column of the reference evaluation.
        let errors = [6.0, 11.0, 13.3, 9.5, 4.0, 8.5, 1.5, 19.0, 1.5, 3.5, 0.5, 9.5];
        let std = sample_std(&errors);
        assert!((std - 5.6).abs() <= 0.1, "sample std {std}");
    }

    #[test]
    fn exact_detections_score_perfectly() {
        let truths = vec![truth(0, 10.0, 10.0), truth(1, 50.0, 50.0)];
        let dets = vec![det(10.0, 10.0), det(50.0, 50.0)];
        let report = evaluate(&dets, &truths, 25.0);
        assert_eq!(report.detection_rate_pct, 100.0);
        assert_eq!(report.false_alarm_rate_pct, 0.0);
        assert_eq!(report.planimetric_std_m, 0.0);
        assert!((report.f1() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distant_detection_is_a_false_alarm() {
        let truths = vec![truth(0, 10.0, 10.0)];
        let dets = vec![det(10.0, 10.0), det(90.0, 90.0)];
        let report = evaluate(&dets, &truths, 25.0);
        assert_eq!(report.matched_truths, 1);
        assert_eq!(report.false_alarms, 1);
        assert_eq!(report.false_alarm_rate_pct, 50.0);
    }

    #[test]
    fn many_detections_share_one_truth() {
        let truths = vec![truth(0, 10.0, 10.0)];
        let dets = vec![det(12.0, 10.0), det(8.0, 10.0), det(10.0, 13.0)];
        let report = evaluate(&dets, &truths, 25.0);
        assert_eq!(report.detection_rate_pct, 100.0);
        assert_eq!(report.false_alarms, 0);
        assert_eq!(report.planimetric_errors_m.len(), 3);
    }

    #[test]
    fn zero_radius_makes_everything_false_alarm() {
        let truths = vec![truth(0, 10.0, 10.0)];
        let dets = vec![det(10.1, 10.0)];
        let report = evaluate(&dets, &truths, 0.0);
        assert_eq!(report.false_alarms, 1);
        assert_eq!(report.detection_rate_pct, 0.0);
    }

    #[test]
    fn size_metric_examples() {
        // Perfect estimates.
        let m = size_metrics(&[5.0, 10.0, 20.0], &[5.0, 10.0, 20.0]).unwrap();
        assert_eq!(m.rmse_m2, 0.0);
        assert_eq!(m.r2, 1.0);
        assert_eq!(m.mean_pct_error, 0.0);

        // Constant predictor at the truth mean: R^2 = 0.
        let m = size_metrics(&[15.0, 15.0, 15.0], &[10.0, 15.0, 20.0]).unwrap();
        assert!(m.r2.abs() < 1e-12);

        // Hand-computed RMSE: sqrt((4 + 4 + 9) / 3).
        let m = size_metrics(&[12.0, 18.0, 33.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((m.rmse_m2 - (17.0f64 / 3.0).sqrt()).abs() < 1e-12);

        assert!(size_metrics(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(size_metrics(&[1.0, 2.0, 3.0], &[0.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn detections_csv_round_trip() {
        let dets = vec![det(1.25, -3.5), det(10.0, 20.0)];
        let csv = detections_to_csv(&dets);
        let back = parse_detections_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].xy, (1.25, -3.5));
    }

    #[test]
    fn replicate_channels_expands_single_layer() {
        let grid = GeoGrid::surface((0.0, 0.0), 0.2, 4, 4).unwrap();
        let mut single = Raster::<f32>::zeros(grid);
        single.plane_mut(0)[3] = 7.0;
        single.mark_invalid(0, 5);
        let eight = replicate_channels(&single, 8).unwrap();
        assert_eq!(eight.plane_count(), 8);
        for k in 0..8 {
            assert_eq!(eight.plane(k)[3], 7.0);
            assert!(!eight.is_valid(k, 5));
        }
    }
}
