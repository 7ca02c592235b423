//! Stage implementations. Each subcommand consumes only prior-stage files,
//! so stages are independently re-runnable and cacheable.

use std::fs;
use std::path::Path;

use tomosar_core::dataset::{
    augment, render_reference, render_reference_with, tile_patches, write_patch_files, LabelMode,
    PatchSet, TileParams,
};
use tomosar_core::echo::{
    read_echoes, simulate_echoes, write_echoes, EchoSimConfig, RangeBins,
};
use tomosar_core::focus::{backproject_stack, magnitude_db, FocusConfig};
use tomosar_core::grid::GeoGrid;
use tomosar_core::mapping::{
    detect_map, detections_to_csv, evaluate, extract_detections_with, parse_detections_csv, refine,
    SizeAggregation,
    size_map, size_metrics, Detection, MetricsReport,
};
use tomosar_core::nn::{
    curves_to_csv, detection_network, load_model, save_model, size_network, train, Head,
    InputPipeline, LossKind, Model, TrainConfig, TrainSet,
};
use tomosar_core::raster::{read_complex, write_pgm, write_raster};
use tomosar_core::scene::{
    build_forest, carve_nest, helical_trajectory, linear_trajectory, parse_truth_csv, NestSpec,
    Scene, Trajectory,
};
use tomosar_core::tomo::{extract_profile, Transect};
use tomosar_core::{CoreError, RealStack, Result, Rng};

use crate::config::{PipelineConfig, TrajectoryConfig};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

fn region_grid(config: &PipelineConfig) -> Result<GeoGrid> {
    let px = config.region_px(); // region spans px pixel cells -> px centers at 0..(px-1)*spacing
    GeoGrid::surface((0.0, 0.0), config.scene.spacing_m, px, px)
}

fn build_region_scene(config: &PipelineConfig, region_idx: usize, rng: &Rng) -> Result<Scene> {
    let region = &config.scene.regions[region_idx];
    let grid = region_grid(config)?;
    let mut scene_rng = rng.fork_named(&format!("scene/{}", region.id));
    let mut scene = build_forest(config.scene.trees.as_ref(), &config.soil, &grid, &mut scene_rng)?;

    let mut nests: Vec<NestSpec> = Vec::new();
    for entry in &region.nests {
        let mut spec = NestSpec::preset(entry.preset, (entry.center[0], entry.center[1]))?;
        spec.void_contrast = entry.void_contrast;
        nests.push(spec);
    }
    if let Some(rn) = &region.random_nests {
        let mut place_rng = rng.fork_named(&format!("nests/{}", region.id));
        let size = config.scene.region_size_m;
        let mut centers: Vec<(f64, f64)> = Vec::new();
        let mut attempts = 0usize;
        while centers.len() < rn.count {
            if attempts > 10_000 {
                return Err(CoreError::Placement(format!(
                    "could not place {} nests in region {}",
                    rn.count, region.id
                )));
            }
            attempts += 1;
            let x = place_rng.range(rn.margin_m, size - rn.margin_m);
            let y = place_rng.range(rn.margin_m, size - rn.margin_m);
            if centers
                .iter()
                .all(|c| ((c.0 - x).powi(2) + (c.1 - y).powi(2)).sqrt() >= rn.min_separation_m)
            {
                centers.push((x, y));
            }
        }
        for (i, c) in centers.iter().enumerate() {
            let preset = rn.presets[i % rn.presets.len()];
            let mut spec = NestSpec::preset(preset, *c)?;
            spec.void_contrast = rn.void_contrast;
            nests.push(spec);
        }
    }
    let mut carve_rng = rng.fork_named(&format!("carve/{}", region.id));
    for spec in &nests {
        scene = carve_nest(scene, spec, &mut carve_rng)?;
    }
    Ok(scene)
}

fn build_trajectory(config: &PipelineConfig) -> Result<Trajectory> {
    let center = config.scene.region_size_m / 2.0;
    match &config.trajectory {
        TrajectoryConfig::Helical {
            radius_m,
            altitude_m,
            turns,
            arc_step_m,
        } => helical_trajectory((center, center), *radius_m, *altitude_m, *turns, *arc_step_m),
        TrajectoryConfig::Linear { start, end, step_m } => linear_trajectory(*start, *end, *step_m),
    }
}

/// simulate: scenes, ground truth, and echo sets for every region.
pub fn cmd_simulate(config: &PipelineConfig) -> Result<()> {
    let rng = Rng::new(config.seed);
    let trajectory = build_trajectory(config)?;
    for (idx, region) in config.scene.regions.iter().enumerate() {
        let scene = build_region_scene(config, idx, &rng)?;
        write_text(
            &config.scene_json(region.id),
            &scene.to_json(config.scene.dump_scatterers),
        )?;
        write_text(&config.truth_csv(region.id), &scene.truth_csv())?;

        let bins = RangeBins::covering(
            &scene,
            &trajectory,
            &config.radar,
            &config.soil,
            config.echo.oversample,
            config.echo.sinc_support_lobes,
        )?;
        let sim_cfg = EchoSimConfig {
            bins,
            sinc_support_lobes: config.echo.sinc_support_lobes,
            noise_sigma: config.echo.noise_sigma,
        };
        let echo_rng = rng.fork_named(&format!("echo/{}", region.id));
        let echoes = simulate_echoes(
            &scene,
            &trajectory,
            &config.radar,
            &config.soil,
            &sim_cfg,
            &echo_rng,
        )?;
        let path = config.echo_file(region.id);
        ensure_parent(&path)?;
        write_echoes(&echoes, &path)?;
        eprintln!(
            "region {}: {} scatterers, {} pulses x {} bins -> {}",
            region.id,
            scene.scatterers.len(),
            echoes.pulse_count(),
            echoes.bins.count,
            path.display()
        );
    }
    Ok(())
}

/// focus: back-project every region's echoes into a tomographic stack.
pub fn cmd_focus(config: &PipelineConfig) -> Result<()> {
    for &region in &config.region_ids() {
        let echoes = read_echoes(&config.echo_file(region))?;
        let grid = region_grid(config)?.with_depths(config.focus.depths_m.clone())?;
        let focus_cfg = FocusConfig {
            grid,
            interpolation: config.focus.interpolation,
            radiometric: config.focus.radiometric,
            soil: config.soil.clone(),
            gain_floor: config.focus.gain_floor,
        };
        let stack = backproject_stack(&echoes, &focus_cfg)?;
        let path = config.stack_file(region);
        ensure_parent(&path)?;
        write_raster(&stack, &path)?;
        eprintln!(
            "region {region}: {} layers of {}x{} -> {}",
            stack.plane_count(),
            stack.grid().nx,
            stack.grid().ny,
            path.display()
        );
    }
    Ok(())
}

/// profile: reflectivity transects (optionally differenced against a
/// baseline region) as CSV files.
pub fn cmd_profile(config: &PipelineConfig) -> Result<()> {
    let pc = config
        .profile
        .as_ref()
        .ok_or_else(|| CoreError::Parameter("config has no profile section".into()))?;
    let stack = read_complex(&config.stack_file(pc.region))?;
    let db = magnitude_db(&stack, config.focus.floor_db, None)?;
    let baseline_db = match pc.baseline_region {
        None => None,
        Some(r) => Some(magnitude_db(
            &read_complex(&config.stack_file(r))?,
            config.focus.floor_db,
            None,
        )?),
    };
    let transect = Transect {
        start_xy: (pc.transect_start[0], pc.transect_start[1]),
        end_xy: (pc.transect_end[0], pc.transect_end[1]),
        samples: None,
    };
    for &depth in &pc.depths_m {
        let layer_idx = db
            .grid()
            .depths
            .iter()
            .position(|&d| (d - depth).abs() < 1e-9)
            .ok_or_else(|| {
                CoreError::Parameter(format!("depth {depth} not in the focused stack"))
            })?;
        let layer = layer_raster(&db, layer_idx)?;
        let profile = extract_profile(&layer, &transect)?;
        let mut csv = profile.to_csv();
        if let Some(base) = &baseline_db {
            let base_layer = layer_raster(base, layer_idx)?;
            let base_profile = extract_profile(&base_layer, &transect)?;
            let mut out = String::from("s_m,x,y,db,db_baseline,delta_db\n");
            for i in 0..profile.positions_m.len() {
                use std::fmt::Write as _;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    profile.positions_m[i],
                    profile.xy[i].0,
                    profile.xy[i].1,
                    profile.values_db[i],
                    base_profile.values_db[i],
                    profile.values_db[i] - base_profile.values_db[i]
                );
            }
            csv = out;
        }
        let tag = format!("region_{}_depth_{:.2}", pc.region, depth);
        let path = config.profile_csv(&tag);
        write_text(&path, &csv)?;
        eprintln!("profile -> {}", path.display());
    }
    Ok(())
}

fn layer_raster(stack_db: &RealStack, layer: usize) -> Result<RealStack> {
    let grid = stack_db.grid().at_depth(layer)?;
    let mut out = tomosar_core::image::Raster::from_planes(grid, vec![stack_db.plane(layer).to_vec()])?;
    out.set_invalid_indices(&[stack_db.invalid_indices()[layer].clone()])?;
    Ok(out)
}

/// dataset: magnitude stacks + truth references tiled into labeled patches.
pub fn cmd_dataset(config: &PipelineConfig) -> Result<()> {
    for &region in &config.region_ids() {
        let stack = read_complex(&config.stack_file(region))?;
        let magnitude = stack.magnitude();
        let truth_text = fs::read_to_string(config.truth_csv(region))
            .map_err(|e| CoreError::io(config.truth_csv(region), e))?;
        let truths = parse_truth_csv(&truth_text)?;
        let grid = magnitude.grid().clone();
        let det_ref = render_reference_with(
            &truths,
            &grid,
            LabelMode::Detection,
            config.dataset.detection_min_radius_m,
        )?;
        let size_ref = render_reference(&truths, &grid, LabelMode::Size)?;
        let det_params = TileParams {
            tile_m: config.dataset.tile_m,
            stride_m: config.dataset.stride_m,
            central_px: config.dataset.detection_central_px,
        };
        let size_params = TileParams {
            central_px: config.dataset.size_central_px,
            ..det_params.clone()
        };
        let det = tile_patches(&magnitude, &det_ref, &det_params, LabelMode::Detection, region)?;
        let size = tile_patches(&magnitude, &size_ref, &size_params, LabelMode::Size, region)?;
        let path = config.patches_file(region);
        ensure_parent(&path)?;
        write_patch_files(&det, &size, &path)?;
        eprintln!(
            "region {region}: {} patches ({} with nest overlap) -> {}",
            det.len(),
            det.patches.iter().filter(|p| p.label > 0.0).count(),
            path.display()
        );
    }
    Ok(())
}

fn to_train_set(
    set: &PatchSet,
    pipeline: &InputPipeline,
    augment_floor: f64,
    augment_policy: &tomosar_core::dataset::AugmentPolicy,
    rng: Option<&mut Rng>,
) -> Result<TrainSet> {
    let mut inputs = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for p in &set.patches {
        inputs.push(pipeline.transform(&p.data)?);
        labels.push(p.label);
    }
    if let Some(rng) = rng {
        for p in &set.patches {
            if p.label > augment_floor {
                for aug in augment(p, set.tile_px, set.channels, rng, augment_policy) {
                    inputs.push(pipeline.transform(&aug.data)?);
                    labels.push(aug.label);
                }
            }
        }
    }
    Ok(TrainSet {
        input_hwc: pipeline.input_hwc,
        inputs,
        labels,
    })
}

/// train: fit the detection and size networks on the hold-out split.
pub fn cmd_train(config: &PipelineConfig) -> Result<()> {
    let rng = Rng::new(config.seed);
    let mut det_sets = Vec::new();
    let mut size_sets = Vec::new();
    for &region in &config.region_ids() {
        det_sets.push(tomosar_core::dataset::read_patch_files(
            &config.patches_file(region),
            LabelMode::Detection,
        )?);
        size_sets.push(tomosar_core::dataset::read_patch_files(
            &config.patches_file(region),
            LabelMode::Size,
        )?);
    }
    let val_region = config.train.validation_region;
    let (det_train, det_val) = tomosar_core::dataset::split_regions(&det_sets, val_region)?;
    let (size_train, size_val) = tomosar_core::dataset::split_regions(&size_sets, val_region)?;
    eprintln!(
        "training on {} patches, validating on {} (region {val_region} held out)",
        det_train.len(),
        det_val.len()
    );

    let profile = config.train.profile;
    let mut pipeline = InputPipeline::new(
        det_train.tile_px,
        det_train.channels,
        profile.input_hwc(),
        config.train.log_scale,
    )?;
    pipeline.fit_standardizer(det_train.patches.iter().map(|p| p.data.as_slice()))?;

    let size_train = if config.train.size_positives_only {
        let mut filtered = PatchSet {
            mode: size_train.mode,
            tile_px: size_train.tile_px,
            channels: size_train.channels,
            patches: Vec::new(),
        };
        // Positives follow the detection labels so the inflated detection
        // discs and the physical size discs select the same patches.
        for (d, s) in det_train.patches.iter().zip(&size_train.patches) {
            if d.label > config.dataset.augment_label_floor {
                filtered.patches.push(s.clone());
            }
        }
        filtered
    } else {
        size_train
    };

    let det_train = if config.train.max_negatives > 0 {
        let mut keep_rng = rng.fork_named("negatives");
        let negatives: Vec<usize> = det_train
            .patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label <= config.dataset.augment_label_floor)
            .map(|(i, _)| i)
            .collect();
        let mut order = negatives.clone();
        keep_rng.shuffle(&mut order);
        let kept: std::collections::BTreeSet<usize> = order
            .into_iter()
            .take(config.train.max_negatives)
            .collect();
        let mut subsampled = PatchSet {
            mode: det_train.mode,
            tile_px: det_train.tile_px,
            channels: det_train.channels,
            patches: Vec::new(),
        };
        for (i, p) in det_train.patches.iter().enumerate() {
            if p.label > config.dataset.augment_label_floor || kept.contains(&i) {
                subsampled.patches.push(p.clone());
            }
        }
        eprintln!(
            "detection negatives subsampled: {} of {}",
            kept.len(),
            negatives.len()
        );
        subsampled
    } else {
        det_train
    };

    for (name, train_split, val_split, head, loss, stage) in [
        (
            "detection",
            &det_train,
            &det_val,
            Head::Sigmoid,
            LossKind::BinaryCrossEntropy,
            &config.train.detection,
        ),
        (
            "size",
            &size_train,
            &size_val,
            Head::Relu,
            LossKind::MeanSquaredError,
            &config.train.size,
        ),
    ] {
        let mut aug_rng = rng.fork_named(&format!("augment/{name}"));
        let train_set = to_train_set(
            train_split,
            &pipeline,
            config.dataset.augment_label_floor,
            &config.dataset.augment,
            Some(&mut aug_rng),
        )?;
        let val_set = to_train_set(val_split, &pipeline, 0.0, &config.dataset.augment, None)?;
        let mut init_rng = rng.fork_named(&format!("init/{name}"));
        let mut network = match head {
            Head::Sigmoid => detection_network(profile, &mut init_rng)?,
            Head::Relu => size_network(profile, &mut init_rng)?,
        };
        // The rectified regression head saturates at zero if the whole batch
        // drifts negative; regress on the pre-head activation instead (the
        // targets are non-negative) and reattach the head for deployment.
        let detached_head = if head == Head::Relu {
            network.layers.pop()
        } else {
            None
        };
        let train_cfg = TrainConfig {
            adam: stage.adam,
            loss,
            epochs: stage.epochs,
            batch_size: stage.batch_size,
        };
        let mut order_rng = rng.fork_named(&format!("order/{name}"));
        let curves = train(&mut network, &train_set, Some(&val_set), &train_cfg, &mut order_rng)?;
        if let Some(layer) = detached_head {
            network.layers.push(layer);
        }
        let last = curves.last().expect("at least one epoch");
        eprintln!(
            "{name}: {} samples, epoch {} train_loss {:.5} val_metric {:?}",
            train_set.len(),
            last.epoch,
            last.train_loss,
            last.val_metric
        );

        let model = Model {
            network,
            head,
            pipeline: pipeline.clone(),
        };
        let path = config.model_file(name);
        ensure_parent(&path)?;
        save_model(&model, &path)?;
        write_text(&config.curves_file(name), &curves_to_csv(&curves))?;
    }
    Ok(())
}

/// infer: detection/size/refined maps plus extracted detections per region.
pub fn cmd_infer(config: &PipelineConfig) -> Result<()> {
    let det_model = load_model(&config.model_file("detection"))?;
    let size_model = load_model(&config.model_file("size"))?;
    let params = TileParams {
        tile_m: config.dataset.tile_m,
        stride_m: config.dataset.stride_m,
        central_px: config.dataset.detection_central_px,
    };
    for &region in &config.region_ids() {
        let stack = read_complex(&config.stack_file(region))?;
        let magnitude = stack.magnitude();
        let det = detect_map(&det_model, &magnitude, &params)?;
        let size = size_map(&size_model, &magnitude, &params)?;
        let refined = refine(&size, &det, config.eval.detection_threshold)?;
        let aggregation = match config.eval.size_aggregation {
            crate::config::SizeAggregationKind::Max => SizeAggregation::Max,
            crate::config::SizeAggregationKind::Integrated => {
                let side = config.dataset.size_central_px as f64 * config.scene.spacing_m;
                SizeAggregation::Integrated {
                    central_area_m2: side * side,
                }
            }
        };
        let detections = extract_detections_with(
            &det,
            &refined,
            config.eval.detection_threshold,
            config.eval.cluster_radius_m,
            aggregation,
        )?;
        for (kind, map) in [("detect", &det), ("size", &size), ("refined", &refined)] {
            let path = config.map_file(region, kind);
            ensure_parent(&path)?;
            write_raster(map, &path)?;
            if config.eval.dump_pgm {
                let plane = map.single()?;
                let hi = plane.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
                write_pgm(
                    plane,
                    map.grid().nx,
                    map.grid().ny,
                    0.0,
                    hi,
                    &path.with_extension("pgm"),
                )?;
            }
        }
        write_text(&config.detections_csv(region), &detections_to_csv(&detections))?;
        eprintln!("region {region}: {} detections", detections.len());
    }
    Ok(())
}

/// evaluate: score detections against ground truth for the eval regions.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<MetricsReport> {
    let mut detections: Vec<Detection> = Vec::new();
    let mut truths = Vec::new();
    for &region in &config.eval_regions() {
        // Region scenes share local coordinates; offset them so multi-region
        // evaluations never cross-match.
        let offset = (region as f64) * 10.0 * config.scene.region_size_m;
        let text = fs::read_to_string(config.detections_csv(region))
            .map_err(|e| CoreError::io(config.detections_csv(region), e))?;
        for mut d in parse_detections_csv(&text)? {
            d.xy.0 += offset;
            detections.push(d);
        }
        let truth_text = fs::read_to_string(config.truth_csv(region))
            .map_err(|e| CoreError::io(config.truth_csv(region), e))?;
        for mut t in parse_truth_csv(&truth_text)? {
            t.center_xy.0 += offset;
            truths.push(t);
        }
    }
    let mut report = evaluate(&detections, &truths, config.eval.association_radius_m);

    // One size estimate per matched truth: the largest associated detection.
    let mut est = Vec::new();
    let mut tru = Vec::new();
    for t in &truths {
        let best = detections
            .iter()
            .filter(|d| {
                let dx = d.xy.0 - t.center_xy.0;
                let dy = d.xy.1 - t.center_xy.1;
                (dx * dx + dy * dy).sqrt() <= config.eval.association_radius_m
            })
            .map(|d| d.size_m2)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        if let Some(size) = best {
            est.push(size);
            tru.push(t.area_m2);
        }
    }
    if est.len() >= 3 {
        report.size = Some(size_metrics(&est, &tru)?);
    }

    write_text(&config.report_file("json"), &report.to_json())?;
    write_text(&config.report_file("csv"), &report.to_csv())?;
    println!("{}", report.to_json());
    Ok(report)
}
