//! The single JSON pipeline configuration (`tomosar-config/1`).
//!
//! Every stage reads the same document; unknown keys are rejected so typos
//! fail loudly before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tomosar_core::dataset::AugmentPolicy;
use tomosar_core::focus::RangeInterp;
use tomosar_core::grid::default_depths;
use tomosar_core::nn::{AdamConfig, NetProfile};
use tomosar_core::scene::{NestSpec, RadarParams, SoilModel, TreeSpec};
use tomosar_core::{CoreError, Result};

pub const CONFIG_VERSION: &str = "tomosar-config/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: String,
    pub seed: u64,
    /// All stage artifacts live under this directory.
    pub workdir: PathBuf,
    #[serde(default)]
    pub radar: RadarParams,
    #[serde(default)]
    pub soil: SoilModel,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub echo: EchoConfig,
    #[serde(default)]
    pub focus: FocusStageConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainStageConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Square region side length in meters.
    pub region_size_m: f64,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    /// Tree layout, absent for soil-only scenes.
    #[serde(default)]
    pub trees: Option<TreeSpec>,
    pub regions: Vec<RegionConfig>,
    #[serde(default)]
    pub dump_scatterers: bool,
}

fn default_spacing() -> f64 {
    tomosar_core::DEFAULT_SPACING_M
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: u32,
    /// Explicit nests; mutually exclusive with `random_nests`.
    #[serde(default)]
    pub nests: Vec<NestEntry>,
    #[serde(default)]
    pub random_nests: Option<RandomNests>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestEntry {
    /// Table-preset chamber count (6, 20, 50 or 100).
    pub preset: usize,
    pub center: [f64; 2],
    #[serde(default = "default_contrast")]
    pub void_contrast: f64,
}

fn default_contrast() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomNests {
    pub count: usize,
    /// Preset pool cycled through while placing.
    pub presets: Vec<usize>,
    #[serde(default = "default_min_sep")]
    pub min_separation_m: f64,
    /// Keep-out border from the region edge.
    #[serde(default = "default_margin")]
    pub margin_m: f64,
    #[serde(default = "default_contrast")]
    pub void_contrast: f64,
}

fn default_min_sep() -> f64 {
    18.0
}

fn default_margin() -> f64 {
    12.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum TrajectoryConfig {
    Helical {
        radius_m: (f64, f64),
        altitude_m: (f64, f64),
        turns: f64,
        arc_step_m: f64,
    },
    Linear {
        /// Start/end offsets relative to the region origin.
        start: [f64; 3],
        end: [f64; 3],
        step_m: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EchoConfig {
    /// Range-bin oversampling relative to c/(2B).
    pub oversample: f64,
    pub sinc_support_lobes: f64,
    pub noise_sigma: f64,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            oversample: 2.0,
            sinc_support_lobes: 4.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocusStageConfig {
    pub depths_m: Vec<f64>,
    pub interpolation: RangeInterp,
    pub radiometric: bool,
    pub gain_floor: f64,
    /// Decibel floor for magnitude conversion.
    pub floor_db: f64,
}

impl Default for FocusStageConfig {
    fn default() -> Self {
        FocusStageConfig {
            depths_m: default_depths(),
            interpolation: RangeInterp::Linear,
            radiometric: true,
            gain_floor: 1e-3,
            floor_db: -80.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub tile_m: f64,
    pub stride_m: f64,
    /// Central label region (pixels, odd) for detection references.
    pub detection_central_px: usize,
    /// Central label region for size references.
    pub size_central_px: usize,
    /// Minimum detection-reference disc radius; 0 keeps the physical size.
    pub detection_min_radius_m: f64,
    pub augment: AugmentPolicy,
    /// Patches whose detection label exceeds this floor get augmented.
    pub augment_label_floor: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            tile_m: 12.0,
            stride_m: 4.0,
            detection_central_px: 21,
            size_central_px: 21,
            detection_min_radius_m: 0.0,
            augment: AugmentPolicy::default(),
            augment_label_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainStageConfig {
    pub profile: NetProfile,
    pub log_scale: bool,
    pub validation_region: u32,
    /// Restrict size-net training to patches overlapping a nest. The refined
    /// map is masked by detections anyway, and all-zero regression targets
    /// kill the rectified output head.
    pub size_positives_only: bool,
    /// Cap on zero-label detection patches kept per training run
    /// (deterministic subsample; 0 keeps all). Background speckle tiles are
    /// highly redundant.
    pub max_negatives: usize,
    pub detection: StageTrain,
    pub size: StageTrain,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        TrainStageConfig {
            profile: NetProfile::Downscaled,
            log_scale: true,
            validation_region: 5,
            size_positives_only: true,
            max_negatives: 0,
            detection: StageTrain {
                epochs: 35,
                batch_size: 64,
                adam: AdamConfig::default(),
            },
            size: StageTrain {
                epochs: 40,
                batch_size: 64,
                adam: AdamConfig::default(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTrain {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeAggregationKind {
    /// Largest refined value in the cluster.
    Max,
    /// sqrt(central_area * sum of cluster labels); inverts central-mean
    /// dilution for nests smaller than the label region.
    Integrated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub association_radius_m: f64,
    pub cluster_radius_m: f64,
    pub detection_threshold: f64,
    pub size_aggregation: SizeAggregationKind,
    /// Regions evaluated; empty = the validation region only.
    pub regions: Vec<u32>,
    pub dump_pgm: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            association_radius_m: 25.0,
            cluster_radius_m: 8.0,
            detection_threshold: 0.5,
            size_aggregation: SizeAggregationKind::Max,
            regions: Vec::new(),
            dump_pgm: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub region: u32,
    /// Optional reference region subtracted from the profile.
    #[serde(default)]
    pub baseline_region: Option<u32>,
    pub transect_start: [f64; 2],
    pub transect_end: [f64; 2],
    /// Layer depths to extract (must exist in the focused stack).
    pub depths_m: Vec<f64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CoreError::Parameter(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CoreError::Parameter(format!(
                "config version {:?}, expected {CONFIG_VERSION:?}",
                self.version
            )));
        }
        self.radar.validate()?;
        self.soil.validate()?;
        if self.scene.regions.is_empty() {
            return Err(CoreError::Parameter("no regions configured".into()));
        }
        let mut ids: Vec<u32> = self.scene.regions.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.scene.regions.len() {
            return Err(CoreError::Parameter("duplicate region ids".into()));
        }
        if !(self.scene.region_size_m > 0.0) || !(self.scene.spacing_m > 0.0) {
            return Err(CoreError::Parameter(
                "region size and spacing must be positive".into(),
            ));
        }
        for region in &self.scene.regions {
            if !region.nests.is_empty() && region.random_nests.is_some() {
                return Err(CoreError::Parameter(format!(
                    "region {} mixes explicit and random nests",
                    region.id
                )));
            }
            for nest in &region.nests {
                NestSpec::preset(nest.preset, (nest.center[0], nest.center[1]))?;
            }
            if let Some(rn) = &region.random_nests {
                for &p in &rn.presets {
                    NestSpec::preset(p, (0.0, 0.0))?;
                }
                if rn.presets.is_empty() || rn.count == 0 {
                    return Err(CoreError::Parameter(format!(
                        "region {} random_nests needs presets and a count",
                        region.id
                    )));
                }
            }
        }
        if self.focus.depths_m.is_empty() {
            return Err(CoreError::Parameter("focus.depths_m is empty".into()));
        }
        Ok(())
    }

    /// Pixel count per region side.
    pub fn region_px(&self) -> usize {
        (self.scene.region_size_m / self.scene.spacing_m).round() as usize
    }

    pub fn region_ids(&self) -> Vec<u32> {
        self.scene.regions.iter().map(|r| r.id).collect()
    }

    /// Regions the evaluate stage scores: configured list or the validation
    /// region.
    pub fn eval_regions(&self) -> Vec<u32> {
        if self.eval.regions.is_empty() {
            vec![self.train.validation_region]
        } else {
            self.eval.regions.clone()
        }
    }

    // Stage artifact paths.

    pub fn scene_json(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("scenes/region_{region}.scene.json"))
    }

    pub fn truth_csv(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("scenes/region_{region}.truth.csv"))
    }

    pub fn echo_file(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("echoes/region_{region}.echo"))
    }

    pub fn stack_file(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("stacks/region_{region}.stack"))
    }

    pub fn patches_file(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("dataset/region_{region}.patches"))
    }

    pub fn model_file(&self, name: &str) -> PathBuf {
        self.workdir.join(format!("models/{name}.weights"))
    }

    pub fn curves_file(&self, name: &str) -> PathBuf {
        self.workdir.join(format!("models/{name}.curves.csv"))
    }

    pub fn map_file(&self, region: u32, kind: &str) -> PathBuf {
        self.workdir.join(format!("maps/region_{region}.{kind}.raster"))
    }

    pub fn detections_csv(&self, region: u32) -> PathBuf {
        self.workdir.join(format!("maps/region_{region}.detections.csv"))
    }

    pub fn report_file(&self, ext: &str) -> PathBuf {
        self.workdir.join(format!("reports/metrics.{ext}"))
    }

    pub fn profile_csv(&self, tag: &str) -> PathBuf {
        self.workdir.join(format!("profiles/{tag}.csv"))
    }
}

/// Built-in scenario presets that override the scene section: a 6 m
/// nine-tree plot with one centered nest (or none for `trees-only`).
pub fn apply_preset(config: &mut PipelineConfig, preset: &str) -> Result<()> {
    let nest_preset = match preset {
        "trees-only" => None,
        "sim-6ch" => Some(6),
        "sim-20ch" => Some(20),
        "sim-50ch" => Some(50),
        "sim-100ch" => Some(100),
        other => {
            return Err(CoreError::Parameter(format!(
                "unknown preset {other:?} (trees-only, sim-6ch, sim-20ch, sim-50ch, sim-100ch)"
            )))
        }
    };
    config.scene.region_size_m = 6.0;
    config.scene.trees = Some(TreeSpec::default());
    let center = config.scene.region_size_m / 2.0;
    config.scene.regions = vec![RegionConfig {
        id: 1,
        nests: nest_preset
            .map(|p| {
                vec![NestEntry {
                    preset: p,
                    center: [center, center],
                    void_contrast: 1.0,
                }]
            })
            .unwrap_or_default(),
        random_nests: None,
    }];
    config.soil.lattice_spacing_m = config.soil.lattice_spacing_m.min(0.15);
    config.trajectory = TrajectoryConfig::Helical {
        radius_m: (24.0, 26.0),
        altitude_m: (27.0, 40.0),
        turns: 2.0,
        arc_step_m: 0.35,
    };
    Ok(())
}
