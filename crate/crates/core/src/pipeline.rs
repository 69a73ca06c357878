//! End-to-end training runs: configuration, initialization and the ablation
//! variants.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bench::{make_splits, Condition, Dataset, ModelSet, SplitMode};
use crate::bridge::BridgeVideos;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::init::{init_from_depth, DepthView};
use crate::losses::{BoundaryGeometry, LossConfig};
use crate::optim::{train, OptimConfig, TrainOutcome, TrainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Back-project the middle frame's cubemap faces of every used location.
    Depth { stride: usize },
    /// The dataset's teacher with Gaussian noise on positions and colors.
    PerturbedTeacher {
        position_sigma: f64,
        color_sigma: f64,
    },
    /// An existing `.stz` file.
    Scene { path: PathBuf },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Depth { stride: 4 }
    }
}

/// The JSON file read by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub optim: OptimConfig,
    /// Missing fields default; `tau` is then derived from the capture spacing.
    #[serde(default)]
    pub loss: Option<LossConfig>,
    /// Dataset directory written by `gen`.
    pub data: PathBuf,
    /// Bridge directory written by `bridge`.
    #[serde(default)]
    pub bridges: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    /// Capture locations to train on; all when absent.
    #[serde(default)]
    pub locations: Option<Vec<usize>>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> SplitMode {
    SplitMode::Full
}

/// Loss settings for a dataset: the given config, or defaults with τ taken
/// from the capture spacing.
pub fn loss_for(data: &Dataset, loss: Option<&LossConfig>) -> Result<LossConfig> {
    match loss {
        Some(l) => Ok(*l),
        None => Ok(LossConfig::for_geometry(&BoundaryGeometry::new(
            data.locations(),
        )?)),
    }
}

pub fn depth_init(
    data: &Dataset,
    stride: usize,
    locations: Option<&[usize]>,
) -> Result<GaussianScene> {
    let frame = data.manifest.frames / 2;
    let n_loc = data.manifest.spec.capture.locations.len();
    let locs: Vec<usize> = locations.map_or_else(|| (0..n_loc).collect(), |l| l.to_vec());
    let mut views = Vec::new();
    for &l in &locs {
        let cm = data.cubemap(l, frame).ok_or_else(|| {
            Error::Manifest(format!("no panorama for location {l}, frame {frame}"))
        })?;
        for f in &cm.faces {
            views.push(DepthView {
                image: &f.image,
                depth: f.depth.as_ref().ok_or(Error::MissingDepth)?,
                camera: &f.camera,
                t: cm.t,
            });
        }
    }
    let w = &data.manifest.spec.world;
    let (scene, report) = init_from_depth(&views, stride, w.duration, w.background)?;
    log::info!(
        "depth init: {} Gaussians, {} pixels skipped",
        report.created,
        report.skipped
    );
    Ok(scene)
}

pub fn perturbed_teacher(
    teacher: &GaussianScene,
    position_sigma: f64,
    color_sigma: f64,
    seed: u64,
) -> Result<GaussianScene> {
    let pos = Normal::new(0.0, position_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let col = Normal::new(0.0, color_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = teacher.clone();
    for g in &mut out.gaussians {
        for p in &mut g.mu0 {
            *p += pos.sample(&mut rng);
        }
        for c in &mut g.color0 {
            *c += col.sample(&mut rng);
        }
    }
    Ok(out)
}

pub fn initial_scene(
    data: &Dataset,
    init: &InitSpec,
    locations: Option<&[usize]>,
    seed: u64,
) -> Result<GaussianScene> {
    match init {
        InitSpec::Depth { stride } => depth_init(data, *stride, locations),
        InitSpec::PerturbedTeacher {
            position_sigma,
            color_sigma,
        } => perturbed_teacher(&data.teacher, *position_sigma, *color_sigma, seed),
        InitSpec::Scene { path } => crate::scene_io::load_scene(path),
    }
}

/// Initializes and trains one scene on an already loaded dataset.
pub fn run_training(
    data: &Dataset,
    bridges: Option<&BridgeVideos>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let loss = loss_for(data, cfg.loss.as_ref())?;
    let split = make_splits(&data.manifest, cfg.split, Condition::SeenViewpoints)?;
    let locs = cfg.locations.as_deref();
    let set = TrainSet::new(data, &split, bridges, locs, &loss)?;
    let init = initial_scene(data, &cfg.init, locs, cfg.seed)?;
    train(&init, &set, &cfg.optim, &loss, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Bridge views, one joint scene, seam-aware loss.
    Full,
    /// One joint scene with the seam-aware loss, no bridge views.
    NoBridge,
    /// One scene per location, plain photometric loss, no bridge views.
    Independent,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoBridge, Variant::Independent];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBridge => "no_bridge",
            Variant::Independent => "independent",
        }
    }
}

/// Trains one ablation variant from depth initialization. The independent
/// variant yields one model per location, each anchored at its location.
pub fn run_variant(
    data: &Dataset,
    bridges: &BridgeVideos,
    variant: Variant,
    optim: &OptimConfig,
    stride: usize,
    seed: u64,
) -> Result<ModelSet> {
    let base = TrainConfig {
        optim: *optim,
        loss: None,
        data: PathBuf::new(),
        bridges: None,
        split: SplitMode::Full,
        locations: None,
        init: InitSpec::Depth { stride },
        seed,
    };
    match variant {
        Variant::Full => Ok(ModelSet::single(
            run_training(data, Some(bridges), &base)?.scene,
        )),
        Variant::NoBridge => Ok(ModelSet::single(run_training(data, None, &base)?.scene)),
        Variant::Independent => {
            let mut loss = loss_for(data, None)?;
            loss.lambda_seam = 0.0;
            loss.lambda_cross = 0.0;
            let mut models = Vec::new();
            for (l, anchor) in data.locations().into_iter().enumerate() {
                let cfg = TrainConfig {
                    loss: Some(loss),
                    locations: Some(vec![l]),
                    ..base.clone()
                };
                models.push((run_training(data, None, &cfg)?.scene, Some(anchor)));
            }
            Ok(ModelSet { models })
        }
    }
}
