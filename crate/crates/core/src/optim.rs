//! Joint optimization of one scene against real rig views and bridge views.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{psnr, Dataset, SourceKind, SplitMode, SplitSpec};
use crate::bridge::{threshold_mask, BridgeFrame, BridgeVideos};
use crate::camera::{render_perspective_image, PinholeCamera, ViewRig};
use crate::error::{Error, Result};
use crate::gaussian::{slot, GaussianScene, MAX_LOG_SCALE, MIN_LOG_SCALE, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::losses::{
    anisotropy_reg, boundary_distance, cross_loss, sail_loss, BoundaryGeometry, LossConfig,
};
use crate::render::{render, render_backward, SceneGradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_feature: f64,
    pub lr_opacity: f64,
    pub lr_scaling: f64,
    pub lr_rotation: f64,
    pub lr_position: f64,
    /// Position learning rate at the last iteration relative to the first.
    pub position_lr_final_ratio: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    pub batch: usize,
    /// 0 disables pruning.
    pub prune_interval: usize,
    pub prune_opacity: f64,
    pub bridge_weight: f64,
    pub cross_pair_prob: f64,
    /// Iterations between log rows; the probe view is rendered only then.
    pub log_interval: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_feature: 0.001,
            lr_opacity: 0.05,
            lr_scaling: 0.005,
            lr_rotation: 0.001,
            lr_position: 0.00016,
            position_lr_final_ratio: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            iterations: 2000,
            batch: 4,
            prune_interval: 100,
            prune_opacity: 0.005,
            bridge_weight: 0.5,
            cross_pair_prob: 0.5,
            log_interval: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [
            self.lr_feature,
            self.lr_opacity,
            self.lr_scaling,
            self.lr_rotation,
            self.lr_position,
        ];
        if lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.adam_beta1 > 0.0
            && self.adam_beta1 < 1.0
            && self.adam_beta2 > 0.0
            && self.adam_beta2 < 1.0)
        {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.position_lr_final_ratio.is_nan()
            || self.position_lr_final_ratio <= 0.0
            || self.bridge_weight < 0.0
            || self.adam_eps < 0.0
        {
            return Err(Error::Config(
                "decay ratio must be positive, bridge weight and eps non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cross_pair_prob) {
            return Err(Error::Config("cross_pair_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate of every parameter of one Gaussian at `iteration`.
    pub fn gaussian_lrs(&self, iteration: usize) -> [f64; PARAMS_PER_GAUSSIAN] {
        let frac = if self.iterations > 1 {
            iteration as f64 / (self.iterations - 1) as f64
        } else {
            0.0
        };
        let lr_pos = self.lr_position * self.position_lr_final_ratio.powf(frac);
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        for (i, v) in lr.iter_mut().enumerate() {
            *v = match ParamGroup::of(i) {
                ParamGroup::Feature => self.lr_feature,
                ParamGroup::Opacity => self.lr_opacity,
                ParamGroup::Scaling => self.lr_scaling,
                ParamGroup::Rotation => self.lr_rotation,
                ParamGroup::Position => lr_pos,
            };
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Feature,
    Opacity,
    Scaling,
    Rotation,
    Position,
}

impl ParamGroup {
    /// Group of a parameter index within one Gaussian. The temporal center
    /// moves with the position group.
    pub fn of(i: usize) -> Self {
        use slot::*;
        if COLOR0.contains(&i) || COLOR_RATE.contains(&i) {
            ParamGroup::Feature
        } else if i == OPACITY_LOGIT || i == TEMPORAL_SHARPNESS {
            ParamGroup::Opacity
        } else if LOG_SCALE.contains(&i) {
            ParamGroup::Scaling
        } else if ROT0.contains(&i) || ANG_VEL.contains(&i) {
            ParamGroup::Rotation
        } else {
            ParamGroup::Position
        }
    }
}

fn block_name(i: usize) -> &'static str {
    use slot::*;
    match i {
        i if MU0.contains(&i) => "mu0",
        i if VEL.contains(&i) => "vel",
        i if ACC.contains(&i) => "acc",
        i if ROT0.contains(&i) => "rot0",
        i if ANG_VEL.contains(&i) => "ang_vel",
        i if LOG_SCALE.contains(&i) => "log_scale",
        OPACITY_LOGIT => "opacity_logit",
        T_CENTER => "t_center",
        TEMPORAL_SHARPNESS => "temporal_sharpness",
        i if COLOR0.contains(&i) => "color0",
        _ => "color_rate",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&OptimConfig> for AdamHyper {
    fn from(c: &OptimConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Keeps the moments of the Gaussians flagged in `keep`.
    fn retain_gaussians(&mut self, keep: &[bool]) {
        let filter = |a: &[f64]| -> Vec<f64> {
            a.chunks(PARAMS_PER_GAUSSIAN)
                .zip(keep)
                .filter(|(_, &k)| k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

/// Bias-corrected Adam. `lr` is applied cyclically: one value for every
/// parameter, or one per position of a repeating block.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: &[f64],
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if lr.is_empty() {
        return Err(Error::Precondition("adam: empty learning rate".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let name = if lr.len() == PARAMS_PER_GAUSSIAN {
            block_name(i % PARAMS_PER_GAUSSIAN)
        } else {
            "params"
        };
        return Err(Error::NonFiniteGradient(name));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - hyper.beta1.powf(t);
    let c2 = 1.0 - hyper.beta2.powf(t);
    for (i, ((p, &g), (m, v))) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .enumerate()
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr[i % lr.len()] * mh / (vh.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Keeps parameters inside their valid domain after an update.
fn project_constraints(scene: &mut GaussianScene) {
    for g in &mut scene.gaussians {
        g.temporal_sharpness = g.temporal_sharpness.max(0.0);
        for s in &mut g.log_scale {
            *s = s.clamp(MIN_LOG_SCALE, MAX_LOG_SCALE);
        }
        let n = g.rot0.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !(n > 1e-12 && n.is_finite()) {
            g.rot0 = [1.0, 0.0, 0.0, 0.0];
        } else if (n - 1.0).abs() > 1e-12 {
            g.rot0 = g.rot0.map(|q| q / n);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Image,
    /// Single-channel validity, `None` when every pixel is valid.
    pub mask: Option<Image>,
    pub camera: PinholeCamera,
    pub t: f64,
    pub source_kind: SourceKind,
    /// Distance to the nearest capture boundary, meters.
    pub delta: f64,
}

/// Index of a drawable view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleRef {
    Real(usize),
    Bridge { frame: usize, view: usize },
}

struct RealView<'a> {
    image: &'a crate::bench::Rgb8,
    camera: PinholeCamera,
    t: f64,
    location: usize,
    frame: usize,
    view: usize,
}

/// Capture location or bridge position a view was taken from.
type Place = (usize, usize, usize);

/// Views available to the sampler: real rig samples of a split plus the rig
/// views of every bridge panorama.
pub struct TrainSet<'a> {
    real: Vec<RealView<'a>>,
    bridge: Vec<&'a BridgeFrame>,
    rig: ViewRig,
    view_res: usize,
    pub geom: BoundaryGeometry,
    /// Same-timestamp, same-direction views from different places, all with
    /// δ within the cross-loss radius, keyed by `(frame, view)`.
    cross_groups: Vec<Vec<SampleRef>>,
}

impl<'a> TrainSet<'a> {
    /// Training views of `split`, optionally restricted to some capture
    /// locations. In temporal mode bridge frames at held-out timestamps are
    /// dropped too, since they are synthesized from held-out captures.
    pub fn new(
        data: &'a Dataset,
        split: &SplitSpec,
        bridges: Option<&'a BridgeVideos>,
        locations: Option<&[usize]>,
        loss: &LossConfig,
    ) -> Result<Self> {
        let cap = &data.manifest.spec.capture;
        let geom = BoundaryGeometry::new(data.locations())?;
        let keep_loc = |l: usize| locations.is_none_or(|ls| ls.contains(&l));
        let mut real = Vec::new();
        for &id in &split.train {
            let rec = data
                .manifest
                .samples
                .get(id)
                .ok_or_else(|| Error::Manifest(format!("train id {id} out of range")))?;
            if !keep_loc(rec.location) {
                continue;
            }
            real.push(RealView {
                image: &data.sample_rgb[id],
                camera: rec.camera,
                t: rec.t,
                location: rec.location,
                frame: rec.frame,
                view: rec.view,
            });
        }
        let held = &cap.held_out_frames;
        let bridge: Vec<&BridgeFrame> = bridges
            .map(|b| {
                b.frames
                    .iter()
                    .filter(|f| split.mode == SplitMode::Full || !held.contains(&f.frame))
                    .filter(|f| keep_loc(f.pair.0) && keep_loc(f.pair.1))
                    .collect()
            })
            .unwrap_or_default();
        let mut set = Self {
            real,
            bridge,
            rig: cap.rig()?,
            view_res: cap.view_res,
            geom,
            cross_groups: Vec::new(),
        };
        set.cross_groups = set.find_cross_groups(2.0 * loss.tau);
        Ok(set)
    }

    pub fn real_len(&self) -> usize {
        self.real.len()
    }

    pub fn bridge_len(&self) -> usize {
        self.bridge.len() * self.rig.len()
    }

    pub fn len(&self) -> usize {
        self.real_len() + self.bridge_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `(frame, view)` keys that can emit a cross pair.
    pub fn cross_group_count(&self) -> usize {
        self.cross_groups.len()
    }

    fn find_cross_groups(&self, radius: f64) -> Vec<Vec<SampleRef>> {
        // place key: capture location, or bridge pair and position index
        let mut groups: BTreeMap<(usize, usize), Vec<(Place, SampleRef)>> = BTreeMap::new();
        for (i, r) in self.real.iter().enumerate() {
            if boundary_distance(&r.camera.pose.position, &self.geom) <= radius {
                groups
                    .entry((r.frame, r.view))
                    .or_default()
                    .push(((0, r.location, 0), SampleRef::Real(i)));
            }
        }
        for (fi, f) in self.bridge.iter().enumerate() {
            if boundary_distance(&f.pose.position, &self.geom) <= radius {
                for view in 0..self.rig.len() {
                    let place = (1 + f.pair.0 * 4096 + f.pair.1, f.k, 1);
                    groups
                        .entry((f.frame, view))
                        .or_default()
                        .push((place, SampleRef::Bridge { frame: fi, view }));
                }
            }
        }
        groups
            .into_values()
            .filter(|g| g.iter().any(|(p, _)| *p != g[0].0))
            .map(|g| g.into_iter().map(|(_, s)| s).collect())
            .collect()
    }

    fn place(&self, r: SampleRef) -> Place {
        match r {
            SampleRef::Real(i) => (0, self.real[i].location, 0),
            SampleRef::Bridge { frame, .. } => {
                let f = self.bridge[frame];
                (1 + f.pair.0 * 4096 + f.pair.1, f.k, 1)
            }
        }
    }

    pub fn camera(&self, r: SampleRef) -> PinholeCamera {
        match r {
            SampleRef::Real(i) => self.real[i].camera,
            SampleRef::Bridge { frame, view } => {
                self.rig
                    .camera(view, &self.bridge[frame].pose, self.view_res)
            }
        }
    }

    pub fn get(&self, r: SampleRef) -> Result<TrainSample> {
        match r {
            SampleRef::Real(i) => {
                let v = &self.real[i];
                Ok(TrainSample {
                    image: v.image.to_image(),
                    mask: None,
                    camera: v.camera,
                    t: v.t,
                    source_kind: SourceKind::Real,
                    delta: boundary_distance(&v.camera.pose.position, &self.geom),
                })
            }
            SampleRef::Bridge { frame, .. } => {
                let f = self.bridge[frame];
                let camera = self.camera(r);
                Ok(TrainSample {
                    image: render_perspective_image(&f.rgb, &f.pose, &camera)?,
                    mask: Some(threshold_mask(&render_perspective_image(
                        &f.mask, &f.pose, &camera,
                    )?)),
                    camera,
                    t: f.t,
                    source_kind: SourceKind::Bridge,
                    delta: boundary_distance(&f.pose.position, &self.geom),
                })
            }
        }
    }

    /// Probability that one primary draw is a bridge view.
    pub fn bridge_probability(&self, bridge_weight: f64) -> f64 {
        let b = bridge_weight * self.bridge_len() as f64;
        let total = self.real_len() as f64 + b;
        if total > 0.0 {
            b / total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<SampleRef>,
    pub cross: Option<(SampleRef, SampleRef)>,
}

/// `batch` draws, each uniform over real views or bridge views with the
/// bridge class weighted by `bridge_weight`; with probability
/// `cross_pair_prob`, one extra pair for the cross-location loss.
pub fn sample_batch(set: &TrainSet, rng: &mut impl Rng, cfg: &OptimConfig) -> Result<Batch> {
    if set.is_empty() {
        return Err(Error::Precondition("no training views".into()));
    }
    let p_bridge = set.bridge_probability(cfg.bridge_weight);
    let samples = (0..cfg.batch)
        .map(|_| {
            if set.real_len() == 0 || (p_bridge > 0.0 && rng.random_bool(p_bridge)) {
                let i = rng.random_range(0..set.bridge_len());
                SampleRef::Bridge {
                    frame: i / set.rig.len(),
                    view: i % set.rig.len(),
                }
            } else {
                SampleRef::Real(rng.random_range(0..set.real_len()))
            }
        })
        .collect();
    let mut cross = None;
    if !set.cross_groups.is_empty() && rng.random_bool(cfg.cross_pair_prob) {
        let g = &set.cross_groups[rng.random_range(0..set.cross_groups.len())];
        let a = g[rng.random_range(0..g.len())];
        let others: Vec<SampleRef> = g
            .iter()
            .copied()
            .filter(|&s| set.place(s) != set.place(a))
            .collect();
        cross = Some((a, others[rng.random_range(0..others.len())]));
    }
    Ok(Batch { samples, cross })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    /// Batch mean of β·L_recon.
    pub recon: f64,
    /// λ_cross·L_cross, 0 without a pair.
    pub cross: f64,
    /// λ_reg·L_reg.
    pub reg: f64,
    pub probe_psnr: f64,
    pub n_gaussians: usize,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("iteration,loss,recon,cross,reg,probe_psnr,n_gaussians\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.4},{}\n",
            r.iteration, r.loss, r.recon, r.cross, r.reg, r.probe_psnr, r.n_gaussians
        ));
    }
    s
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(log_csv(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: GaussianScene,
    pub log: Vec<LogRow>,
    /// Per-iteration total loss.
    pub losses: Vec<f64>,
}

struct ItemResult {
    recon: f64,
    grads: SceneGradients,
}

fn item_gradients(scene: &GaussianScene, s: &TrainSample, cfg: &LossConfig) -> Result<ItemResult> {
    let out = render(scene, &s.camera, s.t);
    let l = sail_loss(&out.rgb, &s.image, s.mask.as_ref(), s.delta, None, cfg)?;
    let grads = render_backward(scene, &s.camera, s.t, &l.grad())?;
    Ok(ItemResult {
        recon: l.value,
        grads,
    })
}

fn cross_gradients(
    scene: &GaussianScene,
    a: &TrainSample,
    b: &TrainSample,
    cfg: &LossConfig,
) -> Result<(f64, SceneGradients)> {
    let ra = render(scene, &a.camera, a.t).rgb;
    let rb = render(scene, &b.camera, b.t).rgb;
    let c = cross_loss(&ra, &rb, a.delta.max(b.delta), cfg)?;
    let ga = render_backward(scene, &a.camera, a.t, &c.grad_a)?;
    let gb = render_backward(scene, &b.camera, b.t, &c.grad_b)?;
    let mut g = SceneGradients::zeros(scene.len());
    g.add_scaled(&ga, cfg.lambda_cross);
    g.add_scaled(&gb, cfg.lambda_cross);
    Ok((cfg.lambda_cross * c.value, g))
}

/// Runs `cfg.iterations` steps of sample → render → loss → backward → Adam.
/// Gradients of batch items are computed in parallel and summed in batch
/// order, so results do not depend on the thread count.
pub fn train(
    init: &GaussianScene,
    set: &TrainSet,
    cfg: &OptimConfig,
    loss_cfg: &LossConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if init.is_empty() {
        return Err(Error::Precondition("initial scene is empty".into()));
    }
    if set.is_empty() {
        return Err(Error::Precondition("no training views".into()));
    }
    let hyper = AdamHyper::from(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = init.clone();
    let mut state = AdamState::new(scene.len() * PARAMS_PER_GAUSSIAN);
    let probe = set.get(if set.real_len() > 0 {
        SampleRef::Real(0)
    } else {
        SampleRef::Bridge { frame: 0, view: 0 }
    })?;
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let batch = sample_batch(set, &mut rng, cfg)?;
        let samples: Vec<TrainSample> = batch
            .samples
            .iter()
            .map(|&r| set.get(r))
            .collect::<Result<_>>()?;
        let items = samples
            .par_iter()
            .map(|s| item_gradients(&scene, s, loss_cfg))
            .collect::<Result<Vec<ItemResult>>>();
        let items = match items {
            Ok(items) => items,
            Err(e @ (Error::NonFiniteUpstream { .. } | Error::NonFiniteGradient(_))) => {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: e.to_string(),
                    last_good: Box::new(scene),
                })
            }
            Err(e) => return Err(e),
        };
        let inv = 1.0 / samples.len() as f64;
        let mut grads = SceneGradients::zeros(scene.len());
        let mut recon = 0.0;
        for item in &items {
            grads.add_scaled(&item.grads, inv);
            recon += inv * item.recon;
        }
        let mut cross = 0.0;
        if let Some((a, b)) = batch.cross {
            let (value, g) = cross_gradients(&scene, &set.get(a)?, &set.get(b)?, loss_cfg)?;
            cross = value;
            grads.add_scaled(&g, 1.0);
        }
        let mut reg = 0.0;
        if loss_cfg.lambda_reg > 0.0 {
            let (r, g) = anisotropy_reg(&scene);
            reg = loss_cfg.lambda_reg * r;
            grads.add_scaled(&g, loss_cfg.lambda_reg);
        }
        let total = recon + cross + reg;
        if !total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: format!("loss is {total}"),
                last_good: Box::new(scene),
            });
        }
        let mut params = scene.to_flat();
        if let Err(e) = adam_step(
            &mut params,
            &grads.to_flat(),
            &mut state,
            &cfg.gaussian_lrs(it),
            &hyper,
        ) {
            return Err(Error::Diverged {
                iteration: it,
                reason: e.to_string(),
                last_good: Box::new(scene),
            });
        }
        scene.set_flat(&params);
        project_constraints(&mut scene);
        if cfg.prune_interval > 0 && (it + 1) % cfg.prune_interval == 0 {
            let keep: Vec<bool> = scene
                .gaussians
                .iter()
                .map(|g| g.base_opacity() >= cfg.prune_opacity)
                .collect();
            if keep.iter().any(|k| !k) {
                let mut k = keep.iter();
                scene
                    .gaussians
                    .retain(|_| *k.next().expect("one flag per Gaussian"));
                state.retain_gaussians(&keep);
            }
        }
        losses.push(total);
        if cfg.log_interval > 0 && (it % cfg.log_interval == 0 || it + 1 == cfg.iterations) {
            let out = render(&scene, &probe.camera, probe.t).rgb;
            log.push(LogRow {
                iteration: it,
                loss: total,
                recon,
                cross,
                reg,
                probe_psnr: psnr(&out, &probe.image, 1.0)?,
                n_gaussians: scene.len(),
            });
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {total:.6}, {} Gaussians", scene.len());
        }
    }
    Ok(TrainOutcome { scene, log, losses })
}
