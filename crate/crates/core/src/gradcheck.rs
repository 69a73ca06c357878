//! Finite-difference verification of [`render_backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{PinholeCamera, PoseSE3};
use crate::error::Result;
use crate::gaussian::{logit, GaussianScene, TemporalGaussian, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::render::{render, render_backward};

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-4;

/// Small random scene in front of an identity camera, with every primitive
/// away from the color clamp and opacity clamp so the loss is smooth almost
/// everywhere.
pub fn random_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut scene = GaussianScene::new(1.0, [r(0.0, 0.3), r(0.0, 0.3), r(0.0, 0.3)]);
    for _ in 0..n {
        let z = r(2.0, 5.0);
        let q = [r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)];
        scene.gaussians.push(TemporalGaussian {
            mu0: [r(-0.5, 0.5) * z, r(-0.5, 0.5) * z, z],
            vel: [r(-0.5, 0.5), r(-0.5, 0.5), r(-0.5, 0.5)],
            acc: [r(-0.5, 0.5), r(-0.5, 0.5), r(-0.5, 0.5)],
            rot0: q,
            ang_vel: [r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0)],
            log_scale: [r(-2.5, -1.0), r(-2.5, -1.0), r(-2.5, -1.0)],
            opacity_logit: logit(r(0.3, 0.8)),
            t_center: r(0.3, 0.7),
            temporal_sharpness: r(0.0, 2.0),
            color0: [r(0.2, 0.8), r(0.2, 0.8), r(0.2, 0.8)],
            color_rate: [r(-0.3, 0.3), r(-0.3, 0.3), r(-0.3, 0.3)],
        });
    }
    scene
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_abs: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            1.0 - self.failures as f64 / self.checked as f64
        }
    }
}

pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

fn weighted_sum(out: &Image, w: &Image) -> f64 {
    out.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Compare analytic and central-difference partials of `⟨w, render⟩` for
/// every parameter of the scene. The step is `FD_STEP · max(1, |p|)`.
pub fn check_scene(
    scene: &GaussianScene,
    cam: &PinholeCamera,
    t: f64,
    weights: &Image,
) -> Result<GradCheckReport> {
    check_scene_with_step(scene, cam, t, weights, FD_STEP)
}

pub fn check_scene_with_step(
    scene: &GaussianScene,
    cam: &PinholeCamera,
    t: f64,
    weights: &Image,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = render_backward(scene, cam, t, weights)?.to_flat();
    let base = scene.to_flat();
    let mut probe = scene.clone();
    let mut failures = 0;
    let mut worst_abs: f64 = 0.0;
    for (k, &p) in base.iter().enumerate() {
        let h = step * p.abs().max(1.0);
        let mut flat = base.clone();
        flat[k] = p + h;
        probe.set_flat(&flat);
        let up = weighted_sum(&render(&probe, cam, t).rgb, weights);
        flat[k] = p - h;
        probe.set_flat(&flat);
        let down = weighted_sum(&render(&probe, cam, t).rgb, weights);
        let numeric = (up - down) / (2.0 * h);
        worst_abs = worst_abs.max((numeric - analytic[k]).abs());
        if !agrees(analytic[k], numeric) {
            failures += 1;
            log::debug!(
                "param {} (gaussian {}, slot {}): analytic {:.6e} numeric {:.6e}",
                k,
                k / PARAMS_PER_GAUSSIAN,
                k % PARAMS_PER_GAUSSIAN,
                analytic[k],
                numeric
            );
        }
    }
    Ok(GradCheckReport {
        checked: base.len(),
        failures,
        worst_abs,
    })
}

/// Seeded check on a random scene at `size × size` pixels.
pub fn run(seed: u64, gaussians: usize, size: usize) -> Result<GradCheckReport> {
    let scene = random_scene(gaussians, seed);
    let cam = PinholeCamera::square(PoseSE3::identity(), 60f64.to_radians(), size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let weights = Image::from_fn(size, size, 3, |_, _, _| rng.random_range(-1.0..1.0));
    check_scene(&scene, &cam, 0.5, &weights)
}

/// Pooled report over several seeds.
pub fn run_seeds(
    seeds: impl IntoIterator<Item = u64>,
    gaussians: usize,
    size: usize,
) -> Result<GradCheckReport> {
    let mut pooled = GradCheckReport {
        checked: 0,
        failures: 0,
        worst_abs: 0.0,
    };
    for seed in seeds {
        let r = run(seed, gaussians, size)?;
        pooled.checked += r.checked;
        pooled.failures += r.failures;
        pooled.worst_abs = pooled.worst_abs.max(r.worst_abs);
    }
    Ok(pooled)
}
