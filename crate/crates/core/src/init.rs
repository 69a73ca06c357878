//! Seeding a scene from posed color + depth views.

use nalgebra::Vector3;

use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianScene, TemporalGaussian};
use crate::image::Image;

pub const INIT_OPACITY: f64 = 0.5;

pub struct DepthView<'a> {
    pub image: &'a Image,
    pub depth: &'a Image,
    pub camera: &'a PinholeCamera,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub created: usize,
    /// Sampled pixels skipped for non-positive or non-finite depth.
    pub skipped: usize,
}

/// One isotropic static primitive per sampled pixel, sized to the pixel
/// footprint at its depth.
pub fn init_from_depth(
    views: &[DepthView<'_>],
    stride: usize,
    duration: f64,
    background: [f64; 3],
) -> Result<(GaussianScene, InitReport)> {
    if stride == 0 {
        return Err(Error::Precondition("stride must be at least 1".into()));
    }
    let mut scene = GaussianScene::new(duration, background);
    let mut skipped = 0;
    for view in views {
        let cam = view.camera;
        if view.image.width != cam.width
            || view.image.height != cam.height
            || view.image.channels != 3
        {
            return Err(Error::ShapeMismatch(
                "init view image does not match its camera".into(),
            ));
        }
        view.image.check_same_shape(
            &Image::new(view.depth.width, view.depth.height, 3),
            "init color vs depth",
        )?;
        let footprint = 1.0 / cam.fx();
        for y in (0..cam.height).step_by(stride) {
            for x in (0..cam.width).step_by(stride) {
                let d = view.depth.get(x, y, 0);
                if !(d.is_finite() && d > 0.0) {
                    skipped += 1;
                    continue;
                }
                let p: Vector3<f64> = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, d);
                let c = view.image.pixel(x, y);
                scene.gaussians.push(TemporalGaussian {
                    mu0: [p.x, p.y, p.z],
                    log_scale: [(d * footprint).ln(); 3],
                    opacity_logit: logit(INIT_OPACITY),
                    t_center: view.t,
                    color0: [c[0], c[1], c[2]],
                    ..Default::default()
                });
            }
        }
    }
    if skipped > 0 {
        log::warn!("init_from_depth skipped {skipped} pixels with non-positive depth");
    }
    let created = scene.len();
    Ok((scene, InitReport { created, skipped }))
}
