//! Differentiable tile-based splatting of a [`GaussianScene`] through a
//! pinhole camera.
//!
//! Forward: evaluate every primitive at `t`, project mean and covariance
//! (`Σ' = J W Σ Wᵀ Jᵀ + 0.3 I`), bin into 16×16 tiles in (depth, index)
//! order, then alpha-composite front to back per pixel.
//!
//! Backward recomputes the per-pixel blend lists tile by tile, accumulates
//! screen-space partials into per-tile buffers, reduces them in tile order,
//! and pushes them through the projection and temporal chains. The tile
//! order of the reduction is fixed, so results do not depend on the number of
//! worker threads.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianScene, GaussianState, StateGrad, PARAMS_PER_GAUSSIAN};
use crate::image::Image;

pub const NEAR_CLIP: f64 = 0.05;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const COV2D_FLOOR: f64 = 0.3;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the low-pass floor.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel-index bounds `[x0, x1] × [y0, y1]` of the footprint.
    pub bounds: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub accum_weight: Image,
    /// Alpha-weighted depth, `Σ zᵢ αᵢ Tᵢ`.
    pub depth_map: Image,
}

impl RenderOutput {
    /// Depth normalized by accumulated weight, `None` where coverage is below `min_weight`.
    pub fn normalized_depth(&self, min_weight: f64) -> Vec<Option<f64>> {
        self.depth_map
            .data
            .iter()
            .zip(&self.accum_weight.data)
            .map(|(&d, &w)| (w >= min_weight).then(|| d / w))
            .collect()
    }
}

/// Per-Gaussian partials in the flat parameter layout; zero for culled primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub per_gaussian: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            per_gaussian: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.per_gaussian
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect()
    }

    pub fn add_scaled(&mut self, other: &SceneGradients, scale: f64) {
        for (a, b) in self.per_gaussian.iter_mut().zip(&other.per_gaussian) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Centers whose view tangent exceeds this multiple of the half-FOV tangent
/// are culled: the affine footprint of such primitives is meaningless.
pub const TANGENT_GUARD: f64 = 1.3;

/// Camera-frame quantities needed by the projection backward pass.
struct ProjectionFrame {
    w: Matrix3<f64>,
    p_cam: Vector3<f64>,
    /// Center lies inside the guard band around the frustum.
    guarded: bool,
    j: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
}

fn projection_frame(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    cam: &PinholeCamera,
) -> ProjectionFrame {
    let w = cam
        .pose
        .rotation
        .inverse()
        .to_rotation_matrix()
        .into_inner();
    let p_cam = w * (mu - cam.pose.position);
    let (fx, fy) = (cam.fx(), cam.fy());
    let z = p_cam.z;
    let lim = [
        TANGENT_GUARD * (cam.fov_x / 2.0).tan(),
        TANGENT_GUARD * (cam.fov_y / 2.0).tan(),
    ];
    let tan = [p_cam.x / z, p_cam.y / z];
    let guarded = tan[0].abs() <= lim[0] && tan[1].abs() <= lim[1];
    let j = Matrix2x3::new(fx / z, 0.0, -fx * tan[0] / z, 0.0, -fy / z, fy * tan[1] / z);
    let cov_cam = w * sigma * w.transpose();
    ProjectionFrame {
        w,
        p_cam,
        guarded,
        j,
        cov_cam,
    }
}

/// Screen-space mean, covariance (with floor) and depth; `None` behind the
/// near plane or outside the guard band.
pub fn project_mean_cov(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    cam: &PinholeCamera,
) -> Option<(Vector2<f64>, Matrix2<f64>, f64)> {
    let f = projection_frame(mu, sigma, cam);
    if f.p_cam.z <= NEAR_CLIP || !f.guarded {
        return None;
    }
    let mean = Vector2::new(
        cam.cx() + cam.fx() * f.p_cam.x / f.p_cam.z,
        cam.cy() - cam.fy() * f.p_cam.y / f.p_cam.z,
    );
    let cov = f.j * f.cov_cam * f.j.transpose() + Matrix2::identity() * COV2D_FLOOR;
    Some((mean, cov, f.p_cam.z))
}

/// Project an evaluated primitive. Culled (`None`) when behind the near plane,
/// outside the guard band, too transparent to ever reach the α cutoff, or when the cutoff footprint
/// contains no pixel center.
pub fn project_gaussian(state: &GaussianState, cam: &PinholeCamera) -> Option<ProjectedGaussian> {
    let (mean2d, cov2d, depth) = project_mean_cov(&state.mean, &state.cov, cam)?;
    // α ≥ 1/255 requires Mahalanobis² ≤ 2 ln(255 σ)
    let reach = 255.0 * state.opacity;
    if reach <= 1.0 {
        return None;
    }
    let m = (2.0 * reach.ln()).sqrt();
    let conic = cov2d.try_inverse()?;
    let rx = m * cov2d[(0, 0)].sqrt() + 1.0;
    let ry = m * cov2d[(1, 1)].sqrt() + 1.0;
    let x_lo = (mean2d.x - rx - 0.5).ceil();
    let x_hi = (mean2d.x + rx - 0.5).floor();
    let y_lo = (mean2d.y - ry - 0.5).ceil();
    let y_hi = (mean2d.y + ry - 0.5).floor();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if x_hi < 0.0 || y_hi < 0.0 || x_lo > w - 1.0 || y_lo > h - 1.0 {
        return None;
    }
    if !(x_lo.is_finite() && x_hi.is_finite() && y_lo.is_finite() && y_hi.is_finite()) {
        return None;
    }
    let bounds = [
        x_lo.max(0.0) as usize,
        x_hi.min(w - 1.0) as usize,
        y_lo.max(0.0) as usize,
        y_hi.min(h - 1.0) as usize,
    ];
    Some(ProjectedGaussian {
        mean2d,
        cov2d,
        conic,
        depth,
        opacity: state.opacity,
        color: state.color,
        bounds,
    })
}

/// Gaussian falloff term `exp(-½ dᵀ Σ'⁻¹ d)` at a continuous pixel position.
#[inline]
fn falloff(pg: &ProjectedGaussian, x: f64, y: f64) -> (f64, f64, f64) {
    let dx = x - pg.mean2d.x;
    let dy = y - pg.mean2d.y;
    let a = pg.conic[(0, 0)];
    let b = pg.conic[(0, 1)];
    let c = pg.conic[(1, 1)];
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    (power.exp(), dx, dy)
}

/// Contribution of one splat at a continuous pixel position; 0 below the cutoff.
pub fn splat_alpha(pg: &ProjectedGaussian, x: f64, y: f64) -> f64 {
    let (g, _, _) = falloff(pg, x, y);
    let alpha = (pg.opacity * g).min(ALPHA_MAX);
    if alpha < ALPHA_MIN {
        0.0
    } else {
        alpha
    }
}

struct Prepared {
    /// Visible primitives in (depth, index) order.
    projected: Vec<ProjectedGaussian>,
    /// Scene index of each entry in `projected`.
    source: Vec<usize>,
    states: Vec<GaussianState>,
    tiles_x: usize,
    tiles_y: usize,
    /// Per-tile lists of indices into `projected`, ascending (hence depth-sorted).
    tiles: Vec<Vec<u32>>,
}

fn prepare(scene: &GaussianScene, cam: &PinholeCamera, t: f64) -> Prepared {
    let states: Vec<GaussianState> = scene
        .gaussians
        .par_iter()
        .map(|g| g.eval_at_time(t))
        .collect();
    let mut visible: Vec<(usize, ProjectedGaussian)> = states
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| project_gaussian(s, cam).map(|p| (i, p)))
        .collect();
    visible.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    let (source, projected): (Vec<usize>, Vec<ProjectedGaussian>) = visible.into_iter().unzip();

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, pg) in projected.iter().enumerate() {
        let [x0, x1, y0, y1] = pg.bounds;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Prepared {
        projected,
        source,
        states,
        tiles_x,
        tiles_y,
        tiles,
    }
}

struct PixelResult {
    rgb: [f64; 3],
    accum: f64,
    depth: f64,
}

#[inline]
fn composite_pixel(
    x: usize,
    y: usize,
    list: impl Iterator<Item = usize>,
    projected: &[ProjectedGaussian],
    background: &[f64; 3],
) -> PixelResult {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut transmittance = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    for k in list {
        let pg = &projected[k];
        let alpha = splat_alpha(pg, px, py);
        if alpha == 0.0 {
            continue;
        }
        let w = alpha * transmittance;
        for c in 0..3 {
            rgb[c] += pg.color[c] * w;
        }
        depth += pg.depth * w;
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    for c in 0..3 {
        rgb[c] += background[c] * transmittance;
    }
    PixelResult {
        rgb,
        accum: 1.0 - transmittance,
        depth,
    }
}

fn tile_pixels(
    tile: usize,
    tiles_x: usize,
    cam: &PinholeCamera,
) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(cam.width);
    let y1 = (y0 + TILE_SIZE).min(cam.height);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

fn empty_output(cam: &PinholeCamera) -> RenderOutput {
    RenderOutput {
        rgb: Image::new(cam.width, cam.height, 3),
        accum_weight: Image::new(cam.width, cam.height, 1),
        depth_map: Image::new(cam.width, cam.height, 1),
    }
}

fn write_pixel(out: &mut RenderOutput, x: usize, y: usize, p: &PixelResult) {
    for c in 0..3 {
        out.rgb.set(x, y, c, p.rgb[c]);
    }
    out.accum_weight.set(x, y, 0, p.accum);
    out.depth_map.set(x, y, 0, p.depth);
}

/// Tiled forward render.
pub fn render(scene: &GaussianScene, cam: &PinholeCamera, t: f64) -> RenderOutput {
    let prep = prepare(scene, cam, t);
    let per_tile: Vec<Vec<(usize, usize, PixelResult)>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let list = &prep.tiles[tile];
            tile_pixels(tile, prep.tiles_x, cam)
                .map(|(x, y)| {
                    let p = composite_pixel(
                        x,
                        y,
                        list.iter().map(|&k| k as usize),
                        &prep.projected,
                        &scene.background,
                    );
                    (x, y, p)
                })
                .collect()
        })
        .collect();
    let mut out = empty_output(cam);
    for tile in per_tile {
        for (x, y, p) in tile {
            write_pixel(&mut out, x, y, &p);
        }
    }
    out
}

/// Reference renderer: every pixel visits every visible primitive in global
/// depth order, without tiling.
pub fn render_naive(scene: &GaussianScene, cam: &PinholeCamera, t: f64) -> RenderOutput {
    let prep = prepare(scene, cam, t);
    let mut out = empty_output(cam);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = composite_pixel(
                x,
                y,
                0..prep.projected.len(),
                &prep.projected,
                &scene.background,
            );
            write_pixel(&mut out, x, y, &p);
        }
    }
    out
}

/// Screen-space partials of one projected primitive.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: [f64; 2],
    /// Gradient w.r.t. the full conic matrix, stored as (00, 01 = 10, 11).
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

struct Contribution {
    local: usize,
    alpha: f64,
    clamped: bool,
    falloff: f64,
    dx: f64,
    dy: f64,
    transmittance: f64,
}

fn backward_tile(
    tile: usize,
    prep: &Prepared,
    cam: &PinholeCamera,
    background: &[f64; 3],
    d_rgb: &Image,
) -> Vec<ScreenGrad> {
    let list = &prep.tiles[tile];
    let mut grads = vec![ScreenGrad::default(); list.len()];
    let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());
    for (x, y) in tile_pixels(tile, prep.tiles_x, cam) {
        let g = [d_rgb.get(x, y, 0), d_rgb.get(x, y, 1), d_rgb.get(x, y, 2)];
        if g == [0.0; 3] {
            continue;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        contribs.clear();
        let mut transmittance = 1.0;
        for (local, &k) in list.iter().enumerate() {
            let pg = &prep.projected[k as usize];
            let (f, dx, dy) = falloff(pg, px, py);
            let raw = pg.opacity * f;
            let alpha = raw.min(ALPHA_MAX);
            if alpha < ALPHA_MIN {
                continue;
            }
            contribs.push(Contribution {
                local,
                alpha,
                clamped: raw > ALPHA_MAX,
                falloff: f,
                dx,
                dy,
                transmittance,
            });
            transmittance *= 1.0 - alpha;
            if transmittance < TRANSMITTANCE_MIN {
                break;
            }
        }
        // suffix sum of everything behind the current splat, starting with the background
        let mut behind = [
            background[0] * transmittance,
            background[1] * transmittance,
            background[2] * transmittance,
        ];
        for ct in contribs.iter().rev() {
            let k = list[ct.local] as usize;
            let pg = &prep.projected[k];
            let sg = &mut grads[ct.local];
            let w = ct.alpha * ct.transmittance;
            let mut d_alpha = 0.0;
            for c in 0..3 {
                sg.color[c] += g[c] * w;
                d_alpha += g[c] * (pg.color[c] * ct.transmittance - behind[c] / (1.0 - ct.alpha));
                behind[c] += pg.color[c] * w;
            }
            if ct.clamped {
                continue;
            }
            sg.opacity += d_alpha * ct.falloff;
            let d_power = d_alpha * pg.opacity * ct.falloff;
            let (a, b, c) = (pg.conic[(0, 0)], pg.conic[(0, 1)], pg.conic[(1, 1)]);
            sg.mean2d[0] += d_power * (a * ct.dx + b * ct.dy);
            sg.mean2d[1] += d_power * (b * ct.dx + c * ct.dy);
            sg.conic[0] += -0.5 * d_power * ct.dx * ct.dx;
            sg.conic[1] += -0.5 * d_power * ct.dx * ct.dy;
            sg.conic[2] += -0.5 * d_power * ct.dy * ct.dy;
        }
    }
    grads
}

/// Chain screen-space partials back to world mean and covariance.
fn projection_backward(
    state: &GaussianState,
    pg: &ProjectedGaussian,
    cam: &PinholeCamera,
    sg: &ScreenGrad,
) -> StateGrad {
    let f = projection_frame(&state.mean, &state.cov, cam);
    let (fx, fy) = (cam.fx(), cam.fy());
    let (x, y, z) = (f.p_cam.x, f.p_cam.y, f.p_cam.z);

    // conic = Σ'⁻¹  ⇒  dΣ' = -A dA A
    let d_conic = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
    let d_cov2d = -pg.conic * d_conic * pg.conic;

    // Σ' = J Σc Jᵀ + floor
    let d_cov_cam = f.j.transpose() * d_cov2d * f.j;
    let d_j = (d_cov2d + d_cov2d.transpose()) * f.j * f.cov_cam;
    let d_sigma = f.w.transpose() * d_cov_cam * f.w;

    let mut d_p = Vector3::zeros();
    // mean2d
    d_p.x += sg.mean2d[0] * fx / z;
    d_p.z += -sg.mean2d[0] * fx * x / (z * z);
    d_p.y += -sg.mean2d[1] * fy / z;
    d_p.z += sg.mean2d[1] * fy * y / (z * z);
    // Jacobian entries
    d_p.z += d_j[(0, 0)] * (-fx / (z * z));
    d_p.x += d_j[(0, 2)] * (-fx / (z * z));
    d_p.z += d_j[(0, 2)] * (2.0 * fx * x / (z * z * z));
    d_p.z += d_j[(1, 1)] * (fy / (z * z));
    d_p.y += d_j[(1, 2)] * (fy / (z * z));
    d_p.z += d_j[(1, 2)] * (-2.0 * fy * y / (z * z * z));

    StateGrad {
        mean: f.w.transpose() * d_p,
        cov: d_sigma,
        opacity: sg.opacity,
        color: sg.color,
    }
}

/// Exact reverse-mode partials of `Σ_pixels ⟨d_rgb, render(scene, cam, t).rgb⟩`.
pub fn render_backward(
    scene: &GaussianScene,
    cam: &PinholeCamera,
    t: f64,
    d_rgb: &Image,
) -> Result<SceneGradients> {
    if d_rgb.width != cam.width || d_rgb.height != cam.height || d_rgb.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {}x{}x{} for a {}x{} camera",
            d_rgb.width, d_rgb.height, d_rgb.channels, cam.width, cam.height
        )));
    }
    if let Some(i) = d_rgb.data.iter().position(|v| !v.is_finite()) {
        let p = i / 3;
        return Err(Error::NonFiniteUpstream {
            x: p % cam.width,
            y: p / cam.width,
        });
    }
    let prep = prepare(scene, cam, t);
    let per_tile: Vec<Vec<ScreenGrad>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| backward_tile(tile, &prep, cam, &scene.background, d_rgb))
        .collect();

    let mut screen = vec![ScreenGrad::default(); prep.projected.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (local, g) in grads.iter().enumerate() {
            screen[prep.tiles[tile][local] as usize].add(g);
        }
    }

    let per_visible: Vec<(usize, [f64; PARAMS_PER_GAUSSIAN])> = screen
        .par_iter()
        .enumerate()
        .map(|(k, sg)| {
            let i = prep.source[k];
            let state_grad = projection_backward(&prep.states[i], &prep.projected[k], cam, sg);
            (i, scene.gaussians[i].eval_backward(t, &state_grad))
        })
        .collect();

    let mut out = SceneGradients::zeros(scene.len());
    for (i, g) in per_visible {
        out.per_gaussian[i] = g;
    }
    Ok(out)
}
