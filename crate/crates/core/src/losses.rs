//! Image losses and their gradients with respect to the rendered image.
//!
//! The seam-aware objective for one rendered view is
//!
//! ```text
//! L = β(δ) · L_recon + λ_cross · L_cross
//! β(δ) = 1 + λ_seam · exp(-δ² / 2τ²)
//! ```
//!
//! where δ is the distance from the viewpoint to the nearest bisector plane
//! between capture locations and `L_cross` compares image gradients of two
//! same-timestamp renders from different locations.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{slot, GaussianScene};
use crate::image::Image;
use crate::render::SceneGradients;

pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_dssim: f64,
    pub lambda_reg: f64,
    pub lambda_seam: f64,
    pub lambda_cross: f64,
    /// Seam kernel width, meters.
    pub tau: f64,
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda_reg: 0.01,
            lambda_seam: 1.0,
            lambda_cross: 0.05,
            tau: 1.0,
            ssim_window: 11,
            c1: 1e-4,
            c2: 9e-4,
        }
    }
}

impl LossConfig {
    /// Defaults with τ set to a tenth of the nearest inter-capture distance.
    pub fn for_geometry(geom: &BoundaryGeometry) -> Self {
        Self {
            tau: 0.1 * geom.min_spacing(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_dssim,
            self.lambda_reg,
            self.lambda_seam,
            self.lambda_cross,
        ];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// Normalized Gaussian blur with the window truncated at the image border and
/// renormalized over the in-image taps.
struct WindowFilter {
    taps: Vec<f64>,
}

impl WindowFilter {
    fn new(size: usize) -> Self {
        let r = (size / 2) as isize;
        let taps = (-r..=r)
            .map(|k| (-((k * k) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
            .collect();
        Self { taps }
    }

    fn radius(&self) -> isize {
        (self.taps.len() / 2) as isize
    }

    /// Sum of in-range taps centered at `i` along an axis of length `n`.
    fn norms(&self, n: usize) -> Vec<f64> {
        let r = self.radius();
        (0..n as isize)
            .map(|i| {
                (-r..=r)
                    .filter(|k| (0..n as isize).contains(&(i + k)))
                    .map(|k| self.taps[(k + r) as usize])
                    .sum()
            })
            .collect()
    }

    /// Unnormalized separable blur of a single-channel plane.
    fn blur(&self, src: &[f64], w: usize, h: usize) -> Vec<f64> {
        let r = self.radius() as usize;
        let mut tmp = vec![0.0; w * h];
        for (row, out) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
            for (x, o) in out.iter_mut().enumerate() {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                let taps = &self.taps[lo + r - x..=hi + r - x];
                *o = taps.iter().zip(&row[lo..=hi]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            let dst = &mut out[y * w..(y + 1) * w];
            for yy in lo..=hi {
                let t = self.taps[yy + r - y];
                for (d, v) in dst.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                    *d += t * v;
                }
            }
        }
        out
    }
}

struct Planes {
    w: usize,
    h: usize,
    inv_norm: Vec<f64>,
    filter: WindowFilter,
}

impl Planes {
    fn new(w: usize, h: usize, window: usize) -> Self {
        let filter = WindowFilter::new(window);
        let nx = filter.norms(w);
        let ny = filter.norms(h);
        let inv_norm = (0..w * h).map(|i| 1.0 / (nx[i % w] * ny[i / w])).collect();
        Self {
            w,
            h,
            inv_norm,
            filter,
        }
    }

    fn mean(&self, src: &[f64]) -> Vec<f64> {
        let mut out = self.filter.blur(src, self.w, self.h);
        for (o, n) in out.iter_mut().zip(&self.inv_norm) {
            *o *= n;
        }
        out
    }

    /// Adjoint of [`Planes::mean`].
    fn mean_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = g.iter().zip(&self.inv_norm).map(|(a, b)| a * b).collect();
        self.filter.blur(&scaled, self.w, self.h)
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data
        .iter()
        .skip(c)
        .step_by(img.channels)
        .copied()
        .collect()
}

#[derive(Debug, Clone)]
pub struct SsimResult {
    pub score: f64,
    /// Per-pixel SSIM averaged over channels.
    pub map: Image,
    /// Gradient of `score` with respect to the first image.
    pub grad: Image,
}

/// Mean SSIM over pixels and channels, with the exact gradient w.r.t. `a`.
pub fn ssim(a: &Image, b: &Image, cfg: &LossConfig) -> Result<SsimResult> {
    ssim_weighted(a, b, cfg, None)
}

/// Mean SSIM without the gradient.
pub fn ssim_score(a: &Image, b: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok(ssim_impl(a, b, cfg, None, false)?.score)
}

fn ssim_weighted(
    a: &Image,
    b: &Image,
    cfg: &LossConfig,
    mask: Option<&Image>,
) -> Result<SsimResult> {
    ssim_impl(a, b, cfg, mask, true)
}

/// `Σ_p m(p) S(p) / (pixels · channels)` summed over channels; `None` is an all-ones mask.
fn ssim_impl(
    a: &Image,
    b: &Image,
    cfg: &LossConfig,
    mask: Option<&Image>,
    with_grad: bool,
) -> Result<SsimResult> {
    a.check_same_shape(b, "ssim")?;
    let (w, h, nc) = (a.width, a.height, a.channels);
    let planes = Planes::new(w, h, cfg.ssim_window);
    let n_total = (w * h * nc) as f64;
    let mut map = Image::new(w, h, 1);
    let mut grad = Image::new(w, h, nc);
    let mut score = 0.0;
    for c in 0..nc {
        let pa = channel(a, c);
        let pb = channel(b, c);
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = planes.mean(&pa);
        let mu_b = planes.mean(&pb);
        let m_aa = planes.mean(&aa);
        let m_bb = planes.mean(&bb);
        let m_ab = planes.mean(&ab);
        let n = w * h;
        let mut g_mu = vec![0.0; n];
        let mut g_aa = vec![0.0; n];
        let mut g_ab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = m_aa[i] - ma * ma;
            let var_b = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + cfg.c1;
            let a2 = 2.0 * cov + cfg.c2;
            let b1 = ma * ma + mb * mb + cfg.c1;
            let b2 = var_a + var_b + cfg.c2;
            let s = a1 * a2 / (b1 * b2);
            let wgt = mask.map_or(1.0, |m| m.data[i]);
            map.data[i] += s / nc as f64;
            score += wgt * s;
            let up = wgt / n_total;
            let d_mu =
                (2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) - s * (2.0 * ma / b1 - 2.0 * ma / b2);
            g_mu[i] = up * d_mu;
            g_aa[i] = up * (-s / b2);
            g_ab[i] = up * (2.0 * a1 / (b1 * b2));
        }
        if !with_grad {
            continue;
        }
        let back_mu = planes.mean_adjoint(&g_mu);
        let back_aa = planes.mean_adjoint(&g_aa);
        let back_ab = planes.mean_adjoint(&g_ab);
        for i in 0..n {
            grad.data[i * nc + c] = back_mu[i] + 2.0 * pa[i] * back_aa[i] + pb[i] * back_ab[i];
        }
    }
    Ok(SsimResult {
        score: score / n_total,
        map,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct ReconLoss {
    /// `(1-λ) L1 + λ (1 - SSIM)`; the anisotropy term is reported separately.
    pub value: f64,
    pub l1: f64,
    pub dssim: f64,
    pub grad: Image,
}

/// Photometric loss of a render against its target. An optional single-channel
/// validity mask weights pixels; normalization is always by the full pixel
/// count, so masked-out pixels contribute nothing and an all-zero mask yields
/// a zero gradient.
pub fn recon_loss(
    rendered: &Image,
    target: &Image,
    cfg: &LossConfig,
    mask: Option<&Image>,
) -> Result<ReconLoss> {
    rendered.check_same_shape(target, "recon_loss")?;
    if let Some(m) = mask {
        if m.width != rendered.width || m.height != rendered.height || m.channels != 1 {
            return Err(Error::ShapeMismatch(
                "validity mask must be single-channel at image size".into(),
            ));
        }
    }
    let nc = rendered.channels;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height, nc);
    let mut l1 = 0.0;
    for (i, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        let wgt = mask.map_or(1.0, |m| m.data[i / nc]);
        let d = r - t;
        l1 += wgt * d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data[i] = (1.0 - cfg.lambda_dssim) * wgt * s / n;
    }
    l1 /= n;
    let mut dssim = 0.0;
    if cfg.lambda_dssim > 0.0 {
        let s = ssim_weighted(rendered, target, cfg, mask)?;
        let mass = mask.map_or(1.0, |m| m.data.iter().sum::<f64>() / m.data.len() as f64);
        dssim = mass - s.score;
        for (g, sg) in grad.data.iter_mut().zip(&s.grad.data) {
            *g -= cfg.lambda_dssim * sg;
        }
    }
    Ok(ReconLoss {
        value: (1.0 - cfg.lambda_dssim) * l1 + cfg.lambda_dssim * dssim,
        l1,
        dssim,
        grad,
    })
}

/// Mean over primitives of `max(log_scale) - min(log_scale)`, with its gradient.
pub fn anisotropy_reg(scene: &GaussianScene) -> (f64, SceneGradients) {
    let mut grads = SceneGradients::zeros(scene.len());
    if scene.is_empty() {
        return (0.0, grads);
    }
    let inv = 1.0 / scene.len() as f64;
    let mut total = 0.0;
    for (g, out) in scene.gaussians.iter().zip(grads.per_gaussian.iter_mut()) {
        let s = g.log_scale;
        let (mut hi, mut lo) = (0, 0);
        for k in 1..3 {
            if s[k] > s[hi] {
                hi = k;
            }
            if s[k] < s[lo] {
                lo = k;
            }
        }
        total += s[hi] - s[lo];
        if hi != lo {
            out[slot::LOG_SCALE.start + hi] += inv;
            out[slot::LOG_SCALE.start + lo] -= inv;
        }
    }
    (total * inv, grads)
}

pub fn beta_weight(delta: f64, cfg: &LossConfig) -> f64 {
    1.0 + cfg.lambda_seam * seam_kernel(delta, cfg.tau)
}

/// Cross-location weight; zero beyond the `2τ` activation radius.
pub fn gamma_weight(delta: f64, cfg: &LossConfig) -> f64 {
    if delta > 2.0 * cfg.tau {
        0.0
    } else {
        seam_kernel(delta, cfg.tau)
    }
}

fn seam_kernel(delta: f64, tau: f64) -> f64 {
    (-(delta * delta) / (2.0 * tau * tau)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGeometry {
    pub capture_positions: Vec<[f64; 3]>,
}

impl BoundaryGeometry {
    pub fn new(positions: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Precondition(
                "boundary geometry needs at least two capture positions".into(),
            ));
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if (positions[i] - positions[j]).norm() == 0.0 {
                    return Err(Error::Precondition(format!(
                        "capture positions {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            capture_positions: positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        })
    }

    fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.capture_positions[i])
    }

    pub fn min_spacing(&self) -> f64 {
        let n = self.capture_positions.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min((self.position(i) - self.position(j)).norm());
            }
        }
        best
    }

    /// Index of the capture location closest to `p` (lowest index on ties).
    pub fn nearest(&self, p: &Vector3<f64>) -> usize {
        (0..self.capture_positions.len())
            .min_by(|&a, &b| {
                (self.position(a) - p)
                    .norm_squared()
                    .total_cmp(&(self.position(b) - p).norm_squared())
            })
            .unwrap_or(0)
    }
}

/// Distance from a viewpoint to the nearest perpendicular-bisector plane
/// between any two capture positions.
pub fn boundary_distance(view: &Vector3<f64>, geom: &BoundaryGeometry) -> f64 {
    let n = geom.capture_positions.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (geom.position(i), geom.position(j));
            let num = ((view - a).norm_squared() - (view - b).norm_squared()).abs();
            best = best.min(num / (2.0 * (a - b).norm()));
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct CrossLoss {
    pub value: f64,
    pub grad_a: Image,
    pub grad_b: Image,
}

/// `γ(δ) · mean |∇a - ∇b|` over all forward-difference entries.
pub fn cross_loss(a: &Image, b: &Image, delta: f64, cfg: &LossConfig) -> Result<CrossLoss> {
    a.check_same_shape(b, "cross_loss")?;
    let (w, h, nc) = (a.width, a.height, a.channels);
    let mut grad_a = Image::new(w, h, nc);
    let gamma = gamma_weight(delta, cfg);
    let count = (h * w.saturating_sub(1) + h.saturating_sub(1) * w) * nc;
    if gamma == 0.0 || count == 0 {
        let grad_b = grad_a.clone();
        return Ok(CrossLoss {
            value: 0.0,
            grad_a,
            grad_b,
        });
    }
    let scale = gamma / count as f64;
    let mut total = 0.0;
    let mut visit = |i0: usize, i1: usize, grad: &mut Image| {
        let e = (a.data[i1] - a.data[i0]) - (b.data[i1] - b.data[i0]);
        total += e.abs();
        let s = if e > 0.0 {
            scale
        } else if e < 0.0 {
            -scale
        } else {
            0.0
        };
        grad.data[i1] += s;
        grad.data[i0] -= s;
    };
    for y in 0..h {
        for x in 0..w {
            for c in 0..nc {
                let i = a.index(x, y, c);
                if x + 1 < w {
                    visit(i, a.index(x + 1, y, c), &mut grad_a);
                }
                if y + 1 < h {
                    visit(i, a.index(x, y + 1, c), &mut grad_a);
                }
            }
        }
    }
    let mut grad_b = grad_a.clone();
    for v in grad_b.data.iter_mut() {
        *v = -*v;
    }
    Ok(CrossLoss {
        value: total * scale,
        grad_a,
        grad_b,
    })
}

pub struct CrossPairInput<'a> {
    pub a: &'a Image,
    pub b: &'a Image,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct SailLoss {
    pub value: f64,
    pub beta: f64,
    pub recon: ReconLoss,
    pub cross: Option<CrossLoss>,
}

impl SailLoss {
    /// Gradient w.r.t. the main render.
    pub fn grad(&self) -> Image {
        let mut g = self.recon.grad.clone();
        for v in g.data.iter_mut() {
            *v *= self.beta;
        }
        g
    }
}

/// `β(δ) · L_recon + λ_cross · L_cross` for one view plus an optional cross pair.
/// `cross.grad_*` are already scaled by `λ_cross`.
pub fn sail_loss(
    rendered: &Image,
    target: &Image,
    mask: Option<&Image>,
    delta: f64,
    pair: Option<CrossPairInput<'_>>,
    cfg: &LossConfig,
) -> Result<SailLoss> {
    let recon = recon_loss(rendered, target, cfg, mask)?;
    let beta = beta_weight(delta, cfg);
    let mut value = beta * recon.value;
    let cross = match pair {
        Some(p) if cfg.lambda_cross > 0.0 => {
            let mut c = cross_loss(p.a, p.b, p.delta, cfg)?;
            value += cfg.lambda_cross * c.value;
            for v in c.grad_a.data.iter_mut().chain(c.grad_b.data.iter_mut()) {
                *v *= cfg.lambda_cross;
            }
            Some(c)
        }
        _ => None,
    };
    Ok(SailLoss {
        value,
        beta,
        recon,
        cross,
    })
}
