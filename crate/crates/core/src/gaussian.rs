//! Time-varying Gaussian primitives.
//!
//! Each primitive stores unconstrained parameters (log-scale, opacity logit)
//! and is evaluated at a timestamp into a world-space mean, covariance,
//! opacity and color:
//!
//! ```text
//! Δ      = t - t_center
//! μ(t)   = μ0 + v Δ + a Δ²
//! R(t)   = R(q̂0 ⊗ exp(ω Δ))
//! Σ(t)   = R S² Rᵀ,  S = diag(exp(log_scale))
//! σ(t)   = sigmoid(opacity_logit) · exp(-s_t Δ²)
//! c(t)   = clamp(c0 + ċ Δ, 0, 1)
//! ```

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Number of scalar parameters per primitive.
pub const PARAMS_PER_GAUSSIAN: usize = 28;

/// Parameter slot ranges inside the flat 28-float layout.
pub mod slot {
    use std::ops::Range;
    pub const MU0: Range<usize> = 0..3;
    pub const VEL: Range<usize> = 3..6;
    pub const ACC: Range<usize> = 6..9;
    pub const ROT0: Range<usize> = 9..13;
    pub const ANG_VEL: Range<usize> = 13..16;
    pub const LOG_SCALE: Range<usize> = 16..19;
    pub const OPACITY_LOGIT: usize = 19;
    pub const T_CENTER: usize = 20;
    pub const TEMPORAL_SHARPNESS: usize = 21;
    pub const COLOR0: Range<usize> = 22..25;
    pub const COLOR_RATE: Range<usize> = 25..28;
}

pub const MIN_LOG_SCALE: f64 = -13.815510557964274; // ln(1e-6)
pub const MAX_LOG_SCALE: f64 = 6.907755278982137; // ln(1e3)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalGaussian {
    pub mu0: [f64; 3],
    pub vel: [f64; 3],
    pub acc: [f64; 3],
    /// `[w, x, y, z]`; normalized on evaluation.
    pub rot0: [f64; 4],
    pub ang_vel: [f64; 3],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub t_center: f64,
    pub temporal_sharpness: f64,
    pub color0: [f64; 3],
    pub color_rate: [f64; 3],
}

impl Default for TemporalGaussian {
    fn default() -> Self {
        Self {
            mu0: [0.0; 3],
            vel: [0.0; 3],
            acc: [0.0; 3],
            rot0: [1.0, 0.0, 0.0, 0.0],
            ang_vel: [0.0; 3],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            t_center: 0.0,
            temporal_sharpness: 0.0,
            color0: [0.5; 3],
            color_rate: [0.0; 3],
        }
    }
}

/// World-space state of one primitive at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Upstream gradients of a [`GaussianState`]. `cov` is the gradient with
/// respect to every covariance entry taken independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrad {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Default for StateGrad {
    fn default() -> Self {
        Self {
            mean: Vector3::zeros(),
            cov: Matrix3::zeros(),
            opacity: 0.0,
            color: [0.0; 3],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Hamilton product, quaternions as `[w, x, y, z]`.
fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

fn quat_mul_backward(
    a: &Vector4<f64>,
    b: &Vector4<f64>,
    g: &Vector4<f64>,
) -> (Vector4<f64>, Vector4<f64>) {
    let da = Vector4::new(
        g[0] * b[0] + g[1] * b[1] + g[2] * b[2] + g[3] * b[3],
        -g[0] * b[1] + g[1] * b[0] - g[2] * b[3] + g[3] * b[2],
        -g[0] * b[2] + g[1] * b[3] + g[2] * b[0] - g[3] * b[1],
        -g[0] * b[3] - g[1] * b[2] + g[2] * b[1] + g[3] * b[0],
    );
    let db = Vector4::new(
        g[0] * a[0] + g[1] * a[1] + g[2] * a[2] + g[3] * a[3],
        -g[0] * a[1] + g[1] * a[0] + g[2] * a[3] - g[3] * a[2],
        -g[0] * a[2] - g[1] * a[3] + g[2] * a[0] + g[3] * a[1],
        -g[0] * a[3] + g[1] * a[2] - g[2] * a[1] + g[3] * a[0],
    );
    (da, db)
}

/// `sin(θ/2)/θ` and `(d/dθ (sin(θ/2)/θ)) / θ`, with series near zero.
fn half_sinc(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 48.0, -1.0 / 24.0 + t2 / 960.0)
    } else {
        let (s, c) = (theta / 2.0).sin_cos();
        (s / theta, (theta / 2.0 * c - s) / (theta * theta * theta))
    }
}

/// Rotation matrix of a quaternion `[w, x, y, z]` (assumed unit).
fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn quat_to_matrix_backward(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(
        0.0,
        -2.0 * z,
        2.0 * y,
        2.0 * z,
        0.0,
        -2.0 * x,
        -2.0 * y,
        2.0 * x,
        0.0,
    );
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    Vector4::new(
        g.component_mul(&dw).sum(),
        g.component_mul(&dx).sum(),
        g.component_mul(&dy).sum(),
        g.component_mul(&dz).sum(),
    )
}

/// Intermediate values of the rotation chain, shared by forward and backward.
struct RotationChain {
    q_norm: f64,
    q_hat: Vector4<f64>,
    v: Vector3<f64>,
    s: f64,
    k: f64,
    q_delta: Vector4<f64>,
    q_t: Vector4<f64>,
}

impl RotationChain {
    fn new(rot0: &[f64; 4], ang_vel: &[f64; 3], dt: f64) -> Self {
        let q_raw = Vector4::from(*rot0);
        let q_norm = q_raw.norm();
        let q_hat = q_raw / q_norm;
        let v = Vector3::from(*ang_vel) * dt;
        let theta = v.norm();
        let (s, k) = half_sinc(theta);
        let q_delta = Vector4::new((theta / 2.0).cos(), s * v.x, s * v.y, s * v.z);
        let q_t = quat_mul(&q_hat, &q_delta);
        Self {
            q_norm,
            q_hat,
            v,
            s,
            k,
            q_delta,
            q_t,
        }
    }
}

impl TemporalGaussian {
    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut a = [0.0; PARAMS_PER_GAUSSIAN];
        a[slot::MU0].copy_from_slice(&self.mu0);
        a[slot::VEL].copy_from_slice(&self.vel);
        a[slot::ACC].copy_from_slice(&self.acc);
        a[slot::ROT0].copy_from_slice(&self.rot0);
        a[slot::ANG_VEL].copy_from_slice(&self.ang_vel);
        a[slot::LOG_SCALE].copy_from_slice(&self.log_scale);
        a[slot::OPACITY_LOGIT] = self.opacity_logit;
        a[slot::T_CENTER] = self.t_center;
        a[slot::TEMPORAL_SHARPNESS] = self.temporal_sharpness;
        a[slot::COLOR0].copy_from_slice(&self.color0);
        a[slot::COLOR_RATE].copy_from_slice(&self.color_rate);
        a
    }

    pub fn from_array(a: &[f64]) -> Self {
        let v3 = |r: std::ops::Range<usize>| [a[r.start], a[r.start + 1], a[r.start + 2]];
        Self {
            mu0: v3(slot::MU0),
            vel: v3(slot::VEL),
            acc: v3(slot::ACC),
            rot0: [a[9], a[10], a[11], a[12]],
            ang_vel: v3(slot::ANG_VEL),
            log_scale: v3(slot::LOG_SCALE),
            opacity_logit: a[slot::OPACITY_LOGIT],
            t_center: a[slot::T_CENTER],
            temporal_sharpness: a[slot::TEMPORAL_SHARPNESS],
            color0: v3(slot::COLOR0),
            color_rate: v3(slot::COLOR_RATE),
        }
    }

    pub fn base_opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn eval_at_time(&self, t: f64) -> GaussianState {
        let dt = t - self.t_center;
        let mean = Vector3::from(self.mu0)
            + Vector3::from(self.vel) * dt
            + Vector3::from(self.acc) * (dt * dt);
        let rot = RotationChain::new(&self.rot0, &self.ang_vel, dt);
        let r = quat_to_matrix(&rot.q_t);
        let scale = Vector3::from(self.log_scale).map(f64::exp);
        let m = r * Matrix3::from_diagonal(&scale);
        let cov = m * m.transpose();
        let opacity = self.base_opacity() * (-self.temporal_sharpness * dt * dt).exp();
        let mut color = [0.0; 3];
        for (c, out) in color.iter_mut().enumerate() {
            *out = (self.color0[c] + self.color_rate[c] * dt).clamp(0.0, 1.0);
        }
        GaussianState {
            mean,
            cov,
            opacity,
            color,
        }
    }

    /// Reverse-mode partials of [`eval_at_time`](Self::eval_at_time) for every
    /// parameter, in the flat layout of [`to_array`](Self::to_array).
    pub fn eval_backward(&self, t: f64, g: &StateGrad) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        let dt = t - self.t_center;
        let mut d_dt = 0.0;

        // mean
        let vel = Vector3::from(self.vel);
        let acc = Vector3::from(self.acc);
        out[slot::MU0].copy_from_slice(g.mean.as_slice());
        out[slot::VEL].copy_from_slice((g.mean * dt).as_slice());
        out[slot::ACC].copy_from_slice((g.mean * (dt * dt)).as_slice());
        d_dt += g.mean.dot(&(vel + acc * (2.0 * dt)));

        // covariance: Σ = M Mᵀ, M = R S
        let rot = RotationChain::new(&self.rot0, &self.ang_vel, dt);
        let r = quat_to_matrix(&rot.q_t);
        let scale = Vector3::from(self.log_scale).map(f64::exp);
        let m = r * Matrix3::from_diagonal(&scale);
        let d_m = (g.cov + g.cov.transpose()) * m;
        let mut d_r = Matrix3::zeros();
        for j in 0..3 {
            let mut d_s = 0.0;
            for i in 0..3 {
                d_r[(i, j)] = d_m[(i, j)] * scale[j];
                d_s += d_m[(i, j)] * r[(i, j)];
            }
            out[slot::LOG_SCALE.start + j] = d_s * scale[j];
        }
        let d_qt = quat_to_matrix_backward(&rot.q_t, &d_r);
        let (d_qhat, d_qdelta) = quat_mul_backward(&rot.q_hat, &rot.q_delta, &d_qt);
        let d_qraw = (d_qhat - rot.q_hat * rot.q_hat.dot(&d_qhat)) / rot.q_norm;
        out[slot::ROT0].copy_from_slice(d_qraw.as_slice());
        let g_xyz = Vector3::new(d_qdelta[1], d_qdelta[2], d_qdelta[3]);
        let d_v = rot.v * (-0.5 * rot.s * d_qdelta[0])
            + g_xyz * rot.s
            + rot.v * (rot.k * rot.v.dot(&g_xyz));
        out[slot::ANG_VEL].copy_from_slice((d_v * dt).as_slice());
        d_dt += Vector3::from(self.ang_vel).dot(&d_v);

        // opacity
        let base = self.base_opacity();
        let decay = (-self.temporal_sharpness * dt * dt).exp();
        let sigma = base * decay;
        out[slot::OPACITY_LOGIT] = g.opacity * base * (1.0 - base) * decay;
        out[slot::TEMPORAL_SHARPNESS] = -g.opacity * dt * dt * sigma;
        d_dt += -g.opacity * 2.0 * self.temporal_sharpness * dt * sigma;

        // color
        for c in 0..3 {
            let raw = self.color0[c] + self.color_rate[c] * dt;
            if raw > 0.0 && raw < 1.0 {
                out[slot::COLOR0.start + c] = g.color[c];
                out[slot::COLOR_RATE.start + c] = g.color[c] * dt;
                d_dt += g.color[c] * self.color_rate[c];
            }
        }

        out[slot::T_CENTER] = -d_dt;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub gaussians: Vec<TemporalGaussian>,
    /// Temporal domain `[0, duration]` in seconds.
    pub duration: f64,
    pub background: [f64; 3],
}

impl GaussianScene {
    pub fn new(duration: f64, background: [f64; 3]) -> Self {
        Self {
            gaussians: Vec::new(),
            duration,
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len() * PARAMS_PER_GAUSSIAN);
        for g in &self.gaussians {
            v.extend_from_slice(&g.to_array());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        self.gaussians = flat
            .chunks_exact(PARAMS_PER_GAUSSIAN)
            .map(TemporalGaussian::from_array)
            .collect();
    }
}
