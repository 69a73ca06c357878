//! Camera models and resampling between equirectangular panoramas, cubemaps
//! and pinhole views.
//!
//! Conventions: camera frame is +X right, +Y up, +Z forward. Image rows grow
//! downward, so a camera-frame point projects to
//! `(cx + fx * x / z, cy - fy * y / z)` in continuous pixel coordinates where
//! pixel `(i, j)` is centered at `(i + 0.5, j + 0.5)`.
//!
//! Equirectangular pixel `(u, v)` (integer index space, centers at integers)
//! has longitude `2π(u + 0.5)/W - π` and latitude `π/2 - π(v + 0.5)/H`; its
//! direction is `(cos φ sin λ, sin φ, cos φ cos λ)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Rigid placement: rotation maps camera-frame vectors into the world frame,
/// `position` is the camera center in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub position: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    /// `[w, x, y, z]`
    rotation: [f64; 4],
    position: [f64; 3],
}

impl From<PoseRecord> for PoseSE3 {
    fn from(r: PoseRecord) -> Self {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        // keep stored unit quaternions bit-exact, normalize hand-written ones
        let rotation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        PoseSE3 {
            rotation,
            position: Vector3::from(r.position),
        }
    }
}

impl From<PoseSE3> for PoseRecord {
    fn from(p: PoseSE3) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            rotation: [q.w, q.i, q.j, q.k],
            position: [p.position.x, p.position.y, p.position.z],
        }
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            position,
        }
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            position: self.rotation * other.position + self.position,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv = self.rotation.inverse();
        PoseSE3 {
            rotation: inv,
            position: -(inv * self.position),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    /// World point into the camera frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.position)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Rotation whose camera frame looks along `forward` with `up_hint` roughly up.
pub fn look_rotation(forward: &Vector3<f64>, up_hint: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = forward.normalize();
    let mut hint = *up_hint;
    if z.cross(&hint).norm() < 1e-6 {
        hint = if z.y.abs() < 0.9 {
            Vector3::y()
        } else {
            Vector3::z()
        };
    }
    let x = hint.cross(&z).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquirectCamera {
    pub pose: PoseSE3,
    pub width: usize,
    pub height: usize,
}

impl EquirectCamera {
    pub fn new(pose: PoseSE3, width: usize, height: usize) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::Precondition(format!(
                "equirectangular camera requires W = 2H, got {width}x{height}"
            )));
        }
        Ok(Self {
            pose,
            width,
            height,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub pose: PoseSE3,
    pub fov_x: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(pose: PoseSE3, fov_x: f64, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        for fov in [fov_x, fov_y] {
            if !(fov > 0.0 && fov < PI) {
                return Err(Error::Precondition(format!("fov {fov} outside (0, π)")));
            }
        }
        if width == 0 || height == 0 {
            return Err(Error::Precondition("pinhole camera with zero size".into()));
        }
        Ok(Self {
            pose,
            fov_x,
            fov_y,
            width,
            height,
        })
    }

    /// Square camera with equal horizontal and vertical field of view.
    pub fn square(pose: PoseSE3, fov: f64, size: usize) -> Result<Self> {
        Self::new(pose, fov, fov, size, size)
    }

    pub fn fx(&self) -> f64 {
        self.width as f64 / (2.0 * (self.fov_x / 2.0).tan())
    }

    pub fn fy(&self) -> f64 {
        self.height as f64 / (2.0 * (self.fov_y / 2.0).tan())
    }

    pub fn cx(&self) -> f64 {
        self.width as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// Unnormalized camera-frame ray (z = 1) through continuous pixel coordinates.
    pub fn ray_cam(&self, px: f64, py: f64) -> Vector3<f64> {
        Vector3::new(
            (px - self.cx()) / self.fx(),
            -(py - self.cy()) / self.fy(),
            1.0,
        )
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project_cam(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.cx() + self.fx() * p.x / p.z,
            self.cy() - self.fy() * p.y / p.z,
        ))
    }

    pub fn project_world(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        self.project_cam(&self.pose.world_to_camera(p))
    }

    /// World point at z-depth `depth` along pixel `(px, py)`.
    pub fn unproject(&self, px: f64, py: f64, depth: f64) -> Vector3<f64> {
        self.pose.transform_point(&(self.ray_cam(px, py) * depth))
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::z()
    }

    pub fn with_pose(&self, pose: PoseSE3) -> Self {
        Self { pose, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquirectFrame {
    pub camera: EquirectCamera,
    pub image: Image,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeFace {
    Front,
    Back,
    Left,
    Right,
    Up,
    Down,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Right,
        CubeFace::Up,
        CubeFace::Down,
    ];

    pub const HORIZONTAL: [CubeFace; 4] = [
        CubeFace::Front,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CubeFace::Front => "front",
            CubeFace::Back => "back",
            CubeFace::Left => "left",
            CubeFace::Right => "right",
            CubeFace::Up => "up",
            CubeFace::Down => "down",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Face orientation relative to the rig. Up/down are ±90° pitch about the
    /// camera x axis.
    pub fn local_rotation(self) -> UnitQuaternion<f64> {
        match self {
            CubeFace::Front => UnitQuaternion::identity(),
            CubeFace::Back => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI),
            CubeFace::Right => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
            CubeFace::Left => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -FRAC_PI_2),
            CubeFace::Up => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -FRAC_PI_2),
            CubeFace::Down => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
        }
    }

    /// Optical axis in the rig frame.
    pub fn axis(self) -> Vector3<f64> {
        match self {
            CubeFace::Front => Vector3::z(),
            CubeFace::Back => -Vector3::z(),
            CubeFace::Right => Vector3::x(),
            CubeFace::Left => -Vector3::x(),
            CubeFace::Up => Vector3::y(),
            CubeFace::Down => -Vector3::y(),
        }
    }

    /// 90° square face camera at a rig pose.
    pub fn camera(self, rig: &PoseSE3, res: usize) -> PinholeCamera {
        PinholeCamera {
            pose: PoseSE3::new(rig.rotation * self.local_rotation(), rig.position),
            fov_x: FRAC_PI_2,
            fov_y: FRAC_PI_2,
            width: res,
            height: res,
        }
    }

    /// Face whose axis has the largest dot product with `d` (rig frame).
    pub fn dominant(d: &Vector3<f64>) -> CubeFace {
        let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
        if az >= ax && az >= ay {
            if d.z >= 0.0 {
                CubeFace::Front
            } else {
                CubeFace::Back
            }
        } else if ax >= ay {
            if d.x >= 0.0 {
                CubeFace::Right
            } else {
                CubeFace::Left
            }
        } else if d.y >= 0.0 {
            CubeFace::Up
        } else {
            CubeFace::Down
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubemapFace {
    pub face: CubeFace,
    pub camera: PinholeCamera,
    pub image: Image,
    pub depth: Option<Image>,
}

/// Six 90° faces sharing one center, stored in [`CubeFace::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CubemapSet {
    pub rig: PoseSE3,
    pub t: f64,
    pub faces: Vec<CubemapFace>,
}

impl CubemapSet {
    pub fn from_faces(rig: PoseSE3, t: f64, faces: Vec<CubemapFace>) -> Result<Self> {
        if faces.len() != 6 {
            return Err(Error::FaceCount(faces.len()));
        }
        let res = faces[0].image.width;
        for (f, expected) in faces.iter().zip(CubeFace::ALL) {
            if f.face != expected {
                return Err(Error::Precondition(format!(
                    "face {} out of order (expected {})",
                    f.face.name(),
                    expected.name()
                )));
            }
            if f.image.width != res || f.image.height != res {
                return Err(Error::Precondition(
                    "cubemap faces must share one square resolution".into(),
                ));
            }
        }
        Ok(Self { rig, t, faces })
    }

    pub fn face(&self, face: CubeFace) -> &CubemapFace {
        &self.faces[face.index()]
    }

    pub fn resolution(&self) -> usize {
        self.faces[0].image.width
    }
}

/// Relative placement of a rig view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RigSlot {
    Central,
    YawPlus,
    YawMinus,
    PitchPlus,
    PitchMinus,
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigView {
    /// Base direction index, 0..20.
    pub group: usize,
    pub slot: RigSlot,
    /// Orientation relative to the panorama frame.
    pub rotation: UnitQuaternion<f64>,
    pub fov: f64,
}

impl RigView {
    pub fn axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRig {
    pub base_directions: Vec<[f64; 3]>,
    pub views: Vec<RigView>,
}

pub const RIG_SIZE: usize = 120;

impl ViewRig {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// World camera for rig view `i` placed at a panorama pose.
    pub fn camera(&self, i: usize, panorama: &PoseSE3, res: usize) -> PinholeCamera {
        let v = &self.views[i];
        PinholeCamera {
            pose: PoseSE3::new(panorama.rotation * v.rotation, panorama.position),
            fov_x: v.fov,
            fov_y: v.fov,
            width: res,
            height: res,
        }
    }
}

pub fn equirect_pixel_to_dir(u: f64, v: f64, width: usize, height: usize) -> Result<Vector3<f64>> {
    if !(u >= 0.0 && u < width as f64 && v >= 0.0 && v < height as f64) {
        return Err(Error::Precondition(format!(
            "pixel ({u}, {v}) outside {width}x{height}"
        )));
    }
    Ok(lonlat_to_dir(
        2.0 * PI * (u + 0.5) / width as f64 - PI,
        FRAC_PI_2 - PI * (v + 0.5) / height as f64,
    ))
}

#[inline]
fn lonlat_to_dir(lon: f64, lat: f64) -> Vector3<f64> {
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    Vector3::new(cp * sl, sp, cp * cl)
}

/// Inverse of [`equirect_pixel_to_dir`], returning index-space coordinates.
pub fn dir_to_equirect_pixel(d: &Vector3<f64>, width: usize, height: usize) -> (f64, f64) {
    let n = d.norm();
    let lon = d.x.atan2(d.z);
    let lat = (d.y / n).clamp(-1.0, 1.0).asin();
    let u = (lon + PI) * width as f64 / (2.0 * PI) - 0.5;
    let v = (FRAC_PI_2 - lat) * height as f64 / PI - 0.5;
    (u, v)
}

/// Bilinear lookup on a panorama with longitude wraparound and latitude
/// clamping; `d` in the panorama frame.
pub fn sample_equirect(img: &Image, d: &Vector3<f64>, out: &mut [f64]) {
    let (w, h) = (img.width, img.height);
    let (u, v) = dir_to_equirect_pixel(d, w, h);
    let x0f = u.floor();
    let tx = u - x0f;
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let vc = v.clamp(0.0, (h - 1) as f64);
    let y0 = vc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let ty = vc - y0 as f64;
    for (c, o) in out.iter_mut().enumerate().take(img.channels) {
        let a = img.get(x0, y0, c) * (1.0 - tx) + img.get(x1, y0, c) * tx;
        let b = img.get(x0, y1, c) * (1.0 - tx) + img.get(x1, y1, c) * tx;
        *o = a * (1.0 - ty) + b * ty;
    }
}

fn resample_pinhole(frame_img: &Image, pano_pose: &PoseSE3, cam: &PinholeCamera) -> Image {
    // rotation from camera frame into panorama frame
    let rel = pano_pose.rotation.inverse() * cam.pose.rotation;
    let rel = rel.to_rotation_matrix().into_inner();
    let ch = frame_img.channels;
    let mut data = vec![0.0; cam.width * cam.height * ch];
    data.par_chunks_mut(cam.width * ch)
        .enumerate()
        .for_each(|(py, row)| {
            for px in 0..cam.width {
                let d = rel * cam.ray_cam(px as f64 + 0.5, py as f64 + 0.5);
                sample_equirect(frame_img, &d, &mut row[px * ch..(px + 1) * ch]);
            }
        });
    Image {
        width: cam.width,
        height: cam.height,
        channels: ch,
        data,
    }
}

/// Pinhole view of a panorama. The camera center must coincide with the
/// panorama center.
pub fn render_perspective_view(frame: &EquirectFrame, cam: &PinholeCamera) -> Result<Image> {
    render_perspective_image(&frame.image, &frame.camera.pose, cam)
}

/// As [`render_perspective_view`] for any panorama-shaped image (color, depth or mask).
pub fn render_perspective_image(
    pano: &Image,
    pano_pose: &PoseSE3,
    cam: &PinholeCamera,
) -> Result<Image> {
    let offset = (cam.pose.position - pano_pose.position).norm();
    if offset > 1e-9 {
        return Err(Error::Precondition(format!(
            "pinhole center is {offset} m from the panorama center; panoramas carry no parallax"
        )));
    }
    Ok(resample_pinhole(pano, pano_pose, cam))
}

pub fn equirect_to_cubemap(frame: &EquirectFrame, face_res: usize) -> Result<CubemapSet> {
    if face_res < 2 {
        return Err(Error::Precondition(format!("face_res {face_res} < 2")));
    }
    let rig = frame.camera.pose;
    let faces = CubeFace::ALL
        .iter()
        .map(|&face| {
            let camera = face.camera(&rig, face_res);
            CubemapFace {
                face,
                camera,
                image: resample_pinhole(&frame.image, &rig, &camera),
                depth: None,
            }
        })
        .collect();
    CubemapSet::from_faces(rig, frame.t, faces)
}

/// Reassemble a panorama from faces: each pixel reads the face whose axis is
/// closest to its ray.
pub fn cubemap_to_equirect(cm: &CubemapSet, width: usize, height: usize) -> Result<EquirectFrame> {
    let camera = EquirectCamera::new(cm.rig, width, height)?;
    let image = cubemap_to_equirect_image(cm, width, height, |f| &f.image);
    Ok(EquirectFrame {
        camera,
        image,
        t: cm.t,
    })
}

/// Reassembly over an arbitrary per-face image (color, depth or mask).
pub fn cubemap_to_equirect_image<'a>(
    cm: &'a CubemapSet,
    width: usize,
    height: usize,
    select: impl Fn(&'a CubemapFace) -> &'a Image + Sync,
) -> Image {
    let ch = select(&cm.faces[0]).channels;
    let res = cm.resolution() as f64;
    // f = res / 2 for a 90° face
    let f = res / 2.0;
    let locals: Vec<Matrix3<f64>> = CubeFace::ALL
        .iter()
        .map(|face| {
            face.local_rotation()
                .inverse()
                .to_rotation_matrix()
                .into_inner()
        })
        .collect();
    let mut data = vec![0.0; width * height * ch];
    data.par_chunks_mut(width * ch)
        .enumerate()
        .for_each(|(v, row)| {
            for u in 0..width {
                let d = lonlat_to_dir(
                    2.0 * PI * (u as f64 + 0.5) / width as f64 - PI,
                    FRAC_PI_2 - PI * (v as f64 + 0.5) / height as f64,
                );
                let face = CubeFace::dominant(&d);
                let p = locals[face.index()] * d;
                let px = f + f * p.x / p.z;
                let py = f - f * p.y / p.z;
                select(&cm.faces[face.index()]).sample_bilinear_clamped(
                    px,
                    py,
                    &mut row[u * ch..(u + 1) * ch],
                );
            }
        });
    Image {
        width,
        height,
        channels: ch,
        data,
    }
}

/// Vertices of a regular dodecahedron on the unit sphere.
pub fn dodecahedron_directions() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let iphi = 1.0 / phi;
    let mut out = Vec::with_capacity(20);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out.push(Vector3::new(sx, sy, sz));
            }
        }
    }
    for a in [-1.0, 1.0] {
        for b in [-1.0, 1.0] {
            out.push(Vector3::new(0.0, a * iphi, b * phi));
            out.push(Vector3::new(a * iphi, b * phi, 0.0));
            out.push(Vector3::new(a * phi, 0.0, b * iphi));
        }
    }
    out.into_iter().map(|v| v.normalize()).collect()
}

pub const DEFAULT_NARROW_FOV: f64 = 60.0 * PI / 180.0;
pub const DEFAULT_WIDE_FOV: f64 = 120.0 * PI / 180.0;
pub const DEFAULT_RIG_OFFSET: f64 = 10.0 * PI / 180.0;

/// 120-view virtual rig: 20 dodecahedron directions × (central + 4 offset
/// narrow views), then 20 wide views on the same directions.
pub fn build_view_rig(narrow_fov: f64, wide_fov: f64, offset: f64) -> Result<ViewRig> {
    if !(0.0 < narrow_fov && narrow_fov < wide_fov && wide_fov < PI) {
        return Err(Error::Precondition(format!(
            "need 0 < narrow_fov < wide_fov < π, got {narrow_fov}, {wide_fov}"
        )));
    }
    let dirs = dodecahedron_directions();
    let mut views = Vec::with_capacity(RIG_SIZE);
    for (group, d) in dirs.iter().enumerate() {
        let central = look_rotation(d, &Vector3::y());
        let yaw = |a: f64| central * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
        let pitch = |a: f64| central * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -a);
        for (slot, rotation) in [
            (RigSlot::Central, central),
            (RigSlot::YawPlus, yaw(offset)),
            (RigSlot::YawMinus, yaw(-offset)),
            (RigSlot::PitchPlus, pitch(offset)),
            (RigSlot::PitchMinus, pitch(-offset)),
        ] {
            views.push(RigView {
                group,
                slot,
                rotation,
                fov: narrow_fov,
            });
        }
    }
    for (group, d) in dirs.iter().enumerate() {
        views.push(RigView {
            group,
            slot: RigSlot::Wide,
            rotation: look_rotation(d, &Vector3::y()),
            fov: wide_fov,
        });
    }
    Ok(ViewRig {
        base_directions: dirs.iter().map(|d| [d.x, d.y, d.z]).collect(),
        views,
    })
}

pub fn default_view_rig() -> ViewRig {
    build_view_rig(DEFAULT_NARROW_FOV, DEFAULT_WIDE_FOV, DEFAULT_RIG_OFFSET)
        .expect("default rig parameters are valid")
}

/// `count` interior points of the segment, endpoints excluded.
pub fn interpolate_positions(
    from: &Vector3<f64>,
    to: &Vector3<f64>,
    count: usize,
) -> Result<Vec<Vector3<f64>>> {
    if count == 0 {
        return Err(Error::Precondition(
            "need at least one intermediate position".into(),
        ));
    }
    if (to - from).norm() == 0.0 {
        return Err(Error::DegenerateSegment(from.x, from.y, from.z));
    }
    let n = (count + 1) as f64;
    Ok((1..=count)
        .map(|k| from + (to - from) * (k as f64 / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos()
    }

    fn frame_from(
        width: usize,
        height: usize,
        f: impl Fn(&Vector3<f64>) -> [f64; 3],
    ) -> EquirectFrame {
        let image = Image::from_fn(width, height, 3, |u, v, c| {
            f(&equirect_pixel_to_dir(u as f64, v as f64, width, height).unwrap())[c]
        });
        EquirectFrame {
            camera: EquirectCamera::new(PoseSE3::identity(), width, height).unwrap(),
            image,
            t: 0.0,
        }
    }

    fn smooth(d: &Vector3<f64>) -> [f64; 3] {
        [
            0.5 + 0.1 * d.x + 0.05 * d.z,
            0.5 + 0.2 * d.y * d.z,
            0.4 + 0.15 * d.z - 0.1 * d.y,
        ]
    }

    #[test]
    fn center_pixel_is_forward() {
        let d = equirect_pixel_to_dir(127.5, 63.5, 256, 128).unwrap();
        assert!((d - Vector3::z()).norm() < 1e-6);
    }

    #[test]
    fn top_row_is_near_north_pole() {
        let h = 128;
        let d = equirect_pixel_to_dir(10.0, 0.0, 2 * h, h).unwrap();
        let lat = d.y.asin();
        assert!((lat - (FRAC_PI_2 - PI / (2.0 * h as f64))).abs() < 1e-12);
        assert!(d.y > 0.999);
    }

    #[test]
    fn out_of_range_pixel_is_rejected() {
        assert!(equirect_pixel_to_dir(256.0, 3.0, 256, 128).is_err());
        assert!(equirect_pixel_to_dir(3.0, -1.0, 256, 128).is_err());
    }

    #[test]
    fn pixel_dir_round_trip_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (256, 128);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let u = rng.random_range(0.0..w as f64 - 0.5);
            let v = rng.random_range(0.0..h as f64 - 0.5);
            let d = equirect_pixel_to_dir(u, v, w, h).unwrap();
            let (u2, v2) = dir_to_equirect_pixel(&d, w, h);
            let d2 = equirect_pixel_to_dir(u2, v2, w, h).unwrap();
            worst = worst.max(angle(&d, &d2));
        }
        assert!(worst < 1e-6, "worst angular error {worst}");
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let p = PoseSE3::new(
            UnitQuaternion::from_euler_angles(0.3, -1.2, 2.0),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = p.compose(&p.inverse());
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.position.norm() < 1e-9);
        assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_panorama_gives_constant_faces() {
        let frame = frame_from(64, 32, |_| [0.5, 0.5, 0.5]);
        let cm = equirect_to_cubemap(&frame, 16).unwrap();
        assert_eq!(cm.faces.len(), 6);
        for f in &cm.faces {
            assert_eq!(
                f.image.max_abs_diff(&Image::rgb_constant(16, 16, [0.5; 3])),
                0.0
            );
            assert_eq!(f.camera.pose.position, frame.camera.pose.position);
        }
    }

    #[test]
    fn octant_colors_land_on_face_centers() {
        let color = |d: &Vector3<f64>| {
            let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
            if az >= ax && az >= ay {
                if d.z > 0.0 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                }
            } else if ax >= ay {
                if d.x > 0.0 {
                    [0.0, 0.0, 1.0]
                } else {
                    [1.0, 1.0, 0.0]
                }
            } else if d.y > 0.0 {
                [1.0, 0.0, 1.0]
            } else {
                [0.0, 1.0, 1.0]
            }
        };
        let frame = frame_from(256, 128, color);
        let cm = equirect_to_cubemap(&frame, 33).unwrap();
        for f in &cm.faces {
            let c = f.image.pixel(16, 16);
            let expected = color(&f.face.axis());
            for k in 0..3 {
                assert!((c[k] - expected[k]).abs() < 1e-9, "{:?}", f.face);
            }
        }
    }

    #[test]
    fn cubemap_faces_match_direct_sampling_oracle() {
        let frame = frame_from(256, 128, smooth);
        let cm = equirect_to_cubemap(&frame, 64).unwrap();
        let mut worst: f64 = 0.0;
        for f in &cm.faces {
            for py in 0..64 {
                for px in 0..64 {
                    let d =
                        f.camera.pose.rotation * f.camera.ray_cam(px as f64 + 0.5, py as f64 + 0.5);
                    let truth = smooth(&d.normalize());
                    for c in 0..3 {
                        worst = worst.max((f.image.get(px, py, c) - truth[c]).abs());
                    }
                }
            }
        }
        assert!(worst < 1.0 / 255.0, "max error {worst}");
    }

    #[test]
    fn constant_faces_give_constant_panorama() {
        let frame = frame_from(64, 32, |_| [0.2, 0.4, 0.6]);
        let cm = equirect_to_cubemap(&frame, 8).unwrap();
        let back = cubemap_to_equirect(&cm, 64, 32).unwrap();
        assert!(back.image.max_abs_diff(&frame.image) < 1e-12);
    }

    #[test]
    fn face_axes_map_to_expected_longitudes() {
        let (w, h) = (256, 128);
        let cases = [
            (CubeFace::Front, 0.0, 0.0),
            (CubeFace::Right, FRAC_PI_2, 0.0),
            (CubeFace::Left, -FRAC_PI_2, 0.0),
            (CubeFace::Back, PI, 0.0),
        ];
        for (face, lon, lat) in cases {
            let (u, v) = dir_to_equirect_pixel(&face.axis(), w, h);
            let lon_u = 2.0 * PI * (u + 0.5) / w as f64 - PI;
            let lat_v = FRAC_PI_2 - PI * (v + 0.5) / h as f64;
            let wrapped = (lon_u - lon).rem_euclid(2.0 * PI);
            assert!(wrapped.min(2.0 * PI - wrapped) < 1e-9, "{face:?}");
            assert!((lat_v - lat).abs() < 1e-9);
        }
        let (_, v_up) = dir_to_equirect_pixel(&CubeFace::Up.axis(), w, h);
        assert!((v_up + 0.5).abs() < 1e-9);
        let (_, v_down) = dir_to_equirect_pixel(&CubeFace::Down.axis(), w, h);
        assert!((v_down - (h as f64 - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn face_cameras_look_along_their_axes() {
        for face in CubeFace::ALL {
            let cam = face.camera(&PoseSE3::identity(), 8);
            assert!((cam.forward() - face.axis()).norm() < 1e-12, "{face:?}");
            assert_eq!(CubeFace::dominant(&face.axis()), face);
        }
    }

    #[test]
    fn perspective_views_match_cubemap_faces() {
        let frame = frame_from(256, 128, smooth);
        let cm = equirect_to_cubemap(&frame, 48).unwrap();
        for face in [CubeFace::Front, CubeFace::Back] {
            let cam = PinholeCamera::square(
                PoseSE3::new(face.local_rotation(), Vector3::zeros()),
                FRAC_PI_2,
                48,
            )
            .unwrap();
            let view = render_perspective_view(&frame, &cam).unwrap();
            assert!(view.max_abs_diff(&cm.face(face).image) < 1.0 / 255.0);
        }
        let flat = frame_from(64, 32, |_| [0.3; 3]);
        let cam = PinholeCamera::square(PoseSE3::identity(), 1.0, 10).unwrap();
        let view = render_perspective_view(&flat, &cam).unwrap();
        assert!(view.max_abs_diff(&Image::rgb_constant(10, 10, [0.3; 3])) < 1e-12);
    }

    #[test]
    fn perspective_view_rejects_offset_center() {
        let frame = frame_from(64, 32, smooth);
        let cam =
            PinholeCamera::square(PoseSE3::from_position(Vector3::new(0.0, 0.0, 1.0)), 1.0, 8)
                .unwrap();
        assert!(matches!(
            render_perspective_view(&frame, &cam),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn rig_has_120_views_in_expected_groups() {
        let offset = 10f64.to_radians();
        let rig = build_view_rig(60f64.to_radians(), 120f64.to_radians(), offset).unwrap();
        assert_eq!(rig.len(), RIG_SIZE);
        assert_eq!(
            rig.views.iter().filter(|v| v.slot == RigSlot::Wide).count(),
            20
        );
        for g in 0..20 {
            let group: Vec<_> = rig.views[5 * g..5 * g + 5].iter().collect();
            let base = Vector3::from(rig.base_directions[g]);
            assert!(group.iter().all(|v| v.group == g));
            assert!(angle(&group[0].axis(), &base) < 1e-12);
            for v in &group[1..] {
                assert!((angle(&v.axis(), &group[0].axis()) - offset).abs() < 1e-9);
                // pure yaw or pure pitch relative to the central view
                let rel = group[0].rotation.inverse() * v.rotation;
                let axis = rel.axis().unwrap();
                assert!(axis.x.abs() > 1.0 - 1e-9 || axis.y.abs() > 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn dodecahedron_min_pairwise_angle() {
        let dirs = dodecahedron_directions();
        assert_eq!(dirs.len(), 20);
        let mut min = f64::MAX;
        for i in 0..20 {
            for j in i + 1..20 {
                min = min.min(angle(&dirs[i], &dirs[j]));
            }
        }
        assert!(
            (min.to_degrees() - 41.81).abs() < 0.01,
            "{}",
            min.to_degrees()
        );
    }

    #[test]
    fn rig_covers_sphere_at_default_fov() {
        let rig = default_view_rig();
        let axes: Vec<_> = rig.views.iter().map(|v| v.axis()).collect();
        let n = 10_000;
        let golden = PI * (3.0 - 5.0_f64.sqrt());
        let half = DEFAULT_NARROW_FOV / 2.0;
        for i in 0..n {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let d = Vector3::new(r * th.cos(), y, r * th.sin());
            let best = axes.iter().map(|a| angle(a, &d)).fold(f64::MAX, f64::min);
            assert!(
                best <= half,
                "direction {d:?} is {} deg from nearest axis",
                best.to_degrees()
            );
        }
    }

    #[test]
    fn rig_rejects_bad_fovs() {
        assert!(build_view_rig(1.0, 0.5, 0.1).is_err());
        assert!(build_view_rig(1.0, 3.2, 0.1).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let a = Vector3::zeros();
        let b = Vector3::new(10.0, 0.0, 0.0);
        assert_eq!(
            interpolate_positions(&a, &b, 1).unwrap(),
            vec![Vector3::new(5.0, 0.0, 0.0)]
        );
        let xs: Vec<f64> = interpolate_positions(&a, &b, 4)
            .unwrap()
            .iter()
            .map(|p| p.x)
            .collect();
        assert_eq!(xs, vec![2.0, 4.0, 6.0, 8.0]);
        assert!(matches!(
            interpolate_positions(&a, &a, 3),
            Err(Error::DegenerateSegment(..))
        ));
    }

    proptest! {
        #[test]
        fn interpolation_is_collinear_and_increasing(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, az in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bz in -50.0..50.0f64,
            k in 1usize..12,
        ) {
            let a = Vector3::new(ax, ay, az);
            let b = Vector3::new(bx, by, bz);
            prop_assume!((b - a).norm() > 1e-3);
            let pts = interpolate_positions(&a, &b, k).unwrap();
            let dir = (b - a).normalize();
            let mut last = 0.0;
            for p in &pts {
                let rel = p - a;
                let s = rel.dot(&dir);
                prop_assert!((rel - dir * s).norm() < 1e-9 * (1.0 + (b - a).norm()));
                prop_assert!(s > last);
                last = s;
            }
            prop_assert!(last < (b - a).norm());
        }

        #[test]
        fn pixel_dir_bijection(h in 4usize..64, fu in 0.0..1.0f64, fv in 0.0..1.0f64) {
            let w = 2 * h;
            let u = (fu * w as f64).floor();
            let v = (fv * h as f64).floor();
            let d = equirect_pixel_to_dir(u, v, w, h).unwrap();
            let (u2, v2) = dir_to_equirect_pixel(&d, w, h);
            prop_assert!((u2 - u).abs() < 0.5 || (u2 - u).abs() > w as f64 - 0.5);
            prop_assert!((v2 - v).abs() < 0.5);
        }
    }
}
