//! Synthetic benchmark: a seeded teacher scene stands in for the world, is
//! captured from two locations with the 120-view rig, split into train/test
//! sets and used as the exact ground truth for evaluation.

use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{
    build_view_rig, cubemap_to_equirect, CubeFace, CubemapFace, CubemapSet, PinholeCamera, PoseSE3,
    ViewRig,
};
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianScene, TemporalGaussian};
use crate::image::{load_depth, load_png_u8, save_depth, Image};
use crate::losses::{ssim_score, LossConfig};
use crate::render::render;
use crate::scene_io::{load_scene, save_scene};

pub const PSNR_CAP_DB: f64 = 99.0;
/// Coverage below which a pixel is treated as background (no depth).
pub const DEPTH_COVERAGE: f64 = 0.5;
pub const GROUND_HEIGHT: f64 = -1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    /// Static building Gaussians.
    pub n_static: usize,
    /// Adds a ground plane whose tiles grow with distance from the capture line.
    pub ground: bool,
    /// Gaussians in moving vehicle-like clusters.
    pub n_dynamic: usize,
    /// Side of the square ground region, meters.
    pub extent: f64,
    pub center: [f64; 3],
    pub duration: f64,
    pub fps: f64,
    pub background: [f64; 3],
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_static: 160,
            ground: true,
            n_dynamic: 20,
            extent: 30.0,
            center: [5.0, 0.0, 0.0],
            duration: 1.0,
            fps: 10.0,
            background: [0.55, 0.7, 0.9],
        }
    }
}

impl WorldSpec {
    pub fn frames(&self) -> Result<usize> {
        let f = self.fps * self.duration;
        if !(f.is_finite() && f >= 1.0 && (f - f.round()).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "fps·T = {f} is not a positive integer"
            )));
        }
        Ok(f.round() as usize)
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }
}

fn color_jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-amount..amount)).clamp(0.15, 0.85))
}

/// Row offsets and tile sizes: 0.6 m at the capture line, growing 35% per row.
fn ground_rows(half: f64) -> Vec<(f64, f64)> {
    let mut rows = vec![(0.0, 0.6)];
    let (mut z, mut size) = (0.0, 0.6);
    while z + size / 2.0 < half {
        let next = (size * 1.35).min(4.0);
        z += (size + next) / 2.0;
        size = next;
        rows.push((z, size));
        rows.push((-z, size));
    }
    rows
}

fn yaw(a: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
    [q.w, q.i, q.j, q.k]
}

/// Seeded teacher: a textured ground plane, box-cluster buildings beside the
/// capture line, and vehicle clusters driving along it.
pub fn generate_world(spec: &WorldSpec) -> Result<GaussianScene> {
    spec.frames()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scene = GaussianScene::new(spec.duration, spec.background);
    let t_mid = spec.duration / 2.0;
    let [cx, _, cz] = spec.center;
    let half = spec.extent / 2.0;
    let solid = logit(0.95);

    if spec.ground {
        for (z, size) in ground_rows(half) {
            let cols = (spec.extent / size).ceil() as usize;
            let step = spec.extent / cols as f64;
            for i in 0..cols {
                let x = cx - half + step * (i as f64 + 0.5) + rng.random_range(-0.15..0.15) * step;
                let tone = rng.random_range(0.3..0.55);
                scene.gaussians.push(TemporalGaussian {
                    mu0: [x, GROUND_HEIGHT, cz + z],
                    rot0: yaw(rng.random_range(-0.3..0.3)),
                    log_scale: [(0.6 * step).ln(), 0.02f64.ln(), (0.6 * size).ln()],
                    opacity_logit: solid,
                    t_center: t_mid,
                    color0: color_jitter(&mut rng, [tone, tone * 1.05, tone * 0.85], 0.08),
                    ..Default::default()
                });
            }
        }
    }

    let n_build = spec.n_static;
    let n_buildings = if n_build == 0 {
        0
    } else {
        (n_build / 10).max(1)
    };
    for b in 0..n_buildings {
        let count = n_build / n_buildings + usize::from(b < n_build % n_buildings);
        let side = if b % 2 == 0 { 1.0 } else { -1.0 };
        let bx = cx + rng.random_range(-half + 3.0..half - 3.0);
        let bz = cz + side * rng.random_range(6.0..(half - 2.0).max(6.5));
        let (w, d, h) = (
            rng.random_range(2.0..5.0),
            rng.random_range(2.0..5.0),
            rng.random_range(3.0..8.0),
        );
        let base = [
            rng.random_range(0.3..0.75),
            rng.random_range(0.3..0.75),
            rng.random_range(0.3..0.75),
        ];
        let patch = ((2.0 * (w + d) * h + w * d) / count.max(1) as f64).sqrt();
        for _ in 0..count {
            // faces: 0..4 walls, 4 roof
            let face = rng.random_range(0..5usize);
            let (mu, scale, rot) = match face {
                4 => (
                    [
                        bx + rng.random_range(-w / 2.0..w / 2.0),
                        GROUND_HEIGHT + h,
                        bz + rng.random_range(-d / 2.0..d / 2.0),
                    ],
                    [0.5 * patch, 0.05, 0.5 * patch],
                    yaw(0.0),
                ),
                f => {
                    let along_x = f < 2;
                    let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
                    let y = GROUND_HEIGHT + rng.random_range(0.0..h);
                    if along_x {
                        (
                            [
                                bx + rng.random_range(-w / 2.0..w / 2.0),
                                y,
                                bz + sign * d / 2.0,
                            ],
                            [0.5 * patch, 0.5 * patch, 0.05],
                            yaw(0.0),
                        )
                    } else {
                        (
                            [
                                bx + sign * w / 2.0,
                                y,
                                bz + rng.random_range(-d / 2.0..d / 2.0),
                            ],
                            [0.05, 0.5 * patch, 0.5 * patch],
                            yaw(0.0),
                        )
                    }
                }
            };
            scene.gaussians.push(TemporalGaussian {
                mu0: mu,
                rot0: rot,
                log_scale: scale.map(f64::ln),
                opacity_logit: solid,
                t_center: t_mid,
                color0: color_jitter(&mut rng, base, 0.12),
                ..Default::default()
            });
        }
    }

    let n_vehicles = if spec.n_dynamic == 0 {
        0
    } else {
        spec.n_dynamic.div_ceil(5)
    };
    for v in 0..n_vehicles {
        let count = spec.n_dynamic / n_vehicles + usize::from(v < spec.n_dynamic % n_vehicles);
        let lane = if v % 2 == 0 { 2.5 } else { -2.5 };
        let dir = if v % 2 == 0 { 1.0 } else { -1.0 };
        let speed = rng.random_range(2.0..8.0);
        let x0 = cx + rng.random_range(-half / 2.0..half / 2.0);
        let body = [
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
        ];
        for k in 0..count {
            let along = -1.6 + 3.2 * (k as f64 + 0.5) / count as f64;
            let top = k % 2 == 1;
            scene.gaussians.push(TemporalGaussian {
                mu0: [
                    x0 + along,
                    GROUND_HEIGHT + if top { 1.2 } else { 0.6 },
                    cz + lane,
                ],
                vel: [dir * speed, 0.0, 0.0],
                log_scale: [
                    0.8f64.ln(),
                    if top { 0.25f64.ln() } else { 0.35f64.ln() },
                    0.45f64.ln(),
                ],
                opacity_logit: solid,
                t_center: t_mid,
                color0: color_jitter(&mut rng, body, 0.05),
                ..Default::default()
            });
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSpec {
    pub locations: Vec<[f64; 3]>,
    /// Rig view resolution (square).
    pub view_res: usize,
    pub face_res: usize,
    pub pano_width: usize,
    pub pano_height: usize,
    pub narrow_fov_deg: f64,
    pub wide_fov_deg: f64,
    pub rig_offset_deg: f64,
    pub trajectory_spacing: f64,
    pub held_out_frames: Vec<usize>,
}

impl Default for CaptureSpec {
    fn default() -> Self {
        Self {
            locations: vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]],
            view_res: 64,
            face_res: 64,
            pano_width: 256,
            pano_height: 128,
            narrow_fov_deg: 60.0,
            wide_fov_deg: 120.0,
            rig_offset_deg: 10.0,
            trajectory_spacing: 1.0,
            held_out_frames: vec![3, 7],
        }
    }
}

impl CaptureSpec {
    pub fn rig(&self) -> Result<ViewRig> {
        build_view_rig(
            self.narrow_fov_deg.to_radians(),
            self.wide_fov_deg.to_radians(),
            self.rig_offset_deg.to_radians(),
        )
    }

    pub fn location(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.locations[i])
    }

    /// Poses along the polyline through the capture locations at fixed
    /// spacing, endpoints included, identity orientation.
    pub fn trajectory_positions(&self) -> Result<Vec<Vector3<f64>>> {
        if self.locations.len() < 2 {
            return Err(Error::Config(
                "trajectory needs at least two capture locations".into(),
            ));
        }
        let mut out = vec![self.location(0)];
        for w in 1..self.locations.len() {
            let (a, b) = (self.location(w - 1), self.location(w));
            let steps = ((b - a).norm() / self.trajectory_spacing).round().max(1.0) as usize;
            for s in 1..=steps {
                out.push(a + (b - a) * (s as f64 / steps as f64));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GenSpec {
    pub world: WorldSpec,
    pub capture: CaptureSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Real,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub location: usize,
    pub frame: usize,
    pub view: usize,
    pub t: f64,
    pub camera: PinholeCamera,
    pub png: String,
    pub depth: String,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub face: CubeFace,
    pub png: String,
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaRecord {
    pub location: usize,
    pub frame: usize,
    pub t: f64,
    pub pose: PoseSE3,
    pub png: String,
    pub faces: Vec<FaceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub pose_index: usize,
    pub frame: usize,
    pub t: f64,
    pub pose: PoseSE3,
    /// Ground-truth face PNGs in cube-face order.
    pub faces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: GenSpec,
    pub teacher: String,
    pub frames: usize,
    pub samples: Vec<SampleRecord>,
    pub panoramas: Vec<PanoramaRecord>,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// 8-bit RGB pixels as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.to_u8(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_u8(self.width, self.height, 3, &self.data)
    }
}

/// A captured dataset held in memory; mirrors the on-disk layout written by
/// [`Dataset::save`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub teacher: GaussianScene,
    pub sample_rgb: Vec<Rgb8>,
    /// Normalized depth per rig sample; 0 where the pixel is background.
    pub sample_depth: Vec<Vec<f32>>,
    /// Per panorama record: the six faces with depth, ready for bridging.
    pub cubemaps: Vec<CubemapSet>,
    pub panorama_rgb: Vec<Rgb8>,
    /// Per trajectory record, six faces.
    pub trajectory_rgb: Vec<Vec<Rgb8>>,
}

/// Normalized depth from a render; 0 where coverage is below [`DEPTH_COVERAGE`].
pub fn depth_image(out: &crate::render::RenderOutput) -> Image {
    let d = out.normalized_depth(DEPTH_COVERAGE);
    Image {
        width: out.depth_map.width,
        height: out.depth_map.height,
        channels: 1,
        data: d.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
    }
}

fn view_name(loc: usize, frame: usize, view: usize) -> String {
    format!("views/L{loc}_F{frame}_V{view:03}")
}

/// Render the full capture of a teacher scene.
pub fn capture_dataset(teacher: &GaussianScene, spec: &GenSpec) -> Result<Dataset> {
    let frames = spec.world.frames()?;
    let cap = &spec.capture;
    if cap.locations.len() < 2 {
        return Err(Error::Config("capture needs at least two locations".into()));
    }
    let half = spec.world.extent / 2.0;
    for (i, l) in cap.locations.iter().enumerate() {
        if (l[0] - spec.world.center[0]).abs() > half || (l[2] - spec.world.center[2]).abs() > half
        {
            return Err(Error::Config(format!(
                "capture location {i} lies outside the world extent"
            )));
        }
    }
    let rig = cap.rig()?;

    let mut samples = Vec::new();
    for loc in 0..cap.locations.len() {
        let pose = PoseSE3::from_position(cap.location(loc));
        for frame in 0..frames {
            for view in 0..rig.len() {
                let name = view_name(loc, frame, view);
                samples.push(SampleRecord {
                    id: samples.len(),
                    location: loc,
                    frame,
                    view,
                    t: spec.world.frame_time(frame),
                    camera: rig.camera(view, &pose, cap.view_res),
                    png: format!("{name}.png"),
                    depth: format!("{name}.depth"),
                    source_kind: SourceKind::Real,
                });
            }
        }
    }
    let rendered: Vec<(Rgb8, Vec<f32>)> = samples
        .par_iter()
        .map(|s| {
            let out = render(teacher, &s.camera, s.t);
            let depth = depth_image(&out).data.iter().map(|&d| d as f32).collect();
            (Rgb8::from_image(&out.rgb), depth)
        })
        .collect();
    let (sample_rgb, sample_depth): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();

    let mut panoramas = Vec::new();
    let mut cubemaps = Vec::new();
    let mut panorama_rgb = Vec::new();
    for loc in 0..cap.locations.len() {
        let pose = PoseSE3::from_position(cap.location(loc));
        for frame in 0..frames {
            let t = spec.world.frame_time(frame);
            let cm = render_cubemap(teacher, &pose, t, cap.face_res, true)?;
            let pano = cubemap_to_equirect(&cm, cap.pano_width, cap.pano_height)?;
            let stem = format!("panos/L{loc}_F{frame}");
            panoramas.push(PanoramaRecord {
                location: loc,
                frame,
                t,
                pose,
                png: format!("{stem}.png"),
                faces: CubeFace::ALL
                    .iter()
                    .map(|f| FaceRecord {
                        face: *f,
                        png: format!("{stem}_{}.png", f.name()),
                        depth: format!("{stem}_{}.depth", f.name()),
                    })
                    .collect(),
            });
            panorama_rgb.push(Rgb8::from_image(&pano.image));
            cubemaps.push(cm);
        }
    }

    let mut trajectory = Vec::new();
    for (pose_index, p) in cap.trajectory_positions()?.iter().enumerate() {
        for frame in 0..frames {
            let stem = format!("trajectory/P{pose_index:02}_F{frame}");
            trajectory.push(TrajectoryRecord {
                id: trajectory.len(),
                pose_index,
                frame,
                t: spec.world.frame_time(frame),
                pose: PoseSE3::from_position(*p),
                faces: CubeFace::ALL
                    .iter()
                    .map(|f| format!("{stem}_{}.png", f.name()))
                    .collect(),
            });
        }
    }
    let trajectory_rgb: Vec<Vec<Rgb8>> = trajectory
        .par_iter()
        .map(|r| {
            CubeFace::ALL
                .iter()
                .map(|f| {
                    Rgb8::from_image(&render(teacher, &f.camera(&r.pose, cap.face_res), r.t).rgb)
                })
                .collect()
        })
        .collect();

    Ok(Dataset {
        manifest: DatasetManifest {
            spec: spec.clone(),
            teacher: "teacher.stz".into(),
            frames,
            samples,
            panoramas,
            trajectory,
        },
        teacher: teacher.clone(),
        sample_rgb,
        sample_depth,
        cubemaps,
        panorama_rgb,
        trajectory_rgb,
    })
}

/// Six 90° faces rendered from a scene; with `with_depth` each face carries a
/// normalized depth image (0 for background).
pub fn render_cubemap(
    scene: &GaussianScene,
    pose: &PoseSE3,
    t: f64,
    res: usize,
    with_depth: bool,
) -> Result<CubemapSet> {
    let faces = CubeFace::ALL
        .par_iter()
        .map(|&face| {
            let camera = face.camera(pose, res);
            let out = render(scene, &camera, t);
            CubemapFace {
                face,
                camera,
                depth: with_depth.then(|| depth_image(&out)),
                // faces are stored as 8-bit like every other capture product
                image: out.rgb.quantized(),
            }
        })
        .collect();
    CubemapSet::from_faces(*pose, t, faces)
}

fn save_rgb8(img: &Rgb8, path: &Path) -> Result<()> {
    image::save_buffer(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn load_rgb8(path: &Path) -> Result<Rgb8> {
    let (width, height, data) = load_png_u8(path, 3)?;
    Ok(Rgb8 {
        width,
        height,
        data,
    })
}

fn depth_from_f32(w: usize, h: usize, d: &[f32]) -> Image {
    Image {
        width: w,
        height: h,
        channels: 1,
        data: d.iter().map(|&v| v as f64).collect(),
    }
}

impl Dataset {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["views", "panos", "trajectory"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        save_scene(&self.teacher, dir.join(&self.manifest.teacher))?;
        let m = &self.manifest;
        m.samples.par_iter().try_for_each(|s| -> Result<()> {
            let rgb = &self.sample_rgb[s.id];
            save_rgb8(rgb, &dir.join(&s.png))?;
            save_depth(
                &depth_from_f32(rgb.width, rgb.height, &self.sample_depth[s.id]),
                dir.join(&s.depth),
            )
        })?;
        for (i, p) in m.panoramas.iter().enumerate() {
            save_rgb8(&self.panorama_rgb[i], &dir.join(&p.png))?;
            for (f, rec) in self.cubemaps[i].faces.iter().zip(&p.faces) {
                f.image.save_png(dir.join(&rec.png))?;
                let depth = f.depth.as_ref().ok_or(Error::MissingDepth)?;
                save_depth(depth, dir.join(&rec.depth))?;
            }
        }
        m.trajectory.par_iter().try_for_each(|r| -> Result<()> {
            for (img, name) in self.trajectory_rgb[r.id].iter().zip(&r.faces) {
                save_rgb8(img, &dir.join(name))?;
            }
            Ok(())
        })?;
        write_json(&dir.join("manifest.json"), m)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        let teacher = load_scene(dir.join(&manifest.teacher))?;
        let loaded: Vec<(Rgb8, Vec<f32>)> = manifest
            .samples
            .par_iter()
            .map(|s| {
                let rgb = load_rgb8(&dir.join(&s.png))?;
                let depth = load_depth(dir.join(&s.depth))?;
                if depth.width != rgb.width || depth.height != rgb.height {
                    return Err(Error::Manifest(format!(
                        "depth size mismatch for sample {}",
                        s.id
                    )));
                }
                Ok((rgb, depth.data.iter().map(|&d| d as f32).collect()))
            })
            .collect::<Result<_>>()?;
        let (sample_rgb, sample_depth) = loaded.into_iter().unzip();
        let res = manifest.spec.capture.face_res;
        let mut cubemaps = Vec::new();
        let mut panorama_rgb = Vec::new();
        for p in &manifest.panoramas {
            panorama_rgb.push(load_rgb8(&dir.join(&p.png))?);
            let faces = p
                .faces
                .iter()
                .map(|rec| {
                    Ok(CubemapFace {
                        face: rec.face,
                        camera: rec.face.camera(&p.pose, res),
                        image: Image::load_png(dir.join(&rec.png), 3)?,
                        depth: Some(load_depth(dir.join(&rec.depth))?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cubemaps.push(CubemapSet::from_faces(p.pose, p.t, faces)?);
        }
        let trajectory_rgb = manifest
            .trajectory
            .par_iter()
            .map(|r| {
                r.faces
                    .iter()
                    .map(|f| load_rgb8(&dir.join(f)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            teacher,
            sample_rgb,
            sample_depth,
            cubemaps,
            panorama_rgb,
            trajectory_rgb,
        })
    }

    pub fn locations(&self) -> Vec<Vector3<f64>> {
        (0..self.manifest.spec.capture.locations.len())
            .map(|i| self.manifest.spec.capture.location(i))
            .collect()
    }

    /// Cubemap captured at `location`, `frame`.
    pub fn cubemap(&self, location: usize, frame: usize) -> Option<&CubemapSet> {
        self.manifest
            .panoramas
            .iter()
            .position(|p| p.location == location && p.frame == frame)
            .map(|i| &self.cubemaps[i])
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Full,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    TrajectoryInterpolation,
    SeenViewpoints,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Full => "full",
            SplitMode::Temporal => "temporal",
        }
    }
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::TrajectoryInterpolation => "trajectory",
            Condition::SeenViewpoints => "seen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub condition: Condition,
    /// Sample ids used for training.
    pub train: Vec<usize>,
    /// Sample ids (seen viewpoints) or trajectory ids (trajectory condition).
    pub test: Vec<usize>,
}

pub fn make_splits(
    manifest: &DatasetManifest,
    mode: SplitMode,
    condition: Condition,
) -> Result<SplitSpec> {
    let held = &manifest.spec.capture.held_out_frames;
    if held.iter().any(|&f| f >= manifest.frames) {
        return Err(Error::Manifest(format!(
            "held-out frames {held:?} exceed {} frames",
            manifest.frames
        )));
    }
    if manifest.samples.iter().enumerate().any(|(i, s)| s.id != i) {
        return Err(Error::Manifest(
            "sample ids must be dense and ordered".into(),
        ));
    }
    let is_held = |f: usize| held.contains(&f);
    let train: Vec<usize> = manifest
        .samples
        .iter()
        .filter(|s| mode == SplitMode::Full || !is_held(s.frame))
        .map(|s| s.id)
        .collect();
    let test = match (mode, condition) {
        (_, Condition::TrajectoryInterpolation) => {
            manifest.trajectory.iter().map(|r| r.id).collect()
        }
        // every capture viewpoint is trained on in full mode; the cell measures fit
        (SplitMode::Full, Condition::SeenViewpoints) => {
            manifest.samples.iter().map(|s| s.id).collect()
        }
        (SplitMode::Temporal, Condition::SeenViewpoints) => manifest
            .samples
            .iter()
            .filter(|s| is_held(s.frame))
            .map(|s| s.id)
            .collect(),
    };
    Ok(SplitSpec {
        mode,
        condition,
        train,
        test,
    })
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64)
}

/// PSNR in dB; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

pub fn cap_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP_DB)
}

/// A set of reconstructions; each render uses the model whose anchor is
/// nearest to the camera (a single model has no anchor).
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub models: Vec<(GaussianScene, Option<Vector3<f64>>)>,
}

impl ModelSet {
    pub fn single(scene: GaussianScene) -> Self {
        Self {
            models: vec![(scene, None)],
        }
    }

    pub fn select(&self, position: &Vector3<f64>) -> &GaussianScene {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, (_, anchor)) in self.models.iter().enumerate() {
            let d = anchor.map_or(0.0, |a| (a - position).norm());
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        &self.models[best].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub setting: SplitMode,
    pub condition: Condition,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_samples: usize,
}

/// Mean (capped) PSNR and SSIM over the split's test ids. Renders are
/// quantized to 8 bits before comparison, exactly as the stored targets.
pub fn evaluate(models: &ModelSet, data: &Dataset, split: &SplitSpec) -> Result<MetricCell> {
    let cfg = LossConfig::default();
    let per_sample: Vec<(f64, f64)> = match split.condition {
        Condition::SeenViewpoints => split
            .test
            .par_iter()
            .map(|&id| {
                let rec = data
                    .manifest
                    .samples
                    .get(id)
                    .ok_or_else(|| Error::MissingRender(format!("sample {id}")))?;
                let target = data
                    .sample_rgb
                    .get(id)
                    .ok_or_else(|| Error::MissingRender(rec.png.clone()))?
                    .to_image();
                let scene = models.select(&rec.camera.pose.position);
                let out = render(scene, &rec.camera, rec.t).rgb.quantized();
                Ok((
                    cap_psnr(psnr(&out, &target, 1.0)?),
                    ssim_score(&out, &target, &cfg)?,
                ))
            })
            .collect::<Result<_>>()?,
        Condition::TrajectoryInterpolation => split
            .test
            .par_iter()
            .map(|&id| {
                let rec = data
                    .manifest
                    .trajectory
                    .get(id)
                    .ok_or_else(|| Error::MissingRender(format!("trajectory sample {id}")))?;
                let gt = data
                    .trajectory_rgb
                    .get(id)
                    .filter(|f| f.len() == 6)
                    .ok_or_else(|| {
                        Error::MissingRender(format!("trajectory faces for sample {id}"))
                    })?;
                let scene = models.select(&rec.pose.position);
                let res = data.manifest.spec.capture.face_res;
                let (mut sq, mut n, mut s) = (0.0, 0usize, 0.0);
                for (face, target) in CubeFace::ALL.iter().zip(gt) {
                    let target = target.to_image();
                    let out = render(scene, &face.camera(&rec.pose, res), rec.t)
                        .rgb
                        .quantized();
                    sq += mse(&out, &target)? * out.data.len() as f64;
                    n += out.data.len();
                    s += ssim_score(&out, &target, &cfg)?;
                }
                Ok((cap_psnr(psnr_from_mse(sq / n as f64, 1.0)), s / 6.0))
            })
            .collect::<Result<_>>()?,
    };
    let n = per_sample.len();
    let (p, s) = per_sample
        .iter()
        .fold((0.0, 0.0), |(p, s), (a, b)| (p + a, s + b));
    Ok(MetricCell {
        setting: split.mode,
        condition: split.condition,
        psnr_db: if n == 0 { f64::NAN } else { p / n as f64 },
        ssim: if n == 0 { f64::NAN } else { s / n as f64 },
        n_samples: n,
    })
}

pub fn metrics_csv(cells: &[MetricCell]) -> String {
    let mut out = String::from("setting,condition,psnr_db,ssim,n_samples\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{:.4},{:.6},{}\n",
            c.setting.name(),
            c.condition.name(),
            c.psnr_db,
            c.ssim,
            c.n_samples
        ));
    }
    out
}

pub fn write_metrics_csv(cells: &[MetricCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(cells)).map_err(|e| Error::io(path, e))
}

pub const ALL_CELLS: [(SplitMode, Condition); 4] = [
    (SplitMode::Full, Condition::TrajectoryInterpolation),
    (SplitMode::Full, Condition::SeenViewpoints),
    (SplitMode::Temporal, Condition::TrajectoryInterpolation),
    (SplitMode::Temporal, Condition::SeenViewpoints),
];

/// All four (setting, condition) cells for one model set.
pub fn evaluate_all(models: &ModelSet, data: &Dataset) -> Result<Vec<MetricCell>> {
    ALL_CELLS
        .iter()
        .map(|&(m, c)| evaluate(models, data, &make_splits(&data.manifest, m, c)?))
        .collect()
}
