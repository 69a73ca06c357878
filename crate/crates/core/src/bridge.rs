//! Bridge views between capture locations: plan intermediate rigs, synthesize
//! their faces through a pluggable backend and assemble panoramas.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{read_json, write_json, SourceKind};
use crate::camera::{
    cubemap_to_equirect, cubemap_to_equirect_image, interpolate_positions, CubeFace, CubemapFace,
    CubemapSet, EquirectFrame, PinholeCamera, PoseSE3,
};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_K: usize = 3;
/// Relative depth difference under which two sources are blended instead of z-tested.
pub const DEPTH_AGREEMENT: f64 = 0.05;
/// Resampled masks below this are holes.
pub const MASK_THRESHOLD: f64 = 0.99;
const NEAR: f64 = 1e-3;

pub const HORIZONTAL_FACES: [CubeFace; 4] = [
    CubeFace::Front,
    CubeFace::Back,
    CubeFace::Left,
    CubeFace::Right,
];

#[derive(Debug, Clone, PartialEq)]
pub struct BridgePlan {
    pub source_pair: (usize, usize),
    pub positions: Vec<Vector3<f64>>,
    /// Shared by both sources and every bridge rig.
    pub orientation: UnitQuaternion<f64>,
}

impl BridgePlan {
    pub fn new(pair: (usize, usize), from: &PoseSE3, to: &PoseSE3, k: usize) -> Result<Self> {
        Ok(Self {
            source_pair: pair,
            positions: interpolate_positions(&from.position, &to.position, k)?,
            orientation: from.rotation,
        })
    }

    pub fn rig(&self, k: usize) -> PoseSE3 {
        PoseSE3::new(self.orientation, self.positions[k])
    }

    /// Six face cameras at position `k`, in [`CubeFace::ALL`] order.
    pub fn cameras(&self, k: usize, res: usize) -> Vec<PinholeCamera> {
        let rig = self.rig(k);
        CubeFace::ALL.iter().map(|f| f.camera(&rig, res)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FacePair<'a> {
    pub face: CubeFace,
    pub a: &'a CubemapFace,
    pub b: &'a CubemapFace,
    /// The cubemaps the faces come from.
    pub sources: [&'a CubemapSet; 2],
}

/// Same-direction horizontal faces of two cubemaps.
pub fn pair_faces<'a>(ci: &'a CubemapSet, cj: &'a CubemapSet) -> Vec<FacePair<'a>> {
    HORIZONTAL_FACES
        .iter()
        .map(|&face| FacePair {
            face,
            a: ci.face(face),
            b: cj.face(face),
            sources: [ci, cj],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendCaps {
    pub needs_depth: bool,
    /// Safe to call from several workers at once.
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    /// Views with equal group ids share one center (faces of one cubemap).
    pub group: usize,
    pub image: &'a Image,
    pub depth: Option<&'a Image>,
    pub camera: &'a PinholeCamera,
}

#[derive(Debug, Clone)]
pub struct SynthesisRequest<'a> {
    pub sources: Vec<SourceView<'a>>,
    pub target: PinholeCamera,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedView {
    pub image: Image,
    /// One channel, 1 where the pixel was synthesized and 0 where it was filled.
    pub mask: Image,
}

impl SynthesizedView {
    pub fn hole_count(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m < 0.5).count()
    }
}

pub trait SynthesisBackend: Send + Sync {
    fn caps(&self) -> BackendCaps;
    fn synthesize(&self, req: &SynthesisRequest) -> std::result::Result<SynthesizedView, String>;
}

/// Validates the request against the backend and its answer against the target.
pub fn run_backend(
    backend: &dyn SynthesisBackend,
    req: &SynthesisRequest,
) -> Result<SynthesizedView> {
    if backend.caps().needs_depth && req.sources.iter().any(|s| s.depth.is_none()) {
        return Err(Error::MissingDepth);
    }
    let fail = |message: String| Error::Backend {
        position: req.target.pose.position.into(),
        t: req.t,
        message,
    };
    let out = backend.synthesize(req).map_err(fail)?;
    let (w, h) = (req.target.width, req.target.height);
    if out.image.width != w || out.image.height != h || out.image.channels != 3 {
        return Err(fail(format!(
            "image is {}x{}x{}, target is {w}x{h}x3",
            out.image.width, out.image.height, out.image.channels
        )));
    }
    if out.mask.width != w || out.mask.height != h || out.mask.channels != 1 {
        return Err(fail("mask shape does not match the target".into()));
    }
    Ok(out)
}

/// Depth-based forward reprojection: each source's depth map is meshed and
/// rasterized into a target z-buffer, colors are fetched back from the source
/// at the interpolated source coordinates; background pixels map by rotation
/// alone. Sources are blended by inverse distance where
/// their depths agree, otherwise the nearer surface wins. Holes get the color
/// of the nearest synthesized pixel and mask 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReprojectBackend;

struct Layer {
    color: Vec<[f64; 3]>,
    /// NaN: nothing landed; +inf: background seen by direction.
    z: Vec<f64>,
}

/// Source depth steps above this ratio between neighboring pixels are treated
/// as occlusion boundaries and not meshed over.
pub const DEPTH_EDGE_RATIO: f64 = 1.25;

/// Rasterizes one view's depth mesh into the target z-buffer, recording
/// `(view, source x, source y)` for every pixel it wins.
fn raster_view(
    vi: usize,
    src: &SourceView,
    depth: &Image,
    tgt: &PinholeCamera,
    z: &mut [f64],
    at: &mut [(usize, f64, f64)],
) {
    let (w, h) = (tgt.width, tgt.height);
    let sc = src.camera;
    let (sw, sh) = (sc.width, sc.height);
    // vertex grid: every pixel center plus a ring on the image border, so
    // neighboring faces of a cubemap meet without a seam
    let (gw, gh) = (sw + 2, sh + 2);
    let coord = |k: usize, n: usize| match k {
        0 => (0.0, 0),
        k if k > n => (n as f64, n - 1),
        k => (k as f64 - 0.5, k - 1),
    };
    let verts: Vec<Option<[f64; 3]>> = (0..gw * gh)
        .map(|i| {
            let ((fx, x), (fy, y)) = (coord(i % gw, sw), coord(i / gw, sh));
            let d = depth.get(x, y, 0);
            if d <= 0.0 {
                return None;
            }
            let p = tgt.pose.world_to_camera(&sc.unproject(fx, fy, d));
            if p.z <= NEAR {
                return None;
            }
            tgt.project_cam(&p).map(|(u, v)| [u, v, p.z])
        })
        .collect();

    let mut raster = |tri: [usize; 3]| {
        let [Some(a), Some(b), Some(c)] = tri.map(|i| verts[i]) else {
            return;
        };
        let src_xy = tri.map(|i| (coord(i % gw, sw), coord(i / gw, sh)));
        let ds = src_xy.map(|((_, x), (_, y))| depth.get(x, y, 0));
        let (lo, hi) = (
            ds.iter().copied().fold(f64::INFINITY, f64::min),
            ds.iter().copied().fold(0.0, f64::max),
        );
        if hi > lo * DEPTH_EDGE_RATIO {
            return;
        }
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area.abs() < 1e-12 {
            return;
        }
        let src_xy = src_xy.map(|((fx, _), (fy, _))| (fx, fy));
        let x0 = (a[0].min(b[0]).min(c[0]) - 0.5).ceil().max(0.0);
        let x1 = (a[0].max(b[0]).max(c[0]) - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (a[1].min(b[1]).min(c[1]) - 0.5).ceil().max(0.0);
        let y1 = (a[1].max(b[1]).max(c[1]) - 0.5).floor().min(h as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            return;
        }
        const EPS: f64 = 1e-9;
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let (qx, qy) = (px as f64 + 0.5, py as f64 + 0.5);
                let wa = ((b[0] - qx) * (c[1] - qy) - (c[0] - qx) * (b[1] - qy)) / area;
                let wb = ((c[0] - qx) * (a[1] - qy) - (a[0] - qx) * (c[1] - qy)) / area;
                let wc = 1.0 - wa - wb;
                if wa < -EPS || wb < -EPS || wc < -EPS {
                    continue;
                }
                // perspective-correct interpolation
                let zz = 1.0 / (wa / a[2] + wb / b[2] + wc / c[2]);
                let i = py * w + px;
                if z[i].is_nan() || zz < z[i] {
                    z[i] = zz;
                    at[i] = (
                        vi,
                        (wa * src_xy[0].0 / a[2]
                            + wb * src_xy[1].0 / b[2]
                            + wc * src_xy[2].0 / c[2])
                            * zz,
                        (wa * src_xy[0].1 / a[2]
                            + wb * src_xy[1].1 / b[2]
                            + wc * src_xy[2].1 / c[2])
                            * zz,
                    );
                }
            }
        }
    };
    for y in 0..gh - 1 {
        for x in 0..gw - 1 {
            let i = y * gw + x;
            raster([i, i + 1, i + gw]);
            raster([i + 1, i + gw + 1, i + gw]);
        }
    }
    // isolated samples still land on the pixel containing them
    for (i, v) in verts.iter().enumerate() {
        let Some([u, v, zz]) = *v else { continue };
        let (px, py) = (u.floor(), v.floor());
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            continue;
        }
        let j = py as usize * w + px as usize;
        if z[j].is_nan() {
            z[j] = zz;
            at[j] = (vi, coord(i % gw, sw).0, coord(i / gw, sh).0);
        }
    }
}

/// Reprojects a group of views sharing one center into a single layer.
fn reproject_group(views: &[(&SourceView, &Image)], tgt: &PinholeCamera) -> Layer {
    let (w, h) = (tgt.width, tgt.height);
    let mut z = vec![f64::NAN; w * h];
    let mut at = vec![(0, 0.0, 0.0); w * h];
    for (vi, (src, depth)) in views.iter().enumerate() {
        raster_view(vi, src, depth, tgt, &mut z, &mut at);
    }
    // remaining pixels: background only if the group proves the whole target ray empty
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if z[i].is_nan() {
                if let Some(q) = free_ray(views, tgt, px as f64 + 0.5, py as f64 + 0.5) {
                    z[i] = f64::INFINITY;
                    at[i] = q;
                }
            }
        }
    }
    let mut color = vec![[0.0; 3]; w * h];
    for i in 0..w * h {
        if !z[i].is_nan() {
            let (vi, x, y) = at[i];
            views[vi]
                .0
                .image
                .sample_bilinear_clamped(x, y, &mut color[i]);
        }
    }
    Layer { color, z }
}

/// Target rays are assumed empty this close to the camera.
pub const FREE_SPACE_NEAR: f64 = 0.5;

/// Walks the target ray through `px, py` in inverse depth, from
/// [`FREE_SPACE_NEAR`] to infinity, and returns the view and pixel of its
/// vanishing point when every sample is inside some view that sees at or
/// past it.
fn free_ray(
    views: &[(&SourceView, &Image)],
    tgt: &PinholeCamera,
    px: f64,
    py: f64,
) -> Option<(usize, f64, f64)> {
    let world_ray = tgt.pose.rotation * tgt.ray_cam(px, py);
    let center = views[0].0.camera.pose.position;
    let offset = tgt.pose.position - center;
    // homogeneous point at inverse depth w: world_ray + w·offset, relative to the group center
    let project = |w: f64| -> Option<(usize, f64, f64, f64)> {
        let dir = world_ray + offset * w;
        views.iter().enumerate().find_map(|(vi, (src, _))| {
            let sc = src.camera;
            let p = sc.pose.rotation.inverse() * dir;
            if p.z <= 0.0 {
                return None;
            }
            let (u, v) = sc.project_cam(&p)?;
            (u >= 0.0 && v >= 0.0 && u < sc.width as f64 && v < sc.height as f64)
                .then_some((vi, u, v, p.z))
        })
    };
    let w_max = 1.0 / FREE_SPACE_NEAR;
    // steps of about one source pixel along the epipolar curve
    let f = views[0].0.camera.fx();
    let steps = ((offset.norm() * w_max * f).ceil() as usize + 1).min(1024);
    for k in 0..=steps {
        let w = w_max * (1.0 - k as f64 / steps as f64);
        let (vi, u, v, zh) = project(w)?;
        let d = views[vi].1.get(u as usize, v as usize, 0);
        if d <= 0.0 {
            continue;
        }
        // source z-depth of the sample is zh / w
        if w == 0.0 || d * w < zh * (1.0 - DEPTH_AGREEMENT) {
            return None;
        }
    }
    let (vi, u, v, _) = project(0.0)?;
    Some((vi, u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Visibility {
    /// Outside every view of the group.
    Unknown,
    /// The source looks through the point.
    Past,
    /// Something clearly nearer covers the point.
    Hidden,
    Seen,
}

/// How a group of views sharing one center sees the world point `x`, judged
/// on the four depth samples around its projection in the first view that
/// contains it.
fn visibility(views: &[(&SourceView, &Image)], x: &Vector3<f64>) -> Visibility {
    for (src, depth) in views {
        let sc = src.camera;
        let p = sc.pose.world_to_camera(x);
        if p.z <= 0.0 {
            continue;
        }
        let Some((u, v)) = sc.project_cam(&p) else {
            continue;
        };
        if u < 0.0 || v < 0.0 || u >= sc.width as f64 || v >= sc.height as f64 {
            continue;
        }
        let (cx, cy) = ((u - 0.5).max(0.0) as usize, (v - 0.5).max(0.0) as usize);
        let (mut past, mut hidden) = (true, true);
        for y in cy..=(cy + 1).min(sc.height - 1) {
            for xx in cx..=(cx + 1).min(sc.width - 1) {
                let d = depth.get(xx, y, 0);
                if d > 0.0 && d <= p.z * (1.0 + DEPTH_AGREEMENT) {
                    past = false;
                }
                if d <= 0.0 || d * (1.0 + DEPTH_AGREEMENT) >= p.z {
                    hidden = false;
                }
            }
        }
        return if past {
            Visibility::Past
        } else if hidden {
            Visibility::Hidden
        } else {
            Visibility::Seen
        };
    }
    Visibility::Unknown
}

fn depths_agree(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= DEPTH_AGREEMENT * a.min(b)
}

/// Nearest-valid fill by breadth-first search over 4-neighbors.
fn fill_holes(color: &mut [[f64; 3]], valid: &[bool], w: usize, h: usize) {
    let mut seen = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                color[j] = color[i];
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
}

impl SynthesisBackend for ReprojectBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            needs_depth: true,
            parallel: true,
        }
    }

    fn synthesize(&self, req: &SynthesisRequest) -> std::result::Result<SynthesizedView, String> {
        if req.sources.is_empty() {
            return Err("no source views".into());
        }
        let tgt = &req.target;
        let (w, h) = (tgt.width, tgt.height);
        let mut groups: Vec<Vec<(&SourceView, &Image)>> = Vec::new();
        let mut keys = Vec::new();
        for s in &req.sources {
            let d = s.depth.ok_or("missing depth")?;
            match keys.iter().position(|&g| g == s.group) {
                Some(k) => groups[k].push((s, d)),
                None => {
                    keys.push(s.group);
                    groups.push(vec![(s, d)]);
                }
            }
        }
        let dist: Vec<f64> = groups
            .iter()
            .map(|g| (g[0].0.camera.pose.position - tgt.pose.position).norm())
            .collect();
        // a source at the target position is the answer; the others only fill its holes
        let exact = dist.iter().position(|&d| d < 1e-9);
        let layers: Vec<Layer> = groups.iter().map(|g| reproject_group(g, tgt)).collect();

        let mut color = vec![[0.0; 3]; w * h];
        let mut valid = vec![false; w * h];
        for i in 0..w * h {
            if let Some(e) = exact {
                if !layers[e].z[i].is_nan() {
                    color[i] = layers[e].color[i];
                    valid[i] = true;
                    continue;
                }
            }
            // nearest surface that no comparably close source looked through
            let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let mut alive: Vec<usize> = (0..layers.len())
                .filter(|&s| !layers[s].z[i].is_nan())
                .collect();
            let near = loop {
                let Some(&m) = alive
                    .iter()
                    .min_by(|&&p, &&q| layers[p].z[i].total_cmp(&layers[q].z[i]))
                else {
                    break f64::NAN;
                };
                let zm = layers[m].z[i];
                if zm.is_infinite() {
                    break zm;
                }
                let x = tgt.unproject(px, py, zm);
                // only a source at least as close to the target may overrule:
                // by looking through the surface, or, when strictly closer, by
                // seeing it and still placing something farther here
                let refuted = (0..groups.len()).any(|g| {
                    if g == m || dist[g] > dist[m] * (1.0 + 1e-9) {
                        return false;
                    }
                    match visibility(&groups[g], &x) {
                        Visibility::Past => true,
                        Visibility::Seen => {
                            dist[g] * (1.0 + 1e-9) < dist[m]
                                && alive.contains(&g)
                                && !depths_agree(layers[g].z[i], zm)
                        }
                        Visibility::Hidden | Visibility::Unknown => false,
                    }
                });
                if !refuted {
                    break zm;
                }
                alive.retain(|&s| !depths_agree(layers[s].z[i], zm));
            };
            if near.is_nan() {
                continue;
            }
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for &s in &alive {
                if !depths_agree(layers[s].z[i], near) {
                    continue;
                }
                let wt = 1.0 / dist[s].max(1e-9);
                for c in 0..3 {
                    acc[c] += wt * layers[s].color[i][c];
                }
                wsum += wt;
            }
            color[i] = acc.map(|a| a / wsum);
            valid[i] = true;
        }
        fill_holes(&mut color, &valid, w, h);
        Ok(SynthesizedView {
            image: Image {
                width: w,
                height: h,
                channels: 3,
                data: color.concat(),
            },
            mask: Image {
                width: w,
                height: h,
                channels: 1,
                data: valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            },
        })
    }
}

/// Shells out once per request. The command receives one JSON object on
/// standard input:
///
/// ```json
/// {"t": 0.3,
///  "target": {"pose": {...}, "fov_x": 1.57, "fov_y": 1.57, "width": 64, "height": 64},
///  "sources": [{"group": 0, "camera": {...}, "rgb": [...], "depth": [...] | null}]}
/// ```
///
/// Sources sharing a `group` are faces of one cubemap. `rgb` is row-major,
/// interleaved, in `[0, 1]`; `depth` is row-major z-depth with 0 for
/// background. It must print `{"rgb": [...], "valid": [...]}` for
/// the target camera (`valid` one value per pixel, nonzero = synthesized).
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub command: String,
    pub needs_depth: bool,
}

#[derive(Serialize)]
struct ExternalSource<'a> {
    group: usize,
    camera: &'a PinholeCamera,
    rgb: &'a [f64],
    depth: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    t: f64,
    target: &'a PinholeCamera,
    sources: Vec<ExternalSource<'a>>,
}

#[derive(Deserialize)]
struct ExternalResponse {
    rgb: Vec<f64>,
    valid: Vec<f64>,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            needs_depth: true,
        }
    }
}

impl SynthesisBackend for ExternalBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            needs_depth: self.needs_depth,
            parallel: false,
        }
    }

    fn synthesize(&self, req: &SynthesisRequest) -> std::result::Result<SynthesizedView, String> {
        let body = ExternalRequest {
            t: req.t,
            target: &req.target,
            sources: req
                .sources
                .iter()
                .map(|s| ExternalSource {
                    group: s.group,
                    camera: s.camera,
                    rgb: &s.image.data,
                    depth: s.depth.map(|d| d.data.as_slice()),
                })
                .collect(),
        };
        let payload = serde_json::to_vec(&body).map_err(|e| e.to_string())?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start '{}': {e}", self.command))?;
        let mut stdin = child.stdin.take().ok_or("no stdin")?;
        // a child that exits early closes its end; its status reports the failure
        let _ = stdin.write_all(&payload);
        drop(stdin);
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            let err = String::from_utf8_lossy(&out.stderr);
            return Err(format!(
                "'{}' exited with {}: {}",
                self.command,
                out.status,
                err.trim()
            ));
        }
        let resp: ExternalResponse =
            serde_json::from_slice(&out.stdout).map_err(|e| format!("bad response: {e}"))?;
        let (w, h) = (req.target.width, req.target.height);
        if resp.rgb.len() != w * h * 3 || resp.valid.len() != w * h {
            return Err(format!(
                "response has {} rgb and {} mask values for a {w}x{h} target",
                resp.rgb.len(),
                resp.valid.len()
            ));
        }
        Ok(SynthesizedView {
            image: Image {
                width: w,
                height: h,
                channels: 3,
                data: resp.rgb,
            },
            mask: Image {
                width: w,
                height: h,
                channels: 1,
                data: resp
                    .valid
                    .iter()
                    .map(|&v| if v != 0.0 { 1.0 } else { 0.0 })
                    .collect(),
            },
        })
    }
}

/// `--backend` values: `reproject` or `external:<command>`.
pub fn backend_from_spec(spec: &str) -> Result<Box<dyn SynthesisBackend>> {
    if spec == "reproject" {
        return Ok(Box::new(ReprojectBackend));
    }
    match spec.strip_prefix("external:") {
        Some(cmd) if !cmd.trim().is_empty() => Ok(Box::new(ExternalBackend::new(cmd))),
        _ => Err(Error::Config(format!(
            "unknown backend '{spec}' (expected 'reproject' or 'external:<command>')"
        ))),
    }
}

/// Every face of a cubemap as one source group, `first` leading.
fn cubemap_views(cm: &CubemapSet, group: usize, first: CubeFace) -> Vec<SourceView<'_>> {
    let order =
        std::iter::once(first).chain(CubeFace::ALL.into_iter().filter(move |&f| f != first));
    order
        .map(|face| {
            let f = cm.face(face);
            SourceView {
                group,
                image: &f.image,
                depth: f.depth.as_ref(),
                camera: &f.camera,
            }
        })
        .collect()
}

/// One synthesized image per intermediate camera. Both paired faces are used
/// together with the rest of their cubemaps, which carry the occluders that
/// leave the paired frusta once the center moves.
pub fn synthesize_views(
    pair: &FacePair,
    cameras: &[PinholeCamera],
    t: f64,
    backend: &dyn SynthesisBackend,
) -> Result<Vec<SynthesizedView>> {
    cameras
        .iter()
        .map(|cam| {
            run_backend(
                backend,
                &SynthesisRequest {
                    sources: [0, 1]
                        .into_iter()
                        .flat_map(|g| cubemap_views(pair.sources[g], g, pair.face))
                        .collect(),
                    target: *cam,
                    t,
                },
            )
        })
        .collect()
}

/// Up and down views at `position`, reprojected from the nearest source
/// cubemap only (its matching vertical face first, then the rest).
pub fn synthesize_updown(
    position: &Vector3<f64>,
    t: f64,
    sources: &[&CubemapSet],
    backend: &dyn SynthesisBackend,
) -> Result<(SynthesizedView, SynthesizedView)> {
    let nearest = sources
        .iter()
        .min_by(|a, b| {
            (a.rig.position - position)
                .norm()
                .total_cmp(&(b.rig.position - position).norm())
        })
        .ok_or_else(|| Error::Precondition("no source cubemaps".into()))?;
    let rig = PoseSE3::new(nearest.rig.rotation, *position);
    let res = nearest.resolution();
    let mut views = [CubeFace::Up, CubeFace::Down].into_iter().map(|face| {
        run_backend(
            backend,
            &SynthesisRequest {
                sources: cubemap_views(nearest, 0, face),
                target: face.camera(&rig, res),
                t,
            },
        )
    });
    let up = views.next().expect("two faces")?;
    let down = views.next().expect("two faces")?;
    Ok((up, down))
}

pub fn assemble_bridge_panorama(
    faces: Vec<CubemapFace>,
    rig: PoseSE3,
    t: f64,
    width: usize,
    height: usize,
) -> Result<EquirectFrame> {
    cubemap_to_equirect(&CubemapSet::from_faces(rig, t, faces)?, width, height)
}

/// Binary equirect mask from per-face masks.
pub fn assemble_bridge_mask(
    cm: &CubemapSet,
    masks: &[Image],
    width: usize,
    height: usize,
) -> Result<Image> {
    if masks.len() != 6 {
        return Err(Error::FaceCount(masks.len()));
    }
    let m = cubemap_to_equirect_image(cm, width, height, |f| &masks[f.face.index()]);
    Ok(threshold_mask(&m))
}

pub fn threshold_mask(m: &Image) -> Image {
    Image {
        data: m
            .data
            .iter()
            .map(|&v| if v >= MASK_THRESHOLD { 1.0 } else { 0.0 })
            .collect(),
        ..m.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeFrame {
    pub pair: (usize, usize),
    /// Index into the plan's positions.
    pub k: usize,
    pub frame: usize,
    pub t: f64,
    pub pose: PoseSE3,
    /// 8-bit-exact panorama.
    pub rgb: Image,
    /// Binary panorama mask.
    pub mask: Image,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BridgeVideos {
    pub frames: Vec<BridgeFrame>,
}

/// The six synthesized faces and masks of one bridge rig.
pub fn synthesize_rig(
    plan: &BridgePlan,
    k: usize,
    ci: &CubemapSet,
    cj: &CubemapSet,
    backend: &dyn SynthesisBackend,
) -> Result<(CubemapSet, Vec<Image>)> {
    let res = ci.resolution();
    let cams = plan.cameras(k, res);
    let t = ci.t;
    let mut images: Vec<Option<SynthesizedView>> = vec![None; 6];
    for pair in pair_faces(ci, cj) {
        let idx = pair.face.index();
        let v = synthesize_views(&pair, &cams[idx..=idx], t, backend)?;
        images[idx] = v.into_iter().next();
    }
    let (up, down) = synthesize_updown(&plan.positions[k], t, &[ci, cj], backend)?;
    images[CubeFace::Up.index()] = Some(up);
    images[CubeFace::Down.index()] = Some(down);
    let mut faces = Vec::with_capacity(6);
    let mut masks = Vec::with_capacity(6);
    for (face, (v, cam)) in CubeFace::ALL.iter().zip(images.into_iter().zip(cams)) {
        let v = v.expect("every face synthesized");
        faces.push(CubemapFace {
            face: *face,
            camera: cam,
            image: v.image,
            depth: None,
        });
        masks.push(v.mask);
    }
    Ok((CubemapSet::from_faces(plan.rig(k), t, faces)?, masks))
}

/// K bridge videos between two synchronized cubemap videos, every frame
/// synthesized independently.
pub fn build_bridge_videos(
    video_i: &[&CubemapSet],
    video_j: &[&CubemapSet],
    pair: (usize, usize),
    k: usize,
    backend: &dyn SynthesisBackend,
    pano_width: usize,
    pano_height: usize,
) -> Result<BridgeVideos> {
    if video_i.len() != video_j.len() {
        return Err(Error::FrameCountMismatch(video_i.len(), video_j.len()));
    }
    if video_i.is_empty() {
        return Err(Error::Precondition("empty source videos".into()));
    }
    let plan = BridgePlan::new(pair, &video_i[0].rig, &video_j[0].rig, k)?;
    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|kk| (0..video_i.len()).map(move |f| (kk, f)))
        .collect();
    let job = |&(kk, f): &(usize, usize)| -> Result<BridgeFrame> {
        let (cm, masks) = synthesize_rig(&plan, kk, video_i[f], video_j[f], backend)?;
        let pano = cubemap_to_equirect(&cm, pano_width, pano_height)?;
        let mask = assemble_bridge_mask(&cm, &masks, pano_width, pano_height)?;
        Ok(BridgeFrame {
            pair,
            k: kk,
            frame: f,
            t: cm.t,
            pose: cm.rig,
            rgb: pano.image.quantized(),
            mask,
        })
    };
    let frames = if backend.caps().parallel {
        jobs.par_iter().map(job).collect::<Result<Vec<_>>>()?
    } else {
        jobs.iter().map(job).collect::<Result<Vec<_>>>()?
    };
    Ok(BridgeVideos { frames })
}

/// Bridges every pair of consecutive capture locations of a dataset.
pub fn bridge_dataset(
    data: &crate::bench::Dataset,
    k: usize,
    backend: &dyn SynthesisBackend,
) -> Result<BridgeVideos> {
    let cap = &data.manifest.spec.capture;
    let frames = data.manifest.frames;
    let mut out = BridgeVideos::default();
    for loc in 0..cap.locations.len().saturating_sub(1) {
        let video = |l: usize| -> Result<Vec<&CubemapSet>> {
            (0..frames)
                .map(|f| {
                    data.cubemap(l, f).ok_or_else(|| {
                        Error::Manifest(format!("no panorama for location {l}, frame {f}"))
                    })
                })
                .collect()
        };
        let v = build_bridge_videos(
            &video(loc)?,
            &video(loc + 1)?,
            (loc, loc + 1),
            k,
            backend,
            cap.pano_width,
            cap.pano_height,
        )?;
        out.frames.extend(v.frames);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRecord {
    pub id: String,
    pub pair: (usize, usize),
    pub k: usize,
    pub frame: usize,
    pub t: f64,
    pub pose: PoseSE3,
    pub png: String,
    pub mask: String,
    pub source_kind: SourceKind,
}

pub const POSES_FILE: &str = "poses.json";

impl BridgeVideos {
    pub fn records(&self) -> Vec<BridgeRecord> {
        self.frames
            .iter()
            .map(|f| {
                let id = format!("P{}-{}_K{}_F{}", f.pair.0, f.pair.1, f.k, f.frame);
                BridgeRecord {
                    png: format!("{id}.png"),
                    mask: format!("{id}_mask.png"),
                    id,
                    pair: f.pair,
                    k: f.k,
                    frame: f.frame,
                    t: f.t,
                    pose: f.pose,
                    source_kind: SourceKind::Bridge,
                }
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let records = self.records();
        for (f, r) in self.frames.iter().zip(&records) {
            f.rgb.save_png(dir.join(&r.png))?;
            f.mask.save_png(dir.join(&r.mask))?;
        }
        write_json(&dir.join(POSES_FILE), &records)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let records: Vec<BridgeRecord> = read_json(&dir.join(POSES_FILE))?;
        let frames = records
            .into_iter()
            .map(|r| {
                if r.source_kind != SourceKind::Bridge {
                    return Err(Error::Manifest(format!(
                        "record {} is not a bridge view",
                        r.id
                    )));
                }
                Ok(BridgeFrame {
                    pair: r.pair,
                    k: r.k,
                    frame: r.frame,
                    t: r.t,
                    pose: r.pose,
                    rgb: Image::load_png(dir.join(&r.png), 3)?,
                    mask: Image::load_png(dir.join(&r.mask), 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_cubemap(position: Vector3<f64>, color: [f64; 3], depth: f64, res: usize) -> CubemapSet {
        let rig = PoseSE3::from_position(position);
        let faces = CubeFace::ALL
            .iter()
            .map(|&face| CubemapFace {
                face,
                camera: face.camera(&rig, res),
                image: Image::rgb_constant(res, res, color),
                depth: Some(Image::filled(res, res, 1, depth)),
            })
            .collect();
        CubemapSet::from_faces(rig, 0.0, faces).unwrap()
    }

    #[test]
    fn pairs_cover_horizontal_faces_only() {
        let a = flat_cubemap(Vector3::zeros(), [0.2; 3], 0.0, 8);
        let b = flat_cubemap(Vector3::new(4.0, 0.0, 0.0), [0.2; 3], 0.0, 8);
        let pairs = pair_faces(&a, &b);
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert!(!matches!(p.face, CubeFace::Up | CubeFace::Down));
            assert_eq!(p.a.camera.pose.rotation, p.b.camera.pose.rotation);
            assert_ne!(p.a.camera.pose.position, p.b.camera.pose.position);
        }
    }

    #[test]
    fn identical_cubemaps_pair_identical_images() {
        let a = flat_cubemap(Vector3::zeros(), [0.3, 0.5, 0.7], 3.0, 8);
        for p in pair_faces(&a, &a.clone()) {
            assert_eq!(p.a.image, p.b.image);
        }
    }

    #[test]
    fn constant_background_sources_give_constant_output() {
        let res = 16;
        let a = flat_cubemap(Vector3::zeros(), [0.3, 0.5, 0.7], 0.0, res);
        let b = flat_cubemap(Vector3::new(4.0, 0.0, 0.0), [0.3, 0.5, 0.7], 0.0, res);
        let plan = BridgePlan::new((0, 1), &a.rig, &b.rig, 3).unwrap();
        for pair in pair_faces(&a, &b) {
            let cams = plan.cameras(1, res);
            let out = synthesize_views(
                &pair,
                &cams[pair.face.index()..=pair.face.index()],
                0.0,
                &ReprojectBackend,
            )
            .unwrap();
            assert_eq!(out[0].hole_count(), 0);
            assert!(out[0]
                .image
                .data
                .chunks(3)
                .all(|p| (p[0] - 0.3).abs() < 1e-12
                    && (p[1] - 0.5).abs() < 1e-12
                    && (p[2] - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn up_down_constant_sky() {
        let a = flat_cubemap(Vector3::zeros(), [0.6, 0.7, 0.9], 0.0, 12);
        let b = flat_cubemap(Vector3::new(4.0, 0.0, 0.0), [0.6, 0.7, 0.9], 0.0, 12);
        let (up, down) = synthesize_updown(
            &Vector3::new(1.0, 0.0, 0.0),
            0.0,
            &[&a, &b],
            &ReprojectBackend,
        )
        .unwrap();
        for v in [up, down] {
            assert_eq!(v.hole_count(), 0);
            assert!(v.image.data.chunks(3).all(|p| (p[2] - 0.9).abs() < 1e-12));
        }
    }

    #[test]
    fn missing_depth_is_an_error() {
        let mut a = flat_cubemap(Vector3::zeros(), [0.2; 3], 2.0, 8);
        a.faces[0].depth = None;
        let b = flat_cubemap(Vector3::new(1.0, 0.0, 0.0), [0.2; 3], 2.0, 8);
        let pair = pair_faces(&a, &b)[0];
        let cam = pair.a.camera;
        assert!(matches!(
            synthesize_views(&pair, &[cam], 0.0, &ReprojectBackend),
            Err(Error::MissingDepth)
        ));
    }

    #[test]
    fn panorama_needs_six_faces() {
        let a = flat_cubemap(Vector3::zeros(), [0.2; 3], 2.0, 8);
        let five = a.faces[..5].to_vec();
        assert!(matches!(
            assemble_bridge_panorama(five, a.rig, 0.0, 32, 16),
            Err(Error::FaceCount(5))
        ));
    }

    #[test]
    fn backend_spec_parsing() {
        assert!(backend_from_spec("reproject").is_ok());
        assert!(!backend_from_spec("external:cat").unwrap().caps().parallel);
        assert!(backend_from_spec("diffusion").is_err());
        assert!(backend_from_spec("external:").is_err());
    }

    #[test]
    fn frame_count_mismatch() {
        let a = flat_cubemap(Vector3::zeros(), [0.2; 3], 2.0, 8);
        let b = flat_cubemap(Vector3::new(1.0, 0.0, 0.0), [0.2; 3], 2.0, 8);
        assert!(matches!(
            build_bridge_videos(&[&a, &a], &[&b], (0, 1), 2, &ReprojectBackend, 32, 16),
            Err(Error::FrameCountMismatch(2, 1))
        ));
    }
}
