//! Planar-interleaved float images plus the on-disk formats used across the
//! pipeline: 8-bit PNG for color and masks, raw little-endian `f32` for depth
//! with a JSON sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major image with interleaved channels. Values are nominally in `[0, 1]`
/// for color; depth images carry meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn rgb_constant(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self::from_fn(width, height, 3, |_, _, c| color[c])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer + 0.5 are addressed as `x - 0.5`); out-of-range coordinates
    /// clamp to the border.
    pub fn sample_bilinear_clamped(&self, x: f64, y: f64, out: &mut [f64]) {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
            let b = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
            *o = a * (1.0 - ty) + b * ty;
        }
    }

    /// Quantize to 8 bits per channel (round half away from zero after clamping to `[0, 1]`).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            channels,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Round trip through 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self::from_u8(self.width, self.height, self.channels, &self.to_u8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            n => {
                return Err(Error::Precondition(format!(
                    "cannot write {n}-channel image as PNG"
                )))
            }
        };
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load an 8-bit PNG as RGB (`channels == 3`) or gray (`channels == 1`).
    pub fn load_png(path: impl AsRef<Path>, channels: usize) -> Result<Self> {
        let (w, h, bytes) = load_png_u8(path, channels)?;
        Ok(Self::from_u8(w, h, channels, &bytes))
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_png_u8(path: impl AsRef<Path>, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bytes = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        n => {
            return Err(Error::Precondition(format!(
                "unsupported channel count {n}"
            )))
        }
    };
    Ok((w, h, bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DepthSidecar {
    pub width: usize,
    pub height: usize,
    pub min: f32,
    pub max: f32,
}

/// Write a single-channel depth image as raw little-endian `f32` plus a
/// `<path>.json` sidecar.
pub fn save_depth(depth: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if depth.channels != 1 {
        return Err(Error::Precondition(
            "depth image must be single-channel".into(),
        ));
    }
    let mut bytes = Vec::with_capacity(depth.data.len() * 4);
    let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
    for &d in &depth.data {
        let d = d as f32;
        min = min.min(d);
        max = max.max(d);
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    if depth.data.is_empty() {
        min = 0.0;
        max = 0.0;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = DepthSidecar {
        width: depth.width,
        height: depth.height,
        min,
        max,
    };
    let side_path = sidecar_path(path);
    let json = serde_json::to_string(&sidecar).map_err(|e| Error::json(&side_path, e))?;
    fs::write(&side_path, json).map_err(|e| Error::io(&side_path, e))
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: DepthSidecar =
        serde_json::from_str(&side_text).map_err(|e| Error::json(&side_path, e))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.width * sidecar.height * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Image {
        width: sidecar.width,
        height: sidecar.height,
        channels: 1,
        data,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers() {
        let img = Image::from_fn(4, 3, 1, |x, y, _| (x + 10 * y) as f64);
        let mut out = [0.0];
        img.sample_bilinear_clamped(2.5, 1.5, &mut out);
        assert_eq!(out[0], 12.0);
        img.sample_bilinear_clamped(2.0, 1.5, &mut out);
        assert!((out[0] - 11.5).abs() < 1e-12);
        // clamped outside
        img.sample_bilinear_clamped(-3.0, 100.0, &mut out);
        assert_eq!(out[0], 20.0);
    }

    #[test]
    fn png_and_depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 4, 3, |x, y, c| {
            ((x * 37 + y * 11 + c * 5) % 256) as f64 / 255.0
        });
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p, 3).unwrap();
        assert_eq!(back, img.quantized());

        let depth = Image::from_fn(5, 4, 1, |x, y, _| 1.0 + x as f64 * 0.25 + y as f64);
        let dp = dir.path().join("a.depth");
        save_depth(&depth, &dp).unwrap();
        assert_eq!(load_depth(&dp).unwrap(), depth);
        let side: DepthSidecar =
            serde_json::from_str(&fs::read_to_string(dir.path().join("a.depth.json")).unwrap())
                .unwrap();
        assert_eq!(
            (side.width, side.height, side.min, side.max),
            (5, 4, 1.0, 5.0)
        );
    }

    #[test]
    fn truncated_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let depth = Image::filled(3, 3, 1, 2.0);
        let dp = dir.path().join("d.depth");
        save_depth(&depth, &dp).unwrap();
        fs::write(&dp, [0u8; 7]).unwrap();
        assert!(matches!(load_depth(&dp), Err(Error::Truncated { .. })));
    }
}
