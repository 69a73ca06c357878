//! `.stz` scene files.
//!
//! Layout (all little-endian):
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 4     | `u32` version                          |
//! | 8     | `u64` number of Gaussians              |
//! | 8     | `f64` duration T (seconds)             |
//! | 24    | `3 × f64` background RGB               |
//! | 224·N | `28 × f64` per Gaussian, field order   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianScene, TemporalGaussian, PARAMS_PER_GAUSSIAN};

pub const STZ_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 8 + 8 + 24;

pub fn encode_scene(scene: &GaussianScene) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + scene.len() * PARAMS_PER_GAUSSIAN * 8);
    out.extend_from_slice(&STZ_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    out.extend_from_slice(&scene.duration.to_le_bytes());
    for c in scene.background {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for g in &scene.gaussians {
        for v in g.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode_scene(bytes: &[u8]) -> Result<GaussianScene> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[0..4].try_into().expect("4-byte slice"));
    if version != STZ_VERSION {
        return Err(Error::VersionMismatch {
            expected: STZ_VERSION,
            found: version,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8-byte slice")) as usize;
    let duration = read_f64(bytes, 12);
    let background = [
        read_f64(bytes, 20),
        read_f64(bytes, 28),
        read_f64(bytes, 36),
    ];
    let expected = n
        .checked_mul(PARAMS_PER_GAUSSIAN * 8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or(Error::Truncated {
            expected: usize::MAX,
            found: bytes.len(),
        })?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut gaussians = Vec::with_capacity(n);
    let mut params = [0.0; PARAMS_PER_GAUSSIAN];
    for i in 0..n {
        let base = HEADER_LEN + i * PARAMS_PER_GAUSSIAN * 8;
        for (k, p) in params.iter_mut().enumerate() {
            *p = read_f64(bytes, base + 8 * k);
        }
        gaussians.push(TemporalGaussian::from_array(&params));
    }
    Ok(GaussianScene {
        gaussians,
        duration,
        background,
    })
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scene(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes)
}

/// Human-readable mirror of the `.stz` fields.
pub fn dump_json(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scene).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_scene(n: usize, seed: u64) -> GaussianScene {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut scene = GaussianScene::new(1.0, [0.1, 0.2, 0.3]);
        for _ in 0..n {
            let mut p = [0.0; PARAMS_PER_GAUSSIAN];
            for v in p.iter_mut() {
                *v = rng.random_range(-10.0..10.0);
            }
            scene.gaussians.push(TemporalGaussian::from_array(&p));
        }
        scene
    }

    #[test]
    fn empty_scene_round_trip() {
        let scene = GaussianScene::new(1.0, [0.0; 3]);
        assert_eq!(decode_scene(&encode_scene(&scene)).unwrap(), scene);
    }

    #[test]
    fn random_scene_is_bit_identical() {
        let scene = random_scene(1000, 42);
        let bytes = encode_scene(&scene);
        assert_eq!(bytes.len(), HEADER_LEN + 1000 * 28 * 8);
        let back = decode_scene(&bytes).unwrap();
        assert_eq!(encode_scene(&back), bytes);
        for (a, b) in scene.to_flat().iter().zip(back.to_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_header_is_version_mismatch() {
        let mut bytes = encode_scene(&random_scene(3, 1));
        bytes[0] ^= 0xff;
        assert!(matches!(
            decode_scene(&bytes),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_scene(&random_scene(3, 1));
        assert!(matches!(
            decode_scene(&bytes[..bytes.len() - 5]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            decode_scene(&bytes[..10]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn json_dump_mirrors_fields() {
        let dir = tempfile::tempdir().unwrap();
        let scene = random_scene(2, 3);
        let p = dir.path().join("s.json");
        dump_json(&scene, &p).unwrap();
        let back: GaussianScene = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, scene);
    }
}
