//! Binary Gaussian cloud format plus an ASCII PLY export for viewers.
//!
//! Binary layout: magic `GCLD`, u32 version (1), u64 count, then per
//! Gaussian 14 little-endian f64: mean (3), log-scale (3), quaternion wxyz
//! (4), pre-activation opacity (1), rgb (3). Round trips are bit-exact,
//! which checkpoint resumption relies on.

use std::fs;
use std::io::Write;
use std::path::Path;

use uwsplat_core::cloud::{Gaussian, GaussianCloud};

use crate::{AppError, AppResult};

const MAGIC: &[u8; 4] = b"GCLD";
const VERSION: u32 = 1;
const FIELDS: usize = 14;

pub fn save_cloud(cloud: &GaussianCloud, path: &Path) -> AppResult<()> {
    let mut bytes = Vec::with_capacity(16 + cloud.len() * FIELDS * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for g in cloud.iter() {
        for v in g
            .mean
            .iter()
            .chain(&g.log_scale)
            .chain(&g.rotation)
            .chain(core::iter::once(&g.opacity))
            .chain(&g.color)
        {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_cloud(path: &Path) -> AppResult<GaussianCloud> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(AppError::format(path, "bad magic, expected GCLD"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(AppError::format(path, format!("unknown version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = 16 + count * FIELDS * 8;
    if bytes.len() != expected {
        return Err(AppError::format(
            path,
            format!("length {} inconsistent with count {count}", bytes.len()),
        ));
    }
    let mut cloud = GaussianCloud::with_capacity(count);
    let mut vals = [0.0f64; FIELDS];
    for chunk in bytes[16..].chunks_exact(FIELDS * 8) {
        for (v, b) in vals.iter_mut().zip(chunk.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
        cloud.push(Gaussian {
            mean: [vals[0], vals[1], vals[2]],
            log_scale: [vals[3], vals[4], vals[5]],
            rotation: [vals[6], vals[7], vals[8], vals[9]],
            opacity: vals[10],
            color: [vals[11], vals[12], vals[13]],
        });
    }
    Ok(cloud)
}

/// ASCII PLY point cloud (positions + colors) for external viewers.
pub fn export_cloud_ply(cloud: &GaussianCloud, path: &Path) -> AppResult<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header",
        cloud.len()
    )
    .expect("vec write");
    for g in cloud.iter() {
        let rgb = g.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            g.mean[0] as f32, g.mean[1] as f32, g.mean[2] as f32, rgb[0], rgb[1], rgb[2]
        )
        .expect("vec write");
    }
    fs::write(path, out).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cloud() -> GaussianCloud {
        (0..5)
            .map(|i| Gaussian {
                mean: [i as f64 * 0.1, -0.2, 1.0 + i as f64],
                log_scale: [-1.5, -2.0, -0.5],
                rotation: [0.9, 0.1, -0.3, 0.27],
                opacity: -2.1972245773362196,
                color: [0.123456789, 0.5, 0.987654321],
            })
            .collect()
    }

    #[test]
    fn binary_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let cloud = sample_cloud();
        save_cloud(&cloud, &path).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn corrupt_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(load_cloud(&path).is_err());
    }

    #[test]
    fn ply_export_is_parseable_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        export_cloud_ply(&sample_cloud(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("ply\n"));
        assert_eq!(text.lines().count(), 10 + 5);
    }
}
