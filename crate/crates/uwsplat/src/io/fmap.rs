//! FMAP: the raw float raster format for depth and alpha maps.
//!
//! Layout: magic `FMAP`, then u32 width, u32 height, u32 reserved (zero),
//! then width×height little-endian f32 values, row-major. Round trips are
//! bit-exact.

use std::fs;
use std::path::Path;

use uwsplat_core::image::ScalarMap;

use crate::{AppError, AppResult};

const MAGIC: &[u8; 4] = b"FMAP";
const HEADER_LEN: usize = 16;

pub fn save_scalar_map(map: &ScalarMap, path: &Path) -> AppResult<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(map.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    for v in map.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_scalar_map(path: &Path) -> AppResult<ScalarMap> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(AppError::format(path, "file shorter than FMAP header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(AppError::format(path, "bad magic, expected FMAP"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + 4 * width * height;
    if bytes.len() != expected {
        return Err(AppError::format(
            path,
            format!(
                "length {} inconsistent with {}x{} header (expected {})",
                bytes.len(),
                width,
                height,
                expected
            ),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarMap::from_vec(width, height, data).map_err(AppError::Core)
}
