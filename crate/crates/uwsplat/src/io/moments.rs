//! Optimizer moment blobs: the six Adam states serialized bit-exactly so a
//! resumed run continues identically.
//!
//! Layout: magic `MOMS`, u32 version (1), u32 group count, then per group
//! u64 length, u64 step count, length f64 first moments, length f64 second
//! moments (all little-endian). Group order is fixed: means, scales,
//! rotations, opacities, colors, medium.

use std::fs;
use std::path::Path;

use uwsplat_core::optim::Adam;

use crate::{AppError, AppResult};

const MAGIC: &[u8; 4] = b"MOMS";
const VERSION: u32 = 1;

/// The six optimizer states of a training run, in serialization order.
pub struct MomentGroups {
    pub means: Adam,
    pub scales: Adam,
    pub rotations: Adam,
    pub opacities: Adam,
    pub colors: Adam,
    pub medium: Adam,
}

impl MomentGroups {
    fn as_array(&self) -> [&Adam; 6] {
        [
            &self.means,
            &self.scales,
            &self.rotations,
            &self.opacities,
            &self.colors,
            &self.medium,
        ]
    }
}

pub fn save_moments(groups: &MomentGroups, path: &Path) -> AppResult<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&6u32.to_le_bytes());
    for adam in groups.as_array() {
        let (m, v, t) = adam.state();
        bytes.extend_from_slice(&(m.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&t.to_le_bytes());
        for x in m.iter().chain(v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_moments(path: &Path) -> AppResult<MomentGroups> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(AppError::format(path, "bad magic, expected MOMS"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(AppError::format(path, format!("unknown version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if count != 6 {
        return Err(AppError::format(path, format!("expected 6 groups, got {count}")));
    }
    let mut offset = 12usize;
    let mut groups: Vec<Adam> = Vec::with_capacity(6);
    for _ in 0..6 {
        if bytes.len() < offset + 16 {
            return Err(AppError::format(path, "truncated group header"));
        }
        let len = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()) as usize;
        let t = u64::from_le_bytes(bytes[offset + 8..offset + 16].try_into().unwrap());
        offset += 16;
        let need = 16 * len;
        if bytes.len() < offset + need {
            return Err(AppError::format(path, "truncated group payload"));
        }
        let mut m = Vec::with_capacity(len);
        let mut v = Vec::with_capacity(len);
        for k in 0..len {
            m.push(f64::from_le_bytes(
                bytes[offset + 8 * k..offset + 8 * k + 8].try_into().unwrap(),
            ));
        }
        offset += 8 * len;
        for k in 0..len {
            v.push(f64::from_le_bytes(
                bytes[offset + 8 * k..offset + 8 * k + 8].try_into().unwrap(),
            ));
        }
        offset += 8 * len;
        groups.push(Adam::from_state(m, v, t));
    }
    if offset != bytes.len() {
        return Err(AppError::format(path, "trailing bytes after groups"));
    }
    let mut it = groups.into_iter();
    Ok(MomentGroups {
        means: it.next().unwrap(),
        scales: it.next().unwrap(),
        rotations: it.next().unwrap(),
        opacities: it.next().unwrap(),
        colors: it.next().unwrap(),
        medium: it.next().unwrap(),
    })
}
