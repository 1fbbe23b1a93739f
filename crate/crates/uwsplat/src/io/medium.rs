//! Plain-text medium parameter file: activated values for human use, raw
//! pre-activation values alongside so checkpoints resume bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use uwsplat_core::medium::MediumParams;

use crate::{AppError, AppResult};

pub fn save_medium_text(p: &MediumParams, path: &Path) -> AppResult<()> {
    let fmt3 = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
    let text = format!(
        "beta_d = {}\nbeta_b = {}\nb_inf = {}\nbeta_d_raw = {}\nbeta_b_raw = {}\nb_inf_raw = {}\n",
        fmt3(p.beta_d()),
        fmt3(p.beta_b()),
        fmt3(p.b_inf()),
        fmt3(p.beta_d_raw),
        fmt3(p.beta_b_raw),
        fmt3(p.b_inf_raw),
    );
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn load_medium_text(path: &Path) -> AppResult<MediumParams> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut kv: BTreeMap<String, [f64; 3]> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once('=')
            .ok_or_else(|| AppError::parse(path, ln + 1, "expected key = v v v"))?;
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| AppError::parse(path, ln + 1, format!("bad float: {e}")))?;
        if vals.len() != 3 {
            return Err(AppError::parse(path, ln + 1, "expected exactly 3 floats"));
        }
        kv.insert(key.trim().to_string(), [vals[0], vals[1], vals[2]]);
    }
    // Raw values take precedence (exact); activated values are inverted
    // otherwise.
    if let (Some(&bd), Some(&bb), Some(&bi)) = (
        kv.get("beta_d_raw"),
        kv.get("beta_b_raw"),
        kv.get("b_inf_raw"),
    ) {
        return Ok(MediumParams {
            beta_d_raw: bd,
            beta_b_raw: bb,
            b_inf_raw: bi,
        });
    }
    match (kv.get("beta_d"), kv.get("beta_b"), kv.get("b_inf")) {
        (Some(&bd), Some(&bb), Some(&bi)) => Ok(MediumParams::from_activated(bd, bb, bi)),
        _ => Err(AppError::format(
            path,
            "missing beta_d/beta_b/b_inf entries",
        )),
    }
}
