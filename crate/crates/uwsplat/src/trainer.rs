//! Training orchestration: configuration files, the iteration loop with
//! densification and interleaved medium updates, metrics logging, and
//! bit-exact checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use uwsplat_core::cloud::GaussianCloud;
use uwsplat_core::loss::LossBreakdown;
use uwsplat_core::medium::MediumParams;
use uwsplat_core::optim::Adam;
use uwsplat_core::train::{
    densify_and_prune, evaluate, frame_for_iteration, init_cloud_from_points, train_step,
    EvalRecord, TrainConfig, TrainState,
};

use crate::dataset::SceneDataset;
use crate::io::{
    load_cloud, load_medium_text, load_moments, save_cloud, save_medium_text, save_moments,
    MomentGroups,
};
use crate::{AppError, AppResult};

/// Run-level configuration: the core training knobs plus logging cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Evaluate on the test split every this many iterations (0 = final
    /// evaluation only).
    pub eval_interval: usize,
    /// Write intermediate checkpoints every this many iterations (0 = final
    /// checkpoint only).
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval_interval: 500,
            checkpoint_interval: 0,
        }
    }
}

/// Parse a flat `key = value` configuration file. Unknown keys are errors so
/// typos do not silently train with defaults.
pub fn parse_run_config(path: &Path) -> AppResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut cfg = RunConfig::default();
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AppError::parse(path, ln, "expected key = value"))?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value)
            .map_err(|msg| AppError::parse(path, ln, msg))?;
    }
    cfg.train.validate().map_err(AppError::Core)?;
    Ok(cfg)
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), String> {
    fn f64v(value: &str) -> Result<f64, String> {
        value.parse().map_err(|e| format!("bad float: {e}"))
    }
    fn usizev(value: &str) -> Result<usize, String> {
        value.parse().map_err(|e| format!("bad integer: {e}"))
    }
    fn boolv(value: &str) -> Result<bool, String> {
        match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(format!("bad bool `{other}`")),
        }
    }
    fn f64x3(value: &str) -> Result<[f64; 3], String> {
        let v: Vec<f64> = value
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| format!("bad float: {e}")))
            .collect::<Result<_, _>>()?;
        if v.len() != 3 {
            return Err("expected 3 floats".into());
        }
        Ok([v[0], v[1], v[2]])
    }

    let t = &mut cfg.train;
    match key {
        "iterations" => t.iterations = usizev(value)?,
        "lr_means" => t.lr_means = f64v(value)?,
        "lr_means_final_factor" => t.lr_means_final_factor = f64v(value)?,
        "lr_scales" => t.lr_scales = f64v(value)?,
        "lr_rotation" => t.lr_rotation = f64v(value)?,
        "lr_opacity" => t.lr_opacity = f64v(value)?,
        "lr_color" => t.lr_color = f64v(value)?,
        "lr_medium" => t.lr_medium = f64v(value)?,
        "medium_update_period" => t.medium_update_period = usizev(value)?,
        "densify_interval" => t.densify_interval = usizev(value)?,
        "densify_grad_threshold" => t.densify_grad_threshold = f64v(value)?,
        "prune_opacity_threshold" => t.prune_opacity_threshold = f64v(value)?,
        "densify_stop_iteration" => t.densify_stop_iteration = usizev(value)?,
        "max_gaussians" => t.max_gaussians = usizev(value)?,
        "seed" => t.seed = value.parse().map_err(|e| format!("bad seed: {e}"))?,
        "medium_enabled" => t.medium_enabled = boolv(value)?,
        "auto_pixel_normalize" => t.auto_pixel_normalize = boolv(value)?,
        "medium_init" => {
            t.medium_init = match value {
                "default" => MediumParams::default_init(),
                "near_zero" => MediumParams::near_zero_effect(),
                other => return Err(format!("unknown medium_init `{other}`")),
            }
        }
        "medium_init_beta_d" => {
            t.medium_init =
                MediumParams::from_activated(f64x3(value)?, t.medium_init.beta_b(), t.medium_init.b_inf())
        }
        "medium_init_beta_b" => {
            t.medium_init =
                MediumParams::from_activated(t.medium_init.beta_d(), f64x3(value)?, t.medium_init.b_inf())
        }
        "medium_init_b_inf" => {
            t.medium_init =
                MediumParams::from_activated(t.medium_init.beta_d(), t.medium_init.beta_b(), f64x3(value)?)
        }
        "lambda_dssim" => t.loss.lambda_dssim = f64v(value)?,
        "k_bs" => t.loss.k_bs = f64v(value)?,
        "t_sat" => t.loss.t_sat = f64v(value)?,
        "t_sim" => t.loss.t_sim = f64v(value)?,
        "literal_backscatter" => t.loss.literal_backscatter = boolv(value)?,
        "w_gs" => t.loss.w_gs = f64v(value)?,
        "w_bs" => t.loss.w_bs = f64v(value)?,
        "w_gw" => t.loss.w_gw = f64v(value)?,
        "w_sat" => t.loss.w_sat = f64v(value)?,
        "w_op" => t.loss.w_op = f64v(value)?,
        "w_zsmooth" => t.loss.w_zsmooth = f64v(value)?,
        "w_zrecon" => t.loss.w_zrecon = f64v(value)?,
        "eval_interval" => cfg.eval_interval = usizev(value)?,
        "checkpoint_interval" => cfg.checkpoint_interval = usizev(value)?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

const META_FILE: &str = "meta.txt";
const CLOUD_FILE: &str = "cloud.bin";
const MEDIUM_FILE: &str = "medium.txt";
const OPTIM_FILE: &str = "optim.bin";
const STATS_FILE: &str = "stats.bin";

/// Serialize the full training state into a checkpoint directory.
pub fn save_checkpoint(state: &TrainState, dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    save_cloud(&state.cloud, &dir.join(CLOUD_FILE))?;
    save_medium_text(&state.medium, &dir.join(MEDIUM_FILE))?;
    save_moments(
        &MomentGroups {
            means: state.adam_means.clone(),
            scales: state.adam_scales.clone(),
            rotations: state.adam_rotations.clone(),
            opacities: state.adam_opacities.clone(),
            colors: state.adam_colors.clone(),
            medium: state.adam_medium.clone(),
        },
        &dir.join(OPTIM_FILE),
    )?;
    // Densification statistics, so resuming mid-window replays identically.
    let mut stats = Vec::new();
    stats.extend_from_slice(&(state.grad_accum.len() as u64).to_le_bytes());
    for v in &state.grad_accum {
        stats.extend_from_slice(&v.to_le_bytes());
    }
    for c in &state.grad_count {
        stats.extend_from_slice(&c.to_le_bytes());
    }
    std::fs::write(dir.join(STATS_FILE), stats)
        .map_err(|e| AppError::io(dir.join(STATS_FILE), e))?;
    let meta = format!(
        "iteration = {}\nscene_center = {} {} {}\nscene_extent = {}\n",
        state.iteration,
        state.scene_center[0],
        state.scene_center[1],
        state.scene_center[2],
        state.scene_extent
    );
    std::fs::write(dir.join(META_FILE), meta).map_err(|e| AppError::io(dir.join(META_FILE), e))
}

/// Restore a checkpoint into a training state under the given config.
pub fn load_checkpoint(dir: &Path, cfg: &TrainConfig) -> AppResult<TrainState> {
    let cloud = load_cloud(&dir.join(CLOUD_FILE))?;
    let medium = load_medium_text(&dir.join(MEDIUM_FILE))?;
    let moments = load_moments(&dir.join(OPTIM_FILE))?;

    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| AppError::io(&meta_path, e))?;
    let mut iteration = 0usize;
    let mut scene_center = [0.0f64; 3];
    let mut scene_extent = 1.0f64;
    for (ln0, line) in meta.lines().enumerate() {
        let ln = ln0 + 1;
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "iteration" => {
                iteration = value
                    .parse()
                    .map_err(|e| AppError::parse(&meta_path, ln, format!("bad iteration: {e}")))?
            }
            "scene_center" => {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e| AppError::parse(&meta_path, ln, format!("bad center: {e}")))?;
                if v.len() != 3 {
                    return Err(AppError::parse(&meta_path, ln, "center needs 3 floats"));
                }
                scene_center = [v[0], v[1], v[2]];
            }
            "scene_extent" => {
                scene_extent = value
                    .parse()
                    .map_err(|e| AppError::parse(&meta_path, ln, format!("bad extent: {e}")))?
            }
            _ => {}
        }
    }

    let stats_path = dir.join(STATS_FILE);
    let bytes = std::fs::read(&stats_path).map_err(|e| AppError::io(&stats_path, e))?;
    if bytes.len() < 8 {
        return Err(AppError::format(&stats_path, "truncated stats"));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 12 * n {
        return Err(AppError::format(&stats_path, "stats length mismatch"));
    }
    let grad_accum: Vec<f64> = bytes[8..8 + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let grad_count: Vec<u32> = bytes[8 + 8 * n..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut state = TrainState::new(cloud, cfg).map_err(AppError::Core)?;
    state.medium = medium;
    state.iteration = iteration;
    state.adam_means = moments.means;
    state.adam_scales = moments.scales;
    state.adam_rotations = moments.rotations;
    state.adam_opacities = moments.opacities;
    state.adam_colors = moments.colors;
    state.adam_medium = moments.medium;
    state.grad_accum = grad_accum;
    state.grad_count = grad_count;
    state.scene_center = scene_center;
    state.scene_extent = scene_extent;
    Ok(state)
}

/// Evaluation summary attached to a metrics row.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_j: Option<f64>,
    pub z_rmse: Option<f64>,
    pub beta_d_err: Option<f64>,
    pub beta_b_err: Option<f64>,
    pub b_inf_err: Option<f64>,
}

/// One metrics CSV row.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub eval: Option<EvalSummary>,
}

pub const METRICS_HEADER: &str = "iteration,loss_total,loss_gs,loss_bs,loss_gw,loss_sat,loss_op,loss_zsmooth,loss_zrecon,eval_psnr,eval_ssim,eval_psnr_j,eval_z_rmse,eval_beta_d_err,eval_beta_b_err,eval_b_inf_err";

fn opt_col(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        let l = row.loss;
        let e = row.eval;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.iteration,
            l.total,
            l.gs,
            l.bs,
            l.gw,
            l.sat,
            l.op,
            l.zsmooth,
            l.zrecon,
            opt_col(e.map(|e| e.psnr)),
            opt_col(e.map(|e| e.ssim)),
            opt_col(e.and_then(|e| e.psnr_j)),
            opt_col(e.and_then(|e| e.z_rmse)),
            opt_col(e.and_then(|e| e.beta_d_err)),
            opt_col(e.and_then(|e| e.beta_b_err)),
            opt_col(e.and_then(|e| e.b_inf_err)),
        );
    }
    out
}

/// Mean absolute per-channel errors of the activated medium parameters.
pub fn medium_param_errors(estimate: &MediumParams, truth: &MediumParams) -> (f64, f64, f64) {
    let mean_abs = |a: [f64; 3], b: [f64; 3]| {
        (a[0] - b[0]).abs() / 3.0 + (a[1] - b[1]).abs() / 3.0 + (a[2] - b[2]).abs() / 3.0
    };
    (
        mean_abs(estimate.beta_d(), truth.beta_d()),
        mean_abs(estimate.beta_b(), truth.beta_b()),
        mean_abs(estimate.b_inf(), truth.b_inf()),
    )
}

fn summarize(rec: &EvalRecord, state: &TrainState, ds: &SceneDataset, medium_on: bool) -> EvalSummary {
    let mut s = EvalSummary {
        psnr: rec.mean_psnr,
        ssim: rec.mean_ssim,
        psnr_j: rec.mean_psnr_j,
        z_rmse: rec.mean_z_rmse,
        ..Default::default()
    };
    if medium_on {
        if let Some(gt) = &ds.gt_medium {
            let (d, b, i) = medium_param_errors(&state.medium, gt);
            s.beta_d_err = Some(d);
            s.beta_b_err = Some(b);
            s.b_inf_err = Some(i);
        }
    }
    s
}

/// The result of a training run.
pub struct TrainOutcome {
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    pub final_eval: Option<EvalSummary>,
    pub checkpoint_dir: PathBuf,
    pub metrics_path: PathBuf,
}

/// Full training loop: seeded frame schedule, densification on schedule,
/// periodic evaluation on the held-out split, metrics CSV, and a final
/// checkpoint. `resume` continues from a previous checkpoint bit-exactly.
pub fn run_training(
    ds: &SceneDataset,
    run: &RunConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> AppResult<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let cfg = &run.train;
    cfg.validate().map_err(AppError::Core)?;

    let train_frames = ds.load_frames(&ds.train_indices)?;
    if train_frames.is_empty() {
        return Err(AppError::Dataset("no training frames".into()));
    }
    let test_frames = ds.load_frames(&ds.test_indices)?;

    let mut state = match resume {
        Some(dir) => load_checkpoint(dir, cfg)?,
        None => {
            let points = ds.seed_points();
            let cloud = init_cloud_from_points(&points).map_err(AppError::Core)?;
            TrainState::new(cloud, cfg).map_err(AppError::Core)?
        }
    };

    let medium_on = cfg.medium_enabled;
    let eval_frames: &[uwsplat_core::train::TrainFrame] = if test_frames.is_empty() {
        &train_frames
    } else {
        &test_frames
    };

    let mut rows: Vec<MetricsRow> = Vec::with_capacity(cfg.iterations);
    let mut final_eval = None;
    while state.iteration < cfg.iterations {
        let it = state.iteration;
        let frame = &train_frames[frame_for_iteration(cfg.seed, it, train_frames.len())];
        let loss = match train_step(&mut state, frame, cfg) {
            Ok(b) => b,
            Err(uwsplat_core::Error::NonFiniteLoss) => {
                // Diagnostic dump of the last finite breakdowns.
                let tail: Vec<String> = rows
                    .iter()
                    .rev()
                    .take(3)
                    .map(|r| format!("iter {}: {:?}", r.iteration, r.loss))
                    .collect();
                eprintln!("non-finite loss at iteration {it}; recent steps:");
                for line in tail.iter().rev() {
                    eprintln!("  {line}");
                }
                return Err(AppError::Core(uwsplat_core::Error::NonFiniteLoss));
            }
            Err(e) => return Err(AppError::Core(e)),
        };

        let done = state.iteration; // it + 1
        if done % cfg.densify_interval == 0 && done <= cfg.densify_stop_iteration {
            densify_and_prune(&mut state, cfg).map_err(AppError::Core)?;
        }

        let mut eval = None;
        let is_last = done == cfg.iterations;
        if is_last || (run.eval_interval > 0 && done % run.eval_interval == 0) {
            let rec = evaluate(
                &state.cloud,
                medium_on.then_some(&state.medium),
                eval_frames,
            )
            .map_err(AppError::Core)?;
            let summary = summarize(&rec, &state, ds, medium_on);
            eval = Some(summary);
            if is_last {
                final_eval = Some(summary);
            }
        }
        rows.push(MetricsRow {
            iteration: done,
            loss,
            eval,
        });

        if run.checkpoint_interval > 0 && done % run.checkpoint_interval == 0 && !is_last {
            save_checkpoint(&state, &out_dir.join(format!("checkpoint_{done:06}")))?;
        }
    }

    let checkpoint_dir = out_dir.join("checkpoint_final");
    save_checkpoint(&state, &checkpoint_dir)?;
    save_medium_text(&state.medium, &out_dir.join("medium.txt"))?;
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_to_csv(&rows))
        .map_err(|e| AppError::io(&metrics_path, e))?;

    Ok(TrainOutcome {
        state,
        rows,
        final_eval,
        checkpoint_dir,
        metrics_path,
    })
}

/// Evaluate a checkpoint over a dataset split, returning per-frame rows and
/// the aggregate as CSV text.
pub fn evaluate_checkpoint_csv(
    ds: &SceneDataset,
    checkpoint: &Path,
    cfg: &TrainConfig,
) -> AppResult<String> {
    let state = load_checkpoint(checkpoint, cfg)?;
    let medium_on = cfg.medium_enabled;

    let mut out = String::from("frame,psnr,ssim,psnr_j,z_rmse\n");
    let mut all_indices: Vec<usize> = ds.test_indices.clone();
    if all_indices.is_empty() {
        all_indices = (0..ds.frames.len()).collect();
    }
    let frames = ds.load_frames(&all_indices)?;
    let rec = evaluate(
        &state.cloud,
        medium_on.then_some(&state.medium),
        &frames,
    )
    .map_err(AppError::Core)?;
    for (idx, fe) in all_indices.iter().zip(&rec.frames) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            ds.frames[*idx].name,
            fe.psnr,
            fe.ssim,
            opt_col(fe.psnr_j),
            opt_col(fe.z_rmse),
        );
    }
    let _ = writeln!(
        out,
        "mean,{},{},{},{}",
        rec.mean_psnr,
        rec.mean_ssim,
        opt_col(rec.mean_psnr_j),
        opt_col(rec.mean_z_rmse),
    );
    if medium_on {
        if let Some(gt) = &ds.gt_medium {
            let (d, b, i) = medium_param_errors(&state.medium, gt);
            let _ = writeln!(out, "medium_abs_err,beta_d,{d},beta_b,{b}");
            let _ = writeln!(out, "medium_abs_err_b_inf,{i},,,");
        }
    }
    Ok(out)
}
