//! Command-line entry points for the underwater splatting pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uwsplat::dataset::SceneDataset;
use uwsplat::io::{
    depth_to_colormap, export_cloud_ply, load_image, load_medium_text, load_scalar_map,
    save_image, save_scalar_map,
};
use uwsplat::synth::{
    apply_medium_to_dataset, generate_synthetic_scene, write_dataset, SceneSpec, TextureKind,
};
use uwsplat::trainer::{
    evaluate_checkpoint_csv, load_checkpoint, parse_run_config, run_training, RunConfig,
};
use uwsplat::{verify, AppError};

use uwsplat_core::camera::CameraView;
use uwsplat_core::medium::{self, MediumPreset};
use uwsplat_core::render::render_forward;

#[derive(Parser)]
#[command(
    name = "uwsplat",
    version,
    about = "Joint 3D Gaussian splatting and underwater medium estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MediumArg {
    None,
    Water,
    Fog,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RenderMode {
    InMedium,
    Restored,
    Depth,
    Alpha,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckSuite {
    Grads,
    Oracle,
    Roundtrip,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (optionally degraded by a medium).
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Scene spec file (key = value); defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Degradation to apply after generation.
        #[arg(long, value_enum, default_value_t = MediumArg::None)]
        medium: MediumArg,
        /// Override the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training configuration file (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render a view from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory supplying cameras for --view.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Frame index into the dataset.
        #[arg(long)]
        view: Option<usize>,
        /// Pose file (key = value: fx fy cx cy width height, quat, trans).
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: RenderMode,
        /// Output PNG path (depth mode also writes a sibling .fmap).
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore arbitrary RGB-D images through a medium file (no training).
    Restore {
        /// Directory of PNG images.
        #[arg(long)]
        images: PathBuf,
        /// Directory of matching FMAP depth maps (same stems).
        #[arg(long)]
        depths: PathBuf,
        /// Medium parameter text file.
        #[arg(long = "medium-file")]
        medium_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a verification suite; exits nonzero on failure.
    Check {
        #[arg(long, value_enum)]
        suite: CheckSuite,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version exits are successes, not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .downcast_ref::<AppError>()
                .map(AppError::is_numeric)
                .unwrap_or(false);
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}

fn parse_scene_spec(path: &Path) -> anyhow::Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut spec = SceneSpec::default();
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AppError::parse(path, ln, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: String| AppError::parse(path, ln, e);
        match key {
            "width" => spec.width = value.parse().map_err(|e| bad(format!("{e}")))?,
            "height" => spec.height = value.parse().map_err(|e| bad(format!("{e}")))?,
            "planes" => spec.num_planes = value.parse().map_err(|e| bad(format!("{e}")))?,
            "views" => spec.num_views = value.parse().map_err(|e| bad(format!("{e}")))?,
            "points" => spec.num_points = value.parse().map_err(|e| bad(format!("{e}")))?,
            "seed" => spec.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "texture" => {
                spec.texture = match value {
                    "checker" => TextureKind::Checker,
                    "noise" => TextureKind::Noise,
                    other => return Err(bad(format!("unknown texture `{other}`")).into()),
                }
            }
            other => return Err(bad(format!("unknown key `{other}`")).into()),
        }
    }
    Ok(spec)
}

fn parse_pose_file(path: &Path) -> anyhow::Result<CameraView> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut fx = 64.0;
    let mut fy = 64.0;
    let mut cx = 32.0;
    let mut cy = 32.0;
    let mut width = 64usize;
    let mut height = 64usize;
    let mut quat = [1.0, 0.0, 0.0, 0.0];
    let mut trans = [0.0; 3];
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AppError::parse(path, ln, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let floats = |n: usize| -> Result<Vec<f64>, AppError> {
            let v: Vec<f64> = value
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| AppError::parse(path, ln, format!("bad float: {e}")))?;
            if v.len() != n {
                return Err(AppError::parse(path, ln, format!("expected {n} floats")));
            }
            Ok(v)
        };
        match key {
            "fx" => fx = floats(1)?[0],
            "fy" => fy = floats(1)?[0],
            "cx" => cx = floats(1)?[0],
            "cy" => cy = floats(1)?[0],
            "width" => {
                width = value
                    .parse()
                    .map_err(|e| AppError::parse(path, ln, format!("bad int: {e}")))?
            }
            "height" => {
                height = value
                    .parse()
                    .map_err(|e| AppError::parse(path, ln, format!("bad int: {e}")))?
            }
            "quat" => {
                let v = floats(4)?;
                quat = [v[0], v[1], v[2], v[3]];
            }
            "trans" => {
                let v = floats(3)?;
                trans = [v[0], v[1], v[2]];
            }
            other => {
                return Err(AppError::parse(path, ln, format!("unknown key `{other}`")).into())
            }
        }
    }
    Ok(CameraView::from_quaternion(
        fx, fy, cx, cy, width, height, quat, trans,
    )
    .map_err(AppError::Core)?)
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Synth {
            out,
            spec,
            medium,
            seed,
        } => {
            let mut scene_spec = match spec {
                Some(path) => parse_scene_spec(&path)?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = seed {
                scene_spec.seed = seed;
            }
            let scene = generate_synthetic_scene(&scene_spec)?;
            write_dataset(&scene, &out)?;
            match medium {
                MediumArg::None => {
                    // Keep pristine copies under truth/ so downstream tools
                    // see the same layout either way.
                    let truth = out.join("truth");
                    std::fs::create_dir_all(&truth).map_err(|e| AppError::io(&truth, e))?;
                    for view in &scene.views {
                        std::fs::copy(
                            out.join("images").join(&view.name),
                            truth.join(&view.name),
                        )
                        .map_err(|e| AppError::io(truth.join(&view.name), e))?;
                    }
                }
                MediumArg::Water => {
                    apply_medium_to_dataset(&out, &MediumPreset::Water.params())?
                }
                MediumArg::Fog => apply_medium_to_dataset(&out, &MediumPreset::Fog.params())?,
            }
            println!(
                "wrote {} views ({}x{}) to {}",
                scene.views.len(),
                scene_spec.width,
                scene_spec.height,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            data,
            out,
            config,
            resume,
        } => {
            let run_cfg = match config {
                Some(path) => parse_run_config(&path)?,
                None => RunConfig::default(),
            };
            let ds = SceneDataset::load(&data)?;
            let outcome = run_training(&ds, &run_cfg, &out, resume.as_deref())?;
            if let Some(eval) = outcome.final_eval {
                println!(
                    "finished {} iterations: held-out PSNR {:.2} dB, SSIM {:.4}",
                    outcome.state.iteration, eval.psnr, eval.ssim
                );
            }
            println!("checkpoint: {}", outcome.checkpoint_dir.display());
            println!("metrics:    {}", outcome.metrics_path.display());
            // A viewer-friendly point cloud next to the checkpoint.
            export_cloud_ply(
                &outcome.state.cloud,
                &outcome.checkpoint_dir.join("cloud.ply"),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Render {
            checkpoint,
            data,
            view,
            pose,
            mode,
            out,
        } => {
            let cfg = uwsplat_core::train::TrainConfig::default();
            let state = load_checkpoint(&checkpoint, &cfg)?;
            let camera = match (pose, data, view) {
                (Some(pose_path), _, _) => parse_pose_file(&pose_path)?,
                (None, Some(data_dir), Some(idx)) => {
                    let ds = SceneDataset::load(&data_dir)?;
                    if idx >= ds.frames.len() {
                        return Err(AppError::Dataset(format!(
                            "view index {idx} out of range ({} frames)",
                            ds.frames.len()
                        ))
                        .into());
                    }
                    ds.frames[idx].camera.clone()
                }
                _ => {
                    return Err(AppError::Dataset(
                        "render needs either --pose FILE or --data DIR with --view N".into(),
                    )
                    .into())
                }
            };
            let rendered = render_forward(&state.cloud, &camera);
            match mode {
                RenderMode::InMedium => {
                    let i_hat =
                        medium::compose(&rendered.color, &rendered.depth, &state.medium)?;
                    save_image(&i_hat, &out)?;
                }
                RenderMode::Restored => {
                    save_image(&rendered.color, &out)?;
                }
                RenderMode::Depth => {
                    let (img, lo, hi) = depth_to_colormap(&rendered.depth);
                    save_image(&img, &out)?;
                    let fmap = out.with_extension("fmap");
                    save_scalar_map(&rendered.depth, &fmap)?;
                    println!(
                        "depth range [{lo}, {hi}] (colormap normalized; raw values in {})",
                        fmap.display()
                    );
                }
                RenderMode::Alpha => {
                    let gray = uwsplat_core::image::RgbImage::from_fn(
                        rendered.alpha.width(),
                        rendered.alpha.height(),
                        |x, y| {
                            let a = rendered.alpha.get(x, y) as f64;
                            [a, a, a]
                        },
                    );
                    save_image(&gray, &out)?;
                }
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Restore {
            images,
            depths,
            medium_file,
            out,
        } => {
            let params = load_medium_text(&medium_file)?;
            std::fs::create_dir_all(&out).map_err(|e| AppError::io(&out, e))?;
            let mut names: Vec<String> = std::fs::read_dir(&images)
                .map_err(|e| AppError::io(&images, e))?
                .filter_map(|entry| {
                    let entry = entry.ok()?;
                    let name = entry.file_name().into_string().ok()?;
                    name.ends_with(".png").then_some(name)
                })
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(
                    AppError::Dataset(format!("no PNG images in {}", images.display())).into(),
                );
            }
            for name in &names {
                let stem = name.trim_end_matches(".png");
                let img = load_image(&images.join(name))?;
                let depth = load_scalar_map(&depths.join(format!("{stem}.fmap")))?;
                let restored = medium::restore(&img, &depth, &params)?;
                save_image(&restored, &out.join(name))?;
            }
            println!("restored {} images into {}", names.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
        } => {
            let ds = SceneDataset::load(&data)?;
            let cfg = uwsplat_core::train::TrainConfig::default();
            let csv = evaluate_checkpoint_csv(&ds, &checkpoint, &cfg)?;
            std::fs::write(&out, &csv).map_err(|e| AppError::io(&out, e))?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { suite } => {
            let name = match suite {
                CheckSuite::Grads => "grads",
                CheckSuite::Oracle => "oracle",
                CheckSuite::Roundtrip => "roundtrip",
            };
            let reports = verify::run_suite(name).expect("known suite");
            let mut all_passed = true;
            for r in &reports {
                println!(
                    "{} {}: max err {:.3e} (bound {:.1e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_error,
                    r.bound
                );
                all_passed &= r.passed;
            }
            if all_passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}
