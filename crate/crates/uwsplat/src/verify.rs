//! User-facing verification suites behind `uwsplat check`: gradient checks,
//! the renderer oracle sweep, and format/algebra round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwsplat_core::autodiff::{finite_diff_check, GradProbe, Graph};
use uwsplat_core::camera::CameraView;
use uwsplat_core::cloud::{Gaussian, GaussianCloud};
use uwsplat_core::image::{RgbImage, ScalarMap};
use uwsplat_core::loss::{total_loss, LossConfig, LossInputs};
use uwsplat_core::medium::{self, MediumNodes, MediumParams};
use uwsplat_core::render::{render, render_bruteforce, render_forward, CloudNodes};

/// One named check with its measured worst-case error.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub bound: f64,
}

impl CheckReport {
    fn new(name: &str, max_error: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: max_error < bound,
            max_error,
            bound,
        }
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, max_opacity_logit: f64) -> GaussianCloud {
    (0..n)
        .map(|_| Gaussian {
            mean: [
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
                rng.gen_range(0.7..2.5),
            ],
            log_scale: [
                rng.gen_range(-2.8..-1.2),
                rng.gen_range(-2.8..-1.2),
                rng.gen_range(-2.8..-1.2),
            ],
            rotation: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1.0..2.0),
            ],
            opacity: rng.gen_range(-2.5..max_opacity_logit),
            color: [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ],
        })
        .collect()
}

/// Finite-difference gradient checks on the renderer (all five parameter
/// buffers through a combined output loss) and the medium model.
pub fn check_grads() -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let cam = CameraView::identity_pose(16.0, 16.0, 6.0, 6.0, 12, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud = random_cloud(&mut rng, 6, 0.0);
    let captured = RgbImage::from_fn(12, 12, |_, _| {
        [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ]
    });

    // Renderer + full loss (minus the detach-value-coupled terms) w.r.t.
    // each cloud buffer.
    let cfg = LossConfig {
        w_bs: 0.0,
        w_zrecon: 0.0,
        w_op: 0.0,
        ..LossConfig::default()
    };
    for (name, which) in [
        ("render/means", 0usize),
        ("render/log_scales", 1),
        ("render/rotations", 2),
        ("render/opacities", 3),
        ("render/colors", 4),
    ] {
        let at = match which {
            0 => cloud.means().to_vec(),
            1 => cloud.log_scales().to_vec(),
            2 => cloud.rotations().to_vec(),
            3 => cloud.opacities().to_vec(),
            _ => cloud.colors().to_vec(),
        };
        let err = finite_diff_check(
            |vals| {
                let mut c = cloud.clone();
                match which {
                    0 => c.means_mut().copy_from_slice(vals),
                    1 => c.log_scales_mut().copy_from_slice(vals),
                    2 => c.rotations_mut().copy_from_slice(vals),
                    3 => c.opacities_mut().copy_from_slice(vals),
                    _ => c.colors_mut().copy_from_slice(vals),
                }
                let g = Graph::new();
                let nodes = CloudNodes::from_cloud(&g, &c);
                let out = render(&nodes, &cam).unwrap();
                let m = MediumNodes::from_params(&g, &MediumParams::default_init());
                let tl = total_loss(
                    &LossInputs {
                        captured: &captured,
                        j_hat: &out.color,
                        z_hat: &out.depth,
                        alpha: &out.alpha,
                        medium: Some(&m),
                    },
                    &cfg,
                )
                .unwrap();
                let param = match which {
                    0 => nodes.means,
                    1 => nodes.log_scales,
                    2 => nodes.rotations,
                    3 => nodes.opacities,
                    _ => nodes.colors,
                };
                GradProbe {
                    loss: tl.value,
                    param,
                }
            },
            &at,
            1e-4,
        );
        reports.push(CheckReport::new(name, err, 1e-3));
    }

    // Medium model against a least-squares composition objective.
    let j = RgbImage::from_fn(6, 5, |_, _| {
        [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
    });
    let z = ScalarMap::from_vec(6, 5, (0..30).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap();
    let target = medium::compose(&j, &z, &MediumParams::from_activated([2.0, 1.5, 1.0], [1.0; 3], [0.1, 0.2, 0.3])).unwrap();
    for group in 0..3 {
        let p0 = MediumParams::default_init();
        let at = match group {
            0 => p0.beta_d_raw.to_vec(),
            1 => p0.beta_b_raw.to_vec(),
            _ => p0.b_inf_raw.to_vec(),
        };
        let err = finite_diff_check(
            |vals| {
                let mut p = p0;
                match group {
                    0 => p.beta_d_raw.copy_from_slice(vals),
                    1 => p.beta_b_raw.copy_from_slice(vals),
                    _ => p.b_inf_raw.copy_from_slice(vals),
                }
                let g = Graph::new();
                let m = MediumNodes::from_params(&g, &p);
                let jn = g.input_image(&j);
                let zn = g.input_map(&z);
                let composed = medium::compose_graph(&jn, &zn, &m).unwrap();
                let diff = composed.sub(&g.input_image(&target)).unwrap();
                let loss = diff.mul(&diff).unwrap().mean();
                let param = match group {
                    0 => m.beta_d_raw,
                    1 => m.beta_b_raw,
                    _ => m.b_inf_raw,
                };
                GradProbe { loss, param }
            },
            &at,
            1e-4,
        );
        let name = ["medium/beta_d", "medium/beta_b", "medium/b_inf"][group];
        reports.push(CheckReport::new(name, err, 1e-4));
    }
    reports
}

/// Tiled renderer vs brute-force oracle over 100 random clouds.
pub fn check_oracle() -> Vec<CheckReport> {
    let cam = CameraView::identity_pose(20.0, 20.0, 8.0, 8.0, 16, 16);
    let mut worst_color = 0.0f64;
    let mut worst_alpha = 0.0f32;
    let mut worst_depth = 0.0f32;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=50);
        let cloud = random_cloud(&mut rng, n, 2.0);
        let fast = render_forward(&cloud, &cam);
        let oracle = render_bruteforce(&cloud, &cam);
        for (a, b) in fast.color.data().iter().zip(oracle.color.data()) {
            worst_color = worst_color.max((a - b).abs());
        }
        for (a, b) in fast.alpha.data().iter().zip(oracle.alpha.data()) {
            worst_alpha = worst_alpha.max((a - b).abs());
        }
        for (a, b) in fast.depth.data().iter().zip(oracle.depth.data()) {
            worst_depth = worst_depth.max((a - b).abs());
        }
    }
    vec![
        CheckReport::new("oracle/color", worst_color, 1e-4),
        CheckReport::new("oracle/alpha", worst_alpha as f64, 1e-4),
        CheckReport::new("oracle/depth", worst_depth as f64, 1e-3),
    ]
}

/// Compose/restore inversion and on-disk format round trips.
pub fn check_roundtrip() -> Vec<CheckReport> {
    let mut reports = Vec::new();

    // restore ∘ compose over random parameter draws.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = MediumParams::from_activated(
            [
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
            ],
            [
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
            ],
            [
                rng.gen_range(0.02..0.98),
                rng.gen_range(0.02..0.98),
                rng.gen_range(0.02..0.98),
            ],
        );
        let j = RgbImage::from_fn(16, 16, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        });
        let z = ScalarMap::from_vec(16, 16, (0..256).map(|_| rng.gen_range(0.0..3.0)).collect())
            .unwrap();
        let i = medium::compose(&j, &z, &p).unwrap();
        let back = medium::restore(&i, &z, &p).unwrap();
        for (a, b) in back.data().iter().zip(j.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    reports.push(CheckReport::new("roundtrip/restore_compose", worst, 1e-5));

    // FMAP bit-exactness and PNG quantization bound via temp files.
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            reports.push(CheckReport::new(
                &format!("roundtrip/tempdir ({e})"),
                f64::INFINITY,
                1.0,
            ));
            return reports;
        }
    };
    let map = ScalarMap::from_vec(8, 4, (0..32).map(|i| (i as f32).sin()).collect()).unwrap();
    let fmap_path = dir.path().join("m.fmap");
    let fmap_err = crate::io::save_scalar_map(&map, &fmap_path)
        .and_then(|_| crate::io::load_scalar_map(&fmap_path))
        .map(|back| {
            map.data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs() as f64)
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    reports.push(CheckReport::new("roundtrip/fmap_bits", fmap_err, f64::MIN_POSITIVE));

    let img = RgbImage::from_fn(9, 7, |x, y| {
        [
            (x as f64) / 9.0,
            (y as f64) / 7.0,
            ((x + y) as f64) / 16.0,
        ]
    });
    let png_path = dir.path().join("i.png");
    let png_err = crate::io::save_image(&img, &png_path)
        .and_then(|_| crate::io::load_image(&png_path))
        .map(|back| {
            img.data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    reports.push(CheckReport::new(
        "roundtrip/png_quantization",
        png_err,
        1.0 / 255.0 + 1e-9,
    ));

    reports
}

/// Run a named suite.
pub fn run_suite(suite: &str) -> Option<Vec<CheckReport>> {
    match suite {
        "grads" => Some(check_grads()),
        "oracle" => Some(check_oracle()),
        "roundtrip" => Some(check_roundtrip()),
        _ => None,
    }
}
