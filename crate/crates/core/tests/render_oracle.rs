//! Renderer correctness: tiled fast path against the brute-force oracle, and
//! analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwsplat_core::autodiff::{finite_diff_check, GradProbe, Graph};
use uwsplat_core::camera::CameraView;
use uwsplat_core::cloud::{Gaussian, GaussianCloud};
use uwsplat_core::render::{render, render_bruteforce, render_forward, CloudNodes};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, max_opacity_logit: f64) -> GaussianCloud {
    (0..n)
        .map(|_| {
            let quat = loop {
                let q = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let norm2: f64 = q.iter().map(|v| v * v).sum();
                if norm2 > 0.4 {
                    break q;
                }
            };
            Gaussian {
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
                rotation: quat,
                opacity: rng.gen_range(-2.5..max_opacity_logit),
                color: [
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                ],
            }
        })
        .collect()
}

fn oracle_cam() -> CameraView {
    CameraView::identity_pose(20.0, 20.0, 8.0, 8.0, 16, 16)
}

fn grad_cam() -> CameraView {
    CameraView::identity_pose(10.0, 10.0, 4.0, 4.0, 8, 8)
}

#[test]
fn render_matches_bruteforce_over_100_random_clouds() {
    let cam = oracle_cam();
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
    // Early termination at T < 1e-4 bounds the dropped color/alpha mass by
    // 1e-4; depth is normalized by alpha, which roughly doubles the bound and
    // scales it by the depth range (z ≤ 2.5).
    assert!(worst_color < 1e-4, "color deviates {worst_color}");
    assert!(worst_alpha < 1e-4, "alpha deviates {worst_alpha}");
    assert!(worst_depth < 1e-3, "depth deviates {worst_depth}");
}

#[test]
fn single_gaussian_matches_bruteforce() {
    let cam = oracle_cam();
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let cloud = random_cloud(&mut rng, 1, 2.0);
    let fast = render_forward(&cloud, &cam);
    let oracle = render_bruteforce(&cloud, &cam);
    for (a, b) in fast.color.data().iter().zip(oracle.color.data()) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn accumulated_alpha_equals_one_minus_transmittance() {
    // Independent recomputation of 1 − Π(1−α_i) from per-Gaussian projections.
    let cam = oracle_cam();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // Moderate opacities so no pixel hits early termination and the identity
    // is exact rather than truncated.
    let cloud = random_cloud(&mut rng, 12, 0.0);
    let out = render_forward(&cloud, &cam);

    let mut splats: Vec<(f64, usize)> = Vec::new();
    for i in 0..cloud.len() {
        let g = cloud.get(i);
        if let Some(p) = uwsplat_core::render::project(&g, &cam) {
            splats.push((p.z_cam, i));
        }
    }
    splats.sort_by(|a, b| a.0.total_cmp(&b.0));

    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut transmittance = 1.0f64;
            for &(_, i) in &splats {
                let g = cloud.get(i);
                let p = uwsplat_core::render::project(&g, &cam).unwrap();
                let det = p.cov2d[0][0] * p.cov2d[1][1] - p.cov2d[0][1] * p.cov2d[1][0];
                let conic = [
                    p.cov2d[1][1] / det,
                    -p.cov2d[0][1] / det,
                    p.cov2d[0][0] / det,
                ];
                let dx = x as f64 + 0.5 - p.mean2d[0];
                let dy = y as f64 + 0.5 - p.mean2d[1];
                let power =
                    -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
                let alpha = (g.activated_opacity() * power.exp()).min(0.99);
                if alpha < 1e-8 {
                    continue;
                }
                transmittance *= 1.0 - alpha;
            }
            let expected = 1.0 - transmittance;
            let got = out.alpha.get(x, y) as f64;
            assert!(
                (got - expected).abs() < 1e-6,
                "alpha {got} vs 1-T {expected} at ({x},{y})"
            );
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Means,
    LogScales,
    Rotations,
    Opacities,
    Colors,
}

fn probe(cloud: &GaussianCloud, cam: &CameraView, which: Param, vals: &[f64]) -> GradProbe {
    let mut c = cloud.clone();
    match which {
        Param::Means => c.means_mut().copy_from_slice(vals),
        Param::LogScales => c.log_scales_mut().copy_from_slice(vals),
        Param::Rotations => c.rotations_mut().copy_from_slice(vals),
        Param::Opacities => c.opacities_mut().copy_from_slice(vals),
        Param::Colors => c.colors_mut().copy_from_slice(vals),
    }
    let g = Graph::new();
    let nodes = CloudNodes::from_cloud(&g, &c);
    let out = render(&nodes, cam).unwrap();
    // Exercise all three outputs, including depth normalization.
    let loss = out
        .color
        .sum()
        .add(&out.depth.sum().mul_const(0.37))
        .unwrap()
        .add(&out.alpha.sum().mul_const(0.53))
        .unwrap();
    let param = match which {
        Param::Means => nodes.means,
        Param::LogScales => nodes.log_scales,
        Param::Rotations => nodes.rotations,
        Param::Opacities => nodes.opacities,
        Param::Colors => nodes.colors,
    };
    GradProbe { loss, param }
}

fn check_param(cloud: &GaussianCloud, cam: &CameraView, which: Param) -> f64 {
    let at = match which {
        Param::Means => cloud.means().to_vec(),
        Param::LogScales => cloud.log_scales().to_vec(),
        Param::Rotations => cloud.rotations().to_vec(),
        Param::Opacities => cloud.opacities().to_vec(),
        Param::Colors => cloud.colors().to_vec(),
    };
    finite_diff_check(|v| probe(cloud, cam, which, v), &at, 1e-4)
}

#[test]
fn renderer_gradients_pass_finite_difference_checks() {
    let cam = grad_cam();
    for seed in [3u64, 8, 21] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, 6, 0.0);
        for which in [
            Param::Means,
            Param::LogScales,
            Param::Rotations,
            Param::Opacities,
            Param::Colors,
        ] {
            let err = check_param(&cloud, &cam, which);
            assert!(
                err < 1e-3,
                "seed {seed}: {which:?} max rel err {err:.3e}"
            );
        }
    }
}

#[test]
fn depth_pixels_without_coverage_are_zero() {
    let cam = oracle_cam();
    let mut cloud = GaussianCloud::new();
    cloud.push(Gaussian {
        mean: [0.0, 0.0, 1.0],
        log_scale: [-4.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        opacity: 0.0,
        color: [1.0; 3],
    });
    let out = render_forward(&cloud, &cam);
    // Far corner: no coverage, depth must be exactly 0.
    assert_eq!(out.depth.get(0, 0), 0.0);
    assert_eq!(out.alpha.get(0, 0), 0.0);
}
