//! Joint optimization: interleaved medium and cloud updates, simplified
//! adaptive density control, and evaluation on held-out frames.
//!
//! One training step builds a fresh graph (render → compose → total loss),
//! backpropagates, and applies Adam updates: cloud parameters every step,
//! medium parameters every `medium_update_period` steps. Per-Gaussian
//! screen-space positional gradient magnitudes are accumulated between
//! densifications.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::camera::{quat_normalize, quat_to_rot, CameraView};
use crate::cloud::{opacity_logit, Gaussian, GaussianCloud};
use crate::image::{self, RgbImage, ScalarMap};
use crate::loss::{total_loss, LossBreakdown, LossConfig, LossInputs};
use crate::math;
use crate::medium::{self, MediumNodes, MediumParams};
use crate::optim::Adam;
use crate::render::{render, render_forward, CloudNodes};
use crate::{Error, Result};

/// One posed frame, with optional synthetic ground truth.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub image: RgbImage,
    pub camera: CameraView,
    pub gt_depth: Option<ScalarMap>,
    pub gt_color: Option<RgbImage>,
}

/// All trainer knobs. Defaults follow 3DGS conventions where the paper
/// inherits them and desk-scale calibration elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Means learning rate, scaled by the scene extent at init.
    pub lr_means: f64,
    /// Exponential decay: the means rate reaches `lr_means_final_factor`
    /// times its initial value at the last iteration.
    pub lr_means_final_factor: f64,
    pub lr_scales: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_medium: f64,
    /// Apply a medium Adam step every this many iterations.
    pub medium_update_period: usize,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub densify_stop_iteration: usize,
    /// Hard cap on cloud size during densification (0 = unlimited).
    pub max_gaussians: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// When false the medium is ablated (Â = 1, B̂ = 0) and training reduces
    /// to vanilla splatting on the reconstruction term.
    pub medium_enabled: bool,
    pub medium_init: MediumParams,
    /// Divide the sum-valued loss terms by the pixel (or pixel·channel)
    /// count so their scale does not grow with resolution. The raw loss
    /// definitions stay literal sums; this only affects the weighted total
    /// the optimizer sees.
    pub auto_pixel_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr_means: 1.6e-4,
            lr_means_final_factor: 0.01,
            lr_scales: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_medium: 1e-3,
            medium_update_period: 10,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            densify_stop_iteration: 1800,
            max_gaussians: 20000,
            seed: 0,
            loss: LossConfig::default(),
            medium_enabled: true,
            medium_init: MediumParams::default_init(),
            auto_pixel_normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lr_means,
            self.lr_scales,
            self.lr_rotation,
            self.lr_opacity,
            self.lr_color,
            self.lr_medium,
        ];
        if rates.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidConfig("learning rates must be >= 0"));
        }
        if self.medium_update_period == 0 || self.densify_interval == 0 {
            return Err(Error::InvalidConfig("periods must be >= 1"));
        }
        self.loss.validate()
    }

    /// Loss config with sum-valued terms brought to per-pixel scale for a
    /// given frame size.
    fn effective_loss(&self, width: usize, height: usize) -> LossConfig {
        if !self.auto_pixel_normalize {
            return self.loss.clone();
        }
        let n = (width * height) as f64;
        let mut cfg = self.loss.clone();
        cfg.w_bs /= 3.0 * n;
        cfg.w_sat /= 3.0 * n;
        cfg.w_zrecon /= 3.0 * n;
        cfg.w_zsmooth /= n;
        cfg.w_op /= n;
        cfg
    }
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cloud: GaussianCloud,
    pub medium: MediumParams,
    pub iteration: usize,
    pub adam_means: Adam,
    pub adam_scales: Adam,
    pub adam_rotations: Adam,
    pub adam_opacities: Adam,
    pub adam_colors: Adam,
    pub adam_medium: Adam,
    /// Accumulated NDC positional gradient norms since the last density
    /// control, and per-Gaussian visibility counts.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub scene_center: [f64; 3],
    pub scene_extent: f64,
}

impl TrainState {
    pub fn new(cloud: GaussianCloud, cfg: &TrainConfig) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        cfg.validate()?;
        let n = cloud.len();
        let (scene_center, scene_extent) = bounding_sphere(cloud.means());
        Ok(Self {
            adam_means: Adam::new(3 * n),
            adam_scales: Adam::new(3 * n),
            adam_rotations: Adam::new(4 * n),
            adam_opacities: Adam::new(n),
            adam_colors: Adam::new(3 * n),
            adam_medium: Adam::new(9),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            medium: cfg.medium_init,
            iteration: 0,
            scene_center,
            scene_extent,
            cloud,
        })
    }

    /// Exponentially decayed means learning rate, scaled by scene extent.
    pub fn lr_means_at(&self, cfg: &TrainConfig) -> f64 {
        let t = if cfg.iterations <= 1 {
            0.0
        } else {
            (self.iteration as f64) / (cfg.iterations as f64 - 1.0)
        };
        cfg.lr_means
            * self.scene_extent.max(1e-6)
            * math::powf(cfg.lr_means_final_factor, t.clamp(0.0, 1.0))
    }
}

fn bounding_sphere(means: &[f64]) -> ([f64; 3], f64) {
    let n = means.len() / 3;
    if n == 0 {
        return ([0.0; 3], 1.0);
    }
    let mut center = [0.0f64; 3];
    for p in means.chunks_exact(3) {
        center[0] += p[0];
        center[1] += p[1];
        center[2] += p[2];
    }
    for c in &mut center {
        *c /= n as f64;
    }
    let mut radius: f64 = 0.0;
    for p in means.chunks_exact(3) {
        let d = [(p[0] - center[0]), (p[1] - center[1]), (p[2] - center[2])];
        radius = radius.max(math::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
    }
    (center, radius.max(1e-3))
}

/// A seed point for cloud initialization (typically from SfM).
#[derive(Debug, Clone, Copy)]
pub struct SeedPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

/// Initial activated opacity of every new Gaussian.
pub const INIT_OPACITY: f64 = 0.1;

/// One Gaussian per seed point: scale from the mean distance to the three
/// nearest neighbors, identity rotation, opacity 0.1 pre-activation-adjusted,
/// color taken as-is (color has no activation).
pub fn init_cloud_from_points(points: &[SeedPoint]) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = points.len();
    let mut cloud = GaussianCloud::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        // Mean distance to the 3 nearest neighbors (brute force; init only).
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| {
                let d = [
                    p.position[0] - q.position[0],
                    p.position[1] - q.position[1],
                    p.position[2] - q.position[2],
                ];
                math::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            })
            .collect();
        dists.sort_by(f64::total_cmp);
        let k = dists.len().min(3);
        let mean_dist = if k == 0 {
            0.1
        } else {
            (dists[..k].iter().sum::<f64>() / k as f64).max(1e-7)
        };
        cloud.push(Gaussian {
            mean: p.position,
            log_scale: [math::ln(mean_dist); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: opacity_logit(INIT_OPACITY),
            color: p.color,
        });
    }
    Ok(cloud)
}

/// Random cloud inside an axis-aligned box, for point-free initialization.
pub fn init_cloud_random(seed: u64, count: usize, lo: [f64; 3], hi: [f64; 3]) -> Result<GaussianCloud> {
    use rand::Rng;
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<SeedPoint> = (0..count)
        .map(|_| SeedPoint {
            position: [
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                rng.gen_range(lo[2]..hi[2]),
            ],
            color: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
        })
        .collect();
    init_cloud_from_points(&points)
}

const LOG_SCALE_MIN: f64 = -12.0;
const LOG_SCALE_MAX: f64 = 3.0;
const OPACITY_RAW_LIMIT: f64 = 15.0;

/// One optimization step on one frame. Renders, composes, backpropagates,
/// and applies Adam updates. Aborts with [`Error::NonFiniteLoss`] if any
/// term goes non-finite.
pub fn train_step(
    state: &mut TrainState,
    frame: &TrainFrame,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let graph = Graph::new();
    let nodes = CloudNodes::from_cloud(&graph, &state.cloud);
    let out = render(&nodes, &frame.camera)?;
    let medium_nodes = MediumNodes::from_params(&graph, &state.medium);
    let loss_cfg = cfg.effective_loss(frame.camera.width, frame.camera.height);
    let result = total_loss(
        &LossInputs {
            captured: &frame.image,
            j_hat: &out.color,
            z_hat: &out.depth,
            alpha: &out.alpha,
            medium: if cfg.medium_enabled {
                Some(&medium_nodes)
            } else {
                None
            },
        },
        &loss_cfg,
    )?;
    if !result.breakdown.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    result.value.backward()?;

    // Cloud updates every step.
    let lr_means = state.lr_means_at(cfg);
    state
        .adam_means
        .step(state.cloud.means_mut(), &nodes.means.grad(), lr_means);
    state.adam_scales.step(
        state.cloud.log_scales_mut(),
        &nodes.log_scales.grad(),
        cfg.lr_scales,
    );
    state.adam_rotations.step(
        state.cloud.rotations_mut(),
        &nodes.rotations.grad(),
        cfg.lr_rotation,
    );
    state.adam_opacities.step(
        state.cloud.opacities_mut(),
        &nodes.opacities.grad(),
        cfg.lr_opacity,
    );
    state
        .adam_colors
        .step(state.cloud.colors_mut(), &nodes.colors.grad(), cfg.lr_color);

    // Keep parameters in sane numeric ranges.
    for v in state.cloud.log_scales_mut() {
        *v = v.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
    }
    for v in state.cloud.opacities_mut() {
        *v = v.clamp(-OPACITY_RAW_LIMIT, OPACITY_RAW_LIMIT);
    }
    let clamp_r = 3.0 * state.scene_extent;
    let center = state.scene_center;
    for p in state.cloud.means_mut().chunks_exact_mut(3) {
        for k in 0..3 {
            p[k] = p[k].clamp(center[k] - clamp_r, center[k] + clamp_r);
        }
    }

    // Medium updates on the interleave schedule.
    if cfg.medium_enabled && (state.iteration + 1) % cfg.medium_update_period == 0 {
        let mut raw = state.medium.to_raw_vec().to_vec();
        let mut grads = Vec::with_capacity(9);
        grads.extend_from_slice(&medium_nodes.beta_d_raw.grad());
        grads.extend_from_slice(&medium_nodes.beta_b_raw.grad());
        grads.extend_from_slice(&medium_nodes.b_inf_raw.grad());
        state.adam_medium.step(&mut raw, &grads, cfg.lr_medium);
        state.medium = MediumParams::from_raw_vec(&raw);
    }

    // Densification statistics.
    let stats = out.stats.borrow();
    for i in 0..state.cloud.len() {
        if stats.visible[i] {
            state.grad_count[i] += 1;
            state.grad_accum[i] += stats.pos_grad_ndc[i];
        }
    }

    state.iteration += 1;
    Ok(result.breakdown)
}

/// Outcome of one density-control pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub before: usize,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    pub after: usize,
}

/// Clone/split Gaussians with large mean positional gradients and prune
/// nearly transparent ones. Optimizer moments follow: survivors keep theirs,
/// children start at zero.
pub fn densify_and_prune(state: &mut TrainState, cfg: &TrainConfig) -> Result<DensifyReport> {
    let n = state.cloud.len();
    let split_scale_threshold = 0.01 * state.scene_extent;
    let cap = if cfg.max_gaussians == 0 {
        usize::MAX
    } else {
        cfg.max_gaussians.max(n)
    };

    let mut report = DensifyReport {
        before: n,
        ..Default::default()
    };
    let mut new_cloud = GaussianCloud::with_capacity(n);
    // Maps new rows to their source row for moment transfer.
    let mut mapping: Vec<Option<usize>> = Vec::with_capacity(n);

    for i in 0..n {
        let g = state.cloud.get(i);
        if g.activated_opacity() < cfg.prune_opacity_threshold {
            report.pruned += 1;
            continue;
        }
        let mean_grad = if state.grad_count[i] > 0 {
            state.grad_accum[i] / state.grad_count[i] as f64
        } else {
            0.0
        };
        let room = new_cloud.len() + 1 < cap;
        if mean_grad <= cfg.densify_grad_threshold || !room {
            new_cloud.push(g);
            mapping.push(Some(i));
            continue;
        }
        let scale = g.scale();
        let (kmax, smax) = scale
            .iter()
            .enumerate()
            .map(|(k, &s)| (k, s))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three axes");
        if smax > split_scale_threshold {
            // Split: two children along the major axis at ±σ/2, scales
            // shrunk by 1.6.
            let rot = quat_to_rot(&quat_normalize(&g.rotation));
            let axis = [rot[0][kmax], rot[1][kmax], rot[2][kmax]];
            let offset = 0.5 * smax;
            let shrink = math::ln(1.6);
            for sign in [-1.0, 1.0] {
                let mut child = g;
                for k in 0..3 {
                    child.mean[k] += sign * offset * axis[k];
                    child.log_scale[k] -= shrink;
                }
                new_cloud.push(child);
                mapping.push(None);
            }
            report.split += 1;
        } else {
            // Clone: keep the original (with moments) plus a copy.
            new_cloud.push(g);
            mapping.push(Some(i));
            new_cloud.push(g);
            mapping.push(None);
            report.cloned += 1;
        }
    }

    if new_cloud.is_empty() {
        return Err(Error::DegenerateScene);
    }
    report.after = new_cloud.len();

    state.adam_means = state.adam_means.remap(&mapping, 3);
    state.adam_scales = state.adam_scales.remap(&mapping, 3);
    state.adam_rotations = state.adam_rotations.remap(&mapping, 4);
    state.adam_opacities = state.adam_opacities.remap(&mapping, 1);
    state.adam_colors = state.adam_colors.remap(&mapping, 3);
    state.cloud = new_cloud;
    state.grad_accum = vec![0.0; report.after];
    state.grad_count = vec![0; report.after];
    Ok(report)
}

/// Deterministic frame index for an iteration: frames are visited in
/// epoch-shuffled order derived from the seed, independent of any persistent
/// RNG state (so resumed runs replay identically).
pub fn frame_for_iteration(seed: u64, iteration: usize, num_frames: usize) -> usize {
    debug_assert!(num_frames > 0);
    if num_frames == 1 {
        return 0;
    }
    let epoch = (iteration / num_frames) as u64;
    let mut order: Vec<usize> = (0..num_frames).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order[iteration % num_frames]
}

/// Per-frame evaluation record.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameEval {
    /// PSNR of the in-medium reconstruction Î against the captured image.
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR of Ĵ against ground-truth true color, when available.
    pub psnr_j: Option<f64>,
    /// Depth RMSE over pixels with rendered alpha > 0.5, when ground truth
    /// is available.
    pub z_rmse: Option<f64>,
}

/// Aggregate evaluation over a frame set.
#[derive(Debug, Clone, Default)]
pub struct EvalRecord {
    pub frames: Vec<FrameEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_psnr_j: Option<f64>,
    pub mean_z_rmse: Option<f64>,
}

/// Render each frame and score it. `medium: None` evaluates the raw render
/// (the medium-ablated model).
pub fn evaluate(
    cloud: &GaussianCloud,
    medium: Option<&MediumParams>,
    frames: &[TrainFrame],
) -> Result<EvalRecord> {
    let mut rec = EvalRecord::default();
    let mut psnr_j_acc = (0.0, 0usize);
    let mut rmse_acc = (0.0, 0usize);
    for frame in frames {
        let rendered = render_forward(cloud, &frame.camera);
        let i_hat = match medium {
            Some(p) => medium::compose(&rendered.color, &rendered.depth, p)?,
            None => rendered.color.clone(),
        };
        let mut fe = FrameEval {
            psnr: image::psnr(&i_hat, &frame.image)?,
            ssim: image::ssim(&i_hat, &frame.image)?,
            ..Default::default()
        };
        if let Some(gt_color) = &frame.gt_color {
            fe.psnr_j = Some(image::psnr(&rendered.color, gt_color)?);
        }
        if let Some(gt_depth) = &frame.gt_depth {
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for ((&a, &zr), &zt) in rendered
                .alpha
                .data()
                .iter()
                .zip(rendered.depth.data())
                .zip(gt_depth.data())
            {
                if a > 0.5 {
                    let d = zr as f64 - zt as f64;
                    acc += d * d;
                    count += 1;
                }
            }
            if count > 0 {
                fe.z_rmse = Some(math::sqrt(acc / count as f64));
            }
        }
        if let Some(v) = fe.psnr_j {
            psnr_j_acc.0 += v;
            psnr_j_acc.1 += 1;
        }
        if let Some(v) = fe.z_rmse {
            rmse_acc.0 += v;
            rmse_acc.1 += 1;
        }
        rec.mean_psnr += fe.psnr;
        rec.mean_ssim += fe.ssim;
        rec.frames.push(fe);
    }
    let n = rec.frames.len().max(1) as f64;
    rec.mean_psnr /= n;
    rec.mean_ssim /= n;
    if psnr_j_acc.1 > 0 {
        rec.mean_psnr_j = Some(psnr_j_acc.0 / psnr_j_acc.1 as f64);
    }
    if rmse_acc.1 > 0 {
        rec.mean_z_rmse = Some(rmse_acc.0 / rmse_acc.1 as f64);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_single_point() {
        let cloud = init_cloud_from_points(&[SeedPoint {
            position: [1.0, 2.0, 3.0],
            color: [0.2, 0.4, 0.6],
        }])
        .unwrap();
        assert_eq!(cloud.len(), 1);
        let g = cloud.get(0);
        assert_eq!(g.mean, [1.0, 2.0, 3.0]);
        assert_eq!(g.color, [0.2, 0.4, 0.6]);
        assert_abs_diff_eq!(g.activated_opacity(), INIT_OPACITY, epsilon = 1e-12);
    }

    #[test]
    fn init_scale_from_nearest_neighbors() {
        // Four colinear points spaced 0.5 apart: the mean 3-NN distance of
        // an end point is (0.5 + 1.0 + 1.5)/3 = 1.0.
        let points: Vec<SeedPoint> = (0..4)
            .map(|i| SeedPoint {
                position: [0.5 * i as f64, 0.0, 0.0],
                color: [0.5; 3],
            })
            .collect();
        let cloud = init_cloud_from_points(&points).unwrap();
        let g = cloud.get(0);
        assert_abs_diff_eq!(g.scale()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_empty_errors() {
        assert!(init_cloud_from_points(&[]).is_err());
        assert!(init_cloud_random(1, 0, [0.0; 3], [1.0; 3]).is_err());
    }

    #[test]
    fn random_init_is_deterministic() {
        let a = init_cloud_random(42, 20, [-1.0; 3], [1.0; 3]).unwrap();
        let b = init_cloud_random(42, 20, [-1.0; 3], [1.0; 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_colors_render_back() {
        // A dense fronto-parallel grid of same-color points: rendered color
        // divided by alpha recovers the point color where coverage is solid.
        let color = [0.3, 0.6, 0.9];
        let mut points = Vec::new();
        for y in 0..12 {
            for x in 0..12 {
                points.push(SeedPoint {
                    position: [
                        (x as f64 - 5.5) * 0.05,
                        (y as f64 - 5.5) * 0.05,
                        2.0,
                    ],
                    color,
                });
            }
        }
        let cloud = init_cloud_from_points(&points).unwrap();
        let cam = CameraView::identity_pose(32.0, 32.0, 8.0, 8.0, 16, 16);
        let out = render_forward(&cloud, &cam);
        let mut checked = 0;
        for y in 0..16 {
            for x in 0..16 {
                let a = out.alpha.get(x, y);
                if a > 0.3 {
                    let px = out.color.pixel(x, y);
                    for c in 0..3 {
                        assert_abs_diff_eq!(px[c] / a as f64, color[c], epsilon = 1e-6);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 10);
    }

    fn tiny_frame() -> TrainFrame {
        TrainFrame {
            image: RgbImage::constant(1, 1, [1.0, 1.0, 1.0]),
            camera: CameraView::identity_pose(1.0, 1.0, 0.5, 0.5, 1, 1),
            gt_depth: None,
            gt_color: None,
        }
    }

    fn tiny_cloud() -> GaussianCloud {
        let mut cloud = GaussianCloud::new();
        cloud.push(Gaussian {
            mean: [0.0, 0.0, 1.0],
            log_scale: [-1.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: opacity_logit(0.5),
            color: [0.8; 3],
        });
        cloud
    }

    fn gs_only_config() -> TrainConfig {
        TrainConfig {
            medium_enabled: false,
            loss: LossConfig {
                lambda_dssim: 0.0,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let cfg = TrainConfig {
            lr_means: 0.0,
            lr_scales: 0.0,
            lr_rotation: 0.0,
            lr_opacity: 0.0,
            lr_color: 0.0,
            lr_medium: 0.0,
            ..gs_only_config()
        };
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        let before = state.cloud.clone();
        let medium_before = state.medium;
        let breakdown = train_step(&mut state, &tiny_frame(), &cfg).unwrap();
        assert!(breakdown.is_finite());
        assert_eq!(state.cloud, before);
        assert_eq!(state.medium, medium_before);
    }

    #[test]
    fn white_gaussian_loss_decreases_monotonically() {
        let cfg = gs_only_config();
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        let frame = tiny_frame();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let b = train_step(&mut state, &frame, &cfg).unwrap();
            assert!(b.total < prev, "loss {0} did not decrease", b.total);
            prev = b.total;
        }
    }

    #[test]
    fn medium_frozen_with_infinite_period() {
        let cfg = TrainConfig {
            medium_update_period: usize::MAX,
            ..TrainConfig::default()
        };
        // Frame large enough for SSIM.
        let frame = TrainFrame {
            image: RgbImage::constant(12, 12, [0.5; 3]),
            camera: CameraView::identity_pose(12.0, 12.0, 6.0, 6.0, 12, 12),
            gt_depth: None,
            gt_color: None,
        };
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        let init = state.medium;
        for _ in 0..3 {
            train_step(&mut state, &frame, &cfg).unwrap();
        }
        assert_eq!(state.medium, init);
    }

    #[test]
    fn medium_stays_in_valid_ranges_while_training() {
        let cfg = TrainConfig {
            medium_update_period: 1,
            ..TrainConfig::default()
        };
        let frame = TrainFrame {
            image: RgbImage::constant(12, 12, [0.3, 0.4, 0.5]),
            camera: CameraView::identity_pose(12.0, 12.0, 6.0, 6.0, 12, 12),
            gt_depth: None,
            gt_color: None,
        };
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        for _ in 0..5 {
            train_step(&mut state, &frame, &cfg).unwrap();
            let bd = state.medium.beta_d();
            let bb = state.medium.beta_b();
            let bi = state.medium.b_inf();
            assert!(bd.iter().all(|&v| v > 0.0));
            assert!(bb.iter().all(|&v| v > 0.0));
            assert!(bi.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn densify_leaves_quiet_cloud_unchanged() {
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        let report = densify_and_prune(&mut state, &cfg).unwrap();
        assert_eq!(report.before, 1);
        assert_eq!(report.after, 1);
        assert_eq!(report.split + report.cloned + report.pruned, 0);
    }

    #[test]
    fn densify_splits_large_gaussian_above_threshold() {
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(tiny_cloud(), &cfg).unwrap();
        // Force a large accumulated gradient; the Gaussian's scale
        // (e^-1 ≈ 0.37) exceeds 1% of the scene extent.
        state.grad_accum[0] = 1.0;
        state.grad_count[0] = 1;
        let report = densify_and_prune(&mut state, &cfg).unwrap();
        assert_eq!(report.split, 1);
        assert_eq!(report.after, 2);
        // Children shrink by 1.6.
        let g = state.cloud.get(0);
        assert_abs_diff_eq!(g.scale()[0], math::exp(-1.0) / 1.6, epsilon = 1e-9);
    }

    #[test]
    fn densify_clones_small_gaussian_above_threshold() {
        let cfg = TrainConfig::default();
        let mut cloud = tiny_cloud();
        // Scale below 1% of the (tiny single-Gaussian) scene extent.
        cloud.log_scales_mut().copy_from_slice(&[-11.7, -11.7, -11.7]);
        let mut state = TrainState::new(cloud, &cfg).unwrap();
        state.grad_accum[0] = 1.0;
        state.grad_count[0] = 1;
        let report = densify_and_prune(&mut state, &cfg).unwrap();
        assert_eq!(report.cloned, 1);
        assert_eq!(report.after, 2);
        assert_eq!(state.cloud.get(0).mean, state.cloud.get(1).mean);
    }

    #[test]
    fn densify_prunes_transparent_gaussians() {
        let cfg = TrainConfig::default();
        let mut cloud = tiny_cloud();
        cloud.push(Gaussian {
            opacity: -15.0, // activated ≈ 3e-7 < 0.005
            ..cloud.get(0)
        });
        let mut state = TrainState::new(cloud, &cfg).unwrap();
        let report = densify_and_prune(&mut state, &cfg).unwrap();
        assert_eq!(report.pruned, 1);
        assert_eq!(report.after, 1);
    }

    #[test]
    fn densify_rejects_pruning_everything() {
        let cfg = TrainConfig::default();
        let mut cloud = GaussianCloud::new();
        cloud.push(Gaussian {
            mean: [0.0, 0.0, 1.0],
            log_scale: [-1.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: -15.0,
            color: [0.5; 3],
        });
        let mut state = TrainState::new(cloud, &cfg).unwrap();
        assert!(matches!(
            densify_and_prune(&mut state, &cfg),
            Err(Error::DegenerateScene)
        ));
    }

    #[test]
    fn frame_schedule_is_deterministic_and_covers_each_epoch() {
        let n = 7;
        for epoch in 0..3 {
            let mut seen = vec![false; n];
            for k in 0..n {
                let idx = frame_for_iteration(99, epoch * n + k, n);
                seen[idx] = true;
            }
            assert!(seen.iter().all(|&s| s), "epoch {epoch} missed a frame");
        }
        assert_eq!(
            frame_for_iteration(99, 13, n),
            frame_for_iteration(99, 13, n)
        );
    }

    #[test]
    fn evaluate_perfect_render_gives_sentinel_psnr() {
        let cloud = tiny_cloud();
        let cam = CameraView::identity_pose(12.0, 12.0, 6.0, 6.0, 12, 12);
        let rendered = render_forward(&cloud, &cam);
        let frame = TrainFrame {
            image: rendered.color.clone(),
            camera: cam,
            gt_depth: None,
            gt_color: Some(rendered.color.clone()),
        };
        let rec = evaluate(&cloud, None, &[frame]).unwrap();
        assert!(rec.mean_psnr.is_infinite());
        assert_abs_diff_eq!(rec.mean_ssim, 1.0, epsilon = 1e-9);
        assert!(rec.mean_psnr_j.unwrap().is_infinite());
    }

    #[test]
    fn nonfinite_loss_aborts() {
        let cfg = gs_only_config();
        let mut cloud = tiny_cloud();
        cloud.colors_mut()[0] = f64::NAN;
        let mut state = TrainState::new(cloud, &cfg).unwrap();
        assert!(matches!(
            train_step(&mut state, &tiny_frame(), &cfg),
            Err(Error::NonFiniteLoss)
        ));
    }
}
