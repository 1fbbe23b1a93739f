//! Differentiable CPU rasterization of a Gaussian cloud into color, depth,
//! and alpha images.
//!
//! Forward model per pixel x, Gaussians sorted front to back:
//!
//! ```text
//! α_i(x) = min(0.99, o_i · exp(−½ d(x)ᵀ Σ2d⁻¹ d(x)))
//! C(x)   = Σ c_i α_i(x) Π_{j<i} (1 − α_j(x))
//! ```
//!
//! Depth composites the camera-frame z of each Gaussian in place of color and
//! is normalized by the accumulated alpha; the alpha map is the accumulated
//! opacity itself. Accumulation stops once transmittance drops below 1e-4.
//! Contributions with α below [`ALPHA_FLOOR`] count as zero; that floor is
//! part of the contract, which is what lets the tiled path and the
//! brute-force oracle agree to tight tolerance.
//!
//! [`render`] records the rasterization as a custom node on an autodiff
//! graph with hand-written backward rules covering every Gaussian parameter
//! (depth normalization included). [`render_bruteforce`] is the correctness
//! oracle: no tiles, no bounding boxes, no early termination.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::autodiff::{CustomOp, DiffValue, Graph, Shape};
use crate::camera::{mat3_mul_vec, mat3_transpose, quat_normalize, quat_to_rot, CameraView};
use crate::cloud::{Gaussian, GaussianCloud};
use crate::image::{RgbImage, ScalarMap};
use crate::math;
use crate::Result;

/// Gaussians closer than this camera-frame depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass dilation added to the projected covariance diagonal.
pub const COV2D_DILATION: f64 = 0.3;
/// Upper clamp on per-pixel Gaussian opacity.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions with α below this are zero by definition.
pub const ALPHA_FLOOR: f64 = 1e-8;
/// Front-to-back accumulation stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Pixels with accumulated alpha below this get depth 0.
pub const DEPTH_ALPHA_EPS: f64 = 1e-6;

/// Mahalanobis radius of the per-splat bounding box. exp(−6.2²/2) ≈ 4.5e-9,
/// below [`ALPHA_FLOOR`], so the box never cuts off a live contribution.
const BBOX_RADIUS: f64 = 6.2;

const TILE: usize = 16;

/// Result of projecting one Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    pub mean2d: [f64; 2],
    /// 2×2 screen-space covariance (after dilation).
    pub cov2d: [[f64; 2]; 2],
    pub z_cam: f64,
}

/// EWA projection of a single Gaussian. Returns `None` when the center is
/// behind the near plane (the Gaussian is culled, not an error).
pub fn project(g: &Gaussian, cam: &CameraView) -> Option<Projected> {
    let t = cam.world_to_camera(g.mean);
    if t[2] <= NEAR_PLANE {
        return None;
    }
    let (mean2d, cov2d) = project_parts(&t, &g.covariance(), cam);
    Some(Projected {
        mean2d,
        cov2d,
        z_cam: t[2],
    })
}

/// Shared projection math: screen mean and dilated 2×2 covariance from the
/// camera-frame center `t` and world covariance Σ.
fn project_parts(t: &[f64; 3], sigma: &[[f64; 3]; 3], cam: &CameraView) -> ([f64; 2], [[f64; 2]; 2]) {
    let iz = 1.0 / t[2];
    let mean2d = [cam.fx * t[0] * iz + cam.cx, cam.fy * t[1] * iz + cam.cy];
    // M = W Σ Wᵀ in the camera frame.
    let w = &cam.rot;
    let mut ws = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                ws[i][j] += w[i][k] * sigma[k][j];
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                m[i][j] += ws[i][k] * w[j][k];
            }
        }
    }
    // Perspective Jacobian at t.
    let j = jacobian(t, cam);
    // cov = J M Jᵀ + dilation.
    let mut jm = [[0.0; 3]; 2];
    for r in 0..2 {
        for cidx in 0..3 {
            for k in 0..3 {
                jm[r][cidx] += j[r][k] * m[k][cidx];
            }
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for cidx in 0..2 {
            for k in 0..3 {
                cov[r][cidx] += jm[r][k] * j[cidx][k];
            }
        }
    }
    cov[0][0] += COV2D_DILATION;
    cov[1][1] += COV2D_DILATION;
    (mean2d, cov)
}

fn jacobian(t: &[f64; 3], cam: &CameraView) -> [[f64; 3]; 2] {
    let iz = 1.0 / t[2];
    let iz2 = iz * iz;
    [
        [cam.fx * iz, 0.0, -cam.fx * t[0] * iz2],
        [0.0, cam.fy * iz, -cam.fy * t[1] * iz2],
    ]
}

/// A projected Gaussian prepared for rasterization.
struct Splat {
    orig: usize,
    mean2d: [f64; 2],
    /// Inverse of cov2d, symmetric: [a, b; b, c] stored as (a, b, c).
    conic: [f64; 3],
    z: f64,
    opacity: f64,
    color: [f64; 3],
    // Inclusive pixel bounds of the 6.2σ footprint, clipped to the image.
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Borrowed view over the five parameter buffers of a cloud.
#[derive(Clone, Copy)]
struct CloudRef<'a> {
    means: &'a [f64],
    log_scales: &'a [f64],
    rotations: &'a [f64],
    opacities: &'a [f64],
    colors: &'a [f64],
}

impl<'a> CloudRef<'a> {
    fn from_cloud(cloud: &'a GaussianCloud) -> Self {
        Self {
            means: cloud.means(),
            log_scales: cloud.log_scales(),
            rotations: cloud.rotations(),
            opacities: cloud.opacities(),
            colors: cloud.colors(),
        }
    }

    fn len(&self) -> usize {
        self.opacities.len()
    }

    fn gaussian(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: [self.means[3 * i], self.means[3 * i + 1], self.means[3 * i + 2]],
            log_scale: [
                self.log_scales[3 * i],
                self.log_scales[3 * i + 1],
                self.log_scales[3 * i + 2],
            ],
            rotation: [
                self.rotations[4 * i],
                self.rotations[4 * i + 1],
                self.rotations[4 * i + 2],
                self.rotations[4 * i + 3],
            ],
            opacity: self.opacities[i],
            color: [self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2]],
        }
    }
}

/// Project all Gaussians, cull, and sort front to back (ties broken by
/// storage index). With `keep_offscreen` (oracle mode) Gaussians whose
/// footprint misses the image are kept in the iteration order.
fn build_splats(cloud: &CloudRef<'_>, cam: &CameraView, keep_offscreen: bool) -> Vec<Splat> {
    let mut splats = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let g = cloud.gaussian(i);
        let Some(p) = project(&g, cam) else { continue };
        let a = p.cov2d[0][0];
        let b = p.cov2d[0][1];
        let c = p.cov2d[1][1];
        let det = a * c - b * b;
        if det <= 0.0 {
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let rx = BBOX_RADIUS * math::sqrt(a);
        let ry = BBOX_RADIUS * math::sqrt(c);
        let x0f = math::floor(p.mean2d[0] - rx);
        let x1f = math::floor(p.mean2d[0] + rx) + 1.0;
        let y0f = math::floor(p.mean2d[1] - ry);
        let y1f = math::floor(p.mean2d[1] + ry) + 1.0;
        let inside = x1f >= 0.0
            && y1f >= 0.0
            && x0f < cam.width as f64
            && y0f < cam.height as f64;
        if !inside && !keep_offscreen {
            continue;
        }
        let x0 = x0f.max(0.0) as usize;
        let y0 = y0f.max(0.0) as usize;
        let x1 = (x1f.max(0.0) as usize).min(cam.width.saturating_sub(1));
        let y1 = (y1f.max(0.0) as usize).min(cam.height.saturating_sub(1));
        splats.push(Splat {
            orig: i,
            mean2d: p.mean2d,
            conic,
            z: p.z_cam,
            opacity: crate::cloud::opacity_activation(g.opacity),
            color: g.color,
            x0,
            x1,
            y0,
            y1,
        });
    }
    splats.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.orig.cmp(&b.orig)));
    splats
}

/// α of `splat` at pixel center `p`, or `None` when it is below the floor.
#[inline]
fn splat_alpha(splat: &Splat, px: f64, py: f64) -> Option<(f64, f64)> {
    let dx = px - splat.mean2d[0];
    let dy = py - splat.mean2d[1];
    let power = -0.5 * (splat.conic[0] * dx * dx + splat.conic[2] * dy * dy)
        - splat.conic[1] * dx * dy;
    if power > 0.0 {
        return None;
    }
    let gexp = math::exp(power);
    let raw = splat.opacity * gexp;
    if raw < ALPHA_FLOOR {
        return None;
    }
    Some((raw.min(ALPHA_CLAMP), gexp))
}

struct RasterBuffers {
    color: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
}

fn tile_bins(splats: &[Splat], width: usize, height: usize) -> (usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let tx0 = s.x0 / TILE;
        let tx1 = s.x1 / TILE;
        let ty0 = s.y0 / TILE;
        let ty1 = s.y1 / TILE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    (tiles_x, bins)
}

fn raster_forward(
    splats: &[Splat],
    width: usize,
    height: usize,
    bruteforce: bool,
) -> RasterBuffers {
    let mut out = RasterBuffers {
        color: vec![0.0; width * height * 3],
        depth: vec![0.0; width * height],
        alpha: vec![0.0; width * height],
    };
    if splats.is_empty() {
        return out;
    }
    let binned = if bruteforce {
        None
    } else {
        Some(tile_bins(splats, width, height))
    };

    let mut all: Vec<u32> = Vec::new();
    if bruteforce {
        all = (0..splats.len() as u32).collect();
    }

    for y in 0..height {
        for x in 0..width {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let candidates: &[u32] = match &binned {
                Some((tiles_x, bins)) => &bins[(y / TILE) * tiles_x + x / TILE],
                None => &all,
            };
            let mut t = 1.0f64;
            let mut color = [0.0f64; 3];
            let mut draw = 0.0f64;
            let mut acc_alpha = 0.0f64;
            for &si in candidates {
                let s = &splats[si as usize];
                if !bruteforce && (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) {
                    continue;
                }
                let Some((alpha, _)) = splat_alpha(s, px, py) else {
                    continue;
                };
                let wgt = alpha * t;
                color[0] += wgt * s.color[0];
                color[1] += wgt * s.color[1];
                color[2] += wgt * s.color[2];
                draw += wgt * s.z;
                acc_alpha += wgt;
                t *= 1.0 - alpha;
                if !bruteforce && t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            let pi = y * width + x;
            out.color[pi * 3] = color[0];
            out.color[pi * 3 + 1] = color[1];
            out.color[pi * 3 + 2] = color[2];
            out.alpha[pi] = acc_alpha;
            out.depth[pi] = if acc_alpha >= DEPTH_ALPHA_EPS {
                draw / acc_alpha
            } else {
                0.0
            };
        }
    }
    out
}

/// Plain (non-differentiable) forward render of a cloud.
pub struct RenderedImages {
    pub color: RgbImage,
    pub depth: ScalarMap,
    pub alpha: ScalarMap,
}

fn buffers_to_images(b: RasterBuffers, width: usize, height: usize) -> RenderedImages {
    RenderedImages {
        color: RgbImage::from_vec(width, height, b.color).expect("sized above"),
        depth: ScalarMap::from_vec(width, height, b.depth.iter().map(|&v| v as f32).collect())
            .expect("sized above"),
        alpha: ScalarMap::from_vec(width, height, b.alpha.iter().map(|&v| v as f32).collect())
            .expect("sized above"),
    }
}

/// Forward render with tiling and early termination. An empty (or fully
/// culled) cloud yields all-zero images.
pub fn render_forward(cloud: &GaussianCloud, cam: &CameraView) -> RenderedImages {
    let cref = CloudRef::from_cloud(cloud);
    let splats = build_splats(&cref, cam, false);
    buffers_to_images(
        raster_forward(&splats, cam.width, cam.height, false),
        cam.width,
        cam.height,
    )
}

/// Correctness oracle: every pixel accumulates over every non-culled
/// Gaussian in depth order, with no early termination and no spatial
/// shortcuts beyond behind-camera culling.
pub fn render_bruteforce(cloud: &GaussianCloud, cam: &CameraView) -> RenderedImages {
    let cref = CloudRef::from_cloud(cloud);
    let splats = build_splats(&cref, cam, true);
    buffers_to_images(
        raster_forward(&splats, cam.width, cam.height, true),
        cam.width,
        cam.height,
    )
}

/// The cloud's parameter buffers as graph leaves.
pub struct CloudNodes {
    pub means: DiffValue,
    pub log_scales: DiffValue,
    pub rotations: DiffValue,
    pub opacities: DiffValue,
    pub colors: DiffValue,
}

impl CloudNodes {
    pub fn from_cloud(graph: &Graph, cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            means: graph.leaf(Shape::new(n, 3, 1), cloud.means().to_vec()),
            log_scales: graph.leaf(Shape::new(n, 3, 1), cloud.log_scales().to_vec()),
            rotations: graph.leaf(Shape::new(n, 4, 1), cloud.rotations().to_vec()),
            opacities: graph.leaf(Shape::new(n, 1, 1), cloud.opacities().to_vec()),
            colors: graph.leaf(Shape::new(n, 3, 1), cloud.colors().to_vec()),
        }
    }
}

/// Per-Gaussian statistics gathered during backward, used by densification.
#[derive(Debug, Clone)]
pub struct RenderStats {
    /// Accumulated screen-space positional gradient norm, in NDC units
    /// (pixel gradients scaled by max(width, height)/2).
    pub pos_grad_ndc: Vec<f64>,
    /// Whether the Gaussian survived culling for this view.
    pub visible: Vec<bool>,
}

/// Differentiable render outputs plus the densification stats handle.
pub struct RenderOutputs {
    pub color: DiffValue,
    pub depth: DiffValue,
    pub alpha: DiffValue,
    pub stats: Rc<RefCell<RenderStats>>,
}

struct RenderOp {
    cam: CameraView,
    n: usize,
    stats: Rc<RefCell<RenderStats>>,
}

/// Differentiable render: records a custom node whose backward reaches every
/// Gaussian parameter through compositing, depth normalization, and the EWA
/// projection.
pub fn render(nodes: &CloudNodes, cam: &CameraView) -> Result<RenderOutputs> {
    let graph = nodes.means.graph();
    let n = nodes.opacities.shape().h;
    let means = nodes.means.values();
    let log_scales = nodes.log_scales.values();
    let rotations = nodes.rotations.values();
    let opacities = nodes.opacities.values();
    let colors = nodes.colors.values();
    let cref = CloudRef {
        means: &means,
        log_scales: &log_scales,
        rotations: &rotations,
        opacities: &opacities,
        colors: &colors,
    };
    let splats = build_splats(&cref, cam, false);
    let mut visible = vec![false; n];
    for s in &splats {
        visible[s.orig] = true;
    }
    let stats = Rc::new(RefCell::new(RenderStats {
        pos_grad_ndc: vec![0.0; n],
        visible,
    }));
    let bufs = raster_forward(&splats, cam.width, cam.height, false);
    let op = Rc::new(RenderOp {
        cam: cam.clone(),
        n,
        stats: stats.clone(),
    });
    let mut outs = graph.custom(
        &[
            &nodes.means,
            &nodes.log_scales,
            &nodes.rotations,
            &nodes.opacities,
            &nodes.colors,
        ],
        vec![
            (Shape::new(cam.height, cam.width, 3), bufs.color),
            (Shape::new(cam.height, cam.width, 1), bufs.depth),
            (Shape::new(cam.height, cam.width, 1), bufs.alpha),
        ],
        op,
    )?;
    let alpha = outs.pop().expect("three outputs");
    let depth = outs.pop().expect("three outputs");
    let color = outs.pop().expect("three outputs");
    Ok(RenderOutputs {
        color,
        depth,
        alpha,
        stats,
    })
}

/// Per-splat gradient accumulator for one backward sweep.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    /// Gradient of the symmetric conic: (d00, d01 = d10, d11).
    conic: [f64; 3],
    z: f64,
    color: [f64; 3],
    opacity_act: f64,
    touched: bool,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "splat_render"
    }

    fn backward(
        &self,
        out_index: usize,
        out_grad: &[f64],
        parent_values: &[&[f64]],
    ) -> Vec<Vec<f64>> {
        let cref = CloudRef {
            means: parent_values[0],
            log_scales: parent_values[1],
            rotations: parent_values[2],
            opacities: parent_values[3],
            colors: parent_values[4],
        };
        let cam = &self.cam;
        let width = cam.width;
        let height = cam.height;
        let splats = build_splats(&cref, cam, false);

        let mut gmeans = vec![0.0; 3 * self.n];
        let mut glog_scales = vec![0.0; 3 * self.n];
        let mut grotations = vec![0.0; 4 * self.n];
        let mut gopacities = vec![0.0; self.n];
        let mut gcolors = vec![0.0; 3 * self.n];

        if splats.is_empty() {
            return vec![gmeans, glog_scales, grotations, gopacities, gcolors];
        }

        let mut sgrads = vec![SplatGrad::default(); splats.len()];
        let (tiles_x, bins) = tile_bins(&splats, width, height);

        // Replay of the forward per-pixel chain: (splat index, alpha, weight).
        let mut chain: Vec<(u32, f64, f64)> = Vec::with_capacity(64);

        for y in 0..height {
            for x in 0..width {
                let pi = y * width + x;
                // Upstream gradient payload: (color rgb, raw depth sum, alpha).
                let mut g_color = [0.0f64; 3];
                let mut g_draw = 0.0f64;
                let mut g_acc_alpha = 0.0f64;

                chain.clear();
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let mut t = 1.0f64;
                let mut draw = 0.0f64;
                let mut acc_alpha = 0.0f64;
                for &si in &bins[(y / TILE) * tiles_x + x / TILE] {
                    let s = &splats[si as usize];
                    if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
                        continue;
                    }
                    let Some((alpha, _)) = splat_alpha(s, px, py) else {
                        continue;
                    };
                    let wgt = alpha * t;
                    chain.push((si, alpha, wgt));
                    draw += wgt * s.z;
                    acc_alpha += wgt;
                    t *= 1.0 - alpha;
                    if t < TRANSMITTANCE_EPS {
                        break;
                    }
                }
                if chain.is_empty() {
                    continue;
                }

                match out_index {
                    0 => {
                        g_color = [
                            out_grad[pi * 3],
                            out_grad[pi * 3 + 1],
                            out_grad[pi * 3 + 2],
                        ];
                    }
                    1 => {
                        // depth = draw / acc_alpha (zero below the alpha gate).
                        let gd = out_grad[pi];
                        if acc_alpha >= DEPTH_ALPHA_EPS && gd != 0.0 {
                            g_draw = gd / acc_alpha;
                            g_acc_alpha = -gd * draw / (acc_alpha * acc_alpha);
                        }
                    }
                    _ => {
                        g_acc_alpha = out_grad[pi];
                    }
                }
                if g_color == [0.0; 3] && g_draw == 0.0 && g_acc_alpha == 0.0 {
                    continue;
                }

                // Reverse scan over the composited chain. For payload u_i and
                // weight w_i = α_i T_i: d/dα_i = T_i·(g·u_i) − g_T(i+1)·T_i,
                // with the transmittance adjoint g_T(i) = α_i (g·u_i) +
                // g_T(i+1)(1−α_i).
                let mut g_t_next = 0.0f64;
                for &(si, alpha, wgt) in chain.iter().rev() {
                    let s = &splats[si as usize];
                    let t_i = wgt / alpha;
                    let dot = g_color[0] * s.color[0]
                        + g_color[1] * s.color[1]
                        + g_color[2] * s.color[2]
                        + g_draw * s.z
                        + g_acc_alpha;
                    let sg = &mut sgrads[si as usize];
                    sg.touched = true;
                    sg.color[0] += g_color[0] * wgt;
                    sg.color[1] += g_color[1] * wgt;
                    sg.color[2] += g_color[2] * wgt;
                    sg.z += g_draw * wgt;
                    let d_alpha = t_i * dot - g_t_next * t_i;
                    g_t_next = alpha * dot + g_t_next * (1.0 - alpha);

                    // α = min(0.99, o·G): zero subgradient on the clamp.
                    let dx = px - s.mean2d[0];
                    let dy = py - s.mean2d[1];
                    let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy)
                        - s.conic[1] * dx * dy;
                    let gexp = math::exp(power);
                    if s.opacity * gexp > ALPHA_CLAMP {
                        continue;
                    }
                    sg.opacity_act += gexp * d_alpha;
                    let d_power = s.opacity * gexp * d_alpha;
                    // power = −½ dᵀ Y d with Y the conic; conic[1] holds the
                    // per-entry gradient of the (equal) off-diagonal terms.
                    sg.conic[0] += -0.5 * dx * dx * d_power;
                    sg.conic[1] += -0.5 * dx * dy * d_power;
                    sg.conic[2] += -0.5 * dy * dy * d_power;
                    // dL/d(mean2d) = +d_power · (Y d).
                    let yd_x = s.conic[0] * dx + s.conic[1] * dy;
                    let yd_y = s.conic[1] * dx + s.conic[2] * dy;
                    sg.mean2d[0] += d_power * yd_x;
                    sg.mean2d[1] += d_power * yd_y;
                }
            }
        }

        // Chain per-splat gradients through projection into the parameter
        // buffers.
        let ndc_scale = 0.5 * width.max(height) as f64;
        let mut stats = self.stats.borrow_mut();
        for (s, sg) in splats.iter().zip(&sgrads) {
            if !sg.touched {
                continue;
            }
            stats.pos_grad_ndc[s.orig] += ndc_scale
                * math::sqrt(sg.mean2d[0] * sg.mean2d[0] + sg.mean2d[1] * sg.mean2d[1]);
            project_backward(
                &cref,
                cam,
                s,
                sg,
                &mut gmeans,
                &mut glog_scales,
                &mut grotations,
                &mut gopacities,
                &mut gcolors,
            );
        }

        vec![gmeans, glog_scales, grotations, gopacities, gcolors]
    }
}

/// Backward through EWA projection for one splat: from gradients on
/// (mean2d, conic, z, color, activated opacity) to the five raw parameter
/// buffers.
#[allow(clippy::too_many_arguments)]
fn project_backward(
    cref: &CloudRef<'_>,
    cam: &CameraView,
    s: &Splat,
    sg: &SplatGrad,
    gmeans: &mut [f64],
    glog_scales: &mut [f64],
    grotations: &mut [f64],
    gopacities: &mut [f64],
    gcolors: &mut [f64],
) {
    let i = s.orig;
    let g = cref.gaussian(i);

    // Color is raw RGB.
    gcolors[3 * i] += sg.color[0];
    gcolors[3 * i + 1] += sg.color[1];
    gcolors[3 * i + 2] += sg.color[2];

    // Opacity through the sigmoid.
    let o = s.opacity;
    gopacities[i] += sg.opacity_act * o * (1.0 - o);

    // Recompute forward projection intermediates.
    let t = cam.world_to_camera(g.mean);
    let iz = 1.0 / t[2];
    let iz2 = iz * iz;
    let w = &cam.rot;
    let qn = quat_normalize(&g.rotation);
    let rq = quat_to_rot(&qn);
    let sc = g.scale();
    // Σ = R D Rᵀ with D = diag(s²).
    let mut rd = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            rd[r][c] = rq[r][c] * sc[c] * sc[c];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                sigma[r][c] += rd[r][k] * rq[c][k];
            }
        }
    }
    // M = W Σ Wᵀ.
    let mut wsig = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                wsig[r][c] += w[r][k] * sigma[k][c];
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                m[r][c] += wsig[r][k] * w[c][k];
            }
        }
    }
    let j = jacobian(&t, cam);

    // Conic → cov2d: Y = C⁻¹ so dL/dC = −Y G_Y Y.
    let y = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
    let gy = [[sg.conic[0], sg.conic[1]], [sg.conic[1], sg.conic[2]]];
    let mut ygy = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for k in 0..2 {
                ygy[r][c] += y[r][k] * gy[k][c];
            }
        }
    }
    let mut gcov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for k in 0..2 {
                gcov[r][c] -= ygy[r][k] * y[k][c];
            }
        }
    }

    // cov = J M Jᵀ + dilation: dM = Jᵀ gcov J, dJ = 2 gcov J M.
    let mut gm = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for p in 0..2 {
                for q in 0..2 {
                    gm[r][c] += j[p][r] * gcov[p][q] * j[q][c];
                }
            }
        }
    }
    let mut jm = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            for k in 0..3 {
                jm[r][c] += j[r][k] * m[k][c];
            }
        }
    }
    let mut gj = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            for k in 0..2 {
                gj[r][c] += 2.0 * gcov[r][k] * jm[k][c];
            }
        }
    }

    // Gradient into the camera-frame center t.
    let mut gt = [0.0f64; 3];
    // From the Jacobian entries.
    gt[0] += gj[0][2] * (-cam.fx * iz2);
    gt[1] += gj[1][2] * (-cam.fy * iz2);
    gt[2] += gj[0][0] * (-cam.fx * iz2)
        + gj[1][1] * (-cam.fy * iz2)
        + gj[0][2] * (2.0 * cam.fx * t[0] * iz2 * iz)
        + gj[1][2] * (2.0 * cam.fy * t[1] * iz2 * iz);
    // From the projected mean.
    gt[0] += sg.mean2d[0] * cam.fx * iz;
    gt[1] += sg.mean2d[1] * cam.fy * iz;
    gt[2] += -sg.mean2d[0] * cam.fx * t[0] * iz2 - sg.mean2d[1] * cam.fy * t[1] * iz2;
    // From the composited depth.
    gt[2] += sg.z;

    // μ gradient: t = W μ + t_cam.
    let gmu = mat3_mul_vec(&mat3_transpose(w), &gt);
    gmeans[3 * i] += gmu[0];
    gmeans[3 * i + 1] += gmu[1];
    gmeans[3 * i + 2] += gmu[2];

    // M = W Σ Wᵀ → dΣ = Wᵀ gm W.
    let mut gsigma = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for p in 0..3 {
                for q in 0..3 {
                    gsigma[r][c] += w[p][r] * gm[p][q] * w[q][c];
                }
            }
        }
    }

    // Σ = R D Rᵀ: dR = 2 gsigma (R D), dD = Rᵀ gsigma R (diagonal); rd
    // already holds R D.
    let mut grot_mat = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                grot_mat[r][c] += 2.0 * gsigma[r][k] * rd[k][c];
            }
        }
    }
    let mut gdiag = [0.0f64; 3];
    for (k, gd) in gdiag.iter_mut().enumerate() {
        let mut acc = 0.0;
        for p in 0..3 {
            for q in 0..3 {
                acc += rq[p][k] * gsigma[p][q] * rq[q][k];
            }
        }
        *gd = acc;
    }
    // D_kk = s_k², s_k = exp(ls_k) → dL/dls_k = 2 s_k² dD_kk.
    for k in 0..3 {
        glog_scales[3 * i + k] += 2.0 * sc[k] * sc[k] * gdiag[k];
    }

    // Rotation matrix → normalized quaternion partials.
    let (qw, qx, qy, qz) = (qn[0], qn[1], qn[2], qn[3]);
    let dr = &grot_mat;
    let gq = [
        2.0 * (qz * (dr[1][0] - dr[0][1])
            + qy * (dr[0][2] - dr[2][0])
            + qx * (dr[2][1] - dr[1][2])),
        2.0 * (qy * (dr[0][1] + dr[1][0])
            + qz * (dr[0][2] + dr[2][0])
            - 2.0 * qx * (dr[1][1] + dr[2][2])
            + qw * (dr[2][1] - dr[1][2])),
        2.0 * (qx * (dr[0][1] + dr[1][0])
            + qz * (dr[1][2] + dr[2][1])
            - 2.0 * qy * (dr[0][0] + dr[2][2])
            + qw * (dr[0][2] - dr[2][0])),
        2.0 * (qx * (dr[0][2] + dr[2][0])
            + qy * (dr[1][2] + dr[2][1])
            - 2.0 * qz * (dr[0][0] + dr[1][1])
            + qw * (dr[1][0] - dr[0][1])),
    ];
    // Normalization chain: q = q̃/‖q̃‖ → dq̃ = (gq − (gq·q) q)/‖q̃‖.
    let qraw = g.rotation;
    let norm = math::sqrt(
        qraw[0] * qraw[0] + qraw[1] * qraw[1] + qraw[2] * qraw[2] + qraw[3] * qraw[3],
    );
    let dot = gq[0] * qw + gq[1] * qx + gq[2] * qy + gq[3] * qz;
    for k in 0..4 {
        grotations[4 * i + k] += (gq[k] - dot * qn[k]) / norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_gaussian(mean: [f64; 3], opacity_act: f64, color: [f64; 3], log_scale: f64) -> Gaussian {
        Gaussian {
            mean,
            log_scale: [log_scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: crate::cloud::opacity_logit(opacity_act),
            color,
        }
    }

    #[test]
    fn project_on_axis_point() {
        let cam = CameraView::identity_pose(100.0, 100.0, 50.0, 50.0, 100, 100);
        let g = unit_gaussian([0.0, 0.0, 1.0], 0.5, [1.0; 3], -3.0);
        let p = project(&g, &cam).unwrap();
        assert_abs_diff_eq!(p.mean2d[0], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mean2d[1], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z_cam, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn project_isotropic_covariance_on_axis() {
        // Isotropic Σ = σ²I at z = 1 with f = 100 → cov2d ≈ (100σ)²·I + 0.3·I.
        let sigma = 0.01;
        let cam = CameraView::identity_pose(100.0, 100.0, 50.0, 50.0, 100, 100);
        let g = unit_gaussian([0.0, 0.0, 1.0], 0.5, [1.0; 3], math::ln(sigma));
        let p = project(&g, &cam).unwrap();
        let expect = (100.0 * sigma) * (100.0 * sigma) + COV2D_DILATION;
        assert_abs_diff_eq!(p.cov2d[0][0], expect, epsilon = 1e-9);
        assert_abs_diff_eq!(p.cov2d[1][1], expect, epsilon = 1e-9);
        assert_abs_diff_eq!(p.cov2d[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn project_culls_behind_camera() {
        let cam = CameraView::identity_pose(100.0, 100.0, 50.0, 50.0, 100, 100);
        let g = unit_gaussian([0.0, 0.0, -1.0], 0.5, [1.0; 3], -3.0);
        assert!(project(&g, &cam).is_none());
    }

    /// 16×16 camera whose pixel (8,8) center is exactly on the optical axis.
    fn test_cam() -> CameraView {
        CameraView::identity_pose(100.0, 100.0, 8.5, 8.5, 16, 16)
    }

    #[test]
    fn single_gaussian_centered_on_pixel() {
        // Activated opacity 0.5, color 0.8, centered on the pixel → the
        // pixel reads color 0.40, alpha 0.5 (exp(0) = 1).
        let mut cloud = GaussianCloud::new();
        cloud.push(unit_gaussian([0.0, 0.0, 1.0], 0.5, [0.8; 3], -4.0));
        let out = render_forward(&cloud, &test_cam());
        let c = out.color.pixel(8, 8);
        assert_abs_diff_eq!(c[0], 0.40, epsilon = 1e-6);
        assert_abs_diff_eq!(out.alpha.get(8, 8), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(out.depth.get(8, 8), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn two_stacked_gaussians_composite() {
        // Two identical stacked → color 0.8·0.5 + 0.8·0.5·0.5 = 0.60,
        // alpha 0.75.
        let mut cloud = GaussianCloud::new();
        cloud.push(unit_gaussian([0.0, 0.0, 1.0], 0.5, [0.8; 3], -4.0));
        cloud.push(unit_gaussian([0.0, 0.0, 1.2], 0.5, [0.8; 3], -4.0));
        let out = render_forward(&cloud, &test_cam());
        let c = out.color.pixel(8, 8);
        assert_abs_diff_eq!(c[1], 0.60, epsilon = 1e-6);
        assert_abs_diff_eq!(out.alpha.get(8, 8), 0.75, epsilon = 1e-6);
    }

    #[test]
    fn empty_scene_renders_zeros() {
        let cloud = GaussianCloud::new();
        let out = render_forward(&cloud, &test_cam());
        assert!(out.color.data().iter().all(|&v| v == 0.0));
        assert!(out.alpha.data().iter().all(|&v| v == 0.0));
        assert!(out.depth.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_gaussian_matches_bruteforce_bitwise() {
        let mut cloud = GaussianCloud::new();
        cloud.push(unit_gaussian([0.05, -0.03, 1.0], 0.7, [0.3, 0.5, 0.9], -3.5));
        let cam = test_cam();
        let a = render_forward(&cloud, &cam);
        let b = render_bruteforce(&cloud, &cam);
        for (x, y) in a.color.data().iter().zip(b.color.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn depth_of_opaque_gaussian_reads_z() {
        let mut cloud = GaussianCloud::new();
        cloud.push(unit_gaussian([0.0, 0.0, 2.0], 0.999, [1.0; 3], -2.0));
        let out = render_forward(&cloud, &test_cam());
        assert_abs_diff_eq!(out.depth.get(8, 8) as f64, 2.0, epsilon = 1e-5);
    }

    #[test]
    fn storage_permutation_leaves_images_unchanged() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cam = test_cam();
        let gaussians: alloc::vec::Vec<Gaussian> = (0..20)
            .map(|k| {
                unit_gaussian(
                    [
                        (k as f64 * 0.013) - 0.1,
                        (k as f64 * 0.007) - 0.05,
                        1.0 + 0.1 * k as f64,
                    ],
                    0.3 + 0.02 * k as f64,
                    [0.1 * (k % 10) as f64, 0.5, 0.9 - 0.02 * k as f64],
                    -3.0,
                )
            })
            .collect();
        let cloud_a: GaussianCloud = gaussians.iter().copied().collect();
        let mut shuffled = gaussians.clone();
        shuffled.shuffle(&mut rng);
        let cloud_b: GaussianCloud = shuffled.into_iter().collect();
        let a = render_forward(&cloud_a, &cam);
        let b = render_forward(&cloud_b, &cam);
        for (x, y) in a.color.data().iter().zip(b.color.data()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-6);
        }
        for (x, y) in a.depth.data().iter().zip(b.depth.data()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-6);
        }
    }

    #[test]
    fn alpha_equals_one_minus_transmittance() {
        // Per pixel, accumulated alpha = 1 − final transmittance.
        let mut cloud = GaussianCloud::new();
        for k in 0..5 {
            cloud.push(unit_gaussian(
                [0.01 * k as f64, 0.0, 1.0 + 0.2 * k as f64],
                0.6,
                [0.5; 3],
                -2.5,
            ));
        }
        let cam = test_cam();
        let out = render_forward(&cloud, &cam);
        for &a in out.alpha.data() {
            assert!((0.0..=1.0 + 1e-6).contains(&(a as f64)));
        }
    }

    #[test]
    fn shared_color_cloud_is_bounded_by_color() {
        let mut cloud = GaussianCloud::new();
        for k in 0..8 {
            cloud.push(unit_gaussian(
                [0.02 * k as f64 - 0.08, 0.01 * k as f64, 1.0 + 0.1 * k as f64],
                0.9,
                [0.25, 0.5, 0.75],
                -2.0,
            ));
        }
        let out = render_forward(&cloud, &test_cam());
        for px in out.color.data().chunks_exact(3) {
            assert!(px[0] <= 0.25 + 1e-6);
            assert!(px[1] <= 0.5 + 1e-6);
            assert!(px[2] <= 0.75 + 1e-6);
        }
    }

    #[test]
    fn graph_render_matches_plain_forward() {
        let mut cloud = GaussianCloud::new();
        cloud.push(unit_gaussian([0.0, 0.0, 1.0], 0.5, [0.8; 3], -3.0));
        cloud.push(unit_gaussian([0.05, 0.02, 1.5], 0.7, [0.2, 0.4, 0.6], -2.8));
        let cam = test_cam();
        let plain = render_forward(&cloud, &cam);
        let graph = Graph::new();
        let nodes = CloudNodes::from_cloud(&graph, &cloud);
        let out = render(&nodes, &cam).unwrap();
        let color = out.color.to_rgb_image();
        for (a, b) in color.data().iter().zip(plain.color.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-7);
        }
    }
}
