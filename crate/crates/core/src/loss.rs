//! The seven training loss terms and their weighted total.
//!
//! Gradient-flow contracts, enforced here rather than left to callers:
//!
//! - the backscatter term sees only a depth-detached B̂, so its gradient
//!   touches the medium parameters and never the Gaussian cloud;
//! - the depth-weighted reconstruction term uses a depth-detached Î and a
//!   detached weight, so its gradient w.r.t. the rendered depth is exactly
//!   zero;
//! - the smoothness term's image-gradient weights are constants (the captured
//!   image is data);
//! - the background term's color-similarity indicator is a constant mask
//!   recomputed from the current B∞, which receives no gradient through it.

use alloc::vec::Vec;

use crate::autodiff::{DiffValue, Shape};
use crate::image::{self, RgbImage};
use crate::math;
use crate::medium::{self, MediumNodes};
use crate::{Error, Result};

/// Loss hyperparameters and per-term weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// λ blending L1 and D-SSIM inside the reconstruction term.
    pub lambda_dssim: f64,
    /// Penalty factor on negative direct-image values; must be > 1.
    pub k_bs: f64,
    /// Saturation hinge threshold.
    pub t_sat: f64,
    /// Squared color distance below which a pixel counts as water column.
    pub t_sim: f64,
    /// Use the paper's literal signed form of the backscatter loss instead
    /// of the bounded |min| penalty.
    pub literal_backscatter: bool,
    pub w_gs: f64,
    pub w_bs: f64,
    pub w_gw: f64,
    pub w_sat: f64,
    pub w_op: f64,
    pub w_zsmooth: f64,
    pub w_zrecon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            k_bs: 5.0,
            t_sat: 0.7,
            t_sim: 0.02,
            literal_backscatter: false,
            w_gs: 1.0,
            w_bs: 1.0,
            w_gw: 1.0,
            w_sat: 1.0,
            w_op: 1.0,
            w_zsmooth: 1.0,
            w_zrecon: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_bs <= 1.0 {
            return Err(Error::InvalidConfig("k_bs must be > 1"));
        }
        if !(self.t_sat > 0.0 && self.t_sat < 1.0) {
            return Err(Error::InvalidConfig("t_sat must lie in (0, 1)"));
        }
        let weights = [
            self.w_gs,
            self.w_bs,
            self.w_gw,
            self.w_sat,
            self.w_op,
            self.w_zsmooth,
            self.w_zrecon,
        ];
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be >= 0"));
        }
        Ok(())
    }
}

/// Differentiable mean SSIM between two H×W×3 nodes, built from windowed
/// convolutions (11×11 Gaussian, σ = 1.5) and elementwise graph ops.
pub fn ssim_graph(a: &DiffValue, b: &DiffValue) -> Result<DiffValue> {
    let sa = a.shape();
    let sb = b.shape();
    if sa != sb {
        return Err(Error::ShapeMismatch {
            left: sa,
            right: sb,
        });
    }
    if sa.h < image::SSIM_WINDOW || sa.w < image::SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: sa.w,
            height: sa.h,
            min: image::SSIM_WINDOW,
        });
    }
    let kernel = image::ssim_kernel();
    let k = image::SSIM_WINDOW;
    let conv = |v: &DiffValue| v.conv2d_valid(&kernel, k, k);
    let mu_a = conv(a)?;
    let mu_b = conv(b)?;
    let mu_aa = mu_a.mul(&mu_a)?;
    let mu_bb = mu_b.mul(&mu_b)?;
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = conv(&a.mul(a)?)?.sub(&mu_aa)?;
    let var_b = conv(&b.mul(b)?)?.sub(&mu_bb)?;
    let cov = conv(&a.mul(b)?)?.sub(&mu_ab)?;
    let num = mu_ab
        .mul_const(2.0)
        .add_const(image::SSIM_C1)
        .mul(&cov.mul_const(2.0).add_const(image::SSIM_C2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_const(image::SSIM_C1)
        .mul(&var_a.add(&var_b)?.add_const(image::SSIM_C2))?;
    Ok(num.div(&den)?.mean())
}

/// Reconstruction loss: (1−λ)·L1 + λ·(1 − SSIM)/2 against the captured image.
pub fn loss_gs(rendered: &DiffValue, target: &RgbImage, lambda: f64) -> Result<DiffValue> {
    let shape = rendered.shape();
    if shape.h != target.height() || shape.w != target.width() || shape.c != 3 {
        return Err(Error::DimensionMismatch {
            expected: (shape.w, shape.h),
            got: (target.width(), target.height()),
        });
    }
    let g = rendered.graph();
    let target_node = g.input_image(target);
    let l1 = rendered.sub(&target_node)?.abs().mean();
    if lambda == 0.0 {
        return Ok(l1);
    }
    let ssim = ssim_graph(rendered, &target_node)?;
    let dssim = ssim.neg().add_const(1.0).mul_const(0.5);
    l1.mul_const(1.0 - lambda).add(&dssim.mul_const(lambda))
}

/// Dark-channel-style backscatter loss on D̂ = I − B̂, with B̂ computed from
/// the detached depth so no gradient reaches the cloud.
///
/// Default form: Σ max(D̂, 0) + k·|min(D̂, 0)| — a penalty on negative
/// direct-image values. The literal signed form Σ max(D̂, 0) + k·min(D̂, 0)
/// is unbounded below under minimization and kept behind `literal` for
/// fidelity experiments.
pub fn loss_backscatter(
    captured: &RgbImage,
    z_hat: &DiffValue,
    m: &MediumNodes,
    k: f64,
    literal: bool,
) -> Result<DiffValue> {
    let g = z_hat.graph();
    let b_hat = medium::backscatter_graph(m, &z_hat.detach())?;
    let direct = g.input_image(captured).sub(&b_hat)?;
    let pos = direct.max_with_const(0.0).sum();
    let neg = direct.min_with_const(0.0);
    let neg_term = if literal {
        neg.sum().mul_const(k)
    } else {
        neg.abs().sum().mul_const(k)
    };
    pos.add(&neg_term)
}

/// Gray-world prior: mean over channels of (channel mean − 0.5)².
pub fn loss_grayworld(j_hat: &DiffValue) -> DiffValue {
    let dev = j_hat.mean_per_channel().add_const(-0.5);
    dev.mul(&dev).expect("same shape").mean()
}

/// Saturation hinge: Σ max(Ĵ − T_sat, 0) over pixels and channels.
pub fn loss_saturation(j_hat: &DiffValue, t_sat: f64) -> DiffValue {
    j_hat.add_const(-t_sat).max_with_const(0.0).sum()
}

/// Depth-weighted reconstruction Σ |Z_detach · (I − Î)|, broadcasting the
/// depth across channels. `i_hat_zdet` must be the reconstruction composed
/// from the *detached* depth; together with the detached weight this makes
/// the term's gradient w.r.t. the rendered depth exactly zero.
pub fn loss_depth_weighted_recon(
    captured: &RgbImage,
    i_hat_zdet: &DiffValue,
    z_hat: &DiffValue,
) -> Result<DiffValue> {
    let g = i_hat_zdet.graph();
    let diff = g.input_image(captured).sub(i_hat_zdet)?;
    let weighted = diff.mul(&z_hat.detach())?;
    Ok(weighted.abs().sum())
}

/// Edge-aware depth smoothness: Σ e^(−∇I)|∇Ẑ| per axis, with the image
/// gradient magnitudes entering as constants.
pub fn loss_depth_smooth(captured: &RgbImage, z_hat: &DiffValue) -> Result<DiffValue> {
    let shape = z_hat.shape();
    if shape.h != captured.height() || shape.w != captured.width() {
        return Err(Error::DimensionMismatch {
            expected: (shape.w, shape.h),
            got: (captured.width(), captured.height()),
        });
    }
    let (gx, gy) = image::spatial_gradients_rgb(captured)?;
    let g = z_hat.graph();
    let wx: Vec<f64> = gx.data().iter().map(|&v| math::exp(-(v as f64))).collect();
    let wy: Vec<f64> = gy.data().iter().map(|&v| math::exp(-(v as f64))).collect();
    let wx = g.constant(Shape::new(shape.h, shape.w, 1), wx);
    let wy = g.constant(Shape::new(shape.h, shape.w, 1), wy);
    let tx = wx.mul(&z_hat.dx().abs())?.sum();
    let ty = wy.mul(&z_hat.dy().abs())?.sum();
    tx.add(&ty)
}

/// Background suppression: Σ α(i,j) over pixels whose captured color is
/// within `t_sim` squared Euclidean distance of B∞. The indicator is a
/// constant mask; the gradient reaches the alpha mask only.
pub fn loss_opacity_background(
    captured: &RgbImage,
    alpha: &DiffValue,
    b_inf: [f64; 3],
    t_sim: f64,
) -> Result<DiffValue> {
    let shape = alpha.shape();
    if shape.h != captured.height() || shape.w != captured.width() {
        return Err(Error::DimensionMismatch {
            expected: (shape.w, shape.h),
            got: (captured.width(), captured.height()),
        });
    }
    let g = alpha.graph();
    let mask: Vec<f64> = captured
        .data()
        .chunks_exact(3)
        .map(|px| {
            let d0 = px[0] - b_inf[0];
            let d1 = px[1] - b_inf[1];
            let d2 = px[2] - b_inf[2];
            if d0 * d0 + d1 * d1 + d2 * d2 < t_sim {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mask = g.constant(Shape::new(shape.h, shape.w, 1), mask);
    Ok(alpha.mul(&mask)?.sum())
}

/// Everything the total loss consumes for one frame.
pub struct LossInputs<'a> {
    /// Captured (in-medium) image I.
    pub captured: &'a RgbImage,
    /// Rendered true-color image Ĵ.
    pub j_hat: &'a DiffValue,
    /// Rendered depth Ẑ.
    pub z_hat: &'a DiffValue,
    /// Rendered alpha mask.
    pub alpha: &'a DiffValue,
    /// Medium parameters; `None` ablates the medium entirely (Â = 1, B̂ = 0),
    /// reducing training to vanilla splatting with the reconstruction term
    /// alone.
    pub medium: Option<&'a MediumNodes>,
}

/// Raw (unweighted) values of each term plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub gs: f64,
    pub bs: f64,
    pub gw: f64,
    pub sat: f64,
    pub op: f64,
    pub zsmooth: f64,
    pub zrecon: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.gs,
            self.bs,
            self.gw,
            self.sat,
            self.op,
            self.zsmooth,
            self.zrecon,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Result of [`total_loss`]: the scalar node to backpropagate, the live
/// reconstruction Î, and the per-term breakdown.
pub struct TotalLoss {
    pub value: DiffValue,
    pub composed: DiffValue,
    pub breakdown: LossBreakdown,
}

/// Weighted sum of the seven terms. With all weights 1 this reproduces the
/// unweighted sum; terms with zero weight are skipped entirely.
pub fn total_loss(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let graph = inputs.j_hat.graph();
    let composed = match inputs.medium {
        Some(m) => medium::compose_graph(inputs.j_hat, inputs.z_hat, m)?,
        None => inputs.j_hat.clone(),
    };

    let mut breakdown = LossBreakdown::default();
    let mut total = graph.scalar_const(0.0);
    let mut add_term = |term: DiffValue, weight: f64, slot: &mut f64| -> Result<()> {
        *slot = term.value_scalar();
        total = total.add(&term.mul_const(weight))?;
        Ok(())
    };

    if cfg.w_gs > 0.0 {
        let term = loss_gs(&composed, inputs.captured, cfg.lambda_dssim)?;
        add_term(term, cfg.w_gs, &mut breakdown.gs)?;
    }

    if let Some(m) = inputs.medium {
        if cfg.w_bs > 0.0 {
            let term = loss_backscatter(
                inputs.captured,
                inputs.z_hat,
                m,
                cfg.k_bs,
                cfg.literal_backscatter,
            )?;
            add_term(term, cfg.w_bs, &mut breakdown.bs)?;
        }
        if cfg.w_gw > 0.0 {
            let term = loss_grayworld(inputs.j_hat);
            add_term(term, cfg.w_gw, &mut breakdown.gw)?;
        }
        if cfg.w_sat > 0.0 {
            let term = loss_saturation(inputs.j_hat, cfg.t_sat);
            add_term(term, cfg.w_sat, &mut breakdown.sat)?;
        }
        if cfg.w_op > 0.0 {
            let b_inf = m.params().b_inf();
            let term = loss_opacity_background(inputs.captured, inputs.alpha, b_inf, cfg.t_sim)?;
            add_term(term, cfg.w_op, &mut breakdown.op)?;
        }
        if cfg.w_zsmooth > 0.0 {
            let term = loss_depth_smooth(inputs.captured, inputs.z_hat)?;
            add_term(term, cfg.w_zsmooth, &mut breakdown.zsmooth)?;
        }
        if cfg.w_zrecon > 0.0 {
            let i_hat_zdet = medium::compose_graph(inputs.j_hat, &inputs.z_hat.detach(), m)?;
            let term = loss_depth_weighted_recon(inputs.captured, &i_hat_zdet, inputs.z_hat)?;
            add_term(term, cfg.w_zrecon, &mut breakdown.zrecon)?;
        }
    }

    breakdown.total = total.value_scalar();
    Ok(TotalLoss {
        value: total,
        composed,
        breakdown,
    })
}
