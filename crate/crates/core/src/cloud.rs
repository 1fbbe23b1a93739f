//! The scene representation: a cloud of anisotropic 3D Gaussians.
//!
//! Parameters are stored pre-activation so optimization is unconstrained:
//! scales as logs (activated by exp), opacity as a logit (activated by a
//! sigmoid). Color is view-independent raw RGB (zero-order spherical
//! harmonics only). Buffers are struct-of-arrays so they can be handed to the
//! autodiff graph as flat leaves.

use alloc::vec::Vec;

use crate::camera::{mat3_mul, mat3_transpose, quat_normalize, quat_to_rot};
use crate::math;

/// One Gaussian, in pre-activation parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    /// World-space mean.
    pub mean: [f64; 3],
    /// Log of the per-axis scale.
    pub log_scale: [f64; 3],
    /// Rotation quaternion (w, x, y, z); normalized on use.
    pub rotation: [f64; 4],
    /// Pre-activation opacity; activated opacity is `sigmoid(opacity)`.
    pub opacity: f64,
    /// View-independent RGB.
    pub color: [f64; 3],
}

/// Opacity activation: sigmoid, nudged inside the open interval so extreme
/// raw values cannot round to exactly 0 or 1.
pub(crate) fn opacity_activation(raw: f64) -> f64 {
    math::sigmoid(raw).clamp(1e-12, 1.0 - 1e-12)
}

impl Gaussian {
    pub fn activated_opacity(&self) -> f64 {
        opacity_activation(self.opacity)
    }

    pub fn scale(&self) -> [f64; 3] {
        [
            math::exp(self.log_scale[0]),
            math::exp(self.log_scale[1]),
            math::exp(self.log_scale[2]),
        ]
    }

    /// World-space covariance Σ = R·diag(s²)·Rᵀ.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = quat_to_rot(&quat_normalize(&self.rotation));
        let s = self.scale();
        let mut rd = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rd[i][j] = r[i][j] * s[j] * s[j];
            }
        }
        mat3_mul(&rd, &mat3_transpose(&r))
    }
}

/// Inverse of the opacity activation, for building a Gaussian with a target
/// activated opacity.
pub fn opacity_logit(activated: f64) -> f64 {
    math::logit(activated)
}

/// Struct-of-arrays Gaussian cloud. All parameter buffers are differentiable
/// leaves during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    means: Vec<f64>,      // 3 per Gaussian
    log_scales: Vec<f64>, // 3 per Gaussian
    rotations: Vec<f64>,  // 4 per Gaussian (w, x, y, z)
    opacities: Vec<f64>,  // 1 per Gaussian, pre-activation
    colors: Vec<f64>,     // 3 per Gaussian
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            means: Vec::with_capacity(3 * n),
            log_scales: Vec::with_capacity(3 * n),
            rotations: Vec::with_capacity(4 * n),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(3 * n),
        }
    }

    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.means.extend_from_slice(&g.mean);
        self.log_scales.extend_from_slice(&g.log_scale);
        self.rotations.extend_from_slice(&g.rotation);
        self.opacities.push(g.opacity);
        self.colors.extend_from_slice(&g.color);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: [
                self.means[3 * i],
                self.means[3 * i + 1],
                self.means[3 * i + 2],
            ],
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
            color: [
                self.colors[3 * i],
                self.colors[3 * i + 1],
                self.colors[3 * i + 2],
            ],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn means_mut(&mut self) -> &mut [f64] {
        &mut self.means
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    pub fn log_scales_mut(&mut self) -> &mut [f64] {
        &mut self.log_scales
    }

    pub fn rotations(&self) -> &[f64] {
        &self.rotations
    }

    pub fn rotations_mut(&mut self) -> &mut [f64] {
        &mut self.rotations
    }

    pub fn opacities(&self) -> &[f64] {
        &self.opacities
    }

    pub fn opacities_mut(&mut self) -> &mut [f64] {
        &mut self.opacities
    }

    pub fn colors(&self) -> &[f64] {
        &self.colors
    }

    pub fn colors_mut(&mut self) -> &mut [f64] {
        &mut self.colors
    }

    /// Keep only the Gaussians at indices where `keep` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.len());
        let mut out = GaussianCloud::with_capacity(keep.iter().filter(|&&k| k).count());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.push(self.get(i));
            }
        }
        *self = out;
    }
}

impl FromIterator<Gaussian> for GaussianCloud {
    fn from_iter<T: IntoIterator<Item = Gaussian>>(iter: T) -> Self {
        let mut cloud = GaussianCloud::new();
        for g in iter {
            cloud.push(g);
        }
        cloud
    }
}
