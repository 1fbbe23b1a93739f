//! Dense float rasters and full-reference image quality metrics.
//!
//! Color images are row-major interleaved RGB in linear intensity with a
//! nominal range of [0, 1] (not clamped). Scalar maps hold one float per
//! pixel and are used for depth, alpha, and gradient magnitudes.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Dense H×W three-channel float image, row-major, RGB interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Dense H×W single-channel float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    /// Constant-color image.
    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::BadDataLength {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &RgbImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        Ok(())
    }

    /// Per-channel means.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        let mut sums = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            sums[0] += px[0];
            sums[1] += px[1];
            sums[2] += px[2];
        }
        [sums[0] / n, sums[1] / n, sums[2] / n]
    }
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadDataLength {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

/// Peak signal-to-noise ratio in decibels, with MAX = 1.0 and the MSE taken
/// over all pixels and channels. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_dims(b)?;
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = *x - *y;
        acc += d * d;
    }
    let mse = acc / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(1.0 / mse))
}

/// SSIM window size (11×11 Gaussian, σ = 1.5).
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
/// Standard SSIM stabilizers for unit dynamic range: C1 = (K1·L)², C2 = (K2·L)².
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 11×11 Gaussian window used by SSIM.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let dy = i as f64 - c;
            let dx = j as f64 - c;
            let v = math::exp(-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
            k[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean structural similarity over sliding 11×11 windows, averaged over the
/// three channels. Requires both images to be at least 11×11.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            min: SSIM_WINDOW,
        });
    }
    let kernel = ssim_kernel();
    let out_w = a.width - SSIM_WINDOW + 1;
    let out_h = a.height - SSIM_WINDOW + 1;
    let mut total = 0.0f64;
    for ch in 0..3 {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let w = kernel[ky * SSIM_WINDOW + kx];
                        let i = ((oy + ky) * a.width + ox + kx) * 3 + ch;
                        let va = a.data[i];
                        let vb = b.data[i];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
            }
        }
    }
    Ok(total / (3 * out_w * out_h) as f64)
}

fn check_not_single_pixel(width: usize, height: usize) -> Result<()> {
    if width < 2 && height < 2 {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: 2,
        });
    }
    Ok(())
}

/// Forward-difference gradients of a scalar map: `gx(x,y) = m(x+1,y) − m(x,y)`
/// with the last column zero, and the `gy` analogue for rows.
pub fn spatial_gradients_map(m: &ScalarMap) -> Result<(ScalarMap, ScalarMap)> {
    check_not_single_pixel(m.width, m.height)?;
    let mut gx = ScalarMap::new(m.width, m.height);
    let mut gy = ScalarMap::new(m.width, m.height);
    for y in 0..m.height {
        for x in 0..m.width {
            if x + 1 < m.width {
                gx.set(x, y, m.get(x + 1, y) - m.get(x, y));
            }
            if y + 1 < m.height {
                gy.set(x, y, m.get(x, y + 1) - m.get(x, y));
            }
        }
    }
    Ok((gx, gy))
}

/// Forward-difference gradient magnitudes of a color image: per pixel, the
/// mean of per-channel absolute differences. Trailing column/row is zero.
pub fn spatial_gradients_rgb(img: &RgbImage) -> Result<(ScalarMap, ScalarMap)> {
    check_not_single_pixel(img.width, img.height)?;
    let mut gx = ScalarMap::new(img.width, img.height);
    let mut gy = ScalarMap::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            if x + 1 < img.width {
                let a = img.pixel(x, y);
                let b = img.pixel(x + 1, y);
                let m = ((b[0] - a[0]).abs() + (b[1] - a[1]).abs() + (b[2] - a[2]).abs()) / 3.0;
                gx.set(x, y, m as f32);
            }
            if y + 1 < img.height {
                let a = img.pixel(x, y);
                let b = img.pixel(x, y + 1);
                let m = ((b[0] - a[0]).abs() + (b[1] - a[1]).abs() + (b[2] - a[2]).abs()) / 3.0;
                gy.set(x, y, m as f32);
            }
        }
    }
    Ok((gx, gy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_image(16, 12, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset_is_20db() {
        // MSE = 0.1² = 0.01 → 10·log10(1/0.01) = 20.
        let a = RgbImage::constant(8, 8, [0.3, 0.3, 0.3]);
        let b = RgbImage::constant(8, 8, [0.4, 0.4, 0.4]);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-5);
    }

    #[test]
    fn psnr_unit_mse_is_zero_db() {
        let a = RgbImage::constant(4, 4, [0.0, 0.0, 0.0]);
        let b = RgbImage::constant(4, 4, [1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_dimension_mismatch_errors() {
        let a = RgbImage::new(4, 4);
        let b = RgbImage::new(4, 5);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let a = random_image(16, 16, 7);
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ssim_constant_zero_vs_one() {
        // Closed form on constant images: μa=0, μb=1, all variances zero →
        // ((0 + C1)(0 + C2)) / ((0 + 1 + C1)(0 + C2)) = C1 / (1 + C1).
        let a = RgbImage::constant(12, 12, [0.0; 3]);
        let b = RgbImage::constant(12, 12, [1.0; 3]);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn ssim_inverted_image_scores_low() {
        let a = random_image(24, 24, 3);
        let mut inv = a.clone();
        for v in inv.data_mut() {
            *v = 1.0 - *v;
        }
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ssim_too_small_errors() {
        let a = RgbImage::new(10, 12);
        assert!(matches!(
            ssim(&a, &a),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gradients_of_constant_are_zero() {
        let m = ScalarMap::constant(5, 4, 2.5);
        let (gx, gy) = spatial_gradients_map(&m).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_forward_difference_1x2() {
        let m = ScalarMap::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let (gx, _gy) = spatial_gradients_map(&m).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0]);
    }

    #[test]
    fn gradients_2x2_hand_values() {
        // [[0,1],[2,3]] → gx = [[1,0],[1,0]], gy = [[2,2],[0,0]].
        let m = ScalarMap::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let (gx, gy) = spatial_gradients_map(&m).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(gy.data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients_single_pixel_errors() {
        let m = ScalarMap::new(1, 1);
        assert!(spatial_gradients_map(&m).is_err());
    }

    #[test]
    fn rgb_gradient_is_mean_abs_channel_diff() {
        let mut img = RgbImage::new(2, 1);
        img.set_pixel(0, 0, [0.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [0.3, -0.3, 0.6]);
        let (gx, _) = spatial_gradients_rgb(&img).unwrap();
        assert_abs_diff_eq!(gx.get(0, 0), 0.4f32, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let a = random_image(12, 12, seed_a);
            let b = random_image(12, 12, seed_b);
            let ab = psnr(&a, &b).unwrap();
            let ba = psnr(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12 || (ab.is_infinite() && ba.is_infinite()));
        }

        #[test]
        fn ssim_self_is_one(seed in 0u64..1000) {
            let a = random_image(14, 13, seed);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
