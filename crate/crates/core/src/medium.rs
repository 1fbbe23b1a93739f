//! Underwater image formation: attenuation, backscatter, composition,
//! and algebraic inversion.
//!
//! The forward model per pixel and channel is
//!
//! ```text
//! I = J · e^(−β_D · Z) + B∞ · (1 − e^(−β_B · Z))
//! ```
//!
//! with per-channel attenuation β_D and backscatter β_B rates (1/meter) and
//! the water color at infinity B∞. The nine unknowns are stored
//! pre-activation (softplus for the rates, sigmoid for B∞) so optimization is
//! unconstrained while the physics stays valid. The per-channel coefficients
//! are applied as a broadcast of a 3-vector against the depth raster.
//!
//! Every operation exists in two forms: plain functions on image containers
//! (for datasets, evaluation, and the CLI) and graph functions on
//! [`DiffValue`]s (for training).

use crate::autodiff::{DiffValue, Graph, Shape};
use crate::image::{RgbImage, ScalarMap};
use crate::math;
use crate::{Error, Result};

/// The nine medium unknowns, stored pre-activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumParams {
    pub beta_d_raw: [f64; 3],
    pub beta_b_raw: [f64; 3],
    pub b_inf_raw: [f64; 3],
}

impl MediumParams {
    /// Build from activated (physical) values: β > 0, B∞ ∈ (0, 1).
    pub fn from_activated(beta_d: [f64; 3], beta_b: [f64; 3], b_inf: [f64; 3]) -> Self {
        Self {
            beta_d_raw: beta_d.map(math::softplus_inv),
            beta_b_raw: beta_b.map(math::softplus_inv),
            b_inf_raw: b_inf.map(math::logit),
        }
    }

    /// Attenuation rates after the positivity mapping.
    pub fn beta_d(&self) -> [f64; 3] {
        self.beta_d_raw.map(math::softplus)
    }

    /// Backscatter rates after the positivity mapping.
    pub fn beta_b(&self) -> [f64; 3] {
        self.beta_b_raw.map(math::softplus)
    }

    /// Water color at infinity, in (0, 1) per channel.
    pub fn b_inf(&self) -> [f64; 3] {
        self.b_inf_raw.map(math::sigmoid)
    }

    /// Training initialization: β_D = β_B = 1, B∞ = (0.2, 0.3, 0.4) —
    /// plausible oceanic range; there is no published initialization to
    /// inherit.
    pub fn default_init() -> Self {
        Self::from_activated([1.0; 3], [1.0; 3], [0.2, 0.3, 0.4])
    }

    /// Nearly transparent water: β ≈ 0 and a dim B∞. Composing through this
    /// leaves images essentially unchanged.
    pub fn near_zero_effect() -> Self {
        Self::from_activated([1e-4; 3], [1e-4; 3], [0.2, 0.3, 0.4])
    }

    /// Flattened raw parameters (β_D, β_B, B∞), the optimizer's view.
    pub fn to_raw_vec(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[0..3].copy_from_slice(&self.beta_d_raw);
        out[3..6].copy_from_slice(&self.beta_b_raw);
        out[6..9].copy_from_slice(&self.b_inf_raw);
        out
    }

    pub fn from_raw_vec(raw: &[f64]) -> Self {
        Self {
            beta_d_raw: [raw[0], raw[1], raw[2]],
            beta_b_raw: [raw[3], raw[4], raw[5]],
            b_inf_raw: [raw[6], raw[7], raw[8]],
        }
    }
}

/// Synthetic degradation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediumPreset {
    /// β_D = (2.6, 2.4, 1.8), β_B = (1.9, 1.7, 1.4), B∞ = (0.07, 0.2, 0.39).
    Water,
    /// β_D = β_B = 2.4 on all channels with a bright achromatic airlight.
    Fog,
}

impl MediumPreset {
    pub fn params(self) -> MediumParams {
        match self {
            MediumPreset::Water => MediumParams::from_activated(
                [2.6, 2.4, 1.8],
                [1.9, 1.7, 1.4],
                [0.07, 0.2, 0.39],
            ),
            MediumPreset::Fog => MediumParams::from_activated([2.4; 3], [2.4; 3], [0.8; 3]),
        }
    }
}

fn check_depth(z: &ScalarMap) -> Result<()> {
    if z.data().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeDepth);
    }
    Ok(())
}

fn check_dims(img: &RgbImage, z: &ScalarMap) -> Result<()> {
    if img.width() != z.width() || img.height() != z.height() {
        return Err(Error::DimensionMismatch {
            expected: (img.width(), img.height()),
            got: (z.width(), z.height()),
        });
    }
    Ok(())
}

/// Â = e^(−β_D · Z) per channel.
pub fn attenuation_map(p: &MediumParams, z: &ScalarMap) -> Result<RgbImage> {
    check_depth(z)?;
    let beta = p.beta_d();
    let mut out = RgbImage::new(z.width(), z.height());
    for (px, &depth) in out.data_mut().chunks_exact_mut(3).zip(z.data()) {
        for c in 0..3 {
            px[c] = math::exp(-beta[c] * depth as f64);
        }
    }
    Ok(out)
}

/// B̂ = B∞ · (1 − e^(−β_B · Z)) per channel.
pub fn backscatter_image(p: &MediumParams, z: &ScalarMap) -> Result<RgbImage> {
    check_depth(z)?;
    let beta = p.beta_b();
    let binf = p.b_inf();
    let mut out = RgbImage::new(z.width(), z.height());
    for (px, &depth) in out.data_mut().chunks_exact_mut(3).zip(z.data()) {
        for c in 0..3 {
            px[c] = binf[c] * (1.0 - math::exp(-beta[c] * depth as f64));
        }
    }
    Ok(out)
}

/// Î = Ĵ·Â + B̂ pixelwise per channel.
pub fn compose(j: &RgbImage, z: &ScalarMap, p: &MediumParams) -> Result<RgbImage> {
    check_dims(j, z)?;
    check_depth(z)?;
    let beta_d = p.beta_d();
    let beta_b = p.beta_b();
    let binf = p.b_inf();
    let mut out = RgbImage::new(j.width(), j.height());
    for ((px, jp), &depth) in out
        .data_mut()
        .chunks_exact_mut(3)
        .zip(j.data().chunks_exact(3))
        .zip(z.data())
    {
        let zd = depth as f64;
        for c in 0..3 {
            let att = math::exp(-beta_d[c] * zd);
            let bs = binf[c] * (1.0 - math::exp(-beta_b[c] * zd));
            px[c] = jp[c] * att + bs;
        }
    }
    Ok(out)
}

/// Floor on the attenuation denominator in [`restore`].
pub const RESTORE_ATTENUATION_FLOOR: f64 = 1e-6;

/// Exact inversion J = (I − B̂) / max(Â, 1e-6), unclamped.
pub fn restore(i: &RgbImage, z: &ScalarMap, p: &MediumParams) -> Result<RgbImage> {
    check_dims(i, z)?;
    check_depth(z)?;
    let beta_d = p.beta_d();
    let beta_b = p.beta_b();
    let binf = p.b_inf();
    let mut out = RgbImage::new(i.width(), i.height());
    for ((px, ip), &depth) in out
        .data_mut()
        .chunks_exact_mut(3)
        .zip(i.data().chunks_exact(3))
        .zip(z.data())
    {
        let zd = depth as f64;
        for c in 0..3 {
            let att = math::exp(-beta_d[c] * zd).max(RESTORE_ATTENUATION_FLOOR);
            let bs = binf[c] * (1.0 - math::exp(-beta_b[c] * zd));
            px[c] = (ip[c] - bs) / att;
        }
    }
    Ok(out)
}

/// [`restore`] clamped to [0, 2] for display paths.
pub fn restore_clamped(i: &RgbImage, z: &ScalarMap, p: &MediumParams) -> Result<RgbImage> {
    let mut out = restore(i, z, p)?;
    for v in out.data_mut() {
        *v = v.clamp(0.0, 2.0);
    }
    Ok(out)
}

/// The medium parameters as three 1×1×3 graph leaves.
pub struct MediumNodes {
    pub beta_d_raw: DiffValue,
    pub beta_b_raw: DiffValue,
    pub b_inf_raw: DiffValue,
}

impl MediumNodes {
    pub fn from_params(graph: &Graph, p: &MediumParams) -> Self {
        Self {
            beta_d_raw: graph.leaf(Shape::new(1, 1, 3), p.beta_d_raw.to_vec()),
            beta_b_raw: graph.leaf(Shape::new(1, 1, 3), p.beta_b_raw.to_vec()),
            b_inf_raw: graph.leaf(Shape::new(1, 1, 3), p.b_inf_raw.to_vec()),
        }
    }

    pub fn beta_d(&self) -> DiffValue {
        self.beta_d_raw.softplus()
    }

    pub fn beta_b(&self) -> DiffValue {
        self.beta_b_raw.softplus()
    }

    pub fn b_inf(&self) -> DiffValue {
        self.b_inf_raw.sigmoid()
    }

    /// Current parameter record (for serialization or the indicator mask).
    pub fn params(&self) -> MediumParams {
        let bd = self.beta_d_raw.values();
        let bb = self.beta_b_raw.values();
        let bi = self.b_inf_raw.values();
        MediumParams {
            beta_d_raw: [bd[0], bd[1], bd[2]],
            beta_b_raw: [bb[0], bb[1], bb[2]],
            b_inf_raw: [bi[0], bi[1], bi[2]],
        }
    }
}

fn check_depth_node(z: &DiffValue) -> Result<()> {
    if z.values().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeDepth);
    }
    Ok(())
}

/// Differentiable Â = e^(−β_D · Z): H×W×1 depth against the 1×1×3 rate
/// vector broadcasts to H×W×3.
pub fn attenuation_graph(m: &MediumNodes, z: &DiffValue) -> Result<DiffValue> {
    check_depth_node(z)?;
    Ok(m.beta_d().mul(z)?.neg().exp())
}

/// Differentiable B̂ = B∞ · (1 − e^(−β_B · Z)).
pub fn backscatter_graph(m: &MediumNodes, z: &DiffValue) -> Result<DiffValue> {
    check_depth_node(z)?;
    let decay = m.beta_b().mul(z)?.neg().exp();
    m.b_inf().mul(&decay.neg().add_const(1.0))
}

/// Differentiable Î = Ĵ·Â + B̂.
pub fn compose_graph(j: &DiffValue, z: &DiffValue, m: &MediumNodes) -> Result<DiffValue> {
    let att = attenuation_graph(m, z)?;
    let bs = backscatter_graph(m, z)?;
    j.mul(&att)?.add(&bs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, GradProbe};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simwater() -> MediumParams {
        MediumPreset::Water.params()
    }

    #[test]
    fn preset_activations_roundtrip() {
        let p = simwater();
        let bd = p.beta_d();
        assert_abs_diff_eq!(bd[0], 2.6, epsilon = 1e-10);
        assert_abs_diff_eq!(bd[1], 2.4, epsilon = 1e-10);
        assert_abs_diff_eq!(bd[2], 1.8, epsilon = 1e-10);
        let bi = p.b_inf();
        assert_abs_diff_eq!(bi[0], 0.07, epsilon = 1e-10);
        assert_abs_diff_eq!(bi[2], 0.39, epsilon = 1e-10);
    }

    #[test]
    fn attenuation_at_zero_depth_is_one() {
        let z = ScalarMap::constant(4, 3, 0.0);
        let a = attenuation_map(&simwater(), &z).unwrap();
        assert!(a.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn attenuation_simwater_unit_depth() {
        // exp(−2.6), exp(−2.4), exp(−1.8).
        let z = ScalarMap::constant(2, 2, 1.0);
        let a = attenuation_map(&simwater(), &z).unwrap();
        let px = a.pixel(0, 0);
        assert_abs_diff_eq!(px[0], 0.0743, epsilon = 1e-4);
        assert_abs_diff_eq!(px[1], 0.0907, epsilon = 1e-4);
        assert_abs_diff_eq!(px[2], 0.1653, epsilon = 1e-4);
    }

    #[test]
    fn attenuation_decays_monotonically() {
        let p = simwater();
        let mut prev = [1.0f64; 3];
        for step in 1..40 {
            let z = ScalarMap::constant(1, 1, step as f32 * 0.5);
            let a = attenuation_map(&p, &z).unwrap();
            let px = a.pixel(0, 0);
            for c in 0..3 {
                assert!(px[c] < prev[c]);
                prev[c] = px[c];
            }
        }
        assert!(prev.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn attenuation_rejects_negative_depth() {
        let z = ScalarMap::from_vec(1, 1, alloc::vec![-0.5]).unwrap();
        assert!(matches!(
            attenuation_map(&simwater(), &z),
            Err(Error::NegativeDepth)
        ));
    }

    #[test]
    fn backscatter_at_zero_depth_is_zero() {
        let z = ScalarMap::constant(3, 3, 0.0);
        let b = backscatter_image(&simwater(), &z).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backscatter_simwater_unit_depth() {
        // B∞ · (1 − exp(−β_B)): (0.0595, 0.1635, 0.2938).
        let z = ScalarMap::constant(1, 1, 1.0);
        let b = backscatter_image(&simwater(), &z).unwrap();
        let px = b.pixel(0, 0);
        assert_abs_diff_eq!(px[0], 0.0595, epsilon = 1e-4);
        assert_abs_diff_eq!(px[1], 0.1635, epsilon = 1e-4);
        assert_abs_diff_eq!(px[2], 0.2938, epsilon = 1e-4);
    }

    #[test]
    fn backscatter_saturates_to_b_inf() {
        let z = ScalarMap::constant(1, 1, 100.0);
        let b = backscatter_image(&simwater(), &z).unwrap();
        let binf = simwater().b_inf();
        let px = b.pixel(0, 0);
        for c in 0..3 {
            assert_abs_diff_eq!(px[c], binf[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_at_zero_depth_is_identity() {
        let j = RgbImage::constant(3, 2, [0.3, 0.6, 0.9]);
        let z = ScalarMap::constant(3, 2, 0.0);
        let i = compose(&j, &z, &simwater()).unwrap();
        for (a, b) in i.data().iter().zip(j.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn compose_white_frame_simwater_unit_depth() {
        // Sum of the attenuation and backscatter examples:
        // (0.1338, 0.2542, 0.4591).
        let j = RgbImage::constant(2, 2, [1.0, 1.0, 1.0]);
        let z = ScalarMap::constant(2, 2, 1.0);
        let i = compose(&j, &z, &simwater()).unwrap();
        let px = i.pixel(1, 1);
        assert_abs_diff_eq!(px[0], 0.1338, epsilon = 1e-4);
        assert_abs_diff_eq!(px[1], 0.2542, epsilon = 1e-4);
        assert_abs_diff_eq!(px[2], 0.4591, epsilon = 1e-4);
    }

    #[test]
    fn compose_approaches_b_inf_at_large_depth() {
        let j = RgbImage::constant(1, 1, [1.0, 0.0, 0.5]);
        let z = ScalarMap::constant(1, 1, 80.0);
        let i = compose(&j, &z, &simwater()).unwrap();
        let binf = simwater().b_inf();
        let px = i.pixel(0, 0);
        for c in 0..3 {
            assert_abs_diff_eq!(px[c], binf[c], epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_monotone_toward_b_inf_matched_rates() {
        // With β_D = β_B the composed value is an exact exponential blend
        // J·e^(−βz) + B∞(1−e^(−βz)), monotone toward B∞ for any J.
        let p = MediumPreset::Fog.params();
        let binf = p.b_inf();
        for &jval in &[0.0, 0.3, 0.95] {
            let j = RgbImage::constant(1, 1, [jval; 3]);
            let mut prev_dist = [f64::INFINITY; 3];
            for k in 0..30 {
                let z = ScalarMap::constant(1, 1, k as f32 * 0.3);
                let i = compose(&j, &z, &p).unwrap();
                let px = i.pixel(0, 0);
                for c in 0..3 {
                    let d = (px[c] - binf[c]).abs();
                    assert!(d <= prev_dist[c] + 1e-12);
                    prev_dist[c] = d;
                }
            }
        }
    }

    #[test]
    fn compose_monotone_toward_b_inf_water_before_crossing() {
        // With β_D > β_B the composed value crosses B∞ at
        // z* = ln(B∞)/(β_B − β_D); monotone approach holds until then
        // (earliest channel: green at z* ≈ 2.30 for the water preset).
        let p = simwater();
        let binf = p.b_inf();
        let j = RgbImage::constant(1, 1, [1.0, 1.0, 1.0]);
        let mut prev_dist = [f64::INFINITY; 3];
        for k in 0..23 {
            let z = ScalarMap::constant(1, 1, k as f32 * 0.1);
            let i = compose(&j, &z, &p).unwrap();
            let px = i.pixel(0, 0);
            for c in 0..3 {
                let d = (px[c] - binf[c]).abs();
                assert!(d <= prev_dist[c] + 1e-12);
                prev_dist[c] = d;
            }
        }
    }

    #[test]
    fn restore_inverts_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = simwater();
        let j = RgbImage::from_fn(8, 6, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        });
        let z =
            ScalarMap::from_vec(8, 6, (0..48).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let i = compose(&j, &z, &p).unwrap();
        let back = restore(&i, &z, &p).unwrap();
        for (a, b) in back.data().iter().zip(j.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn restore_at_zero_depth_is_identity() {
        let i = RgbImage::constant(2, 2, [0.2, 0.5, 0.8]);
        let z = ScalarMap::constant(2, 2, 0.0);
        let r = restore(&i, &z, &simwater()).unwrap();
        for (a, b) in r.data().iter().zip(i.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn restore_clamps_veiled_pixels_for_display() {
        // At extreme range I = B∞; the floored division explodes, and the
        // display variant clamps to [0, 2].
        let p = simwater();
        let binf = p.b_inf();
        let i = RgbImage::constant(1, 1, binf);
        let z = ScalarMap::constant(1, 1, 200.0);
        let r = restore_clamped(&i, &z, &p).unwrap();
        let px = r.pixel(0, 0);
        for c in 0..3 {
            assert!((0.0..=2.0).contains(&px[c]));
        }
    }

    #[test]
    fn graph_compose_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = simwater();
        let j = RgbImage::from_fn(5, 4, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        });
        let z =
            ScalarMap::from_vec(5, 4, (0..20).map(|_| rng.gen_range(0.0..2.5)).collect()).unwrap();
        let plain = compose(&j, &z, &p).unwrap();

        let g = Graph::new();
        let m = MediumNodes::from_params(&g, &p);
        let jn = g.input_image(&j);
        let zn = g.input_map(&z);
        let composed = compose_graph(&jn, &zn, &m).unwrap();
        let img = composed.to_rgb_image();
        for (a, b) in img.data().iter().zip(plain.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-7);
        }
    }

    #[test]
    fn compose_gradients_pass_finite_difference() {
        // Mean squared composition error against a fixed target; each of the
        // three raw parameter groups is probed separately.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j = RgbImage::from_fn(6, 5, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        });
        let z =
            ScalarMap::from_vec(6, 5, (0..30).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap();
        let target = compose(&j, &z, &MediumPreset::Water.params()).unwrap();

        for group in 0..3 {
            let p0 = MediumParams::default_init();
            let group_vals = match group {
                0 => p0.beta_d_raw.to_vec(),
                1 => p0.beta_b_raw.to_vec(),
                _ => p0.b_inf_raw.to_vec(),
            };
            let err = finite_diff_check(
                |vals| {
                    let mut p = MediumParams::default_init();
                    match group {
                        0 => p.beta_d_raw.copy_from_slice(vals),
                        1 => p.beta_b_raw.copy_from_slice(vals),
                        _ => p.b_inf_raw.copy_from_slice(vals),
                    }
                    let g = Graph::new();
                    let m = MediumNodes::from_params(&g, &p);
                    let jn = g.input_image(&j);
                    let zn = g.input_map(&z);
                    let composed = compose_graph(&jn, &zn, &m).unwrap();
                    let diff = composed.sub(&g.input_image(&target)).unwrap();
                    let loss = diff.mul(&diff).unwrap().mean();
                    let param = match group {
                        0 => m.beta_d_raw,
                        1 => m.beta_b_raw,
                        _ => m.b_inf_raw,
                    };
                    GradProbe { loss, param }
                },
                &group_vals,
                1e-4,
            );
            assert!(err < 1e-4, "group {group}: rel err {err:.3e}");
        }
    }
}
