//! Depth visualization: a fixed perceptually-uniform ramp (viridis control
//! points, linearly interpolated), normalized per image.

use uwsplat_core::image::{RgbImage, ScalarMap};

/// Viridis anchor colors at evenly spaced positions.
const VIRIDIS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.477504, 0.821444, 0.318195],
    [0.993248, 0.906157, 0.143936],
];

fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let a = VIRIDIS[i];
    let b = VIRIDIS[i + 1];
    [
        a[0] + f * (b[0] - a[0]),
        a[1] + f * (b[1] - a[1]),
        a[2] + f * (b[2] - a[2]),
    ]
}

/// Colormap a depth map, normalizing by its own min/max. Returns the image
/// plus the (min, max) used, so raw values stay recoverable from the log.
pub fn depth_to_colormap(depth: &ScalarMap) -> (RgbImage, f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in depth.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    let img = RgbImage::from_fn(depth.width(), depth.height(), |x, y| {
        ramp(((depth.get(x, y) - lo) / span) as f64)
    });
    (img, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_does_not_blow_up() {
        let depth = ScalarMap::constant(4, 4, 2.0);
        let (img, lo, hi) = depth_to_colormap(&depth);
        assert_eq!(lo, 2.0);
        assert_eq!(hi, 2.0);
        assert!(img.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), VIRIDIS[0]);
        assert_eq!(ramp(1.0), VIRIDIS[8]);
    }
}
