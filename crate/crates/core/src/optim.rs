//! First/second-moment adaptive gradient updates (Adam) over flat parameter
//! buffers, one state per parameter group.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Moment decay and stabilizer defaults used for every parameter group.
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Adam state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update: `p -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }

    /// Rebuild the state after densification: survivors keep their moments
    /// by original index, new rows start at zero. The step count carries
    /// over.
    pub fn remap(&self, mapping: &[Option<usize>], stride: usize) -> Adam {
        let mut out = Adam::new(mapping.len() * stride);
        out.t = self.t;
        for (new_i, src) in mapping.iter().enumerate() {
            if let Some(old_i) = src {
                for k in 0..stride {
                    out.m[new_i * stride + k] = self.m[old_i * stride + k];
                    out.v[new_i * stride + k] = self.v[old_i * stride + k];
                }
            }
        }
        out
    }

    /// Raw state access for checkpoint serialization.
    pub fn state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restore from checkpointed state.
    pub fn from_state(m: Vec<f64>, v: Vec<f64>, t: u64) -> Self {
        debug_assert_eq!(m.len(), v.len());
        Self {
            m,
            v,
            t,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(x) = Σ (x − c)²; Adam should close most of the gap.
        let target = [1.5, -2.0, 0.3];
        let mut x = [0.0f64; 3];
        let mut adam = Adam::new(3);
        for _ in 0..2000 {
            let grads: Vec<f64> = x.iter().zip(&target).map(|(xi, c)| 2.0 * (xi - c)).collect();
            adam.step(&mut x, &grads, 0.01);
        }
        for (xi, c) in x.iter().zip(&target) {
            assert!((xi - c).abs() < 1e-3, "{xi} vs {c}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut x = [0.7f64, -0.2];
        let mut adam = Adam::new(2);
        adam.step(&mut x, &[0.0, 0.0], 0.1);
        assert_eq!(x, [0.7, -0.2]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With bias correction the first update is lr·sign(g) (ε negligible).
        let mut x = [0.0f64];
        let mut adam = Adam::new(1);
        adam.step(&mut x, &[3.7], 0.05);
        assert!((x[0] + 0.05).abs() < 1e-10);
    }

    #[test]
    fn remap_keeps_survivor_moments() {
        let mut x = [1.0, 2.0, 3.0];
        let mut adam = Adam::new(3);
        adam.step(&mut x, &[0.1, 0.2, 0.3], 0.01);
        // Keep rows 2 and 0 (in that order), then add one fresh row.
        let remapped = adam.remap(&[Some(2), Some(0), None], 1);
        let (m, v, t) = remapped.state();
        let (m0, v0, t0) = adam.state();
        assert_eq!(t, t0);
        assert_eq!(m[0], m0[2]);
        assert_eq!(v[1], v0[0]);
        assert_eq!(m[2], 0.0);
        assert_eq!(v[2], 0.0);
    }
}
