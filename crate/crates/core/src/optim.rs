//! Adam with decoupled weight decay over index ranges of a flat buffer.

use std::ops::Range;

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(num_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update of `params[r]` for every `r` in `ranges`; entries outside
    /// the ranges are neither read nor written.
    pub fn step(&mut self, params: &mut [T], grads: &[T], ranges: &[Range<usize>]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.t as i32));
        let lr = T::of(self.learning_rate);
        let decay = T::one() - T::of(self.learning_rate * self.weight_decay);
        let eps = T::of(self.eps);
        for r in ranges {
            for i in r.clone() {
                let g = grads[i];
                self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
