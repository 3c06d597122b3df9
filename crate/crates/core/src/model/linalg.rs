//! Row-major dense kernels on plain slices.

use crate::scalar::Scalar;

/// `out = a (m x k) * b (k x n) + bias`, bias broadcast over rows.
pub fn affine<T: Scalar>(a: &[T], b: &[T], bias: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + x * w;
            }
        }
    }
    out
}

/// `out += a^T (m x k)^T * dy (m x n)`, i.e. the weight gradient of `affine`.
pub fn accumulate_at_b<T: Scalar>(a: &[T], dy: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (o, &g) in out[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                *o = *o + x * g;
            }
        }
    }
}

/// `out = dy (m x n) * w^T` where `w` is `k x n`; the input gradient of `affine`.
pub fn mul_bt<T: Scalar>(dy: &[T], w: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(dyr, &w[p * n..(p + 1) * n]);
        }
    }
    out
}

/// Column sums of an `m x n` matrix added into `out`.
pub fn accumulate_col_sums<T: Scalar>(dy: &[T], m: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        for (o, &g) in out.iter_mut().zip(&dy[i * n..(i + 1) * n]) {
            *o = *o + g;
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient through softmax: `dz = p * (dp - <p, dp>)`.
pub fn softmax_backward<T: Scalar>(p: &[T], dp: &[T]) -> Vec<T> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

const GELU_C: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(u: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * u * (T::one() + (k * (u + T::of(GELU_C) * u * u * u)).tanh())
}

pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let t = (k * (u + T::of(GELU_C) * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * k * (T::one() + T::of(3.0 * GELU_C) * u * u)
}
