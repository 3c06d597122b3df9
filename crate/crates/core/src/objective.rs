//! Training objective: verbalizer-averaged cross-entropy on original and
//! augmented questions plus a symmetric KL consistency term.
//!
//! ```text
//! l_i   = -(1/|L|) sum_{l in L} log p_i[M_l(y_i)]
//! L_O   = mean_i l_i(original),  L_A = mean_i l_i(augmented)
//! L_KLD = mean_i KL(p_i^o || p_i^a) + KL(p_i^a || p_i^o)
//! total = w_O L_O + w_A L_A + w_KLD L_KLD
//! ```
//!
//! Probabilities are floored at [`PROB_FLOOR`] before every log or ratio.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::MaskDistribution;
use crate::scalar::Scalar;
use crate::verbalizer::MultilingualVerbalizer;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub original: f64,
    pub augmented: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            original: 1.0,
            augmented: 1.0,
            consistency: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(original: f64, augmented: f64, consistency: f64) -> Result<Self> {
        let w = LossWeights {
            original,
            augmented,
            consistency,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("original", self.original),
            ("augmented", self.augmented),
            ("consistency", self.consistency),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight `{name}` must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// True when the augmented view contributes nothing to the loss.
    pub fn ignores_augmented(&self) -> bool {
        self.augmented == 0.0 && self.consistency == 0.0
    }
}

/// Support over which the consistency divergence is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KlSupport {
    #[default]
    FullVocabulary,
    /// Answer ids of every verbalizer, renormalized.
    VerbalizerUnion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub original: T,
    pub augmented: T,
    pub consistency: T,
    pub total: T,
}

fn floor<T: Scalar>() -> T {
    T::of(PROB_FLOOR)
}

/// `(vocab index, weight)` pairs of the indicator sum; every language
/// contributes `1/|L|`.
fn ce_targets<T: Scalar>(label: Label, mv: &MultilingualVerbalizer) -> Vec<(usize, T)> {
    let w = T::one() / T::of(mv.len() as f64);
    mv.iter().map(|v| (v.index(label) as usize, w)).collect()
}

/// Loss of one question and its gradient with respect to the probabilities,
/// scaled by `scale`.
fn instance_ce_grad<T: Scalar>(probs: &[T], label: Label, mv: &MultilingualVerbalizer, scale: T) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for (j, w) in ce_targets::<T>(label, mv) {
        let p = probs[j];
        loss = loss - w * p.max(floor()).ln();
        if p > floor() {
            grad[j] = grad[j] - scale * w / p;
        }
    }
    (loss, grad)
}

pub fn instance_ce<T: Scalar>(dist: &MaskDistribution<T>, label: Label, mv: &MultilingualVerbalizer) -> T {
    ce_targets::<T>(label, mv)
        .into_iter()
        .fold(T::zero(), |acc, (j, w)| acc - w * dist.probs[j].max(floor()).ln())
}

pub fn batch_ce<T: Scalar>(dists: &[MaskDistribution<T>], labels: &[Label], mv: &MultilingualVerbalizer) -> Result<T> {
    if dists.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: dists.len(),
            found: labels.len(),
        });
    }
    if dists.is_empty() {
        return Err(Error::Invalid("batch must contain at least one question".into()));
    }
    let sum = dists
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (d, &l)| acc + instance_ce(d, l, mv));
    Ok(sum / T::of(dists.len() as f64))
}

/// `sum (p - q)(ln p - ln q)` and its partials, each scaled by `scale`.
fn sym_kl_grad<T: Scalar>(p: &[T], q: &[T], scale: T) -> (T, Vec<T>, Vec<T>) {
    let fl = floor::<T>();
    let mut value = T::zero();
    let mut dp = vec![T::zero(); p.len()];
    let mut dq = vec![T::zero(); q.len()];
    for j in 0..p.len() {
        let pc = p[j].max(fl);
        let qc = q[j].max(fl);
        let log_ratio = pc.ln() - qc.ln();
        value = value + (pc - qc) * log_ratio;
        if p[j] > fl {
            dp[j] = scale * (log_ratio + T::one() - qc / pc);
        }
        if q[j] > fl {
            dq[j] = scale * (-log_ratio + T::one() - pc / qc);
        }
    }
    (value, dp, dq)
}

/// `KL(p||q) + KL(q||p)`.
pub fn kl_consistency<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(sym_kl_grad(p, q, T::one()).0)
}

fn restrict<T: Scalar>(p: &[T], support: &[u32]) -> (Vec<T>, T) {
    let sub: Vec<T> = support.iter().map(|&i| p[i as usize]).collect();
    let s = sub.iter().copied().fold(T::zero(), |a, b| a + b);
    (sub.into_iter().map(|v| v / s).collect(), s)
}

/// Maps a gradient on the renormalized subvector back to the full vector.
fn unrestrict<T: Scalar>(g_sub: &[T], p_sub: &[T], s: T, support: &[u32], n: usize) -> Vec<T> {
    let inner = g_sub.iter().zip(p_sub).fold(T::zero(), |a, (&g, &p)| a + g * p);
    let mut out = vec![T::zero(); n];
    for ((&i, &g), _) in support.iter().zip(g_sub).zip(p_sub) {
        out[i as usize] = (g - inner) / s;
    }
    out
}

fn consistency_grad<T: Scalar>(
    p: &[T],
    q: &[T],
    support: KlSupport,
    mv: &MultilingualVerbalizer,
    scale: T,
) -> (T, Vec<T>, Vec<T>) {
    match support {
        KlSupport::FullVocabulary => sym_kl_grad(p, q, scale),
        KlSupport::VerbalizerUnion => {
            let ids = mv.answer_ids();
            let (ps, sp) = restrict(p, &ids);
            let (qs, sq) = restrict(q, &ids);
            let (v, gp, gq) = sym_kl_grad(&ps, &qs, scale);
            (v, unrestrict(&gp, &ps, sp, &ids, p.len()), unrestrict(&gq, &qs, sq, &ids, q.len()))
        }
    }
}

pub fn total_loss<T: Scalar>(
    original: &[MaskDistribution<T>],
    augmented: &[MaskDistribution<T>],
    labels: &[Label],
    mv: &MultilingualVerbalizer,
    weights: &LossWeights,
) -> Result<LossBreakdown<T>> {
    let o: Vec<&[T]> = original.iter().map(|d| d.probs.as_slice()).collect();
    let a: Vec<&[T]> = augmented.iter().map(|d| d.probs.as_slice()).collect();
    Ok(total_loss_with_grads(&o, Some(&a), labels, mv, weights, KlSupport::FullVocabulary)?.breakdown)
}

#[derive(Clone, Debug)]
pub struct LossGradients<T> {
    pub breakdown: LossBreakdown<T>,
    /// d total / d probabilities, one vector per original question.
    pub original: Vec<Vec<T>>,
    /// Same for augmented questions; empty when no augmented view was given.
    pub augmented: Vec<Vec<T>>,
}

/// Loss breakdown and gradients with respect to every output distribution.
/// With `augmented = None` only the original cross-entropy is computed and
/// the other two components are zero.
pub fn total_loss_with_grads<T: Scalar>(
    original: &[&[T]],
    augmented: Option<&[&[T]]>,
    labels: &[Label],
    mv: &MultilingualVerbalizer,
    weights: &LossWeights,
    support: KlSupport,
) -> Result<LossGradients<T>> {
    weights.validate()?;
    let n = original.len();
    if n == 0 {
        return Err(Error::Invalid("batch must contain at least one question".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(a) = augmented {
        if a.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: a.len(),
            });
        }
    }
    for (i, p) in original.iter().enumerate() {
        let other = augmented.map(|a| a[i].len()).unwrap_or(p.len());
        if other != p.len() {
            return Err(Error::LengthMismatch {
                expected: p.len(),
                found: other,
            });
        }
    }

    let inv_n = T::one() / T::of(n as f64);
    let (wo, wa, wk) = (T::of(weights.original), T::of(weights.augmented), T::of(weights.consistency));
    let mut sum_o = T::zero();
    let mut sum_a = T::zero();
    let mut sum_k = T::zero();
    let mut g_orig = Vec::with_capacity(n);
    let mut g_aug = Vec::new();
    for i in 0..n {
        let (lo, mut go) = instance_ce_grad(original[i], labels[i], mv, wo * inv_n);
        sum_o = sum_o + lo;
        if let Some(aug) = augmented {
            let (la, mut ga) = instance_ce_grad(aug[i], labels[i], mv, wa * inv_n);
            let (lk, dp, dq) = consistency_grad(original[i], aug[i], support, mv, wk * inv_n);
            sum_a = sum_a + la;
            sum_k = sum_k + lk;
            for (g, d) in go.iter_mut().zip(&dp) {
                *g = *g + *d;
            }
            for (g, d) in ga.iter_mut().zip(&dq) {
                *g = *g + *d;
            }
            g_aug.push(ga);
        }
        g_orig.push(go);
    }
    let (lo, la, lk) = (sum_o * inv_n, sum_a * inv_n, sum_k * inv_n);
    Ok(LossGradients {
        breakdown: LossBreakdown {
            original: lo,
            augmented: la,
            consistency: lk,
            total: wo * lo + wa * la + wk * lk,
        },
        original: g_orig,
        augmented: g_aug,
    })
}
