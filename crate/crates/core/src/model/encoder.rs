//! Pre-LayerNorm transformer encoder: forward pass with activation cache and
//! the matching reverse pass.
//!
//! ```text
//! x0   = E[tokens] + P
//! a    = LN1(x);  x' = x + Attn(a)
//! c    = LN2(x'); x'' = x' + W2 gelu(W1 c + b1) + b2
//! h    = LNf(x_L[mask])
//! p    = softmax(W_out h)
//! ```

use super::linalg::{
    accumulate_at_b, accumulate_col_sums, affine, dot, gelu, gelu_grad, mul_bt, softmax, softmax_backward,
};
use super::ModelState;
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, LnCache<T>) {
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = Vec::with_capacity(rows);
    let dn = T::of(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) / dn;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
        let is = T::one() / (var + T::of(LN_EPS)).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            xhat[r * d + j] = xh;
            out[r * d + j] = gain[j] * xh + bias[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates gain and bias gradients.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    rows: usize,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    let dn = T::of(d as f64);
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        if dyr.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + dyr[j] * xh[j];
            dbias[j] = dbias[j] + dyr[j];
            let dxh = dyr[j] * gain[j];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_xh = mean_dxh_xh + dxh * xh[j];
        }
        mean_dxh = mean_dxh / dn;
        mean_dxh_xh = mean_dxh_xh / dn;
        let is = cache.inv_std[r];
        for j in 0..d {
            let dxh = dyr[j] * gain[j];
            dx[r * d + j] = is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

pub(crate) struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads x len x len attention weights.
    attn: Vec<T>,
    ctx: Vec<T>,
    ln2: LnCache<T>,
    c: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

pub struct ForwardCache<T> {
    pub(crate) tokens: Vec<u32>,
    pub(crate) mask_position: usize,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) lnf: LnCache<T>,
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Runs the encoder; token ids and length must already be validated.
    pub(crate) fn forward_unchecked(&self, tokens: &[u32], mask_position: usize) -> ForwardCache<T> {
        let cfg = &self.config;
        let (d, f, heads) = (cfg.d_model, cfg.ffn_dim, cfg.heads);
        let dh = d / heads;
        let len = tokens.len();
        let p = &self.params;
        let lay = &self.layout;

        let mut x = Vec::with_capacity(len * d);
        for (pos, &t) in tokens.iter().enumerate() {
            let row = &p[lay.embedding.row(t as usize)];
            let pe = &self.positions[pos * d..(pos + 1) * d];
            x.extend(row.iter().zip(pe).map(|(&e, &q)| e + q));
        }

        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.layers);
        for ls in &lay.layers {
            let (a, ln1) = layer_norm(&x, len, d, &p[ls.ln1_g.range()], &p[ls.ln1_b.range()]);
            let q = affine(&a, &p[ls.wq.range()], &p[ls.bq.range()], len, d, d);
            let k = affine(&a, &p[ls.wk.range()], &p[ls.bk.range()], len, d, d);
            let v = affine(&a, &p[ls.wv.range()], &p[ls.bv.range()], len, d, d);

            let mut attn = vec![T::zero(); heads * len * len];
            let mut ctx = vec![T::zero(); len * d];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let scores: Vec<T> = (0..len)
                        .map(|j| dot(qi, &k[j * d + off..j * d + off + dh]) * scale)
                        .collect();
                    let w = softmax(&scores);
                    let out = &mut ctx[i * d + off..i * d + off + dh];
                    for (j, &wj) in w.iter().enumerate() {
                        for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *o = *o + wj * vv;
                        }
                    }
                    attn[(h * len + i) * len..(h * len + i + 1) * len].copy_from_slice(&w);
                }
            }
            let o = affine(&ctx, &p[ls.wo.range()], &p[ls.bo.range()], len, d, d);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi = *xi + *oi;
            }

            let (c, ln2) = layer_norm(&x, len, d, &p[ls.ln2_g.range()], &p[ls.ln2_b.range()]);
            let u = affine(&c, &p[ls.w1.range()], &p[ls.b1.range()], len, d, f);
            let g: Vec<T> = u.iter().map(|&ui| gelu(ui)).collect();
            let y = affine(&g, &p[ls.w2.range()], &p[ls.b2.range()], len, f, d);
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi = *xi + *yi;
            }
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                attn,
                ctx,
                ln2,
                c,
                u,
                g,
            });
        }

        let mask_row = &x[mask_position * d..(mask_position + 1) * d];
        let (hidden, lnf) = layer_norm(mask_row, 1, d, &p[lay.lnf_g.range()], &p[lay.lnf_b.range()]);
        let out = lay.output();
        let logits: Vec<T> = (0..cfg.vocab_size).map(|r| dot(&p[out.row(r)], &hidden)).collect();
        let probs = softmax(&logits);

        ForwardCache {
            tokens: tokens.to_vec(),
            mask_position,
            layers,
            lnf,
            hidden,
            probs,
        }
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the output probabilities is `dprobs`.
    pub fn backward(&self, cache: &ForwardCache<T>, dprobs: &[T], grads: &mut [T]) {
        let cfg = &self.config;
        let (d, f, heads) = (cfg.d_model, cfg.ffn_dim, cfg.heads);
        let dh = d / heads;
        let len = cache.tokens.len();
        let p = &self.params;
        let lay = &self.layout;
        assert_eq!(grads.len(), lay.total, "gradient buffer size");

        let dlogits = softmax_backward(&cache.probs, dprobs);
        let out = lay.output();
        let mut dhidden = vec![T::zero(); d];
        for (r, &dz) in dlogits.iter().enumerate() {
            if dz == T::zero() {
                continue;
            }
            let w = &p[out.row(r)];
            for j in 0..d {
                dhidden[j] = dhidden[j] + dz * w[j];
            }
            let gw = &mut grads[out.row(r)];
            for j in 0..d {
                gw[j] = gw[j] + dz * cache.hidden[j];
            }
        }

        let mut dx = vec![T::zero(); len * d];
        {
            let (gain_g, bias_g) = split_two(grads, lay.lnf_g.range(), lay.lnf_b.range());
            let drow = layer_norm_backward(&dhidden, &cache.lnf, 1, d, &p[lay.lnf_g.range()], gain_g, bias_g);
            dx[cache.mask_position * d..(cache.mask_position + 1) * d].copy_from_slice(&drow);
        }

        let scale = T::one() / T::of(dh as f64).sqrt();
        for (ls, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // feed-forward block
            let dy = &dx;
            accumulate_at_b(&lc.g, dy, len, f, d, &mut grads[ls.w2.range()]);
            accumulate_col_sums(dy, len, d, &mut grads[ls.b2.range()]);
            let dg = mul_bt(dy, &p[ls.w2.range()], len, d, f);
            let du: Vec<T> = dg.iter().zip(&lc.u).map(|(&g, &u)| g * gelu_grad(u)).collect();
            accumulate_at_b(&lc.c, &du, len, d, f, &mut grads[ls.w1.range()]);
            accumulate_col_sums(&du, len, f, &mut grads[ls.b1.range()]);
            let dc = mul_bt(&du, &p[ls.w1.range()], len, f, d);
            let dx_ln2 = {
                let (gg, gb) = split_two(grads, ls.ln2_g.range(), ls.ln2_b.range());
                layer_norm_backward(&dc, &lc.ln2, len, d, &p[ls.ln2_g.range()], gg, gb)
            };
            for (a, b) in dx.iter_mut().zip(&dx_ln2) {
                *a = *a + *b;
            }

            // attention block
            let dout = &dx;
            accumulate_at_b(&lc.ctx, dout, len, d, d, &mut grads[ls.wo.range()]);
            accumulate_col_sums(dout, len, d, &mut grads[ls.bo.range()]);
            let dctx = mul_bt(dout, &p[ls.wo.range()], len, d, d);
            let mut dq = vec![T::zero(); len * d];
            let mut dk = vec![T::zero(); len * d];
            let mut dv = vec![T::zero(); len * d];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let w = &lc.attn[(h * len + i) * len..(h * len + i + 1) * len];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let dw: Vec<T> = (0..len)
                        .map(|j| dot(dci, &lc.v[j * d + off..j * d + off + dh]))
                        .collect();
                    for (j, &wj) in w.iter().enumerate() {
                        for (t, &g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                            *t = *t + wj * g;
                        }
                    }
                    let ds = softmax_backward(w, &dw);
                    for (j, &s) in ds.iter().enumerate() {
                        let s = s * scale;
                        if s == T::zero() {
                            continue;
                        }
                        for t in 0..dh {
                            dq[i * d + off + t] = dq[i * d + off + t] + s * lc.k[j * d + off + t];
                            dk[j * d + off + t] = dk[j * d + off + t] + s * lc.q[i * d + off + t];
                        }
                    }
                }
            }
            accumulate_at_b(&lc.a, &dq, len, d, d, &mut grads[ls.wq.range()]);
            accumulate_col_sums(&dq, len, d, &mut grads[ls.bq.range()]);
            accumulate_at_b(&lc.a, &dk, len, d, d, &mut grads[ls.wk.range()]);
            accumulate_col_sums(&dk, len, d, &mut grads[ls.bk.range()]);
            accumulate_at_b(&lc.a, &dv, len, d, d, &mut grads[ls.wv.range()]);
            accumulate_col_sums(&dv, len, d, &mut grads[ls.bv.range()]);
            let mut da = mul_bt(&dq, &p[ls.wq.range()], len, d, d);
            for (acc, part) in [(&dk, ls.wk), (&dv, ls.wv)] {
                let extra = mul_bt(acc, &p[part.range()], len, d, d);
                for (x, y) in da.iter_mut().zip(&extra) {
                    *x = *x + *y;
                }
            }
            let dx_ln1 = {
                let (gg, gb) = split_two(grads, ls.ln1_g.range(), ls.ln1_b.range());
                layer_norm_backward(&da, &lc.ln1, len, d, &p[ls.ln1_g.range()], gg, gb)
            };
            for (a, b) in dx.iter_mut().zip(&dx_ln1) {
                *a = *a + *b;
            }
        }

        for (pos, &t) in cache.tokens.iter().enumerate() {
            if !self.prompt_trainable && self.is_soft_slot(t) {
                continue;
            }
            let g = &mut grads[lay.embedding.row(t as usize)];
            for (gj, &dj) in g.iter_mut().zip(&dx[pos * d..(pos + 1) * d]) {
                *gj = *gj + dj;
            }
        }
    }
}

/// Two disjoint mutable windows into the gradient buffer; `a` precedes `b`.
fn split_two<T>(buf: &mut [T], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}
