//! Composite layers built from graph primitives.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::{Scalar, Tensor};

/// Additive value placed on disallowed attention logits.
pub const MASK_VALUE: f64 = -1e9;

/// `x @ weight + bias`, `weight: [in, out]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = g.matmul(x, weight)?;
    g.add(y, bias)
}

/// Multi-head scaled dot-product attention.
///
/// `q: [B, Tq, d]`, `k`/`v`: `[B, Tk, d]`. `mask` is an additive constant
/// broadcastable to `[B, heads, Tq, Tk]` (see [`key_padding_mask`] and
/// [`causal_mask`]). Returns `[B, Tq, d]`.
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let qs = g.shape(q).to_vec();
    let ks = g.shape(k).to_vec();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] || heads == 0 || qs[2] % heads != 0 {
        return Err(shape_err("attention", format!("q {qs:?}, k {ks:?}, {heads} heads")));
    }
    let (b, tq, d) = (qs[0], qs[1], qs[2]);
    let tk = ks[1];
    let dh = d / heads;
    let qh = g.reshape(q, &[b, tq, heads, dh])?;
    let qh = g.permute(qh, &[0, 2, 1, 3])?;
    let kh = g.reshape(k, &[b, tk, heads, dh])?;
    let kt = g.permute(kh, &[0, 2, 3, 1])?;
    let vh = g.reshape(v, &[b, tk, heads, dh])?;
    let vh = g.permute(vh, &[0, 2, 1, 3])?;
    let scores = g.matmul(qh, kt)?;
    let mut scores = g.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()));
    if let Some(m) = mask {
        scores = g.add(scores, m)?;
    }
    let probs = g.softmax(scores);
    let ctx = g.matmul(probs, vh)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    g.reshape(ctx, &[b, tq, d])
}

/// `[B, 1, 1, Tk]` mask hiding key positions at or beyond each length.
pub fn key_padding_mask<T: Scalar>(lengths: &[usize], tk: usize) -> Tensor<T> {
    let neg = T::from_f64(MASK_VALUE);
    Tensor::from_fn(&[lengths.len(), 1, 1, tk], |i| {
        if i % tk >= lengths[i / tk] {
            neg
        } else {
            T::zero()
        }
    })
}

/// `[1, 1, T, T]` mask hiding future key positions.
pub fn causal_mask<T: Scalar>(t: usize) -> Tensor<T> {
    let neg = T::from_f64(MASK_VALUE);
    Tensor::from_fn(&[1, 1, t, t], |i| if i % t > i / t { neg } else { T::zero() })
}

/// `[B, T, 1]` mask of ones for valid time steps and zeros past each length.
pub fn time_mask<T: Scalar>(lengths: &[usize], t: usize) -> Tensor<T> {
    Tensor::from_fn(&[lengths.len(), t, 1], |i| {
        if i % t < lengths[i / t] {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Row-wise log-softmax over the last axis, outside any graph.
pub fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(d.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_have_expected_layout() {
        let m = key_padding_mask::<f32>(&[2, 3], 3);
        assert_eq!(m.data(), &[0.0, 0.0, -1e9, 0.0, 0.0, 0.0]);
        let c = causal_mask::<f32>(2);
        assert_eq!(c.data(), &[0.0, -1e9, 0.0, 0.0]);
        let t = time_mask::<f32>(&[1, 2], 2);
        assert_eq!(t.data(), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let run = |poison: f32| {
            let mut g = Graph::<f32>::new(false, 0);
            let mut kv = Tensor::from_fn(&[1, 3, 4], |i| (i as f32 * 0.3).cos());
            kv.data_mut()[8..].iter_mut().for_each(|v| *v = poison);
            let q = g.constant(Tensor::from_fn(&[1, 2, 4], |i| (i as f32).sin()));
            let kv = g.constant(kv);
            let mask = g.constant(key_padding_mask(&[2], 3));
            let out = attention(&mut g, q, kv, kv, 2, Some(mask)).unwrap();
            g.value(out).clone()
        };
        assert_eq!(run(0.5), run(-7.0));
    }

    #[test]
    fn log_softmax_normalizes() {
        let x = Tensor::<f64>::from_fn(&[2, 5], |i| i as f64 * 0.7 - 1.0);
        let y = log_softmax_rows(&x);
        for row in y.data().chunks(5) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
