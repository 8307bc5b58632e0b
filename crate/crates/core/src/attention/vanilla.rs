use crate::autodiff::{NodeId, Tape};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// `softmax(Q Kᵀ / √d) · V` on the tape; the n×n map is materialized.
pub fn vanilla_attention_node(tape: &mut Tape, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (qs, ks, vs) = (tape.value(q).shape().to_vec(), tape.value(k).shape().to_vec(), tape.value(v).shape().to_vec());
    if qs[1] != ks[1] {
        return Err(dim_err("vanilla_attention", &qs, &ks));
    }
    if ks[0] != vs[0] {
        return Err(dim_err("vanilla_attention", &ks, &vs));
    }
    let d = qs[1] as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / d.sqrt())?;
    let map = tape.softmax_rows(scaled)?;
    tape.matmul(map, v)
}

/// Eager form of [`vanilla_attention_node`].
pub fn vanilla_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(dim_err("vanilla_attention", q.shape(), k.shape()));
    }
    let mut tape = Tape::new();
    let (qi, ki, vi) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = vanilla_attention_node(&mut tape, qi, ki, vi)?;
    Ok(tape.value(out).clone())
}

/// Input/output projections of a multi-head vanilla layer.
#[derive(Debug, Clone, Copy)]
pub struct VanillaNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

/// Multi-head vanilla layer. Queries come from `x_q`, keys and values from
/// `x_kv` (the same node for self-attention).
pub fn vanilla_layer(tape: &mut Tape, x_q: NodeId, x_kv: NodeId, p: &VanillaNodes, heads: usize) -> Result<NodeId> {
    let d = tape.value(x_q).cols();
    if d % heads != 0 || tape.value(x_kv).cols() != d {
        return Err(dim_err("vanilla_layer", tape.value(x_q).shape(), tape.value(x_kv).shape()));
    }
    let dh = d / heads;
    let q = tape.matmul(x_q, p.wq)?;
    let k = tape.matmul(x_kv, p.wk)?;
    let v = tape.matmul(x_kv, p.wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
        };
        outs.push(vanilla_attention_node(tape, qh, kh, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.matmul(cat, p.wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Three-loop scalar reference.
    fn scalar_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (n, d) = (q.rows(), q.cols());
        let mut out = Tensor::zeros(n, v.cols());
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..d {
                    s += q.get(i, t) * k.get(j, t);
                }
                logits[j] = s / (d as f64).sqrt();
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for j in 0..n {
                for c in 0..v.cols() {
                    out.set(i, c, out.get(i, c) + w[j] / z * v.get(j, c));
                }
            }
        }
        out
    }

    #[test]
    fn single_token_returns_value() {
        let v = Tensor::from_rows(&[vec![0.3, -2.0, 5.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(vanilla_attention(&q, &q, &v).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::new(4);
        let q = rng.gaussian(5, 3, 1.0).unwrap();
        let row = rng.gaussian(1, 3, 1.0).unwrap();
        let k = Tensor::from_fn(5, 3, |_, j| row.get(0, j));
        let v = rng.gaussian(5, 3, 1.0).unwrap();
        let out = vanilla_attention(&q, &k, &v).unwrap();
        for j in 0..3 {
            let mean = (0..5).map(|i| v.get(i, j)).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((out.get(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = Rng::new(11);
        let q = rng.gaussian(4, 3, 1.0).unwrap();
        let k = rng.gaussian(4, 3, 1.0).unwrap();
        let v = rng.gaussian(4, 3, 1.0).unwrap();
        let out = vanilla_attention(&q, &k, &v).unwrap();
        assert!(out.max_abs_diff(&scalar_attention(&q, &k, &v)) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Tensor::zeros(4, 3);
        let b = Tensor::zeros(4, 2);
        assert!(vanilla_attention(&a, &b, &a).is_err());
    }
}
