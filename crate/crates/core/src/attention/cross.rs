//! Two-hierarchy DBA cross-attention.
//!
//! ```text
//! W_r2  = softmax(Z₂ X₂ᵀ)              d_p × n2   (params2)
//! C₂    = W_r2 X₂                      d_p × d
//! Z₁    = C₂ M                         d_p × d    (M = params1.z_map)
//! W_r1  = softmax(Z₁_h Q₁_hᵀ)          d_p × n1
//! K₂    = C₂ Wk,  V₂ = C₂ Wv           already length-compressed
//! O_h   = W_r′ softmax((W_r1 Q₁_h) R ((K₂_h R)ᵀ) / √d_in) V₂_h,   W_r′ = X₁ A_r
//! ```
//!
//! Hierarchy 2 enters twice: through the query compression `W_r1` and
//! through the keys/values.

use crate::autodiff::{NodeId, Tape};
use crate::error::{dim_err, DbaError, Result};

use super::config::AttentionConfig;
use super::dba::{check_dba_nodes, compressed_core, HeadTrace};
use super::params::DbaNodes;

/// Which routes from `X₂` to the output carry gradient. A disabled route
/// sees a constant copy of `X₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossPaths {
    /// `X₂ → C₂ → Z₁ → W_r1`
    pub z_path: bool,
    /// `X₂ → C₂ → K₂, V₂`
    pub kv_path: bool,
}

impl CrossPaths {
    pub const BOTH: CrossPaths = CrossPaths {
        z_path: true,
        kv_path: true,
    };
}

#[derive(Debug, Clone)]
pub struct CrossTrace {
    pub w_r2: NodeId,
    pub c2: NodeId,
    pub z1: NodeId,
    pub w_r_prime: NodeId,
    /// `w_c` is always `None`: keys arrive compressed.
    pub heads: Vec<HeadTrace>,
}

pub fn dba_cross_attention(
    tape: &mut Tape,
    x1: NodeId,
    x2: NodeId,
    p1: &DbaNodes,
    p2: &DbaNodes,
    cfg: &AttentionConfig,
) -> Result<(NodeId, CrossTrace)> {
    dba_cross_attention_split(tape, x1, x2, x2, p1, p2, cfg)
}

pub fn dba_cross_attention_with_paths(
    tape: &mut Tape,
    x1: NodeId,
    x2: NodeId,
    p1: &DbaNodes,
    p2: &DbaNodes,
    cfg: &AttentionConfig,
    paths: CrossPaths,
) -> Result<(NodeId, CrossTrace)> {
    let mut route = |on: bool| if on { x2 } else { tape.leaf(tape.value(x2).clone()) };
    let x2_z = route(paths.z_path);
    let x2_kv = route(paths.kv_path);
    dba_cross_attention_split(tape, x1, x2_z, x2_kv, p1, p2, cfg)
}

fn compress_second(tape: &mut Tape, x2: NodeId, z2: NodeId) -> Result<(NodeId, NodeId)> {
    let x2t = tape.transpose(x2)?;
    let logits = tape.matmul(z2, x2t)?;
    let w_r2 = tape.softmax_rows(logits)?;
    Ok((w_r2, tape.matmul(w_r2, x2)?))
}

/// `x2_z` feeds the query-compression route, `x2_kv` the key/value route.
/// Passing the same node for both gives the ordinary layer.
pub(crate) fn dba_cross_attention_split(
    tape: &mut Tape,
    x1: NodeId,
    x2_z: NodeId,
    x2_kv: NodeId,
    p1: &DbaNodes,
    p2: &DbaNodes,
    cfg: &AttentionConfig,
) -> Result<(NodeId, CrossTrace)> {
    if !cfg.mechanism.is_dba() {
        return Err(DbaError::Parameter(format!(
            "dba_cross_attention called with mechanism {}",
            cfg.mechanism
        )));
    }
    let d = tape.value(x1).cols();
    if tape.value(x2_z).cols() != d || tape.value(x2_kv).shape() != tape.value(x2_z).shape() {
        return Err(dim_err("dba_cross_attention", tape.value(x1).shape(), tape.value(x2_z).shape()));
    }
    check_dba_nodes(tape, p1, cfg, d)?;
    if tape.value(p2.z).shape() != [cfg.d_p, d] {
        return Err(dim_err("dba_cross_attention z2", tape.value(p2.z).shape(), &[cfg.d_p, d]));
    }
    let z_map = p1
        .z_map
        .ok_or_else(|| DbaError::Parameter("cross-attention needs params1.z_map".into()))?;
    if tape.value(z_map).shape() != [d, d] {
        return Err(dim_err("dba_cross_attention z_map", tape.value(z_map).shape(), &[d, d]));
    }

    let (w_r2, c2) = compress_second(tape, x2_z, p2.z)?;
    let c2_kv = if x2_kv == x2_z {
        c2
    } else {
        compress_second(tape, x2_kv, p2.z)?.1
    };
    let z1 = tape.matmul(c2, z_map)?;
    let q1 = tape.matmul(x1, p1.wq)?;
    let k2 = tape.matmul(c2_kv, p1.wk)?;
    let v2 = tape.matmul(c2_kv, p1.wv)?;
    let w_r_prime = tape.matmul(x1, p1.a_r)?;

    let dh = cfg.head_dim();
    let r = cfg.dim_compress().then_some(p1.r);
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (zh, qh, kh, vh) = if cfg.heads == 1 {
            (z1, q1, k2, v2)
        } else {
            (
                tape.slice_cols(z1, lo, hi)?,
                tape.slice_cols(q1, lo, hi)?,
                tape.slice_cols(k2, lo, hi)?,
                tape.slice_cols(v2, lo, hi)?,
            )
        };
        let qt = tape.transpose(qh)?;
        let logits = tape.matmul(zh, qt)?;
        let w_r1 = tape.softmax_rows(logits)?;
        let q_l = tape.matmul(w_r1, qh)?;
        let (out, attn) = compressed_core(tape, q_l, kh, vh, r, w_r_prime)?;
        outs.push(out);
        heads.push(HeadTrace {
            w_r: Some(w_r1),
            w_c: None,
            attn,
        });
    }
    let cat = if cfg.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = tape.matmul(cat, p1.wo)?;
    Ok((
        out,
        CrossTrace {
            w_r2,
            c2,
            z1,
            w_r_prime,
            heads,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::params::DbaParams;
    use crate::attention::Mechanism;
    use crate::autodiff::finite_diff_grad;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn setup(seed: u64, heads: usize) -> (AttentionConfig, DbaParams, DbaParams) {
        let cfg = AttentionConfig::new(5, 8, 3, 4, heads, Mechanism::DBA).unwrap();
        let mut rng = Rng::new(seed);
        let p1 = DbaParams::init_cross(&cfg, &mut rng).unwrap();
        let p2 = DbaParams::init(&cfg, &mut rng).unwrap();
        (cfg, p1, p2)
    }

    fn run(x1: &Tensor, x2: &Tensor, p1: &DbaParams, p2: &DbaParams, cfg: &AttentionConfig) -> (Tape, NodeId, CrossTrace) {
        let mut tape = Tape::new();
        let (a, b) = (tape.leaf(x1.clone()), tape.leaf(x2.clone()));
        let n1 = p1.register(&mut tape, false);
        let n2 = p2.register(&mut tape, false);
        let (out, trace) = dba_cross_attention(&mut tape, a, b, &n1, &n2, cfg).unwrap();
        (tape, out, trace)
    }

    type Mat = Vec<Vec<f64>>;

    fn mat(t: &Tensor) -> Mat {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    fn mm(a: &Mat, b: &Mat) -> Mat {
        let mut c = vec![vec![0.0; b[0].len()]; a.len()];
        for i in 0..a.len() {
            for j in 0..b[0].len() {
                for t in 0..b.len() {
                    c[i][j] += a[i][t] * b[t][j];
                }
            }
        }
        c
    }

    fn tr(a: &Mat) -> Mat {
        (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
    }

    fn soft(a: &Mat) -> Mat {
        a.iter()
            .map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            })
            .collect()
    }

    fn cols(a: &Mat, lo: usize, hi: usize) -> Mat {
        a.iter().map(|r| r[lo..hi].to_vec()).collect()
    }

    #[test]
    fn single_query_matches_scalar_oracle() {
        let (cfg, p1, p2) = setup(4, 2);
        let mut rng = Rng::new(5);
        let x1 = rng.gaussian(1, 8, 1.0).unwrap();
        let x2 = rng.gaussian(7, 8, 1.0).unwrap();
        let (tape, out, _) = run(&x1, &x2, &p1, &p2, &cfg.with_n(1));
        assert_eq!(tape.value(out).shape(), &[1, 8]);

        let (x1m, x2m) = (mat(&x1), mat(&x2));
        let c2 = mm(&soft(&mm(&mat(&p2.z), &tr(&x2m))), &x2m);
        let z1 = mm(&c2, &mat(p1.z_map.as_ref().unwrap()));
        let q1 = mm(&x1m, &mat(&p1.wq));
        let k2 = mm(&c2, &mat(&p1.wk));
        let v2 = mm(&c2, &mat(&p1.wv));
        let wrp = mm(&x1m, &mat(&p1.a_r));
        let r = mat(&p1.r);
        let mut heads = Vec::new();
        for h in 0..2 {
            let (lo, hi) = (4 * h, 4 * h + 4);
            let qh = cols(&q1, lo, hi);
            let w_r1 = soft(&mm(&cols(&z1, lo, hi), &tr(&qh)));
            let q_dba = mm(&mm(&w_r1, &qh), &r);
            let k_dba = mm(&cols(&k2, lo, hi), &r);
            let mut s = mm(&q_dba, &tr(&k_dba));
            for row in s.iter_mut() {
                for v in row.iter_mut() {
                    *v /= 2.0;
                }
            }
            heads.push(mm(&wrp, &mm(&soft(&s), &cols(&v2, lo, hi))));
        }
        let cat: Mat = vec![heads[0][0].iter().chain(heads[1][0].iter()).copied().collect()];
        let expect = mm(&cat, &mat(&p1.wo));
        for j in 0..8 {
            assert!((tape.value(out).get(0, j) - expect[0][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let (cfg, p1, p2) = setup(6, 2);
        let mut rng = Rng::new(7);
        let x1 = rng.gaussian(5, 8, 1.0).unwrap();
        let row = rng.gaussian(1, 8, 1.0).unwrap();
        let x2 = Tensor::concat_rows(&[&row, &row, &row, &row]).unwrap();
        let (tape, _, trace) = run(&x1, &x2, &p1, &p2, &cfg);
        let c2 = tape.value(trace.c2);
        for i in 1..c2.rows() {
            for j in 0..8 {
                assert!((c2.get(i, j) - c2.get(0, j)).abs() < 1e-12);
            }
        }
        for h in &trace.heads {
            let a = tape.value(h.attn);
            assert!(a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-10));
        }
    }

    fn x2_grad(x1: &Tensor, x2: &Tensor, p1: &DbaParams, p2: &DbaParams, cfg: &AttentionConfig, paths: CrossPaths) -> Tensor {
        let mut tape = Tape::new();
        let a = tape.leaf(x1.clone());
        let b = tape.param(x2.clone());
        let n1 = p1.register(&mut tape, false);
        let n2 = p2.register(&mut tape, false);
        let (out, _) = dba_cross_attention_with_paths(&mut tape, a, b, &n1, &n2, cfg, paths).unwrap();
        let loss = tape.half_sum_squares(out).unwrap();
        tape.backward(loss).unwrap().get(b).unwrap().clone()
    }

    fn split_loss(x1: &Tensor, x2_z: &Tensor, x2_kv: &Tensor, p1: &DbaParams, p2: &DbaParams, cfg: &AttentionConfig) -> f64 {
        let mut tape = Tape::new();
        let a = tape.leaf(x1.clone());
        let bz = tape.leaf(x2_z.clone());
        let bkv = tape.leaf(x2_kv.clone());
        let n1 = p1.register(&mut tape, false);
        let n2 = p2.register(&mut tape, false);
        let (out, _) = dba_cross_attention_split(&mut tape, a, bz, bkv, &n1, &n2, cfg).unwrap();
        let loss = tape.half_sum_squares(out).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn both_paths_carry_gradient() {
        let (cfg, p1, p2) = setup(8, 2);
        let mut rng = Rng::new(9);
        let x1 = rng.uniform(5, 8, -1.0, 1.0);
        let x2 = rng.uniform(6, 8, -1.0, 1.0);
        let full = x2_grad(&x1, &x2, &p1, &p2, &cfg, CrossPaths::BOTH);
        let z_only = x2_grad(&x1, &x2, &p1, &p2, &cfg, CrossPaths { z_path: true, kv_path: false });
        let kv_only = x2_grad(&x1, &x2, &p1, &p2, &cfg, CrossPaths { z_path: false, kv_path: true });
        assert!(z_only.max_abs() > 1e-6);
        assert!(kv_only.max_abs() > 1e-6);
        assert!(full.max_abs_diff(&z_only) > 1e-6);
        assert!(full.max_abs_diff(&kv_only) > 1e-6);
        assert!(full.max_abs_diff(&z_only.add(&kv_only).unwrap()) < 1e-12);

        let fd_z = finite_diff_grad(|x| split_loss(&x1, x, &x2, &p1, &p2, &cfg), &x2, 1e-5).unwrap();
        let fd_kv = finite_diff_grad(|x| split_loss(&x1, &x2, x, &p1, &p2, &cfg), &x2, 1e-5).unwrap();
        assert!(fd_z.max_abs_diff(&z_only) < 1e-7);
        assert!(fd_kv.max_abs_diff(&kv_only) < 1e-7);
    }

    #[test]
    fn missing_z_map_rejected() {
        let (cfg, mut p1, p2) = setup(1, 2);
        p1.z_map = None;
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(5, 8));
        let b = tape.leaf(Tensor::zeros(4, 8));
        let n1 = p1.register(&mut tape, false);
        let n2 = p2.register(&mut tape, false);
        assert!(dba_cross_attention(&mut tape, a, b, &n1, &n2, &cfg).is_err());
        let c = tape.leaf(Tensor::zeros(4, 6));
        assert!(dba_cross_attention(&mut tape, a, c, &n1, &n2, &cfg).is_err());
    }
}
