//! Dynamic bilinear low-rank self-attention.
//!
//! Per head `h` with width `d_h = d / heads`:
//!
//! ```text
//! W_r   = softmax(Z_h Q_hᵀ)            d_p × n
//! W_c   = softmax(Z_h K_hᵀ)            d_p × n
//! Q_DBA = (W_r Q_h) R                  d_p × d_in
//! K_DBA = (W_c K_h) R                  d_p × d_in
//! V_DBA = W_c′ᵀ V_h                    d_p × d_h
//! O_h   = W_r′ (softmax(Q_DBA K_DBAᵀ / √d_in) V_DBA)
//! ```
//!
//! with `W_r′ = X A_r`, `W_c′ = X A_c` shared across heads. Products are
//! evaluated right-to-left so the largest intermediate is n × max(d, d_p).

use crate::autodiff::{NodeId, Tape};
use crate::error::{dim_err, DbaError, Result};
use crate::tensor::Tensor;

use super::config::{AttentionConfig, Mechanism};
use super::params::DbaNodes;

/// Per-head intermediates kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    /// `None` when sequence compression is disabled (identity).
    pub w_r: Option<NodeId>,
    pub w_c: Option<NodeId>,
    /// Compressed attention map `softmax(Q_DBA K_DBAᵀ/√d_in)`, d_p × d_p.
    pub attn: NodeId,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub w_r_prime: NodeId,
    pub w_c_prime: NodeId,
    pub heads: Vec<HeadTrace>,
}

/// `(softmax_rows(Z Qᵀ), softmax_rows(Z Kᵀ))` on the tape.
pub fn dynamic_projections_node(tape: &mut Tape, z: NodeId, q: NodeId, k: NodeId) -> Result<(NodeId, NodeId)> {
    let d = tape.value(z).cols();
    for other in [q, k] {
        if tape.value(other).cols() != d {
            return Err(dim_err("dynamic_projections", tape.value(z).shape(), tape.value(other).shape()));
        }
    }
    let qt = tape.transpose(q)?;
    let logits_r = tape.matmul(z, qt)?;
    let w_r = tape.softmax_rows(logits_r)?;
    let kt = tape.transpose(k)?;
    let logits_c = tape.matmul(z, kt)?;
    let w_c = tape.softmax_rows(logits_c)?;
    Ok((w_r, w_c))
}

pub fn dynamic_projections(z: &Tensor, q: &Tensor, k: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (zi, qi, ki) = (tape.leaf(z.clone()), tape.leaf(q.clone()), tape.leaf(k.clone()));
    let (w_r, w_c) = dynamic_projections_node(&mut tape, zi, qi, ki)?;
    Ok((tape.value(w_r).clone(), tape.value(w_c).clone()))
}

/// `(X A_r, X A_c)`, both n × d_p.
pub fn reconstruction_maps_node(tape: &mut Tape, x: NodeId, a_r: NodeId, a_c: NodeId) -> Result<(NodeId, NodeId)> {
    if tape.value(a_r).shape() != tape.value(a_c).shape() {
        return Err(dim_err("reconstruction_maps", tape.value(a_r).shape(), tape.value(a_c).shape()));
    }
    Ok((tape.matmul(x, a_r)?, tape.matmul(x, a_c)?))
}

pub fn reconstruction_maps(x: &Tensor, a_r: &Tensor, a_c: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (xi, ri, ci) = (tape.leaf(x.clone()), tape.leaf(a_r.clone()), tape.leaf(a_c.clone()));
    let (wr, wc) = reconstruction_maps_node(&mut tape, xi, ri, ci)?;
    Ok((tape.value(wr).clone(), tape.value(wc).clone()))
}

pub fn dba_self_attention(tape: &mut Tape, x: NodeId, p: &DbaNodes, cfg: &AttentionConfig) -> Result<NodeId> {
    dba_self_attention_traced(tape, x, p, cfg).map(|(out, _)| out)
}

pub(crate) fn check_dba_nodes(tape: &Tape, p: &DbaNodes, cfg: &AttentionConfig, d: usize) -> Result<()> {
    if d != cfg.d || d % cfg.heads != 0 {
        return Err(dim_err("dba config", &[cfg.d, cfg.heads], &[d]));
    }
    let want = [
        (p.z, [cfg.d_p, d]),
        (p.r, [cfg.head_dim(), cfg.d_in]),
        (p.a_r, [d, cfg.d_p]),
        (p.a_c, [d, cfg.d_p]),
        (p.wq, [d, d]),
        (p.wk, [d, d]),
        (p.wv, [d, d]),
        (p.wo, [d, d]),
    ];
    for (id, shape) in want {
        if tape.value(id).shape() != shape {
            return Err(dim_err("dba params", tape.value(id).shape(), &shape));
        }
    }
    Ok(())
}

/// Shared compressed core: `W_r′ (softmax((q_l R)(k_l R)ᵀ / τ) v_dba)`.
pub(crate) fn compressed_core(
    tape: &mut Tape,
    q_l: NodeId,
    k_l: NodeId,
    v_dba: NodeId,
    r: Option<NodeId>,
    w_r_prime: NodeId,
) -> Result<(NodeId, NodeId)> {
    let (q_dba, k_dba) = match r {
        Some(r) => (tape.matmul(q_l, r)?, tape.matmul(k_l, r)?),
        None => (q_l, k_l),
    };
    let width = tape.value(q_dba).cols() as f64;
    let kt = tape.transpose(k_dba)?;
    let scores = tape.matmul(q_dba, kt)?;
    let scaled = tape.scale(scores, 1.0 / width.sqrt())?;
    let attn = tape.softmax_rows(scaled)?;
    let mixed = tape.matmul(attn, v_dba)?;
    let out = tape.matmul(w_r_prime, mixed)?;
    Ok((out, attn))
}

pub fn dba_self_attention_traced(
    tape: &mut Tape,
    x: NodeId,
    p: &DbaNodes,
    cfg: &AttentionConfig,
) -> Result<(NodeId, AttentionTrace)> {
    let Mechanism::Dba {
        seq_compress,
        dim_compress,
    } = cfg.mechanism
    else {
        return Err(DbaError::Parameter(format!(
            "dba_self_attention called with mechanism {}",
            cfg.mechanism
        )));
    };
    let (n, d) = (tape.value(x).rows(), tape.value(x).cols());
    check_dba_nodes(tape, p, cfg, d)?;
    if !seq_compress && cfg.d_p != n {
        return Err(DbaError::Dimension {
            op: "dba without sequence compression needs d_p == n",
            lhs: vec![cfg.d_p],
            rhs: vec![n],
        });
    }
    if seq_compress && cfg.d_p > n.min(d) {
        log::warn!("d_p={} exceeds min(n={n}, d={d})", cfg.d_p);
    }

    let dh = cfg.head_dim();
    let q = tape.matmul(x, p.wq)?;
    let k = tape.matmul(x, p.wk)?;
    let v = tape.matmul(x, p.wv)?;
    let (w_r_prime, w_c_prime) = reconstruction_maps_node(tape, x, p.a_r, p.a_c)?;
    let w_c_prime_t = tape.transpose(w_c_prime)?;

    let mut outs = Vec::with_capacity(cfg.heads);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh, zh) = if cfg.heads == 1 {
            (q, k, v, p.z)
        } else {
            (
                tape.slice_cols(q, lo, hi)?,
                tape.slice_cols(k, lo, hi)?,
                tape.slice_cols(v, lo, hi)?,
                tape.slice_cols(p.z, lo, hi)?,
            )
        };
        let (q_l, k_l, w_r, w_c) = if seq_compress {
            let (w_r, w_c) = dynamic_projections_node(tape, zh, qh, kh)?;
            (tape.matmul(w_r, qh)?, tape.matmul(w_c, kh)?, Some(w_r), Some(w_c))
        } else {
            (qh, kh, None, None)
        };
        let v_dba = tape.matmul(w_c_prime_t, vh)?;
        let r = dim_compress.then_some(p.r);
        let (out, attn) = compressed_core(tape, q_l, k_l, v_dba, r, w_r_prime)?;
        outs.push(out);
        heads.push(HeadTrace { w_r, w_c, attn });
    }
    let cat = if cfg.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = tape.matmul(cat, p.wo)?;
    Ok((
        out,
        AttentionTrace {
            w_r_prime,
            w_c_prime,
            heads,
        },
    ))
}
