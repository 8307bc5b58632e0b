//! Input-invariant low-rank control: the DBA pipeline with learned but fixed
//! `W_r := E`, `W_c := F` (d_p × n) and learned length-n reconstruction
//! tables. Parameters are tied to one sequence length.

use crate::autodiff::{NodeId, Tape};
use crate::error::{dim_err, DbaError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::AttentionConfig;
use super::dba::compressed_core;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedLowRankParams {
    /// d_p × n
    pub e: Tensor,
    /// d_p × n
    pub f: Tensor,
    /// n × d_p, stands in for `W_r′`
    pub recon_r: Tensor,
    /// n × d_p, stands in for `W_c′`
    pub recon_c: Tensor,
    pub r: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl FixedLowRankParams {
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Result<Self> {
        let (n, d, dp) = (cfg.n, cfg.d, cfg.d_p);
        let var = 1.0 / d as f64;
        Ok(Self {
            e: rng.gaussian(dp, n, 1.0 / n as f64)?,
            f: rng.gaussian(dp, n, 1.0 / n as f64)?,
            recon_r: rng.gaussian(n, dp, 1.0)?,
            recon_c: rng.gaussian(n, dp, 1.0)?,
            r: rng.gaussian(cfg.head_dim(), cfg.d_in, cfg.heads as f64 / d as f64)?,
            wq: rng.gaussian(d, d, var)?,
            wk: rng.gaussian(d, d, var)?,
            wv: rng.gaussian(d, d, var)?,
            wo: rng.gaussian(d, d, var)?,
        })
    }

    pub fn trained_length(&self) -> usize {
        self.e.cols()
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("e", &self.e),
            ("f", &self.f),
            ("recon_r", &self.recon_r),
            ("recon_c", &self.recon_c),
            ("r", &self.r),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> FixedLowRankNodes {
        let mut put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.leaf(t.clone()) };
        FixedLowRankNodes {
            e: put(&self.e),
            f: put(&self.f),
            recon_r: put(&self.recon_r),
            recon_c: put(&self.recon_c),
            r: put(&self.r),
            wq: put(&self.wq),
            wk: put(&self.wk),
            wv: put(&self.wv),
            wo: put(&self.wo),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedLowRankNodes {
    pub e: NodeId,
    pub f: NodeId,
    pub recon_r: NodeId,
    pub recon_c: NodeId,
    pub r: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

/// Returns the layer output and, per head, the compressed queries `E·Q_h`.
pub fn fixed_lowrank_attention(
    tape: &mut Tape,
    x: NodeId,
    p: &FixedLowRankNodes,
    cfg: &AttentionConfig,
) -> Result<(NodeId, Vec<NodeId>)> {
    let (n, d) = (tape.value(x).rows(), tape.value(x).cols());
    let trained_n = tape.value(p.e).cols();
    if n != trained_n {
        return Err(DbaError::Contract(format!(
            "fixed low-rank projections were built for n={trained_n}, got n={n}"
        )));
    }
    if d != cfg.d || tape.value(p.e).rows() != cfg.d_p || tape.value(p.f).shape() != tape.value(p.e).shape() {
        return Err(dim_err("fixed_lowrank_attention", tape.value(p.e).shape(), &[cfg.d_p, n]));
    }
    let dh = cfg.head_dim();
    let q = tape.matmul(x, p.wq)?;
    let k = tape.matmul(x, p.wk)?;
    let v = tape.matmul(x, p.wv)?;
    let recon_c_t = tape.transpose(p.recon_c)?;
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut compressed = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
        };
        let q_l = tape.matmul(p.e, qh)?;
        let k_l = tape.matmul(p.f, kh)?;
        let v_dba = tape.matmul(recon_c_t, vh)?;
        let r = cfg.dim_compress().then_some(p.r);
        let (out, _) = compressed_core(tape, q_l, k_l, v_dba, r, p.recon_r)?;
        outs.push(out);
        compressed.push(q_l);
    }
    let cat = if cfg.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((tape.matmul(cat, p.wo)?, compressed))
}
