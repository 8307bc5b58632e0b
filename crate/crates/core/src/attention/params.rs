use crate::autodiff::{NodeId, Tape};
use crate::error::{dim_err, DbaError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::AttentionConfig;

/// Learnable state of one DBA layer.
///
/// `z_map` is only present on the query-side parameters of a cross-attention
/// layer, where it maps the compressed second hierarchy to `Z₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct DbaParams {
    /// d_p × d
    pub z: Tensor,
    /// (d/heads) × d_in, shared by all heads
    pub r: Tensor,
    /// d × d_p, `W_r′ = X·A_r`
    pub a_r: Tensor,
    /// d × d_p, `W_c′ = X·A_c`
    pub a_c: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    /// d × d, cross-attention only
    pub z_map: Option<Tensor>,
}

pub const DBA_TENSOR_NAMES: [&str; 8] = ["z", "r", "a_r", "a_c", "wq", "wk", "wv", "wo"];

impl DbaParams {
    /// Gaussian initialization: `R ~ N(0, heads/d)`, everything else `N(0, 1/d)`.
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d;
        let var = 1.0 / d as f64;
        Ok(Self {
            z: rng.gaussian(cfg.d_p, d, var)?,
            r: rng.gaussian(cfg.head_dim(), cfg.d_in, cfg.heads as f64 / d as f64)?,
            a_r: rng.gaussian(d, cfg.d_p, var)?,
            a_c: rng.gaussian(d, cfg.d_p, var)?,
            wq: rng.gaussian(d, d, var)?,
            wk: rng.gaussian(d, d, var)?,
            wv: rng.gaussian(d, d, var)?,
            wo: rng.gaussian(d, d, var)?,
            z_map: None,
        })
    }

    /// Query-side parameters of a cross-attention layer (adds `z_map`).
    pub fn init_cross(cfg: &AttentionConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::init(cfg, rng)?;
        p.z_map = Some(rng.gaussian(cfg.d, cfg.d, 1.0 / cfg.d as f64)?);
        Ok(p)
    }

    pub fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        let (d, dp) = (cfg.d, cfg.d_p);
        let expect: [(&str, &Tensor, [usize; 2]); 8] = [
            ("z", &self.z, [dp, d]),
            ("r", &self.r, [cfg.head_dim(), cfg.d_in]),
            ("a_r", &self.a_r, [d, dp]),
            ("a_c", &self.a_c, [d, dp]),
            ("wq", &self.wq, [d, d]),
            ("wk", &self.wk, [d, d]),
            ("wv", &self.wv, [d, d]),
            ("wo", &self.wo, [d, d]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape {
                return Err(DbaError::Parameter(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(DbaError::Parameter(format!("{name} has non-finite entries")));
            }
        }
        if let Some(m) = &self.z_map {
            if m.shape() != [d, d] {
                return Err(dim_err("z_map", m.shape(), &[d, d]));
            }
        }
        Ok(())
    }

    /// Tensors in a fixed order with their names.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out: Vec<(&'static str, &Tensor)> = DBA_TENSOR_NAMES
            .iter()
            .copied()
            .zip([&self.z, &self.r, &self.a_r, &self.a_c, &self.wq, &self.wk, &self.wv, &self.wo])
            .collect();
        if let Some(m) = &self.z_map {
            out.push(("z_map", m));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Puts every tensor on the tape, as trainable params or constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> DbaNodes {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.leaf(t.clone())
            }
        };
        DbaNodes {
            z: put(&self.z),
            r: put(&self.r),
            a_r: put(&self.a_r),
            a_c: put(&self.a_c),
            wq: put(&self.wq),
            wk: put(&self.wk),
            wv: put(&self.wv),
            wo: put(&self.wo),
            z_map: self.z_map.as_ref().map(put),
        }
    }
}

/// Tape handles for a [`DbaParams`] bundle.
#[derive(Debug, Clone, Copy)]
pub struct DbaNodes {
    pub z: NodeId,
    pub r: NodeId,
    pub a_r: NodeId,
    pub a_c: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub z_map: Option<NodeId>,
}

impl DbaNodes {
    pub fn named(&self) -> Vec<(&'static str, NodeId)> {
        let mut out: Vec<(&'static str, NodeId)> = DBA_TENSOR_NAMES
            .iter()
            .copied()
            .zip([self.z, self.r, self.a_r, self.a_c, self.wq, self.wk, self.wv, self.wo])
            .collect();
        if let Some(m) = self.z_map {
            out.push(("z_map", m));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Mechanism;

    #[test]
    fn init_shapes_and_r_variance() {
        let cfg = AttentionConfig::new(48, 32, 8, 12, 4, Mechanism::DBA).unwrap();
        let p = DbaParams::init(&cfg, &mut Rng::new(0)).unwrap();
        p.check(&cfg).unwrap();
        assert_eq!(p.r.shape(), &[8, 12]);
        let big = AttentionConfig::new(512, 512, 8, 256, 4, Mechanism::DBA).unwrap();
        let r = DbaParams::init(&big, &mut Rng::new(1)).unwrap().r;
        let var = r.data().iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        assert!((var - 4.0 / 512.0).abs() / (4.0 / 512.0) < 0.05);
    }

    #[test]
    fn check_rejects_wrong_shape() {
        let cfg = AttentionConfig::new(8, 8, 2, 4, 2, Mechanism::DBA).unwrap();
        let mut p = DbaParams::init(&cfg, &mut Rng::new(0)).unwrap();
        p.z = Tensor::zeros(3, 8);
        assert!(p.check(&cfg).is_err());
    }
}
