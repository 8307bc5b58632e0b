//! One attention layer of any mechanism behind a single interface.

use crate::autodiff::{NodeId, Tape};
use crate::error::{DbaError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::{AttentionConfig, Mechanism};
use super::dba::dba_self_attention;
use super::fixed::{fixed_lowrank_attention, FixedLowRankNodes, FixedLowRankParams};
use super::params::{DbaNodes, DbaParams, DBA_TENSOR_NAMES};
use super::vanilla::{vanilla_layer, VanillaNodes};

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

const VANILLA_NAMES: [&str; 4] = ["wq", "wk", "wv", "wo"];
const FIXED_NAMES: [&str; 9] = ["e", "f", "recon_r", "recon_c", "r", "wq", "wk", "wv", "wo"];

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Vanilla(VanillaParams),
    Dba(DbaParams),
    Fixed(FixedLowRankParams),
}

#[derive(Debug, Clone, Copy)]
pub enum LayerNodes {
    Vanilla(VanillaNodes),
    Dba(DbaNodes),
    Fixed(FixedLowRankNodes),
}

impl LayerParams {
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.mechanism {
            Mechanism::Vanilla => {
                let var = 1.0 / cfg.d as f64;
                let mut w = || rng.gaussian(cfg.d, cfg.d, var);
                LayerParams::Vanilla(VanillaParams {
                    wq: w()?,
                    wk: w()?,
                    wv: w()?,
                    wo: w()?,
                })
            }
            Mechanism::Dba { .. } => LayerParams::Dba(DbaParams::init(cfg, rng)?),
            Mechanism::FixedLowRank => LayerParams::Fixed(FixedLowRankParams::init(cfg, rng)?),
        })
    }

    /// Tensor names a layer of this mechanism owns, in `named()` order.
    pub fn tensor_names(mechanism: Mechanism) -> &'static [&'static str] {
        match mechanism {
            Mechanism::Vanilla => &VANILLA_NAMES,
            Mechanism::Dba { .. } => &DBA_TENSOR_NAMES,
            Mechanism::FixedLowRank => &FIXED_NAMES,
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            LayerParams::Vanilla(p) => VANILLA_NAMES.iter().copied().zip([&p.wq, &p.wk, &p.wv, &p.wo]).collect(),
            LayerParams::Dba(p) => p.named(),
            LayerParams::Fixed(p) => p.named(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LayerNodes {
        match self {
            LayerParams::Vanilla(p) => {
                let mut put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.leaf(t.clone()) };
                LayerNodes::Vanilla(VanillaNodes {
                    wq: put(&p.wq),
                    wk: put(&p.wk),
                    wv: put(&p.wv),
                    wo: put(&p.wo),
                })
            }
            LayerParams::Dba(p) => LayerNodes::Dba(p.register(tape, trainable)),
            LayerParams::Fixed(p) => LayerNodes::Fixed(p.register(tape, trainable)),
        }
    }
}

impl LayerNodes {
    /// Builds handles by asking `lookup` for each tensor name of the mechanism.
    pub fn resolve(mechanism: Mechanism, mut lookup: impl FnMut(&str) -> Result<NodeId>) -> Result<Self> {
        Ok(match mechanism {
            Mechanism::Vanilla => LayerNodes::Vanilla(VanillaNodes {
                wq: lookup("wq")?,
                wk: lookup("wk")?,
                wv: lookup("wv")?,
                wo: lookup("wo")?,
            }),
            Mechanism::Dba { .. } => LayerNodes::Dba(DbaNodes {
                z: lookup("z")?,
                r: lookup("r")?,
                a_r: lookup("a_r")?,
                a_c: lookup("a_c")?,
                wq: lookup("wq")?,
                wk: lookup("wk")?,
                wv: lookup("wv")?,
                wo: lookup("wo")?,
                z_map: None,
            }),
            Mechanism::FixedLowRank => LayerNodes::Fixed(FixedLowRankNodes {
                e: lookup("e")?,
                f: lookup("f")?,
                recon_r: lookup("recon_r")?,
                recon_c: lookup("recon_c")?,
                r: lookup("r")?,
                wq: lookup("wq")?,
                wk: lookup("wk")?,
                wv: lookup("wv")?,
                wo: lookup("wo")?,
            }),
        })
    }
}

/// Self-attention `X → layer(X)` for whichever mechanism `nodes` holds.
pub fn attention_layer(tape: &mut Tape, x: NodeId, nodes: &LayerNodes, cfg: &AttentionConfig) -> Result<NodeId> {
    match (nodes, cfg.mechanism) {
        (LayerNodes::Vanilla(p), Mechanism::Vanilla) => vanilla_layer(tape, x, x, p, cfg.heads),
        (LayerNodes::Dba(p), Mechanism::Dba { .. }) => dba_self_attention(tape, x, p, cfg),
        (LayerNodes::Fixed(p), Mechanism::FixedLowRank) => fixed_lowrank_attention(tape, x, p, cfg).map(|(o, _)| o),
        (_, m) => Err(DbaError::Parameter(format!("layer parameters do not match mechanism {m}"))),
    }
}
