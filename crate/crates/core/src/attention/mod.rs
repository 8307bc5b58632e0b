//! Attention mechanisms expressed over [`Tape`](crate::autodiff::Tape) nodes.
//!
//! * [`vanilla`]: `softmax(QKᵀ/√d)·V`, materializing the n×n map.
//! * [`dba`]: dynamic bilinear low-rank self-attention. Sequence length is
//!   compressed by input-dependent softmax projections `W_r = softmax(Z Qᵀ)`,
//!   `W_c = softmax(Z Kᵀ)`, the hidden width by `R`, and the result is
//!   expanded back to length n by `W_r′ = X·A_r`. No n×n tensor exists.
//! * [`cross`]: two-hierarchy DBA cross-attention.
//! * [`fixed`]: input-invariant low-rank control (fixed projections, fixed n).

pub mod config;
pub mod cross;
pub mod dba;
pub mod fixed;
pub mod layer;
pub mod params;
pub mod vanilla;

pub use config::{AttentionConfig, Mechanism};
pub use cross::{dba_cross_attention, dba_cross_attention_with_paths, CrossPaths, CrossTrace};
pub use dba::{
    dba_self_attention, dba_self_attention_traced, dynamic_projections, dynamic_projections_node,
    reconstruction_maps, reconstruction_maps_node, AttentionTrace, HeadTrace,
};
pub use fixed::{fixed_lowrank_attention, FixedLowRankNodes, FixedLowRankParams};
pub use layer::{attention_layer, LayerNodes, LayerParams, VanillaParams};
pub use params::{DbaNodes, DbaParams};
pub use vanilla::{vanilla_attention, vanilla_attention_node, vanilla_layer, VanillaNodes};
