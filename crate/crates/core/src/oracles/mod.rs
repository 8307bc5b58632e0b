//! Executable checks: random-projection bounds, exact low-rank
//! representability, reduction to vanilla attention and gradient checks.

pub mod gradcheck;
pub mod jl;
pub mod rank;
pub mod report;

pub use gradcheck::{
    gradcheck_cross, gradcheck_layer, gradcheck_self_at, GradcheckReport, GRADCHECK_TOL, MAX_GRADCHECK_DIM,
};
pub use jl::{
    jl_bound, jl_minimum_dim, jl_monte_carlo, jl_monte_carlo_with, score_approximation_trials, JlTrialReport,
    Projection,
};
pub use rank::{lowrank_representability_check, representability_of, RepresentabilityReport};
pub use report::ReportLine;

use crate::attention::{dba_self_attention, vanilla_attention, AttentionConfig, DbaParams, Mechanism};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::linalg::inverse;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const REDUCTION_TOL: f64 = 1e-10;

/// Max-abs gap between DBA with both compressions off and vanilla attention
/// on the same projections.
///
/// `X` and `Wq, Wk, Wv, Wo` are random; `A_r = A_c = X⁻¹` so both
/// reconstruction maps are the identity, and `R = I`.
pub fn reduction_identity_gap(n: usize, seed: u64) -> Result<f64> {
    let mech = Mechanism::Dba {
        seq_compress: false,
        dim_compress: false,
    };
    let cfg = AttentionConfig::new(n, n, n, n, 1, mech)?;
    let mut rng = Rng::new(seed);
    let x = rng.gaussian(n, n, 1.0)?;
    let x_inv = inverse(&x)?;
    let mut params = DbaParams::init(&cfg, &mut rng)?;
    params.r = Tensor::eye(n);
    params.a_r = x_inv.clone();
    params.a_c = x_inv;

    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let p = params.register(&mut tape, false);
    let out = dba_self_attention(&mut tape, xi, &p, &cfg)?;

    let q = x.matmul(&params.wq)?;
    let k = x.matmul(&params.wk)?;
    let v = x.matmul(&params.wv)?;
    let expect = vanilla_attention(&q, &k, &v)?.matmul(&params.wo)?;
    Ok(tape.value(out).max_abs_diff(&expect))
}
