//! Exact low-rank representability of `Q Kᵀ`.

use crate::error::{DbaError, Result};
use crate::linalg::{matrix_rank, relative_reconstruction_error, svd_lowrank_factor};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const RECOVERY_TOL: f64 = 1e-8;
pub const STRICTNESS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentabilityReport {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub numeric_rank: usize,
    /// Relative Frobenius error of the rank-r truncation.
    pub error_at_r: f64,
    /// Same at rank r−1; `None` when r = 1.
    pub error_below_r: Option<f64>,
}

impl RepresentabilityReport {
    pub fn pass(&self) -> bool {
        self.numeric_rank <= self.r
            && self.error_at_r < RECOVERY_TOL
            && self.error_below_r.is_none_or(|e| e > STRICTNESS_TOL)
    }
}

/// Checks an arbitrary square score matrix against target rank `r`.
pub fn representability_of(scores: &Tensor, r: usize) -> Result<RepresentabilityReport> {
    let error_at_r = relative_reconstruction_error(scores, &svd_lowrank_factor(scores, r)?)?;
    let error_below_r = if r > 1 {
        Some(relative_reconstruction_error(scores, &svd_lowrank_factor(scores, r - 1)?)?)
    } else {
        None
    };
    Ok(RepresentabilityReport {
        n: scores.rows(),
        d: scores.cols(),
        r,
        numeric_rank: matrix_rank(scores),
        error_at_r,
        error_below_r,
    })
}

/// Builds `Q, K ∈ ℝ^{n×d}` of exact rank `r` from Gaussian factors and
/// checks `Q Kᵀ`.
pub fn lowrank_representability_check(n: usize, d: usize, r: usize, seed: u64) -> Result<RepresentabilityReport> {
    if r == 0 || r > n.min(d) {
        return Err(DbaError::Parameter(format!("need 1 <= r <= min(n, d) = {}, got {r}", n.min(d))));
    }
    let mut rng = Rng::new(seed);
    let q = rng.gaussian(n, r, 1.0)?.matmul(&rng.gaussian(r, d, 1.0)?)?;
    let k = rng.gaussian(n, r, 1.0)?.matmul(&rng.gaussian(r, d, 1.0)?)?;
    let mut rep = representability_of(&q.matmul(&k.transpose())?, r)?;
    rep.d = d;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_recovery() {
        let rep = lowrank_representability_check(32, 8, 8, 0).unwrap();
        assert_eq!(rep.numeric_rank, 8);
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn rank_one_is_outer_product() {
        let rep = lowrank_representability_check(10, 6, 1, 2).unwrap();
        assert_eq!(rep.numeric_rank, 1);
        assert!(rep.error_at_r < 1e-10);
    }

    #[test]
    fn identity_scores_need_full_rank() {
        let eye = Tensor::eye(16);
        let rep = representability_of(&eye.matmul(&eye.transpose()).unwrap(), 16).unwrap();
        assert_eq!(rep.numeric_rank, 16);
        assert!(rep.pass());
        for r in 1..16 {
            assert!(representability_of(&eye, r).unwrap().error_at_r > STRICTNESS_TOL);
        }
    }

    #[test]
    fn rank_beyond_width_rejected() {
        assert!(lowrank_representability_check(24, 12, 13, 0).is_err());
        assert!(lowrank_representability_check(24, 12, 0, 0).is_err());
    }
}
