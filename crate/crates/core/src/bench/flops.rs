//! Analytic operation counts. A multiply-add is 2 flops; a softmax costs
//! 5 ops per entry (max, subtract, exp, sum, divide). Score scaling by
//! `1/√width` is folded into the softmax cost.

use crate::attention::{AttentionConfig, Mechanism};

pub const SOFTMAX_OPS_PER_ENTRY: u64 = 5;

/// `2·m·k·p` for an (m×k)(k×p) product.
fn mm(m: usize, k: usize, p: usize) -> u64 {
    2 * (m as u64) * (k as u64) * (p as u64)
}

fn softmax(rows: usize, cols: usize) -> u64 {
    SOFTMAX_OPS_PER_ENTRY * rows as u64 * cols as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    /// `X·Wq`, `X·Wk`, `X·Wv` and the output map, `8nd²` in total.
    pub projections: u64,
    /// Everything between the projections.
    pub core: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.projections + self.core
    }
}

pub fn count_flops(cfg: &AttentionConfig) -> u64 {
    flop_breakdown(cfg).total()
}

pub fn flop_breakdown(cfg: &AttentionConfig) -> FlopBreakdown {
    let (n, d, dp, din, heads) = (cfg.n, cfg.d, cfg.d_p, cfg.d_in, cfg.heads);
    let dh = cfg.head_dim();
    let projections = 4 * mm(n, d, d);
    let per_head = |f: u64| f * heads as u64;
    let core = match cfg.mechanism {
        Mechanism::Vanilla => {
            // Q_h K_hᵀ, softmax, P·V_h
            per_head(mm(n, dh, n) + softmax(n, n) + mm(n, n, dh))
        }
        Mechanism::Dba {
            seq_compress,
            dim_compress,
        } => {
            // W_r′ = X A_r, W_c′ = X A_c
            let recon_maps = 2 * mm(n, d, dp);
            let heads_cost = per_head(
                // Z_h Q_hᵀ and Z_h K_hᵀ, their softmaxes, then W_r Q_h and W_c K_h
                if seq_compress {
                    2 * mm(dp, dh, n) + 2 * softmax(dp, n) + 2 * mm(dp, n, dh)
                } else {
                    0
                } + compressed_core(n, dp, dh, din, dim_compress),
            );
            recon_maps + heads_cost
        }
        Mechanism::FixedLowRank => {
            // E Q_h and F K_h; the reconstruction tables are parameters
            per_head(2 * mm(dp, n, dh) + compressed_core(n, dp, dh, din, true))
        }
    };
    FlopBreakdown { projections, core }
}

/// `W_c′ᵀ V_h`, the `R` products, scores, softmax, mixing and `W_r′` expansion.
fn compressed_core(n: usize, dp: usize, dh: usize, din: usize, dim_compress: bool) -> u64 {
    let width = if dim_compress { din } else { dh };
    let r_products = if dim_compress { 2 * mm(dp, dh, din) } else { 0 };
    mm(dp, n, dh) + r_products + mm(dp, width, dp) + softmax(dp, dp) + mm(dp, dp, dh) + mm(n, dp, dh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, mech: Mechanism) -> AttentionConfig {
        AttentionConfig::new(n, 64, 16, 24, 1, mech).unwrap()
    }

    #[test]
    fn vanilla_hand_count() {
        let c = AttentionConfig::new(2, 1, 1, 1, 1, Mechanism::Vanilla).unwrap();
        let b = flop_breakdown(&c);
        assert_eq!(b.core, 8 + 8 + 4 * 5);
        assert_eq!(b.projections, 8 * 2);
    }

    #[test]
    fn dba_is_affine_in_n() {
        for mech in [Mechanism::DBA, "dba_no_dim_compress".parse().unwrap()] {
            let f = |n| count_flops(&cfg(n, mech)) as i128;
            let step = f(128) - 2 * f(64);
            for n in [64, 100, 256, 1000, 4096] {
                assert_eq!(f(2 * n) - 2 * f(n), step);
                assert_eq!(f(n + 2) - 2 * f(n + 1) + f(n), 0);
            }
        }
    }

    #[test]
    fn vanilla_is_quadratic() {
        let f = |n| count_flops(&cfg(n, Mechanism::Vanilla)) as f64;
        let ratio = f(8192) / f(4096);
        assert!((ratio - 4.0).abs() / 4.0 < 0.05, "{ratio}");
    }

    #[test]
    fn heads_split_width() {
        let one = AttentionConfig::new(64, 32, 8, 8, 1, Mechanism::Vanilla).unwrap();
        let four = AttentionConfig { heads: 4, ..one };
        assert_eq!(flop_breakdown(&one).projections, flop_breakdown(&four).projections);
        // The score product and mix are width-linear; only softmax scales with heads.
        assert_eq!(
            flop_breakdown(&four).core - flop_breakdown(&one).core,
            3 * SOFTMAX_OPS_PER_ENTRY * 64 * 64
        );
    }
}
