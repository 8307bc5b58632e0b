//! Analytic forward-pass footprint.
//!
//! Each mechanism's op sequence is replayed against a liveness tracker:
//! a tensor is allocated when produced and released after its last use.
//! Inputs and parameters are not counted; head slices are views.

use std::collections::BTreeMap;

use crate::attention::{AttentionConfig, Mechanism};

pub const BYTES_PER_ENTRY: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryProfile {
    /// Max over the sequence of the sum of live intermediate bytes.
    pub peak_bytes: u64,
    /// Largest single intermediate.
    pub largest_tensor_bytes: u64,
}

#[derive(Default)]
struct Liveness {
    live: BTreeMap<&'static str, u64>,
    current: u64,
    peak: u64,
    largest: u64,
}

impl Liveness {
    fn alloc(&mut self, name: &'static str, rows: usize, cols: usize) {
        let bytes = rows as u64 * cols as u64 * BYTES_PER_ENTRY;
        let prev = self.live.insert(name, bytes);
        debug_assert!(prev.is_none(), "{name} allocated twice");
        self.current += bytes;
        self.peak = self.peak.max(self.current);
        self.largest = self.largest.max(bytes);
    }

    fn free(&mut self, names: &[&'static str]) {
        for name in names {
            self.current -= self.live.remove(name).expect("freeing a live tensor");
        }
    }

    fn profile(&self) -> MemoryProfile {
        MemoryProfile {
            peak_bytes: self.peak,
            largest_tensor_bytes: self.largest,
        }
    }
}

pub fn peak_bytes(cfg: &AttentionConfig) -> u64 {
    memory_profile(cfg).peak_bytes
}

pub fn memory_profile(cfg: &AttentionConfig) -> MemoryProfile {
    let (n, d, dp, din) = (cfg.n, cfg.d, cfg.d_p, cfg.d_in);
    let dh = cfg.head_dim();
    let mut m = Liveness::default();
    m.alloc("q", n, d);
    m.alloc("k", n, d);
    m.alloc("v", n, d);
    match cfg.mechanism {
        Mechanism::Vanilla => {
            m.alloc("cat", n, d);
            for _ in 0..cfg.heads {
                m.alloc("scores", n, n);
                m.alloc("map", n, n);
                m.free(&["scores"]);
                // written into its slice of `cat`
                m.free(&["map"]);
            }
        }
        Mechanism::Dba {
            seq_compress,
            dim_compress,
        } => {
            m.alloc("w_r_prime", n, dp);
            m.alloc("w_c_prime", n, dp);
            m.alloc("cat", n, d);
            for _ in 0..cfg.heads {
                if seq_compress {
                    m.alloc("logits_r", dp, n);
                    m.alloc("w_r", dp, n);
                    m.free(&["logits_r"]);
                    m.alloc("q_l", dp, dh);
                    m.free(&["w_r"]);
                    m.alloc("logits_c", dp, n);
                    m.alloc("w_c", dp, n);
                    m.free(&["logits_c"]);
                    m.alloc("k_l", dp, dh);
                    m.free(&["w_c"]);
                }
                m.alloc("v_dba", dp, dh);
                head_core(&mut m, dp, dh, din, dim_compress, seq_compress);
            }
            m.free(&["w_r_prime", "w_c_prime"]);
        }
        Mechanism::FixedLowRank => {
            m.alloc("cat", n, d);
            for _ in 0..cfg.heads {
                m.alloc("q_l", dp, dh);
                m.alloc("k_l", dp, dh);
                m.alloc("v_dba", dp, dh);
                head_core(&mut m, dp, dh, din, true, true);
            }
        }
    }
    m.free(&["q", "k", "v"]);
    m.alloc("out", n, d);
    m.free(&["cat"]);
    m.profile()
}

/// From the compressed `q_l`, `k_l`, `v_dba` to the head's slice of `cat`.
fn head_core(m: &mut Liveness, dp: usize, dh: usize, din: usize, dim_compress: bool, owns_ql: bool) {
    if dim_compress {
        m.alloc("q_dba", dp, din);
        m.alloc("k_dba", dp, din);
    }
    m.alloc("scores", dp, dp);
    let mut done: Vec<&'static str> = Vec::new();
    if dim_compress {
        done.extend(["q_dba", "k_dba"]);
    }
    if owns_ql {
        done.extend(["q_l", "k_l"]);
    }
    m.free(&done);
    m.alloc("attn", dp, dp);
    m.free(&["scores"]);
    m.alloc("mixed", dp, dh);
    m.free(&["attn", "v_dba"]);
    // W_r′·mixed lands in its slice of `cat`
    m.free(&["mixed"]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, mech: Mechanism) -> AttentionConfig {
        AttentionConfig::new(n, 64, 16, 24, 1, mech).unwrap()
    }

    #[test]
    fn vanilla_holds_the_map() {
        let p = memory_profile(&cfg(4096, Mechanism::Vanilla));
        assert_eq!(p.largest_tensor_bytes, 4096 * 4096 * 8);
        assert!(p.peak_bytes >= 2 * 134_217_728);
    }

    #[test]
    fn dba_has_no_quadratic_term() {
        let p = memory_profile(&cfg(4096, Mechanism::DBA));
        assert!(p.largest_tensor_bytes <= 2_097_152);
        let f = |n| peak_bytes(&cfg(n, Mechanism::DBA)) as i128;
        for n in [256, 1000, 4096] {
            assert_eq!(f(n + 2) - 2 * f(n + 1) + f(n), 0);
        }
    }

    #[test]
    fn ratio_small_and_decreasing() {
        let ratio = |n| peak_bytes(&cfg(n, Mechanism::DBA)) as f64 / peak_bytes(&cfg(n, Mechanism::Vanilla)) as f64;
        assert!(ratio(4096) < 0.2);
        let mut prev = f64::INFINITY;
        for n in [256, 512, 1024, 2048, 4096] {
            assert!(ratio(n) < prev);
            prev = ratio(n);
        }
    }

    #[test]
    fn deterministic() {
        let c = cfg(777, Mechanism::FixedLowRank);
        assert_eq!(memory_profile(&c), memory_profile(&c));
    }
}
