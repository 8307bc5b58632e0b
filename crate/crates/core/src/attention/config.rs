use std::fmt;
use std::str::FromStr;

use crate::error::{DbaError, Result};

/// Which attention computation a layer performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Vanilla,
    /// Dynamic bilinear attention. Disabling `seq_compress` replaces
    /// `W_r`, `W_c` by the identity (requires `d_p == n`); disabling
    /// `dim_compress` bypasses `R`.
    Dba { seq_compress: bool, dim_compress: bool },
    FixedLowRank,
}

impl Mechanism {
    pub const DBA: Mechanism = Mechanism::Dba {
        seq_compress: true,
        dim_compress: true,
    };

    pub fn is_dba(self) -> bool {
        matches!(self, Mechanism::Dba { .. })
    }

    /// Whether the same parameters accept any sequence length.
    pub fn supports_variable_length(self) -> bool {
        match self {
            Mechanism::Vanilla => true,
            Mechanism::Dba { seq_compress, .. } => seq_compress,
            Mechanism::FixedLowRank => false,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mechanism::Vanilla => "vanilla",
            Mechanism::FixedLowRank => "fixed_lowrank",
            Mechanism::Dba {
                seq_compress: true,
                dim_compress: true,
            } => "dba",
            Mechanism::Dba {
                seq_compress: false,
                dim_compress: true,
            } => "dba_no_seq_compress",
            Mechanism::Dba {
                seq_compress: true,
                dim_compress: false,
            } => "dba_no_dim_compress",
            Mechanism::Dba {
                seq_compress: false,
                dim_compress: false,
            } => "dba_no_seq_compress+dba_no_dim_compress",
        };
        f.write_str(s)
    }
}

impl FromStr for Mechanism {
    type Err = DbaError;

    fn from_str(s: &str) -> Result<Self> {
        let mut seq = true;
        let mut dim = true;
        let mut base = None;
        for part in s.split('+').map(str::trim) {
            match part {
                "vanilla" => base = Some(Mechanism::Vanilla),
                "fixed_lowrank" | "fixed_lowrank_baseline" | "fixed" => {
                    base = Some(Mechanism::FixedLowRank)
                }
                "dba" => base = Some(Mechanism::DBA),
                "dba_no_seq_compress" => seq = false,
                "dba_no_dim_compress" => dim = false,
                other => return Err(DbaError::Parameter(format!("unknown mechanism {other:?}"))),
            }
        }
        match base {
            Some(m) if seq && dim => Ok(m),
            None | Some(Mechanism::Dba { .. }) => Ok(Mechanism::Dba {
                seq_compress: seq,
                dim_compress: dim,
            }),
            Some(m) => Err(DbaError::Parameter(format!(
                "compression flags only apply to dba, not {m}"
            ))),
        }
    }
}

/// One attention instantiation: `(n, d, d_p, d_in, heads, mechanism)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub n: usize,
    pub d: usize,
    pub d_p: usize,
    pub d_in: usize,
    pub heads: usize,
    pub mechanism: Mechanism,
}

impl AttentionConfig {
    pub fn new(n: usize, d: usize, d_p: usize, d_in: usize, heads: usize, mechanism: Mechanism) -> Result<Self> {
        let cfg = Self {
            n,
            d,
            d_p,
            d_in,
            heads,
            mechanism,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DbaError::Parameter(msg));
        if self.n == 0 || self.d == 0 || self.heads == 0 {
            return bad(format!("n, d, heads must be >= 1: {self:?}"));
        }
        if self.d % self.heads != 0 {
            return bad(format!("d={} not divisible by heads={}", self.d, self.heads));
        }
        if self.mechanism != Mechanism::Vanilla {
            if self.d_p == 0 || self.d_p > self.n {
                return bad(format!("need 1 <= d_p <= n, got d_p={} n={}", self.d_p, self.n));
            }
            if self.d_in == 0 || self.d_in > self.d {
                return bad(format!("need 1 <= d_in <= d, got d_in={} d={}", self.d_in, self.d));
            }
            if self.d_p > self.n.min(self.d) {
                log::warn!(
                    "d_p={} exceeds min(n, d)={}; extra slots are redundant",
                    self.d_p,
                    self.n.min(self.d)
                );
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Whether the hidden width is compressed by `R` (true for non-DBA mechanisms that use it).
    pub fn dim_compress(&self) -> bool {
        match self.mechanism {
            Mechanism::Dba { dim_compress, .. } => dim_compress,
            _ => true,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }

    pub fn with_mechanism(&self, mechanism: Mechanism) -> Self {
        Self { mechanism, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mechanism_names_roundtrip() {
        for name in [
            "vanilla",
            "dba",
            "fixed_lowrank",
            "dba_no_seq_compress",
            "dba_no_dim_compress",
            "dba_no_seq_compress+dba_no_dim_compress",
        ] {
            let m: Mechanism = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("linformer".parse::<Mechanism>().is_err());
        assert!("vanilla+dba_no_dim_compress".parse::<Mechanism>().is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(AttentionConfig::new(16, 12, 4, 4, 5, Mechanism::DBA).is_err());
        assert!(AttentionConfig::new(16, 12, 17, 4, 3, Mechanism::DBA).is_err());
        assert!(AttentionConfig::new(16, 12, 4, 13, 3, Mechanism::DBA).is_err());
        // d_p > min(n, d) only warns.
        assert!(AttentionConfig::new(16, 8, 12, 4, 2, Mechanism::DBA).is_ok());
        assert!(AttentionConfig::new(16, 12, 0, 0, 3, Mechanism::Vanilla).is_ok());
    }
}
