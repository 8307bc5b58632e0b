//! Synthetic sequence tasks.
//!
//! Token ids: `0..vocab` are ordinary symbols, then [`TaskSpec::marker`] and
//! [`TaskSpec::cls`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{DbaError, Result};
use crate::rng::{split_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Label is the strict modal symbol of the sequence.
    MajorityToken,
    /// `CLS` at position 0, one marker somewhere in `1..=n-2`; label is the
    /// symbol right after the marker.
    SparseRecall,
    /// Binary: does the query symbol (repeated `n` times in `X₁`) occur
    /// among the `n2` keys of `X₂`?
    CrossMatch,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::MajorityToken => "majority",
            TaskKind::SparseRecall => "sparse-recall",
            TaskKind::CrossMatch => "cross-match",
        })
    }
}

impl FromStr for TaskKind {
    type Err = DbaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" | "majority-token" => Ok(TaskKind::MajorityToken),
            "sparse-recall" | "recall" => Ok(TaskKind::SparseRecall),
            "cross-match" | "cross" => Ok(TaskKind::CrossMatch),
            other => Err(DbaError::Parameter(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Sequence length (query length for cross-match).
    pub n: usize,
    /// Key length for cross-match; ignored otherwise.
    pub n2: usize,
    pub vocab: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Defaults used by the CLI and the acceptance runs.
    pub fn default_for(kind: TaskKind, seed: u64) -> Self {
        let (n, n2, vocab, train_size, val_size) = match kind {
            TaskKind::MajorityToken => (48, 0, 4, 600, 400),
            TaskKind::SparseRecall => (64, 0, 8, 1500, 500),
            TaskKind::CrossMatch => (8, 16, 8, 800, 400),
        };
        Self {
            kind,
            n,
            n2,
            vocab,
            train_size,
            val_size,
            seed,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }

    pub fn marker(&self) -> usize {
        self.vocab
    }

    pub fn cls(&self) -> usize {
        self.vocab + 1
    }

    /// Size of the input alphabet including the two special tokens.
    pub fn vocab_in(&self) -> usize {
        self.vocab + 2
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            TaskKind::CrossMatch => 2,
            _ => self.vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(DbaError::Parameter(format!("vocab must be >= 3, got {}", self.vocab)));
        }
        let min_n = match self.kind {
            TaskKind::SparseRecall => 3,
            _ => 1,
        };
        if self.n < min_n || (self.kind == TaskKind::CrossMatch && self.n2 < 1) {
            return Err(DbaError::Parameter(format!("sequence too short for {}: {self:?}", self.kind)));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(DbaError::Parameter("train and val sizes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub tokens: Vec<usize>,
    /// Second hierarchy for cross-match.
    pub keys: Option<Vec<usize>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Strict mode of `tokens`, `None` on a tie.
pub fn majority_label(tokens: &[usize]) -> Option<usize> {
    let top = tokens.iter().copied().max()?;
    let mut counts = vec![0usize; top + 1];
    for &t in tokens {
        counts[t] += 1;
    }
    let best = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == best);
    let (label, _) = winners.next()?;
    winners.next().is_none().then_some(label)
}

/// Probability that a majority-token position is forced to the planted label.
const PLANT: f64 = 0.3;

fn majority_sample(spec: &TaskSpec, rng: &mut Rng) -> Sample {
    loop {
        let planted = rng.below(spec.vocab);
        let tokens: Vec<usize> = (0..spec.n)
            .map(|_| if rng.unit() < PLANT { planted } else { rng.below(spec.vocab) })
            .collect();
        if let Some(label) = majority_label(&tokens) {
            return Sample {
                tokens,
                keys: None,
                label,
            };
        }
    }
}

fn recall_sample(spec: &TaskSpec, rng: &mut Rng) -> Sample {
    let n = spec.n;
    let mut tokens: Vec<usize> = (0..n).map(|_| rng.below(spec.vocab)).collect();
    tokens[0] = spec.cls();
    let at = 1 + rng.below(n - 2);
    tokens[at] = spec.marker();
    Sample {
        label: tokens[at + 1],
        tokens,
        keys: None,
    }
}

fn cross_sample(spec: &TaskSpec, rng: &mut Rng) -> Sample {
    let query = rng.below(spec.vocab);
    let mut keys: Vec<usize> = (0..spec.n2)
        .map(|_| {
            let k = rng.below(spec.vocab - 1);
            if k >= query {
                k + 1
            } else {
                k
            }
        })
        .collect();
    let positive = rng.unit() < 0.5;
    if positive {
        let at = rng.below(spec.n2);
        keys[at] = query;
    }
    Sample {
        tokens: vec![query; spec.n],
        keys: Some(keys),
        label: usize::from(positive),
    }
}

pub fn sample(spec: &TaskSpec, rng: &mut Rng) -> Sample {
    match spec.kind {
        TaskKind::MajorityToken => majority_sample(spec, rng),
        TaskKind::SparseRecall => recall_sample(spec, rng),
        TaskKind::CrossMatch => cross_sample(spec, rng),
    }
}

/// Deterministic under `spec.seed`. Validation samples that coincide with a
/// training sample are redrawn, so the two splits never share a sequence.
pub fn gen_task(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::new(split_seed(spec.seed, 0x7a5c));
    let train: Vec<Sample> = (0..spec.train_size).map(|_| sample(spec, &mut rng)).collect();
    let seen: HashSet<(&[usize], Option<&[usize]>)> =
        train.iter().map(|s| (s.tokens.as_slice(), s.keys.as_deref())).collect();
    let mut val = Vec::with_capacity(spec.val_size);
    let mut attempts = 0usize;
    while val.len() < spec.val_size {
        attempts += 1;
        if attempts > 100 * spec.val_size + 1000 {
            return Err(DbaError::Parameter(format!(
                "cannot draw {} validation samples disjoint from training for {spec:?}",
                spec.val_size
            )));
        }
        let s = sample(spec, &mut rng);
        if !seen.contains(&(s.tokens.as_slice(), s.keys.as_deref())) {
            val.push(s);
        }
    }
    Ok(Dataset {
        spec: *spec,
        train,
        val,
    })
}
