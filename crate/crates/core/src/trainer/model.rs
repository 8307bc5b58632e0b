//! Tiny transformer classifier: token embedding, pre-norm blocks
//! (attention + 2-layer feedforward, both residual), pooled linear readout.
//!
//! Parameters live as an ordered list of named tensors, which is exactly the
//! checkpoint payload.

use std::collections::HashMap;

use crate::attention::{
    attention_layer, dba_cross_attention, vanilla_layer, AttentionConfig, DbaNodes, DbaParams, LayerNodes,
    LayerParams, Mechanism, VanillaNodes,
};
use crate::autodiff::{NodeId, Tape};
use crate::error::{DbaError, Result};
use crate::rng::{split_seed, Rng};
use crate::tensor::Tensor;

use super::tasks::{Sample, TaskKind, TaskSpec};

/// Names of a DBA cross-attention layer. `z2` compresses the key hierarchy;
/// the query side gets its `Z` from `z_map`, so it has no `z` or `a_c`.
const DBA_CROSS_NAMES: [&str; 8] = ["z2", "r", "a_r", "wq", "wk", "wv", "wo", "z_map"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Mean over positions.
    Mean,
    /// Hidden state at position 0.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub mechanism: Mechanism,
    pub d: usize,
    pub d_p: usize,
    pub d_in: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// One `Z` for every self-attention block instead of one per block.
    pub share_z: bool,
    /// Add sinusoidal position encodings to the embeddings.
    pub positions: bool,
    /// Add an embedding of the previous token to each position.
    pub token_shift: bool,
    pub readout: Readout,
}

impl ModelConfig {
    /// Sizes used for the bundled tasks; order-sensitive tasks get position
    /// and previous-token features.
    pub fn for_task(kind: TaskKind, mechanism: Mechanism) -> Self {
        let base = Self {
            mechanism,
            d: 32,
            d_p: 8,
            d_in: 12,
            heads: 2,
            layers: 1,
            ffn_hidden: 64,
            share_z: false,
            positions: false,
            token_shift: false,
            readout: Readout::Mean,
        };
        match kind {
            TaskKind::MajorityToken => base,
            TaskKind::SparseRecall => Self {
                d_p: 4,
                positions: true,
                token_shift: true,
                readout: Readout::First,
                ..base
            },
            TaskKind::CrossMatch => base,
        }
    }

    pub fn attention(&self, n: usize) -> AttentionConfig {
        AttentionConfig {
            n,
            d: self.d,
            d_p: self.d_p,
            d_in: self.d_in,
            heads: self.heads,
            mechanism: self.mechanism,
        }
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        task.validate()?;
        if self.layers == 0 || self.ffn_hidden == 0 {
            return Err(DbaError::Parameter("layers and ffn_hidden must be >= 1".into()));
        }
        if task.kind == TaskKind::CrossMatch {
            if self.mechanism == Mechanism::FixedLowRank {
                return Err(DbaError::Parameter("fixed_lowrank has no cross-attention form".into()));
            }
            if self.mechanism.is_dba() && self.mechanism != Mechanism::DBA {
                return Err(DbaError::Parameter("cross-attention needs both dba compressions".into()));
            }
            self.attention(task.n2).validate()?;
        }
        self.attention(task.n).validate()
    }
}

fn sinusoid(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(n, d, |pos, j| {
        let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        let a = pos as f64 * freq;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

fn one_hot(ids: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(ids.len(), width);
    for (i, &id) in ids.iter().enumerate() {
        t.set(i, id, 1.0);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub task: TaskSpec,
    params: Vec<(String, Tensor)>,
}

/// Parameter handles on one tape.
pub struct ModelNodes {
    ids: HashMap<String, NodeId>,
    order: Vec<NodeId>,
}

impl ModelNodes {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| DbaError::Graph(format!("model has no tensor {name:?}")))
    }

    /// Handles in [`Model::named`] order.
    pub fn ordered(&self) -> &[NodeId] {
        &self.order
    }
}

impl Model {
    fn cross(&self) -> bool {
        self.task.kind == TaskKind::CrossMatch
    }

    fn attn_names(cfg: &ModelConfig, task: &TaskSpec) -> Vec<&'static str> {
        if task.kind == TaskKind::CrossMatch && cfg.mechanism.is_dba() {
            DBA_CROSS_NAMES.to_vec()
        } else {
            let mut names = LayerParams::tensor_names(cfg.mechanism).to_vec();
            if cfg.share_z && cfg.mechanism.is_dba() {
                names.retain(|&n| n != "z");
            }
            names
        }
    }

    /// Fresh parameters, deterministic under `seed`.
    pub fn init(cfg: ModelConfig, task: TaskSpec, seed: u64) -> Result<Self> {
        cfg.validate(&task)?;
        let d = cfg.d;
        let mut rng = Rng::new(split_seed(seed, 0x1417));
        let mut params: Vec<(String, Tensor)> = Vec::new();
        params.push(("embed.tok".into(), rng.gaussian(task.vocab_in(), d, 1.0)?));
        if cfg.token_shift {
            params.push(("embed.prev".into(), rng.gaussian(task.vocab_in() + 1, d, 1.0)?));
        }
        let attn_cfg = cfg.attention(task.n);
        if cfg.share_z && cfg.mechanism.is_dba() && task.kind != TaskKind::CrossMatch {
            params.push(("shared.z".into(), rng.gaussian(cfg.d_p, d, 1.0 / d as f64)?));
        }
        for b in 0..cfg.layers {
            let p = |s: &str| format!("block{b}.{s}");
            params.push((p("norm1.g"), Tensor::full(1, d, 1.0)));
            if task.kind == TaskKind::CrossMatch {
                params.push((p("norm_kv.g"), Tensor::full(1, d, 1.0)));
            }
            let layer: Vec<(&str, Tensor)> = if task.kind == TaskKind::CrossMatch && cfg.mechanism.is_dba() {
                let dp = DbaParams::init_cross(&attn_cfg, &mut rng)?;
                let z2 = rng.gaussian(cfg.d_p, d, 1.0 / d as f64)?;
                let z_map = dp.z_map.clone().expect("init_cross sets z_map");
                vec![
                    ("z2", z2),
                    ("r", dp.r),
                    ("a_r", dp.a_r),
                    ("wq", dp.wq),
                    ("wk", dp.wk),
                    ("wv", dp.wv),
                    ("wo", dp.wo),
                    ("z_map", z_map),
                ]
            } else {
                let lp = LayerParams::init(&attn_cfg, &mut rng)?;
                lp.named().into_iter().map(|(n, t)| (n, t.clone())).collect()
            };
            let keep = Self::attn_names(&cfg, &task);
            for (name, t) in layer {
                if keep.contains(&name) {
                    params.push((p(&format!("attn.{name}")), t));
                }
            }
            params.push((p("norm2.g"), Tensor::full(1, d, 1.0)));
            params.push((p("ffn.w1"), rng.gaussian(d, cfg.ffn_hidden, 2.0 / d as f64)?));
            params.push((p("ffn.b1"), Tensor::zeros(1, cfg.ffn_hidden)));
            params.push((p("ffn.w2"), rng.gaussian(cfg.ffn_hidden, d, 1.0 / cfg.ffn_hidden as f64)?));
            params.push((p("ffn.b2"), Tensor::zeros(1, d)));
        }
        params.push(("final.g".into(), Tensor::full(1, d, 1.0)));
        params.push(("head.w".into(), rng.gaussian(d, task.classes(), 1.0 / d as f64)?));
        params.push(("head.b".into(), Tensor::zeros(1, task.classes())));
        Ok(Self { cfg, task, params })
    }

    /// Rebuilds a model from checkpoint tensors, which must match the names
    /// and shapes `init` would produce for `cfg` and `task`.
    pub fn from_tensors(cfg: ModelConfig, task: TaskSpec, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let template = Self::init(cfg, task, 0)?;
        let mut given: HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut bad = Vec::new();
        let mut params = Vec::with_capacity(template.params.len());
        for (name, t) in &template.params {
            match given.remove(name) {
                Some(v) if v.shape() == t.shape() => params.push((name.clone(), v)),
                Some(v) => bad.push(format!("{name} (shape {:?}, expected {:?})", v.shape(), t.shape())),
                None => bad.push(format!("{name} (missing)")),
            }
        }
        let mut extra: Vec<String> = given.into_keys().map(|n| format!("{n} (unexpected)")).collect();
        extra.sort();
        bad.extend(extra);
        if !bad.is_empty() {
            return Err(DbaError::Checkpoint(format!(
                "checkpoint does not match model config: {}",
                bad.join(", ")
            )));
        }
        Ok(Self { cfg, task, params })
    }

    pub fn named(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameters inside attention layers only (including a shared `Z`).
    pub fn attention_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.contains(".attn.") || n == "shared.z")
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelNodes {
        let mut ids = HashMap::with_capacity(self.params.len());
        let mut order = Vec::with_capacity(self.params.len());
        for (name, t) in &self.params {
            let id = if trainable { tape.param(t.clone()) } else { tape.leaf(t.clone()) };
            ids.insert(name.clone(), id);
            order.push(id);
        }
        ModelNodes { ids, order }
    }

    fn embed(&self, tape: &mut Tape, nodes: &ModelNodes, tokens: &[usize]) -> Result<NodeId> {
        let vin = self.task.vocab_in();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vin) {
            return Err(DbaError::Parameter(format!("token id {bad} outside vocabulary of {vin}")));
        }
        let oh = tape.leaf(one_hot(tokens, vin));
        let mut x = tape.matmul(oh, nodes.get("embed.tok")?)?;
        if self.cfg.token_shift {
            let prev: Vec<usize> = std::iter::once(vin).chain(tokens[..tokens.len() - 1].iter().copied()).collect();
            let ph = tape.leaf(one_hot(&prev, vin + 1));
            let e = tape.matmul(ph, nodes.get("embed.prev")?)?;
            x = tape.add(x, e)?;
        }
        if self.cfg.positions {
            let pe = tape.leaf(sinusoid(tokens.len(), self.cfg.d));
            x = tape.add(x, pe)?;
        }
        Ok(x)
    }

    fn self_attention(&self, tape: &mut Tape, nodes: &ModelNodes, b: usize, x: NodeId) -> Result<NodeId> {
        let cfg = self.cfg.attention(tape.value(x).rows());
        let prefix = format!("block{b}.attn.");
        let layer = LayerNodes::resolve(self.cfg.mechanism, |name| {
            if name == "z" && self.cfg.share_z {
                nodes.get("shared.z")
            } else {
                nodes.get(&format!("{prefix}{name}"))
            }
        })?;
        attention_layer(tape, x, &layer, &cfg)
    }

    fn cross_attention(&self, tape: &mut Tape, nodes: &ModelNodes, b: usize, x1: NodeId, x2: NodeId) -> Result<NodeId> {
        let get = |name: &str| nodes.get(&format!("block{b}.attn.{name}"));
        match self.cfg.mechanism {
            Mechanism::Vanilla => {
                let p = VanillaNodes {
                    wq: get("wq")?,
                    wk: get("wk")?,
                    wv: get("wv")?,
                    wo: get("wo")?,
                };
                vanilla_layer(tape, x1, x2, &p, self.cfg.heads)
            }
            Mechanism::Dba { .. } => {
                let a_r = get("a_r")?;
                let z2 = get("z2")?;
                let p1 = DbaNodes {
                    z: z2,
                    r: get("r")?,
                    a_r,
                    a_c: a_r,
                    wq: get("wq")?,
                    wk: get("wk")?,
                    wv: get("wv")?,
                    wo: get("wo")?,
                    z_map: Some(get("z_map")?),
                };
                let p2 = DbaNodes { z: z2, z_map: None, ..p1 };
                let cfg = self.cfg.attention(tape.value(x1).rows());
                dba_cross_attention(tape, x1, x2, &p1, &p2, &cfg).map(|(o, _)| o)
            }
            Mechanism::FixedLowRank => Err(DbaError::Parameter("fixed_lowrank has no cross-attention form".into())),
        }
    }

    /// Final hidden states (after the last block, before the final norm).
    pub fn hidden(&self, tape: &mut Tape, nodes: &ModelNodes, sample: &Sample) -> Result<NodeId> {
        let mut h = self.embed(tape, nodes, &sample.tokens)?;
        let kv = match (&sample.keys, self.cross()) {
            (Some(keys), true) => Some(self.embed(tape, nodes, keys)?),
            (None, false) => None,
            _ => return Err(DbaError::Parameter("sample does not fit the model's task".into())),
        };
        for b in 0..self.cfg.layers {
            let g1 = nodes.get(&format!("block{b}.norm1.g"))?;
            let hn = tape.rms_norm(h, g1)?;
            let a = match kv {
                Some(x2) => {
                    let gkv = nodes.get(&format!("block{b}.norm_kv.g"))?;
                    let x2n = tape.rms_norm(x2, gkv)?;
                    self.cross_attention(tape, nodes, b, hn, x2n)?
                }
                None => self.self_attention(tape, nodes, b, hn)?,
            };
            h = tape.add(h, a)?;
            let g2 = nodes.get(&format!("block{b}.norm2.g"))?;
            let hn = tape.rms_norm(h, g2)?;
            let f = tape.matmul(hn, nodes.get(&format!("block{b}.ffn.w1"))?)?;
            let f = tape.add(f, nodes.get(&format!("block{b}.ffn.b1"))?)?;
            let f = tape.relu(f)?;
            let f = tape.matmul(f, nodes.get(&format!("block{b}.ffn.w2"))?)?;
            let f = tape.add(f, nodes.get(&format!("block{b}.ffn.b2"))?)?;
            h = tape.add(h, f)?;
        }
        Ok(h)
    }

    /// 1 × classes logits for one sample.
    pub fn logits(&self, tape: &mut Tape, nodes: &ModelNodes, sample: &Sample) -> Result<NodeId> {
        let h = self.hidden(tape, nodes, sample)?;
        let h = tape.rms_norm(h, nodes.get("final.g")?)?;
        let pooled = match self.cfg.readout {
            Readout::Mean => tape.row_mean(h)?,
            Readout::First => {
                let n = tape.value(h).rows();
                let sel = tape.leaf(Tensor::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.0 }));
                tape.matmul(sel, h)?
            }
        };
        let z = tape.matmul(pooled, nodes.get("head.w")?)?;
        tape.add(z, nodes.get("head.b")?)
    }

    /// Predicted class per sample, evaluated on a constant tape.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape, false);
        let mark = tape.len();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let z = self.logits(&mut tape, &nodes, s)?;
            out.push(argmax(tape.value(z).row(0)));
            tape.truncate(mark);
        }
        Ok(out)
    }

    /// Fraction of `samples` whose argmax prediction equals the label.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(DbaError::Parameter("accuracy of an empty set".into()));
        }
        let pred = self.predict(samples)?;
        let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tasks::gen_task;

    fn small(kind: TaskKind, mech: Mechanism) -> (ModelConfig, TaskSpec) {
        let task = TaskSpec {
            train_size: 20,
            val_size: 20,
            ..TaskSpec::default_for(kind, 1)
        };
        (ModelConfig::for_task(kind, mech), task)
    }

    #[test]
    fn every_task_and_mechanism_builds() {
        for kind in [TaskKind::MajorityToken, TaskKind::SparseRecall, TaskKind::CrossMatch] {
            for mech in [Mechanism::Vanilla, Mechanism::DBA, Mechanism::FixedLowRank] {
                let (cfg, task) = small(kind, mech);
                let built = Model::init(cfg, task, 0);
                if kind == TaskKind::CrossMatch && mech == Mechanism::FixedLowRank {
                    assert!(matches!(built, Err(DbaError::Parameter(_))));
                    continue;
                }
                let model = built.unwrap();
                let ds = gen_task(&task).unwrap();
                let pred = model.predict(&ds.val).unwrap();
                assert!(pred.iter().all(|&p| p < task.classes()));
            }
        }
    }

    #[test]
    fn shared_z_replaces_per_block_z() {
        let (mut cfg, task) = small(TaskKind::MajorityToken, Mechanism::DBA);
        cfg.layers = 2;
        let per = Model::init(cfg, task, 0).unwrap();
        cfg.share_z = true;
        let shared = Model::init(cfg, task, 0).unwrap();
        assert!(per.get("block1.attn.z").is_some() && per.get("shared.z").is_none());
        assert!(shared.get("block1.attn.z").is_none() && shared.get("shared.z").is_some());
        assert_eq!(per.parameter_count() - shared.parameter_count(), cfg.d_p * cfg.d);
        let ds = gen_task(&task).unwrap();
        shared.predict(&ds.val).unwrap();
    }

    #[test]
    fn checkpoint_mismatch_names_tensors() {
        let (cfg, task) = small(TaskKind::MajorityToken, Mechanism::DBA);
        let model = Model::init(cfg, task, 0).unwrap();
        let mut tensors = model.named().to_vec();
        tensors.retain(|(n, _)| n != "head.b");
        tensors[0].1 = Tensor::zeros(1, 1);
        tensors.push(("stray".into(), Tensor::zeros(1, 1)));
        let err = Model::from_tensors(cfg, task, tensors).unwrap_err().to_string();
        assert!(err.contains("head.b (missing)"), "{err}");
        assert!(err.contains("embed.tok (shape"), "{err}");
        assert!(err.contains("stray (unexpected)"), "{err}");
        let back = Model::from_tensors(cfg, task, model.named().to_vec()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn dba_attention_smaller_than_fixed_when_n_large() {
        let (cfg, task) = small(TaskKind::MajorityToken, Mechanism::DBA);
        assert!(task.n > cfg.d_p + cfg.d);
        let dba = Model::init(cfg, task, 0).unwrap();
        let fixed = Model::init(ModelConfig { mechanism: Mechanism::FixedLowRank, ..cfg }, task, 0).unwrap();
        assert!(dba.attention_parameter_count() < fixed.attention_parameter_count());
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
