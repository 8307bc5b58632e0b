//! Toy-scale training of small attention classifiers on synthetic tasks.

pub mod model;
pub mod optim;
pub mod tasks;

use std::path::Path;
use std::time::Instant;

use crate::attention::{dba_self_attention_traced, LayerNodes, Mechanism};
use crate::autodiff::Tape;
use crate::checkpoint;
use crate::error::{DbaError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use model::{argmax, Model, ModelConfig, Readout};
pub use optim::{Adam, AdamConfig};
pub use tasks::{gen_task, majority_label, Dataset, Sample, TaskKind, TaskSpec};

/// Header of the per-epoch training log.
pub const LOG_HEADER: [&str; 4] = ["epoch", "train_loss", "val_acc", "seconds"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds parameter init and batch order (the dataset has its own seed).
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_acc: f64,
    /// Cumulative wall time since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub mechanism: Mechanism,
    pub epochs: usize,
    pub final_train_loss: f64,
    /// Accuracy of the final parameters on the training set.
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
    pub parameter_count: usize,
    pub attention_parameter_count: usize,
    pub log: Vec<EpochLog>,
}

fn batch_loss(model: &Model, tape: &mut Tape, batch: &[&Sample]) -> Result<(crate::autodiff::NodeId, model::ModelNodes)> {
    let nodes = model.register(tape, true);
    let mut total = None;
    for s in batch {
        let z = model.logits(tape, &nodes, s)?;
        let l = tape.cross_entropy_logits(z, vec![s.label])?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| DbaError::Parameter("empty batch".into()))?;
    Ok((tape.scale(total, 1.0 / batch.len() as f64)?, nodes))
}

/// Trains a fresh model on `data`. Bit-deterministic for a fixed `cfg.seed`.
pub fn train_on(model_cfg: ModelConfig, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(DbaError::Parameter("epochs and batch_size must be >= 1".into()));
    }
    let start = Instant::now();
    let mut model = Model::init(model_cfg, data.spec, cfg.seed)?;
    let mut opt = Adam::new(cfg.adam, model.named().iter().map(|(_, t)| t));
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = Rng::child(cfg.seed, epoch as u64).permutation(data.train.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut tape = Tape::new();
            let (loss, nodes) = batch_loss(&model, &mut tape, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(DbaError::Training {
                    epoch,
                    reason: format!("loss became {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<&Tensor> = nodes
                .ordered()
                .iter()
                .map(|&id| grads.get(id).ok_or_else(|| DbaError::Graph("missing parameter gradient".into())))
                .collect::<Result<_>>()?;
            if let Some(bad) = g.iter().position(|t| !t.is_finite()) {
                return Err(DbaError::Training {
                    epoch,
                    reason: format!("non-finite gradient for {}", model.named()[bad].0),
                });
            }
            opt.update(model.tensors_mut(), &g)?;
            loss_sum += value;
            batches += 1;
        }
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_acc: model.accuracy(&data.val)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} val_acc {:.4}",
            model_cfg.mechanism,
            row.train_loss,
            row.val_acc
        );
        log.push(row);
    }
    let last = *log.last().expect("epochs >= 1");
    let report = TrainReport {
        mechanism: model_cfg.mechanism,
        epochs: cfg.epochs,
        final_train_loss: last.train_loss,
        train_acc: model.accuracy(&data.train)?,
        val_acc: last.val_acc,
        seconds: start.elapsed().as_secs_f64(),
        parameter_count: model.parameter_count(),
        attention_parameter_count: model.attention_parameter_count(),
        log,
    };
    Ok((model, report))
}

/// Generates the task data and trains on it.
pub fn train(model_cfg: ModelConfig, task: &TaskSpec, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let data = gen_task(task)?;
    train_on(model_cfg, &data, cfg)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    checkpoint::save(path, model.named())
}

pub fn load_model(cfg: ModelConfig, task: TaskSpec, path: &Path) -> Result<Model> {
    Model::from_tensors(cfg, task, checkpoint::load(path)?)
}

pub fn eval(model: &Model, samples: &[Sample]) -> Result<f64> {
    model.accuracy(samples)
}

/// Accuracy at each length on freshly generated validation data, with the
/// same parameters. Mechanisms tied to one length fail with a contract error.
pub fn variable_length_eval(model: &Model, lengths: &[usize]) -> Result<Vec<(usize, f64)>> {
    let mech = model.cfg.mechanism;
    if !mech.supports_variable_length() && lengths.iter().any(|&n| n != model.task.n) {
        return Err(DbaError::Contract(format!(
            "{mech} was built for n={} and cannot evaluate other lengths",
            model.task.n
        )));
    }
    lengths
        .iter()
        .map(|&n| {
            let acc = if n == model.task.n {
                model.accuracy(&gen_task(&model.task)?.val)?
            } else {
                let mut moved = model.clone();
                moved.task = model.task.with_n(n);
                moved.accuracy(&gen_task(&moved.task)?.val)?
            };
            Ok((n, acc))
        })
        .collect()
}

pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(LOG_HEADER).map_err(csv_err)?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.17e}", r.train_loss),
            format!("{:.6}", r.val_acc),
            format!("{:.3}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DbaError {
    DbaError::Io(std::io::Error::other(e))
}

/// Sequence-length projections of the first block's DBA layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    /// Per head, d_p × n.
    pub w_r: Vec<Tensor>,
    pub w_c: Vec<Tensor>,
    /// n × d_p, shared by heads.
    pub w_r_prime: Tensor,
    pub w_c_prime: Tensor,
}

impl Projections {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (h, (wr, wc)) in self.w_r.iter().zip(&self.w_c).enumerate() {
            wr.write_text(&dir.join(format!("w_r_h{h}.txt")))?;
            wc.write_text(&dir.join(format!("w_c_h{h}.txt")))?;
        }
        self.w_r_prime.write_text(&dir.join("w_r_prime.txt"))?;
        self.w_c_prime.write_text(&dir.join("w_c_prime.txt"))?;
        Ok(())
    }
}

/// Runs block 0's attention on `x` (n × d hidden states, normalized by the
/// block's pre-norm first) and returns its projection matrices.
pub fn dump_projections(model: &Model, x: &Tensor) -> Result<Projections> {
    if !model.cfg.mechanism.is_dba() || model.task.kind == TaskKind::CrossMatch {
        return Err(DbaError::Parameter(format!(
            "projection dumps need a dba self-attention model, got {} on {}",
            model.cfg.mechanism, model.task.kind
        )));
    }
    if x.cols() != model.cfg.d {
        return Err(crate::error::dim_err("dump_projections", x.shape(), &[x.rows(), model.cfg.d]));
    }
    let mut tape = Tape::new();
    let nodes = model.register(&mut tape, false);
    let xi = tape.leaf(x.clone());
    let g = nodes.get("block0.norm1.g")?;
    let xn = tape.rms_norm(xi, g)?;
    let layer = LayerNodes::resolve(model.cfg.mechanism, |name| {
        if name == "z" && model.cfg.share_z {
            nodes.get("shared.z")
        } else {
            nodes.get(&format!("block0.attn.{name}"))
        }
    })?;
    let LayerNodes::Dba(p) = layer else {
        unreachable!("dba mechanism resolves to dba nodes")
    };
    let (_, trace) = dba_self_attention_traced(&mut tape, xn, &p, &model.cfg.attention(x.rows()))?;
    let pick = |id: Option<crate::autodiff::NodeId>| {
        id.map(|i| tape.value(i).clone())
            .ok_or_else(|| DbaError::Parameter("sequence compression is disabled; no W_r/W_c".into()))
    };
    Ok(Projections {
        w_r: trace.heads.iter().map(|h| pick(h.w_r)).collect::<Result<_>>()?,
        w_c: trace.heads.iter().map(|h| pick(h.w_c)).collect::<Result<_>>()?,
        w_r_prime: tape.value(trace.w_r_prime).clone(),
        w_c_prime: tape.value(trace.w_c_prime).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: TaskKind, mech: Mechanism) -> (ModelConfig, TaskSpec, TrainConfig) {
        let task = TaskSpec {
            train_size: 64,
            val_size: 32,
            ..TaskSpec::default_for(kind, 2)
        };
        (ModelConfig::for_task(kind, mech), task, TrainConfig::new(2, 7))
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (m, t, c) = quick(TaskKind::MajorityToken, Mechanism::DBA);
        let (a, ra) = train(m, &t, &c).unwrap();
        let (b, rb) = train(m, &t, &c).unwrap();
        assert_eq!(a, b);
        let la: Vec<u64> = ra.log.iter().map(|r| r.train_loss.to_bits()).collect();
        let lb: Vec<u64> = rb.log.iter().map(|r| r.train_loss.to_bits()).collect();
        assert_eq!(la, lb);
        assert_eq!(ra.parameter_count, a.named().iter().map(|(_, t)| t.len()).sum::<usize>());
    }

    #[test]
    fn eval_on_train_set_matches_report() {
        let (m, t, c) = quick(TaskKind::SparseRecall, Mechanism::DBA);
        let data = gen_task(&t).unwrap();
        let (model, report) = train_on(m, &data, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&model, &path).unwrap();
        let back = load_model(m, t, &path).unwrap();
        assert_eq!(eval(&back, &data.train).unwrap(), report.train_acc);
        assert_eq!(eval(&back, &data.val).unwrap(), report.val_acc);
    }

    #[test]
    fn cross_match_trains() {
        for mech in [Mechanism::Vanilla, Mechanism::DBA] {
            let (m, t, c) = quick(TaskKind::CrossMatch, mech);
            let (_, r) = train(m, &t, &c).unwrap();
            assert!(r.final_train_loss.is_finite());
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let (m, t, mut c) = quick(TaskKind::MajorityToken, Mechanism::Vanilla);
        c.adam.lr = f64::NAN;
        match train(m, &t, &c) {
            Err(DbaError::Training { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn variable_length_contract() {
        let (m, t, _) = quick(TaskKind::MajorityToken, Mechanism::DBA);
        let model = Model::init(m, t, 0).unwrap();
        let accs = variable_length_eval(&model, &[24, 48, 96]).unwrap();
        assert_eq!(accs[1].1, model.accuracy(&gen_task(&t).unwrap().val).unwrap());
        let fixed = Model::init(ModelConfig { mechanism: Mechanism::FixedLowRank, ..m }, t, 0).unwrap();
        assert!(matches!(variable_length_eval(&fixed, &[96]), Err(DbaError::Contract(_))));
        assert!(variable_length_eval(&fixed, &[48]).is_ok());
    }

    #[test]
    fn projections_follow_the_input() {
        let (m, t, _) = quick(TaskKind::MajorityToken, Mechanism::DBA);
        let model = Model::init(m, t, 0).unwrap();
        let mut rng = Rng::new(5);
        let x1 = rng.gaussian(20, m.d, 1.0).unwrap();
        let x2 = rng.gaussian(20, m.d, 1.0).unwrap();
        let a = dump_projections(&model, &x1).unwrap();
        let b = dump_projections(&model, &x2).unwrap();
        assert_eq!(a, dump_projections(&model, &x1).unwrap());
        assert!(a.w_r[0].sub(&b.w_r[0]).unwrap().frobenius_norm() > 0.0);
        assert_eq!(a.w_r.len(), m.heads);
        assert_eq!(a.w_r[0].shape(), &[m.d_p, 20]);
        let vanilla = Model::init(ModelConfig { mechanism: Mechanism::Vanilla, ..m }, t, 0).unwrap();
        assert!(dump_projections(&vanilla, &x1).is_err());
    }
}
