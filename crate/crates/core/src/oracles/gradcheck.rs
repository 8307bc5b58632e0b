//! Backward pass against central finite differences for whole layers.
//!
//! The loss is `½‖layer(X)‖²_F`. Discrepancy per entry is
//! `|a − b| / max(|a|, |b|, DISCREPANCY_FLOOR)`. The finite-difference side
//! evaluates `L(x+h) − L(x−h)` as `½ Σ (o₊ − o₋)(o₊ + o₋)` over the layer
//! outputs, which avoids subtracting two nearly equal loss totals.

use crate::attention::{dba_cross_attention, dba_self_attention, AttentionConfig, DbaParams};
use crate::autodiff::{finite_diff_grad_by_delta, max_relative_discrepancy, NodeId, Tape};
use crate::error::{DbaError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const DISCREPANCY_FLOOR: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const MAX_GRADCHECK_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `(tensor name, max relative discrepancy)` in layer order.
    pub tensors: Vec<(String, f64)>,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.tensors.iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max() <= GRADCHECK_TOL
    }
}

fn guard(cfg: &AttentionConfig, other_n: usize) -> Result<()> {
    if cfg.n.max(other_n) > MAX_GRADCHECK_DIM || cfg.d > MAX_GRADCHECK_DIM {
        return Err(DbaError::Parameter(format!(
            "gradcheck needs n, d <= {MAX_GRADCHECK_DIM}; got n={} d={}",
            cfg.n.max(other_n),
            cfg.d
        )));
    }
    cfg.validate()
}

/// Every tensor the loss depends on, as owned values keyed by name.
type Inputs = Vec<(String, Tensor)>;

/// Evaluates `build` once with autodiff and once per entry with finite
/// differences, tensor by tensor.
fn compare(inputs: &Inputs, build: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId>) -> Result<GradcheckReport> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let loss = tape.half_sum_squares(out)?;
    let grads = tape.backward(loss)?;

    let output_at = |which: usize, probe: &Tensor| -> Tensor {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .enumerate()
            .map(|(i, (_, t))| tape.leaf(if i == which { probe.clone() } else { t.clone() }))
            .collect();
        let out = build(&mut tape, &ids).expect("forward succeeded once already");
        tape.value(out).clone()
    };
    let mut tensors = Vec::with_capacity(inputs.len());
    for (i, (name, t)) in inputs.iter().enumerate() {
        let fd = finite_diff_grad_by_delta(
            |up, down| {
                let (a, b) = (output_at(i, up), output_at(i, down));
                0.5 * a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x + y)).sum::<f64>()
            },
            t,
            FD_STEP,
        )?;
        let bw = grads.get(ids[i]).expect("every param gets a gradient");
        tensors.push((name.clone(), max_relative_discrepancy(bw, &fd, DISCREPANCY_FLOOR)));
    }
    Ok(GradcheckReport { tensors })
}

pub fn gradcheck_layer(cfg: &AttentionConfig, seed: u64) -> Result<GradcheckReport> {
    guard(cfg, 0)?;
    let mut rng = Rng::new(seed);
    let params = DbaParams::init(cfg, &mut rng)?;
    let x = rng.uniform(cfg.n, cfg.d, -1.0, 1.0);
    gradcheck_self_at(cfg, &params, &x)
}

/// Self-attention check at a caller-chosen point.
pub fn gradcheck_self_at(cfg: &AttentionConfig, params: &DbaParams, x: &Tensor) -> Result<GradcheckReport> {
    guard(cfg, x.rows())?;
    params.check(cfg)?;
    let mut inputs: Inputs = params.named().into_iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    inputs.push(("x".into(), x.clone()));
    let cfg = cfg.with_n(x.rows());
    compare(&inputs, |tape, ids| {
        let p = nodes_from(ids, 0);
        dba_self_attention(tape, ids[8], &p, &cfg)
    })
}

fn nodes_from(ids: &[NodeId], at: usize) -> crate::attention::DbaNodes {
    crate::attention::DbaNodes {
        z: ids[at],
        r: ids[at + 1],
        a_r: ids[at + 2],
        a_c: ids[at + 3],
        wq: ids[at + 4],
        wk: ids[at + 5],
        wv: ids[at + 6],
        wo: ids[at + 7],
        z_map: None,
    }
}

/// Cross-attention check. Only tensors the layer reads are compared:
/// params1 minus `z`/`a_c` (the query compression comes from hierarchy 2),
/// `z` of params2, and both inputs.
pub fn gradcheck_cross(cfg: &AttentionConfig, n2: usize, seed: u64) -> Result<GradcheckReport> {
    guard(cfg, n2)?;
    let mut rng = Rng::new(seed);
    let p1 = DbaParams::init_cross(cfg, &mut rng)?;
    let p2 = DbaParams::init(cfg, &mut rng)?;
    let x1 = rng.uniform(cfg.n, cfg.d, -1.0, 1.0);
    let x2 = rng.uniform(n2, cfg.d, -1.0, 1.0);
    let inputs: Inputs = vec![
        ("p1.r".into(), p1.r.clone()),
        ("p1.a_r".into(), p1.a_r.clone()),
        ("p1.wq".into(), p1.wq.clone()),
        ("p1.wk".into(), p1.wk.clone()),
        ("p1.wv".into(), p1.wv.clone()),
        ("p1.wo".into(), p1.wo.clone()),
        ("p1.z_map".into(), p1.z_map.clone().expect("init_cross sets z_map")),
        ("p2.z".into(), p2.z.clone()),
        ("x1".into(), x1),
        ("x2".into(), x2),
    ];
    let cfg = *cfg;
    compare(&inputs, |tape, ids| {
        // Unread tensors ride along as constants so shapes still check out.
        let z1 = tape.leaf(p1.z.clone());
        let a_c1 = tape.leaf(p1.a_c.clone());
        let n1 = crate::attention::DbaNodes {
            z: z1,
            r: ids[0],
            a_r: ids[1],
            a_c: a_c1,
            wq: ids[2],
            wk: ids[3],
            wv: ids[4],
            wo: ids[5],
            z_map: Some(ids[6]),
        };
        let mut n2 = p2.register(tape, false);
        n2.z = ids[7];
        dba_cross_attention(tape, ids[8], ids[9], &n1, &n2, &cfg).map(|(out, _)| out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Mechanism;

    fn small() -> AttentionConfig {
        AttentionConfig::new(6, 8, 3, 4, 2, Mechanism::DBA).unwrap()
    }

    #[test]
    fn self_attention_seed_3() {
        let rep = gradcheck_layer(&small(), 3).unwrap();
        assert_eq!(rep.tensors.len(), 9);
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn composed_layer_twenty_seeds() {
        for seed in 0..20 {
            let rep = gradcheck_layer(&small(), seed).unwrap();
            assert!(rep.pass(), "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn cross_attention_seed_3() {
        let rep = gradcheck_cross(&small(), 5, 3).unwrap();
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn degenerate_point_with_only_wv() {
        let cfg = small();
        let zero = |r, c| Tensor::zeros(r, c);
        let params = DbaParams {
            z: zero(3, 8),
            r: zero(4, 4),
            a_r: zero(8, 3),
            a_c: zero(8, 3),
            wq: zero(8, 8),
            wk: zero(8, 8),
            wv: Tensor::eye(8),
            wo: zero(8, 8),
            z_map: None,
        };
        let x = Rng::new(1).uniform(6, 8, -1.0, 1.0);
        assert!(gradcheck_self_at(&cfg, &params, &x).unwrap().pass());
    }

    #[test]
    fn zero_input_gives_zero_z_gradient() {
        let cfg = small();
        let params = DbaParams::init(&cfg, &mut Rng::new(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(6, 8));
        let p = params.register(&mut tape, true);
        let out = dba_self_attention(&mut tape, x, &p, &cfg).unwrap();
        let loss = tape.half_sum_squares(out).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p.z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn oversized_config_rejected() {
        let cfg = AttentionConfig::new(128, 8, 3, 4, 2, Mechanism::DBA).unwrap();
        assert!(gradcheck_layer(&cfg, 0).is_err());
    }
}
