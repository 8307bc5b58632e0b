use std::path::{Path, PathBuf};

use dba_core::attention::{AttentionConfig, Mechanism};
use dba_core::bench::{fit_scaling, run_sweep, sanity_violations, speedups, write_csv, write_svg};
use dba_core::oracles::{
    gradcheck_cross, gradcheck_layer, jl_minimum_dim, jl_monte_carlo, lowrank_representability_check,
    reduction_identity_gap, ReportLine, GRADCHECK_TOL, MAX_GRADCHECK_DIM, REDUCTION_TOL,
};
use dba_core::trainer::{self, gen_task, Model, ModelConfig, TaskKind, TaskSpec, TrainConfig};
use dba_core::{Rng, Tensor};

use crate::config::{parse_seeds, RunConfig};
use crate::{CliError, Common, Shape, UsageError};

const MIN_TRIALS: usize = 100;

fn base(common: &Common, shape: &Shape) -> Result<RunConfig, UsageError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_shape(&mut cfg, shape)?;
    cfg.flag("seed", common.seed.as_ref())?;
    cfg.flag("out-path", common.out.as_ref().map(|p| p.display()))?;
    Ok(cfg)
}

fn apply_shape(cfg: &mut RunConfig, shape: &Shape) -> Result<(), UsageError> {
    cfg.flag("n", shape.n.as_ref())?;
    cfg.flag("d", shape.d)?;
    cfg.flag("d_p", shape.dp.as_ref())?;
    cfg.flag("d_in", shape.din)?;
    cfg.flag("heads", shape.heads)?;
    Ok(())
}

fn out_path(cfg: &RunConfig, default: &str) -> PathBuf {
    PathBuf::from(cfg.raw("out-path").unwrap_or(default))
}

fn failure(msg: impl Into<String>) -> CliError {
    CliError::Failure(msg.into())
}

pub fn bench(
    common: &Common,
    shape: &Shape,
    mechanisms: Option<String>,
    reps: Option<usize>,
    svg: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = base(common, shape)?;
    cfg.flag("mechanism", mechanisms)?;
    cfg.flag("reps", reps)?;
    let mechs: Vec<Mechanism> = cfg
        .list("mechanism")?
        .unwrap_or_else(|| vec![Mechanism::Vanilla, Mechanism::DBA]);
    let mut ns: Vec<usize> = cfg.list("n")?.unwrap_or_else(|| vec![256, 512, 1024, 2048, 4096]);
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(CliError::Usage("need ≥ 4 lengths for slope fit".into()));
    }
    let template = AttentionConfig {
        n: ns[0],
        d: cfg.get_or("d", 64)?,
        d_p: cfg.get_or("d_p", 16)?,
        d_in: cfg.get_or("d_in", 24)?,
        heads: cfg.get_or("heads", 1)?,
        mechanism: Mechanism::DBA,
    };
    for &m in &mechs {
        for &n in &ns {
            AttentionConfig { n, mechanism: m, ..template }.validate()?;
        }
    }
    let reps = cfg.get_or("reps", 10)?;
    let seed = cfg.seed(0)?;
    let out = out_path(&cfg, "sweep.csv");

    let records = run_sweep(&mechs, &ns, &template, reps, seed)?;
    write_csv(&records, &out)?;
    for r in &records {
        if r.oom {
            println!("{:<16} n={:<6} oom (peak {} bytes)", r.mechanism.to_string(), r.n, r.peak_bytes);
        } else {
            println!(
                "{:<16} n={:<6} {:>10.3} ms ± {:.3}  flops {}  peak {} B",
                r.mechanism.to_string(),
                r.n,
                r.wall_ms_mean,
                r.wall_ms_std,
                r.flops,
                r.peak_bytes
            );
        }
    }
    let fits = fit_scaling(&records).map_err(|e| failure(e.to_string()))?;
    for f in &fits {
        println!("slope {:<16} {:.3} (r² {:.4})", f.mechanism.to_string(), f.slope, f.r2);
    }
    if mechs.contains(&Mechanism::Vanilla) && mechs.contains(&Mechanism::DBA) {
        let sp: Vec<String> = speedups(&records, Mechanism::Vanilla, Mechanism::DBA)
            .iter()
            .map(|(n, s)| format!("{n}:{s:.2}x"))
            .collect();
        println!("speedup dba over vanilla: {}", sp.join(" "));
    }
    if let Some(path) = svg {
        write_svg(&records, &fits, &path)?;
    }
    println!("wrote {}", out.display());
    let bad = sanity_violations(&records);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(failure(format!("sanity check failed: {}", bad.join("; "))))
    }
}

pub fn validate(
    common: &Common,
    shape: &Shape,
    epsilon: Option<String>,
    trials: Option<usize>,
) -> Result<(), CliError> {
    let cfg = base(common, shape)?;
    let eps: Vec<f64> = match epsilon {
        Some(v) => crate::config::parse_list("epsilon", &v)?,
        None => vec![0.3, 0.5, 0.7],
    };
    let dps: Vec<usize> = cfg.list("d_p")?.unwrap_or_else(|| vec![8, 16]);
    let d = cfg.get_or("d", 16)?;
    let trials = trials.unwrap_or(2000);
    if trials < MIN_TRIALS {
        return Err(CliError::Usage(format!("--trials must be >= {MIN_TRIALS}, got {trials}")));
    }
    let seed = cfg.seed(0)?;
    let out = cfg.raw("out-path").map(PathBuf::from);

    let mut lines = Vec::new();
    let mut k = 0;
    for &dp in &dps {
        for &e in &eps {
            let min = jl_minimum_dim(dp, e)?;
            println!("jl_minimum_dim(d_p={dp}, epsilon={e}) = {min}");
            for d_in in [min, 2 * min] {
                let rep = jl_monte_carlo(d, dp, d_in, e, trials, seed.wrapping_add(k))?;
                k += 1;
                lines.push(ReportLine::from(&rep));
            }
        }
    }
    for r in 1..=12 {
        lines.push(ReportLine::from(&lowrank_representability_check(24, 12, r, seed.wrapping_add(r as u64))?));
    }
    let gaps: Vec<f64> = (0..20)
        .map(|s| reduction_identity_gap(16, seed.wrapping_add(s)))
        .collect::<dba_core::Result<_>>()?;
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let failed = gaps.iter().filter(|&&g| g > REDUCTION_TOL).count();
    lines.push(ReportLine::reduction(16, gaps.len(), worst, REDUCTION_TOL, failed));

    let mut failures = Vec::new();
    for line in &lines {
        println!("{}", line.to_json());
        if let Some(p) = &out {
            line.append_to(p)?;
        }
        if !line.pass {
            failures.push(line.to_json());
        }
    }
    if failures.is_empty() {
        println!("all {} checks passed", lines.len());
        Ok(())
    } else {
        Err(failure(format!("{} check(s) failed:\n{}", failures.len(), failures.join("\n"))))
    }
}

pub fn gradcheck(common: &Common, shape: &Shape, n2: Option<usize>) -> Result<(), CliError> {
    let cfg = base(common, shape)?;
    let n: usize = cfg.get_or("n", 6)?;
    let n2 = n2.unwrap_or(5);
    let d: usize = cfg.get_or("d", 8)?;
    if n.max(n2).max(d) > MAX_GRADCHECK_DIM {
        return Err(CliError::Usage(format!(
            "gradcheck needs n, n2, d <= {MAX_GRADCHECK_DIM}; got n={n} n2={n2} d={d}"
        )));
    }
    let attn = AttentionConfig::new(n, d, cfg.get_or("d_p", 3)?, cfg.get_or("d_in", 4)?, cfg.get_or("heads", 2)?, Mechanism::DBA)?;
    let seeds = match cfg.raw("seed") {
        Some(s) => parse_seeds(s)?,
        None => vec![cfg.seed(0)?],
    };
    let out = cfg.raw("out-path").map(PathBuf::from);
    let mut worst = 0.0f64;
    println!("{:<6} {:<6} {:<10} {:>12}", "seed", "layer", "tensor", "discrepancy");
    for &seed in &seeds {
        for (kind, rep) in [("self", gradcheck_layer(&attn, seed)?), ("cross", gradcheck_cross(&attn, n2, seed)?)] {
            for (name, v) in &rep.tensors {
                let flag = if *v > GRADCHECK_TOL { "  FAIL" } else { "" };
                println!("{seed:<6} {kind:<6} {name:<10} {v:>12.3e}{flag}");
                worst = worst.max(*v);
            }
            if let Some(p) = &out {
                ReportLine::gradcheck(kind, seed, &rep).append_to(p)?;
            }
        }
    }
    println!("max discrepancy {worst:.3e} (tolerance {GRADCHECK_TOL:.0e})");
    if worst <= GRADCHECK_TOL {
        Ok(())
    } else {
        Err(failure(format!("max discrepancy {worst:.3e} exceeds {GRADCHECK_TOL:.0e}")))
    }
}

/// Model and task described by a run config.
fn resolve_model(cfg: &RunConfig) -> Result<(ModelConfig, TaskSpec), CliError> {
    let kind: TaskKind = cfg.get_or("task", TaskKind::MajorityToken)?;
    let mechanism: Mechanism = cfg.get_or("mechanism", Mechanism::DBA)?;
    let seed = cfg.seed(0)?;
    let mut task = TaskSpec::default_for(kind, seed);
    if let Some(n) = cfg.get("n")? {
        task.n = n;
    }
    let mut model = ModelConfig::for_task(kind, mechanism);
    model.d = cfg.get_or("d", model.d)?;
    model.d_p = cfg.get_or("d_p", model.d_p)?;
    model.d_in = cfg.get_or("d_in", model.d_in)?;
    model.heads = cfg.get_or("heads", model.heads)?;
    model.validate(&task)?;
    Ok((model, task))
}

fn sidecar(checkpoint: &Path, suffix: &str) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(
    common: &Common,
    shape: &Shape,
    task: Option<String>,
    mechanism: Option<String>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = base(common, shape)?;
    cfg.flag("task", task)?;
    cfg.flag("mechanism", mechanism)?;
    cfg.flag("epochs", epochs)?;
    let (model_cfg, task) = resolve_model(&cfg)?;
    let epochs = cfg.get_or("epochs", 30)?;
    let seed = cfg.seed(0)?;
    let out = out_path(&cfg, "model.ckpt");

    let (model, report) = trainer::train(model_cfg, &task, &TrainConfig::new(epochs, seed))?;
    trainer::save_model(&model, &out)?;
    trainer::write_log_csv(&report.log, &sidecar(&out, ".log.csv"))?;
    let mut resolved = RunConfig::default();
    for (k, v) in [
        ("task", task.kind.to_string()),
        ("mechanism", model_cfg.mechanism.to_string()),
        ("n", task.n.to_string()),
        ("d", model_cfg.d.to_string()),
        ("d_p", model_cfg.d_p.to_string()),
        ("d_in", model_cfg.d_in.to_string()),
        ("heads", model_cfg.heads.to_string()),
        ("seed", seed.to_string()),
        ("epochs", epochs.to_string()),
        ("out-path", out.display().to_string()),
    ] {
        resolved.set(k, &v)?;
    }
    std::fs::write(sidecar(&out, ".cfg"), resolved.to_text())?;

    println!(
        "{} on {}: {} epochs, final train loss {:.5}, train acc {:.4}, val acc {:.4}, {} parameters ({} in attention), {:.1}s",
        report.mechanism,
        task.kind,
        report.epochs,
        report.final_train_loss,
        report.train_acc,
        report.val_acc,
        report.parameter_count,
        report.attention_parameter_count,
        report.seconds
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Loads the checkpoint with the config stored next to it (or `--config`).
fn load_checkpoint(common: &Common, checkpoint: &Path) -> Result<Model, CliError> {
    if !checkpoint.exists() {
        return Err(failure(format!("checkpoint {} not found", checkpoint.display())));
    }
    let cfg_path = common.config.clone().unwrap_or_else(|| sidecar(checkpoint, ".cfg"));
    let mut cfg = if cfg_path.exists() {
        RunConfig::load(&cfg_path)?
    } else {
        RunConfig::default()
    };
    cfg.flag("seed", common.seed.as_ref())?;
    let (model_cfg, task) = resolve_model(&cfg)?;
    Ok(trainer::load_model(model_cfg, task, checkpoint)?)
}

pub fn eval(common: &Common, shape: &Shape, checkpoint: &Path, split: &str) -> Result<(), CliError> {
    let model = load_checkpoint(common, checkpoint)?;
    if let Some(n) = &shape.n {
        let lengths: Vec<usize> = crate::config::parse_list("n", n)?;
        for (n, acc) in trainer::variable_length_eval(&model, &lengths)? {
            println!("n={n} accuracy {acc:.4}");
        }
        return Ok(());
    }
    let data = gen_task(&model.task)?;
    let samples = match split {
        "val" => &data.val,
        "train" => &data.train,
        other => return Err(CliError::Usage(format!("--split must be val or train, got {other:?}"))),
    };
    println!("accuracy {:.4}", trainer::eval(&model, samples)?);
    Ok(())
}

pub fn dump_projections(common: &Common, checkpoint: &Path, inputs: &[PathBuf], n: Option<usize>) -> Result<(), CliError> {
    if inputs.len() > 2 {
        return Err(CliError::Usage("give at most two --input files".into()));
    }
    let model = load_checkpoint(common, checkpoint)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("projections"));
    let xs: Vec<Tensor> = if inputs.is_empty() {
        let mut cfg = RunConfig::default();
        cfg.flag("seed", common.seed.as_ref())?;
        let mut rng = Rng::new(cfg.seed(0)?);
        let n = n.unwrap_or(model.task.n);
        (0..2).map(|_| rng.gaussian(n, model.cfg.d, 1.0)).collect::<dba_core::Result<_>>()?
    } else {
        inputs.iter().map(|p| Tensor::read_text(p)).collect::<dba_core::Result<_>>()?
    };
    let mut dumps = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let dir = out.join(format!("input{i}"));
        let p = trainer::dump_projections(&model, x)?;
        p.write_dir(&dir)?;
        if inputs.is_empty() {
            x.write_text(&dir.join("x.txt"))?;
        }
        println!("wrote {}", dir.display());
        dumps.push(p);
    }
    if let [a, b] = dumps.as_slice() {
        for (h, (wa, wb)) in a.w_r.iter().zip(&b.w_r).enumerate() {
            match wa.sub(wb) {
                Ok(diff) => println!("head {h}: ||W_r(input0) - W_r(input1)||_F = {:.6e}", diff.frobenius_norm()),
                Err(_) => println!("head {h}: inputs differ in length, W_r shapes {:?} vs {:?}", wa.shape(), wb.shape()),
            }
        }
    }
    Ok(())
}
