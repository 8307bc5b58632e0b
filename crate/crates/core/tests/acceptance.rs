//! End-to-end acceptance run: one PASS/FAIL line per criterion, each with its
//! wall time checked against a budget. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use dba_core::attention::{dba_self_attention, AttentionConfig, DbaParams, Mechanism};
use dba_core::autodiff::Tape;
use dba_core::bench::{count_flops, fit_scaling, peak_bytes, run_sweep, sanity_violations, speedups};
use dba_core::oracles::{
    gradcheck_cross, gradcheck_layer, jl_minimum_dim, jl_monte_carlo, lowrank_representability_check,
    reduction_identity_gap, REDUCTION_TOL,
};
use dba_core::trainer::{
    self, dump_projections, gen_task, variable_length_eval, Model, ModelConfig, TaskKind, TaskSpec, TrainConfig,
};
use dba_core::{DbaError, Result, Rng, Tensor};

type Check = fn() -> Result<(bool, String)>;

fn reduction() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        worst = worst.max(reduction_identity_gap(16, seed)?);
    }
    Ok((worst <= REDUCTION_TOL, format!("n=d=16, 20 seeds, worst max-abs gap {worst:.2e}")))
}

fn gradients() -> Result<(bool, String)> {
    let cfg = AttentionConfig::new(6, 8, 3, 4, 2, Mechanism::DBA)?;
    let mut worst = (0.0f64, String::new());
    let mut tensors = 0;
    for seed in 0..10 {
        let reports = [("self", gradcheck_layer(&cfg, seed)?), ("cross", gradcheck_cross(&cfg, 5, seed)?)];
        for (kind, rep) in reports {
            for (name, v) in &rep.tensors {
                tensors += 1;
                if *v >= worst.0 {
                    worst = (*v, format!("{kind}:{name} seed {seed}"));
                }
            }
        }
    }
    Ok((
        worst.0 <= 1e-5,
        format!("{tensors} tensor checks over 10 seeds, worst {:.2e} ({})", worst.0, worst.1),
    ))
}

fn jl() -> Result<(bool, String)> {
    let min16 = jl_minimum_dim(16, 0.5)?;
    println!("    jl_minimum_dim(16, 0.5) = {min16}");
    let mut ok = min16 == 222;
    let mut runs = 0;
    for &eps in &[0.3, 0.5, 0.7] {
        for &dp in &[8usize, 16] {
            let min = jl_minimum_dim(dp, eps)?;
            for d_in in [min, 2 * min] {
                let rep = jl_monte_carlo(16, dp, d_in, eps, 2000, 17 + runs)?;
                runs += 1;
                println!(
                    "    eps={eps} d_p={dp} d_in={d_in}: rate {:.4} allowance {:.4}{}",
                    rep.rate(),
                    rep.allowance(),
                    if rep.pass() { "" } else { "  <-- over" }
                );
                ok &= rep.pass();
            }
        }
    }
    let wide = jl_monte_carlo(64, 16, 222, 0.5, 2000, 99)?;
    println!(
        "    info: d=64, d_p=16, d_in=222: rate {:.4} vs allowance {:.4} (bound does not cover d > d_p)",
        wide.rate(),
        wide.allowance()
    );
    Ok((ok, format!("{runs} grid points x 2000 trials at d=16")))
}

fn rank() -> Result<(bool, String)> {
    let mut failed = Vec::new();
    for r in 1..=12 {
        let rep = lowrank_representability_check(24, 12, r, r as u64)?;
        if !rep.pass() {
            failed.push(format!("r={r}: {rep:?}"));
        }
    }
    Ok((failed.is_empty(), if failed.is_empty() { "r=1..12 at n=24, d=12".into() } else { failed.join("; ") }))
}

fn complexity() -> Result<(bool, String)> {
    let template = AttentionConfig::new(256, 64, 16, 24, 1, Mechanism::DBA)?;
    let flops: Vec<i128> = [256, 512, 768, 1024]
        .iter()
        .map(|&n| count_flops(&template.with_n(n)) as i128)
        .collect();
    let second_diff = flops[0] - 2 * flops[1] + flops[2];
    let second_diff2 = flops[1] - 2 * flops[2] + flops[3];
    let ns = [256, 512, 1024, 2048, 4096];
    let recs = run_sweep(&[Mechanism::Vanilla, Mechanism::DBA], &ns, &template, 10, 0)?;
    for r in &recs {
        println!("    {:<8} n={:<5} {:>9.2} ms", r.mechanism.to_string(), r.n, r.wall_ms_mean);
    }
    let fits = fit_scaling(&recs)?;
    let slope = |m: Mechanism| fits.iter().find(|f| f.mechanism == m).map(|f| f.slope).unwrap_or(f64::NAN);
    let (sv, sd) = (slope(Mechanism::Vanilla), slope(Mechanism::DBA));
    let sp = speedups(&recs, Mechanism::Vanilla, Mechanism::DBA);
    let monotone = sp.windows(2).all(|w| w[1].1 >= w[0].1);
    let at_4096 = sp.last().map(|s| s.1).unwrap_or(0.0);
    let violations = sanity_violations(&recs);
    for v in &violations {
        println!("    sanity: {v}");
    }
    let ok = second_diff == 0
        && second_diff2 == 0
        && (0.75..=1.35).contains(&sd)
        && (1.6..=2.3).contains(&sv)
        && monotone
        && at_4096 >= 3.0
        && violations.is_empty();
    let sp_txt: Vec<String> = sp.iter().map(|(n, s)| format!("{n}:{s:.1}x")).collect();
    Ok((
        ok,
        format!(
            "flop 2nd diff {second_diff}, slopes dba {sd:.3} vanilla {sv:.3}, speedup {}",
            sp_txt.join(" ")
        ),
    ))
}

fn memory() -> Result<(bool, String)> {
    let cfg = AttentionConfig::new(4096, 64, 16, 24, 1, Mechanism::DBA)?;
    let p: Vec<i128> = [1024, 2048, 3072, 4096]
        .iter()
        .map(|&n| peak_bytes(&cfg.with_n(n)) as i128)
        .collect();
    let affine = p.windows(3).all(|w| w[0] - 2 * w[1] + w[2] == 0);
    let ratio = peak_bytes(&cfg) as f64 / peak_bytes(&cfg.with_mechanism(Mechanism::Vanilla)) as f64;
    Ok((affine && ratio < 0.2, format!("peak affine in n: {affine}, dba/vanilla at n=4096: {ratio:.4}")))
}

fn learnability() -> Result<(bool, String)> {
    let kind = TaskKind::MajorityToken;
    let (_, maj) = trainer::train(
        ModelConfig::for_task(kind, Mechanism::DBA),
        &TaskSpec::default_for(kind, 5),
        &TrainConfig::new(30, 5),
    )?;
    println!("    majority dba: val {:.3} ({:.0}s)", maj.val_acc, maj.seconds);

    let kind = TaskKind::SparseRecall;
    let mechs = [Mechanism::Vanilla, Mechanism::DBA, Mechanism::FixedLowRank];
    let mut mean = [0.0; 3];
    for seed in 1..=3u64 {
        let data = gen_task(&TaskSpec::default_for(kind, seed))?;
        let mut line = format!("    sparse-recall seed {seed}:");
        for (i, &m) in mechs.iter().enumerate() {
            let (_, rep) = trainer::train_on(ModelConfig::for_task(kind, m), &data, &TrainConfig::new(12, seed))?;
            mean[i] += rep.val_acc / 3.0;
            line += &format!(" {m} {:.3}", rep.val_acc);
        }
        println!("{line}");
    }
    let [vanilla, dba, fixed] = mean;
    let ok = maj.val_acc >= 0.95 && (vanilla - dba).abs() <= 0.05 && dba - fixed >= 0.03;
    Ok((
        ok,
        format!(
            "majority {:.3}; sparse-recall means vanilla {vanilla:.3} dba {dba:.3} fixed {fixed:.3}",
            maj.val_acc
        ),
    ))
}

fn variable_length() -> Result<(bool, String)> {
    let kind = TaskKind::MajorityToken;
    let task = TaskSpec::default_for(kind, 8);
    let (model, _) = trainer::train(ModelConfig::for_task(kind, Mechanism::DBA), &task, &TrainConfig::new(30, 8))?;
    let before = model.named().to_vec();
    let accs = variable_length_eval(&model, &[24, 96])?;
    let unchanged = model.named() == before.as_slice();
    let fixed = Model::init(ModelConfig::for_task(kind, Mechanism::FixedLowRank), task, 8)?;
    let contract = matches!(variable_length_eval(&fixed, &[96]), Err(DbaError::Contract(_)));
    let ok = unchanged && contract && accs.iter().all(|&(_, a)| a >= 0.85);
    Ok((
        ok,
        format!("dba acc n=24 {:.3}, n=96 {:.3}; fixed rejects n=96: {contract}", accs[0].1, accs[1].1),
    ))
}

fn input_sensitivity() -> Result<(bool, String)> {
    let kind = TaskKind::MajorityToken;
    let cfg = ModelConfig::for_task(kind, Mechanism::DBA);
    let task = TaskSpec::default_for(kind, 0);
    let model_a = Model::init(cfg, task, 21)?;
    let model_b = Model::init(cfg, task, 21)?;
    let mut rng = Rng::new(3);
    let x1 = rng.gaussian(48, cfg.d, 1.0)?;
    let x2 = rng.gaussian(48, cfg.d, 1.0)?;
    let p1 = dump_projections(&model_a, &x1)?;
    let p2 = dump_projections(&model_a, &x2)?;
    let p1_again = dump_projections(&model_b, &x1)?;
    let dir = tempfile::tempdir()?;
    p1.write_dir(&dir.path().join("a"))?;
    p1_again.write_dir(&dir.path().join("b"))?;
    let file_same = std::fs::read(dir.path().join("a/w_r_h0.txt"))? == std::fs::read(dir.path().join("b/w_r_h0.txt"))?;
    let diff: f64 = p1.w_r.iter().zip(&p2.w_r).map(|(a, b)| a.sub(b).map(|t| t.frobenius_norm())).sum::<Result<f64>>()?;
    let bits = |t: &[Tensor]| t.iter().flat_map(|x| x.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    let identical = bits(&p1.w_r) == bits(&p1_again.w_r) && bits(&p1.w_c) == bits(&p1_again.w_c);
    Ok((
        diff > 0.0 && identical && file_same,
        format!("||dW_r||_F = {diff:.4} for distinct inputs; identical inputs bitwise equal: {identical}"),
    ))
}

fn equivariance() -> Result<(bool, String)> {
    let cfg = AttentionConfig::new(32, 16, 4, 6, 2, Mechanism::DBA)?;
    let mut rng = Rng::new(10);
    let params = DbaParams::init(&cfg, &mut rng)?;
    let run = |x: &Tensor| -> Result<Tensor> {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let p = params.register(&mut tape, false);
        let out = dba_self_attention(&mut tape, xi, &p, &cfg)?;
        Ok(tape.value(out).clone())
    };
    let x = rng.gaussian(32, 16, 1.0)?;
    let base = run(&x)?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let perm = rng.permutation(32);
        let got = run(&x.permute_rows(&perm))?;
        worst = worst.max(got.max_abs_diff(&base.permute_rows(&perm)));
    }
    Ok((worst <= 1e-9, format!("n=32, 10 permutations, worst {worst:.2e}")))
}

fn main() {
    let criteria: [(&str, Check, u64); 10] = [
        ("reduction identity", reduction, 5),
        ("gradient correctness", gradients, 120),
        ("jl bound", jl, 120),
        ("rank representability", rank, 30),
        ("complexity trends", complexity, 600),
        ("no-n^2 memory", memory, 1),
        ("learnability", learnability, 900),
        ("variable length", variable_length, 120),
        ("input sensitivity", input_sensitivity, 5),
        ("permutation equivariance", equivariance, 10),
    ];
    // ACCEPTANCE_ONLY=2,5 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    let mut ran = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*budget);
        let (pass, detail) = match result {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.2}s, budget {budget}s{})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
