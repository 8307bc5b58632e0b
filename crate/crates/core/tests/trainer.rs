use dba_core::attention::Mechanism;
use dba_core::trainer::{self, gen_task, Model, ModelConfig, TaskKind, TaskSpec, TrainConfig};
use dba_core::DbaError;

#[test]
fn majority_loss_falls_for_five_epochs() {
    let task = TaskSpec::default_for(TaskKind::MajorityToken, 11);
    let data = gen_task(&task).unwrap();
    for mech in [Mechanism::Vanilla, Mechanism::DBA, Mechanism::FixedLowRank] {
        let cfg = ModelConfig::for_task(TaskKind::MajorityToken, mech);
        let (_, report) = trainer::train_on(cfg, &data, &TrainConfig::new(5, 11)).unwrap();
        let losses: Vec<f64> = report.log.iter().map(|r| r.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{mech}: {losses:?}");
    }
}

#[test]
fn untrained_model_is_at_chance_on_cross_match() {
    let task = TaskSpec {
        train_size: 1,
        val_size: 10_000,
        ..TaskSpec::default_for(TaskKind::CrossMatch, 3)
    };
    let data = gen_task(&task).unwrap();
    let model = Model::init(ModelConfig::for_task(TaskKind::CrossMatch, Mechanism::DBA), task, 3).unwrap();
    let acc = trainer::eval(&model, &data.val).unwrap();
    assert!((0.4..=0.6).contains(&acc), "{acc}");
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let task = TaskSpec::default_for(TaskKind::MajorityToken, 0);
    let cfg = ModelConfig::for_task(TaskKind::MajorityToken, Mechanism::DBA);
    let model = Model::init(cfg, task, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    trainer::save_model(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(trainer::load_model(cfg, task, &path), Err(DbaError::Checkpoint(_))));
    let other = ModelConfig { d_p: 4, ..cfg };
    std::fs::write(&path, &bytes).unwrap();
    let err = trainer::load_model(other, task, &path).unwrap_err();
    assert!(matches!(err, DbaError::Checkpoint(_)) && err.to_string().contains("block0.attn.z"), "{err}");
}

#[test]
fn log_csv_has_header_and_rows() {
    let task = TaskSpec {
        train_size: 32,
        val_size: 16,
        ..TaskSpec::default_for(TaskKind::MajorityToken, 1)
    };
    let cfg = ModelConfig::for_task(TaskKind::MajorityToken, Mechanism::DBA);
    let (_, report) = trainer::train(cfg, &task, &TrainConfig::new(3, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    trainer::write_log_csv(&report.log, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_acc,seconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
}
