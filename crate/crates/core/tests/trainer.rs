#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::data::{gen_synthetic_sample, LightFieldSample, SceneSpec};
use dlg_core::encoder::EncoderConfig;
use dlg_core::model::ModelConfig;
use dlg_core::trainer::{loss_curve_csv, TrainConfig, Trainer};
use dlg_core::{DlgError, Scalar, SeededRng, Tensor};

fn small_model(steps: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        encoder: EncoderConfig {
            stage_channels: vec![4, 6, 6, 8],
            out_channels: 6,
        },
        steps,
        ..ModelConfig::default()
    };
    cfg.set_channels(6);
    cfg
}

fn samples(count: usize, hw: usize, seed: u64) -> Vec<LightFieldSample> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            gen_synthetic_sample(&SceneSpec::random(hw, hw, 3, 4.0, &mut rng), &mut rng).unwrap()
        })
        .collect()
}

fn config(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        lr,
        log_every: 1,
        ..TrainConfig::default()
    }
}

fn params(t: &Trainer) -> Vec<Tensor> {
    t.store.iter().map(|p| p.value.clone()).collect()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let data = samples(3, 16, 1);
    let run = || {
        let mut t = Trainer::new(&small_model(2), &config(6, 1e-3), 11).unwrap();
        t.train(&data, None).unwrap();
        t.checkpoint_bytes()
    };
    assert_eq!(run(), run());
    let mut other = Trainer::new(&small_model(2), &config(6, 1e-3), 12).unwrap();
    other.train(&data, None).unwrap();
    assert_ne!(run(), other.checkpoint_bytes());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = samples(2, 16, 2);
    let mut t = Trainer::new(&small_model(2), &config(5, 0.0), 3).unwrap();
    let before = params(&t);
    let curve = t.train(&data, None).unwrap();
    assert_eq!(curve.len(), 5);
    assert_eq!(t.step(), 5);
    for (a, b) in before.iter().zip(params(&t)) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let data = samples(2, 16, 3);
    let mut t = Trainer::new(&small_model(2), &config(4, 1e-3), 5).unwrap();
    t.train(&data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.dlgt");
    t.save(&path).unwrap();
    let back = Trainer::load(&small_model(2), &t.config, 5, &path).unwrap();
    assert_eq!(back.step(), 4);
    assert_eq!(back.checkpoint_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn resume_reproduces_the_next_ten_steps() {
    let data = samples(3, 16, 4);
    let cfg = config(15, 1e-3);
    let mut straight = Trainer::new(&small_model(2), &cfg, 8).unwrap();
    for _ in 0..5 {
        straight.train_step(&data).unwrap();
    }
    let bytes = straight.checkpoint_bytes();
    let mut resumed = Trainer::from_checkpoint_bytes(&small_model(2), &cfg, 8, &bytes).unwrap();
    for _ in 0..10 {
        let a = straight.train_step(&data).unwrap();
        let b = resumed.train_step(&data).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(straight.checkpoint_bytes(), resumed.checkpoint_bytes());
}

#[test]
fn checkpoint_for_another_model_is_rejected() {
    let t = Trainer::new(&small_model(2), &config(1, 1e-3), 0).unwrap();
    let mut bigger = small_model(2);
    bigger.set_channels(8);
    let err = Trainer::from_checkpoint_bytes(&bigger, &config(1, 1e-3), 0, &t.checkpoint_bytes());
    assert!(err.is_err());
    let mut concat = small_model(2);
    concat.fusion = dlg_core::model::Fusion::Concat;
    assert!(
        Trainer::from_checkpoint_bytes(&concat, &config(1, 1e-3), 0, &t.checkpoint_bytes())
            .is_err()
    );
    assert!(Trainer::from_checkpoint_bytes(&small_model(2), &config(1, 1e-3), 0, b"junk").is_err());
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let err = Trainer::load(
        &small_model(2),
        &config(1, 1e-3),
        0,
        "/nonexistent/ck.dlgt".as_ref(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("/nonexistent/ck.dlgt"), "{err}");
}

#[test]
fn nan_loss_aborts_with_step_number() {
    let data = samples(1, 16, 5);
    let mut t = Trainer::new(&small_model(2), &config(10, 1e-3), 0).unwrap();
    t.train_step(&data).unwrap();
    t.train_step(&data).unwrap();
    let id = t.store.ids().last().unwrap();
    let shape = t.store.value(id).shape().to_vec();
    t.store
        .set_value(id, Tensor::full(&shape, Scalar::NAN))
        .unwrap();
    match t.train(&data, None) {
        Err(DlgError::NonFinite(msg)) => assert!(msg.contains("step 3"), "{msg}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn lr_schedule_applies_milestones() {
    let cfg = TrainConfig {
        steps: 100,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.lr_at(0), 1e-2);
    assert_eq!(cfg.lr_at(74), 1e-2);
    assert!((cfg.lr_at(75) - 1e-3).abs() < 1e-15);
    assert!((cfg.lr_at(89) - 1e-3).abs() < 1e-15);
    assert!((cfg.lr_at(90) - 1e-4).abs() < 1e-15);
    assert!((cfg.lr_at(99) - 1e-4).abs() < 1e-15);

    let data = samples(1, 16, 6);
    let mut t = Trainer::new(&small_model(1), &config(8, 1e-2), 0).unwrap();
    t.config.milestones = vec![0.5];
    let lrs: Vec<f64> = t.train(&data, None).unwrap().iter().map(|r| r.lr).collect();
    assert_eq!(&lrs[..4], &[1e-2; 4]);
    assert!(lrs[4..].iter().all(|&l| (l - 1e-3).abs() < 1e-15));
}

#[test]
fn invalid_train_configs_rejected() {
    for bad in [
        TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            milestones: vec![0.9, 0.5],
            ..TrainConfig::default()
        },
        TrainConfig {
            milestones: vec![0.5, 0.5],
            ..TrainConfig::default()
        },
        TrainConfig {
            milestones: vec![1.5],
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
        assert!(Trainer::new(&small_model(1), &bad, 0).is_err());
    }
    assert!(Trainer::new(&small_model(1), &config(1, 1e-3), 0)
        .unwrap()
        .train_step(&[])
        .is_err());
}

#[test]
fn train_writes_curve_and_checkpoints() {
    let data = samples(2, 16, 7);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(6, 1e-3);
    cfg.log_every = 2;
    cfg.ckpt_every = 3;
    let mut t = Trainer::new(&small_model(3), &cfg, 0).unwrap();
    let curve = t.train(&data, Some(dir.path())).unwrap();
    assert_eq!(
        curve.iter().map(|r| r.step).collect::<Vec<_>>(),
        vec![2, 4, 6]
    );
    assert!(curve.iter().all(|r| r.terms.len() == 4));
    for r in &curve {
        let sum: f64 = r.terms.iter().sum();
        assert!((sum - r.total).abs() < 1e-4 * r.total.max(1.0));
    }
    let csv = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(csv, loss_curve_csv(&curve));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,lr,total,final,side_1,side_2,side_3"
    );
    assert_eq!(lines.count(), 3);
    assert!(dir.path().join("ckpt_000003.dlgt").exists());
    assert!(!dir.path().join("ckpt_000006.dlgt").exists());
    let saved = std::fs::read(dir.path().join("checkpoint.dlgt")).unwrap();
    assert_eq!(saved, t.checkpoint_bytes());
}

#[test]
fn evaluate_is_deterministic() {
    let data = samples(3, 16, 8);
    let t = Trainer::new(&small_model(2), &config(1, 1e-3), 4).unwrap();
    let a = t.evaluate(&data).unwrap().finish().unwrap();
    let b = t.evaluate(&data).unwrap().finish().unwrap();
    assert_eq!(a, b);
    assert!(t.evaluate(&[]).is_err());
}

#[test]
fn training_beats_the_untrained_model() {
    let data = samples(4, 16, 9);
    let mut cfg = config(150, 3e-3);
    cfg.augment = false;
    let mut t = Trainer::new(&small_model(2), &cfg, 1).unwrap();
    let before = t.evaluate(&data).unwrap().finish().unwrap();
    let bce0 = t.mean_final_bce(&data).unwrap();
    t.train(&data, None).unwrap();
    let after = t.evaluate(&data).unwrap().finish().unwrap();
    let bce1 = t.mean_final_bce(&data).unwrap();
    assert!(after.max_f > before.max_f, "{before:?} -> {after:?}");
    assert!(after.mae < before.mae, "{before:?} -> {after:?}");
    assert!(bce1 < bce0, "{bce0} -> {bce1}");
}
