mod common;

use common::overfit_data;
use vtad::dataset::AttributeRegistry;
use vtad::features::{BackendConfig, Provider, ProviderConfig, SyntheticProfile};
use vtad::nn::Module;
use vtad::train::{
    config_fingerprint, load_checkpoint, save_checkpoint, train, EpochLog, LoadOptions, TrainConfig, TrainOptions,
};

fn small_provider() -> Provider {
    Provider::from_config(&ProviderConfig {
        backend: BackendConfig::Synthetic {
            seed: 42,
            profile: SyntheticProfile {
                gain: 4.0,
                noise_std: 1.0,
            },
        },
        expected_layers: 4,
        expected_dim: 64,
    })
    .unwrap()
}

fn bits(log: &[EpochLog]) -> Vec<String> {
    log.iter().map(EpochLog::to_json_line).collect()
}

fn param_bits<M: Module>(m: &M) -> Vec<u64> {
    m.tensors()
        .iter()
        .chain(m.buffers().iter())
        .flat_map(|t| t.data.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn resume_from_epoch_five_replays_the_uninterrupted_run() {
    let data = overfit_data(42);
    let provider = small_provider();
    let reg = AttributeRegistry::default();
    let cfg = TrainConfig::default();
    let opts = || TrainOptions {
        manifest: Some(&data.records),
        ..TrainOptions::default()
    };

    let full = train(&cfg, &reg, &data.train, &data.held_out, &provider, opts()).unwrap();

    let half = train(
        &cfg,
        &reg,
        &data.train,
        &data.held_out,
        &provider,
        TrainOptions {
            stop_after_epoch: Some(5),
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(half.checkpoint.epoch, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&half.checkpoint, &path).unwrap();
    let loaded = load_checkpoint(
        &path,
        LoadOptions {
            expected: Some(config_fingerprint(&cfg, &reg)),
            force: false,
        },
    )
    .unwrap();

    let rest = train(
        &cfg,
        &reg,
        &data.train,
        &data.held_out,
        &provider,
        TrainOptions {
            resume: Some(loaded),
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(bits(&half.log), bits(&full.log[..5]));
    assert_eq!(bits(&rest.log), bits(&full.log[5..]));
    assert_eq!(param_bits(&rest.checkpoint.model), param_bits(&full.checkpoint.model));
    assert_eq!(rest.checkpoint.optimizer, full.checkpoint.optimizer);
    assert_eq!(rest.checkpoint.step, full.checkpoint.step);
}

#[test]
fn resume_under_a_different_config_needs_force() {
    let data = overfit_data(42);
    let provider = small_provider();
    let reg = AttributeRegistry::default();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let opts = || TrainOptions {
        manifest: Some(&data.records),
        ..TrainOptions::default()
    };
    let first = train(
        &cfg,
        &reg,
        &data.train,
        &[],
        &provider,
        TrainOptions {
            stop_after_epoch: Some(1),
            ..opts()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&first.checkpoint, &path).unwrap();

    let other = TrainConfig {
        learning_rate: 5e-4,
        ..cfg.clone()
    };
    let expected = Some(config_fingerprint(&other, &reg));
    assert!(load_checkpoint(&path, LoadOptions { expected, force: false }).is_err());
    // loaded without an expectation, the trainer still refuses the mismatch
    let plain = load_checkpoint(&path, LoadOptions::default()).unwrap();
    assert!(train(
        &other,
        &reg,
        &data.train,
        &[],
        &provider,
        TrainOptions {
            resume: Some(plain),
            ..opts()
        }
    )
    .is_err());

    let forced = load_checkpoint(&path, LoadOptions { expected, force: true }).unwrap();
    assert!(forced.forced);
    let out = train(
        &other,
        &reg,
        &data.train,
        &[],
        &provider,
        TrainOptions {
            resume: Some(forced),
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(out.checkpoint.epoch, 2);
}

#[test]
fn frozen_pooling_is_left_untouched() {
    let data = overfit_data(42);
    let provider = small_provider();
    let reg = AttributeRegistry::default();
    let cfg = TrainConfig {
        epochs: 2,
        astp_trainable: false,
        ..TrainConfig::default()
    };
    let out = train(
        &cfg,
        &reg,
        &data.train,
        &[],
        &provider,
        TrainOptions {
            manifest: Some(&data.records),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let init = vtad::model::VtadModel::init(64, cfg.astp_heads, cfg.variant, cfg.seed).unwrap();
    assert_eq!(out.checkpoint.model.astp, init.astp);
    assert_ne!(param_bits(&out.checkpoint.model.diffnet), param_bits(&init.diffnet));
}

#[test]
fn log_lines_are_json_with_every_field() {
    let data = overfit_data(42);
    let provider = small_provider();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut sink = Vec::new();
    let out = train(
        &cfg,
        &AttributeRegistry::default(),
        &data.train,
        &data.held_out,
        &provider,
        TrainOptions {
            manifest: Some(&data.records),
            log_sink: Some(&mut sink),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let text = String::from_utf8(sink).unwrap();
    assert_eq!(text.lines().count(), out.log.len());
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "step", "lr", "train_loss", "val_loss", "val_acc"] {
        assert!(v.get(key).is_some(), "{key} missing from {text}");
    }
}
