use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use drvc::audio::{FeatureBank, MelSpectrogram, MelStats};
use drvc::config::AppConfig;
use drvc::engine::{convert, run_training, CheckpointState, RunOptions, TrainingOutcome};
use ndarray::Array2;
use rand::Rng;

const MELS: usize = 6;

fn tiny_config(work: &Path) -> AppConfig {
    let mut cfg = AppConfig::default();
    cfg.data.work_dir = work.to_path_buf();
    cfg.mel.n_mels = MELS;
    let m = &mut cfg.model;
    m.content_channels = 4;
    m.content_hidden = 4;
    m.content_dim = 3;
    m.style_channels = 4;
    m.style_dim = 3;
    m.disc_channels = 4;
    m.head_hidden = 4;
    m.kernel_size = 3;
    m.conv_layers = 1;
    let t = &mut cfg.training;
    t.batch_size = 2;
    t.segment_frames = 8;
    t.epochs = 2;
    t.steps_per_epoch = Some(3);
    t.lr_initial = 1e-3;
    t.seed = 11;
    cfg
}

fn bank() -> FeatureBank {
    let mut rng = drvc::rng::seeded(5, 0);
    let speakers = vec!["s0".to_string(), "s1".to_string()];
    let utterances = speakers
        .iter()
        .enumerate()
        .map(|(k, name)| {
            (0..3)
                .map(|u| {
                    let frames = Array2::from_shape_fn((6 + 2 * u, MELS), |(_, m)| {
                        (k as f32 - 0.5) * (m as f32 / MELS as f32) + rng.random_range(-0.3f32..0.3)
                    });
                    MelSpectrogram::new(frames, 22050, 256, name.clone()).unwrap()
                })
                .collect()
        })
        .collect();
    FeatureBank { speakers, utterances }
}

fn opts() -> RunOptions {
    RunOptions {
        write_log: true,
        ..Default::default()
    }
}

fn train(cfg: &AppConfig, opts: &RunOptions) -> TrainingOutcome {
    run_training(cfg, &bank(), &MelStats::identity(MELS), opts).unwrap()
}

fn flat(params: &BTreeMap<String, Tensor>) -> BTreeMap<String, Vec<f32>> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), v.flatten_all().unwrap().to_vec1::<f32>().unwrap()))
        .collect()
}

fn records_json(out: &TrainingOutcome) -> Vec<String> {
    out.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect()
}

#[test]
fn same_seed_same_run() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&tiny_config(d1.path()), &opts());
    let b = train(&tiny_config(d2.path()), &opts());
    assert_eq!(a.records.len(), 6);
    assert_eq!(records_json(&a), records_json(&b));
    assert_eq!(flat(&a.state.params), flat(&b.state.params));
}

#[test]
fn different_seed_different_run() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&tiny_config(d1.path()), &opts());
    let mut cfg = tiny_config(d2.path());
    cfg.training.seed = 12;
    let b = train(&cfg, &opts());
    assert_ne!(records_json(&a), records_json(&b));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny_config(dir.path()), &opts());
    let loaded = CheckpointState::load(&out.checkpoint).unwrap();
    assert_eq!(flat(&loaded.params), flat(&out.state.params));
    assert_eq!(flat(&loaded.adam.m), flat(&out.state.adam.m));
    assert_eq!(flat(&loaded.adam.v), flat(&out.state.adam.v));
    assert_eq!(loaded.adam.t, out.state.adam.t);
    assert_eq!(loaded.global_step, 6);
    assert_eq!(loaded.rng, out.state.rng);
    assert_eq!(loaded.config, out.state.config);
    assert_eq!(loaded.speakers, out.state.speakers);

    let b = bank();
    let (src, tgt) = (&b.utterances[0][1], &b.utterances[1][2]);
    let x = convert(&out.state.build_model().unwrap(), src, tgt).unwrap();
    let y = convert(&loaded.build_model().unwrap(), src, tgt).unwrap();
    assert_eq!(x.frames, y.frames);
    assert_eq!(x.n_frames(), src.n_frames());
}

#[test]
fn resume_matches_uninterrupted() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let straight = train(&tiny_config(d1.path()), &opts());

    let cfg = tiny_config(d2.path());
    let first = train(
        &cfg,
        &RunOptions {
            stop_after: Some(2),
            ..opts()
        },
    );
    assert!(first.interrupted);
    let rest = train(
        &cfg,
        &RunOptions {
            resume: Some(first.checkpoint.clone()),
            ..opts()
        },
    );
    let mut joined = records_json(&first);
    joined.extend(records_json(&rest));
    assert_eq!(joined, records_json(&straight));
    assert_eq!(flat(&rest.state.params), flat(&straight.state.params));

    let log = std::fs::read_to_string(cfg.training_log_path()).unwrap();
    assert_eq!(log.lines().collect::<Vec<_>>(), joined);
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    let w = &mut cfg.training.weights;
    w.w_cycle = 0.0;
    w.w_id = 0.0;
    w.w_adv = 0.0;
    w.w_domain = 0.0;
    w.w_same = 0.0;
    cfg.training.epochs = 0;
    let init = train(&cfg, &opts());
    cfg.training.epochs = 2;
    let dir2 = tempfile::tempdir().unwrap();
    cfg.data.work_dir = dir2.path().to_path_buf();
    let trained = train(&cfg, &opts());
    assert_eq!(trained.records.len(), 6);
    assert!(trained.records.iter().all(|r| r.losses.total == 0.0));
    assert_eq!(flat(&init.state.params), flat(&trained.state.params));
}

#[test]
fn ablated_term_is_absent_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.training.ablate = vec!["cycle".into(), "same-style".into()];
    let out = train(&cfg, &opts());
    for r in &out.records {
        assert!(r.losses.cycle.is_none() && r.losses.same_style.is_none());
        assert!(r.losses.identity.is_some() && r.losses.domain.is_some());
    }
    let line = std::fs::read_to_string(cfg.training_log_path()).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert!(first["cycle"].is_null(), "{first}");
}

#[test]
fn grl_schedule_and_lr_in_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny_config(dir.path()), &opts());
    let lambdas: Vec<f64> = out.records.iter().map(|r| r.lambda_grl).collect();
    assert_eq!(lambdas[0], 0.0);
    assert!(lambdas.windows(2).all(|w| w[1] > w[0]));
    let k = 5.0 / 6.0;
    let expected = 2.0 / (1.0 + (-10.0f64 * k).exp()) - 1.0;
    assert!((lambdas[5] - expected).abs() < 1e-12);
    assert_eq!(out.records[0].lr, 1e-3);
    assert!((out.records[3].lr - (1e-3 - 5e-6)).abs() < 1e-15);
}
