use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

fn drvc(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_drvc"));
    cmd.args(args).env_remove("DRVC_WORK_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "status {:?}\nstdout {stdout}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Setup {
    _dir: tempfile::TempDir,
    data: PathBuf,
    work: PathBuf,
    config: PathBuf,
}

/// Two speakers x six sentences, two held out per speaker, a model small
/// enough that a few steps take well under a second.
fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let work = dir.path().join("work");
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        format!(
            "data_root = {:?}\nwork_dir = {:?}\neval_count_per_speaker = 2\n\
             content_channels = 4\ncontent_hidden = 4\ncontent_dim = 3\nstyle_channels = 4\nstyle_dim = 3\n\
             disc_channels = 4\nhead_hidden = 4\nconv_layers = 1\n\
             segment_frames = 8\nbatch_size = 2\nepochs = 2\nsteps_per_epoch = 2\n\
             griffin_lim_iters = 2\ncepstrum_order = 12\n",
            data.to_str().unwrap(),
            work.to_str().unwrap()
        ),
    )
    .unwrap();
    ok(drvc(&["synth-toy", "--out", data.to_str().unwrap(), "--sentences", "6"], &[]));
    Setup {
        _dir: dir,
        data,
        work,
        config,
    }
}

impl Setup {
    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", self.config.to_str().unwrap()];
        full.extend_from_slice(args);
        drvc(&full, &[])
    }

    fn wav(&self, speaker: usize, sentence: usize) -> String {
        self.data
            .join(format!("spk{speaker}"))
            .join(format!("utt_{sentence:03}.wav"))
            .to_str()
            .unwrap()
            .to_string()
    }
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.clone(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn prepare_train_convert_evaluate() {
    let s = setup();
    let stdout = ok(s.run(&["prepare"]));
    assert!(stdout.contains("2 speakers, 8 train / 4 eval"), "{stdout}");
    let manifest = s.work.join("manifest.jsonl");
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    for rec in &lines {
        for key in ["audio_path", "speaker_id", "split"] {
            assert!(rec.get(key).is_some(), "{rec}");
        }
    }
    let cached = tree_bytes(&s.work.join("features"));
    assert_eq!(cached.len(), 12);
    assert!(cached.iter().all(|(p, b)| p.extension().unwrap() == "drvf" && &b[..4] == b"DRVF"));

    let before = tree_bytes(&s.work);
    ok(s.run(&["prepare"]));
    assert_eq!(before, tree_bytes(&s.work), "rerun changed the cache");

    let stdout = ok(s.run(&["train", "--ablate", "cycle"]));
    assert!(stdout.contains("step 4"), "{stdout}");
    let log = std::fs::read_to_string(s.work.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["cycle"].is_null(), "{rec}");
        for key in ["step", "epoch", "identity", "same_content", "same_style", "domain", "adversarial", "total", "lambda_grl", "lr"] {
            assert!(rec[key].is_number(), "{key} in {rec}");
        }
    }
    assert!(s.work.join("checkpoints/latest.safetensors").exists());

    let stdout = ok(s.run(&[
        "convert",
        "--source",
        &s.wav(0, 1),
        "--target",
        &s.wav(1, 2),
        "--out",
        "converted.drvf",
        "--audio",
    ]));
    let mel = drvc::audio::cache::read(&s.work.join("converted.drvf"), "spk0").unwrap();
    let source = drvc::audio::cache::read(&s.work.join("features/spk0/utt_001.drvf"), "spk0").unwrap();
    assert_eq!(mel.n_frames(), source.n_frames(), "{stdout}");
    assert_eq!(mel.n_mels(), 80);
    assert!(s.work.join("converted.wav").exists());

    let stdout = ok(s.run(&["evaluate"]));
    assert!(stdout.contains("identity MCD") && stdout.contains("cross-speaker MCD"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.work.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["mean_mcd"].as_f64().unwrap() > 0.0);
    assert!(report["std"].is_number() && !report["pairs"].as_array().unwrap().is_empty());
    for f in ["report.csv", "mcd.svg", "loss_curve.svg"] {
        assert!(s.work.join("eval").join(f).exists(), "{f}");
    }
}

#[test]
fn default_toy_corpus_splits_thirty_ten() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy_data");
    ok(drvc(&["synth-toy", "--out", data.to_str().unwrap()], &[]));
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.toml");
    let work = dir.path().join("w");
    let out = drvc(
        &["--config", config, "prepare", "--data-root", data.to_str().unwrap()],
        &[("DRVC_WORK_DIR", &work)],
    );
    let stdout = ok(out);
    assert!(stdout.contains("2 speakers, 30 train / 10 eval"), "{stdout}");
    assert!(work.join("manifest.jsonl").exists());
}

#[test]
fn work_dir_env_overrides_config() {
    let s = setup();
    let elsewhere = s.work.with_file_name("elsewhere");
    let out = drvc(
        &["--config", s.config.to_str().unwrap(), "prepare"],
        &[("DRVC_WORK_DIR", &elsewhere)],
    );
    ok(out);
    assert!(elsewhere.join("manifest.jsonl").exists());
    assert!(!s.work.exists());
}

#[test]
fn missing_data_root_fails_without_manifest() {
    let s = setup();
    let out = s.run(&["prepare", "--data-root", s.data.join("absent").to_str().unwrap()]);
    assert_ne!(code(&out), 0);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!s.work.join("manifest.jsonl").exists());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let s = setup();
    assert_eq!(code(&drvc(&["frobnicate"], &[])), EXIT_USAGE);
    assert_eq!(code(&drvc(&["train", "--bogus"], &[])), EXIT_USAGE);
    let out = s.run(&["train"]);
    assert_eq!(code(&out), EXIT_USAGE, "train before prepare");
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare"));

    ok(s.run(&["prepare"]));
    let out = s.run(&["train", "--ablate", "no-such-loss"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&out.stderr).contains("same-style"), "lists the choices");

    let bad = s.config.with_file_name("bad.toml");
    std::fs::write(&bad, "not_a_key = 3\n").unwrap();
    let out = drvc(&["--config", bad.to_str().unwrap(), "prepare"], &[]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn convert_rejects_sample_rate_mismatch() {
    let s = setup();
    ok(s.run(&["prepare"]));
    ok(s.run(&["train"]));
    let odd = s.data.with_file_name("odd.wav");
    drvc::audio::write_wav(&odd, &vec![0.1f32; 16000], 16000).unwrap();
    let out = s.run(&[
        "convert",
        "--source",
        odd.to_str().unwrap(),
        "--target",
        &s.wav(1, 0),
        "--out",
        "x.drvf",
    ]);
    assert_eq!(code(&out), EXIT_RUNTIME);
    assert!(String::from_utf8_lossy(&out.stderr).contains("16000 Hz"));
    assert!(!s.work.join("x.drvf").exists());
}

#[test]
fn resume_continues_the_log() {
    let s = setup();
    ok(s.run(&["prepare"]));
    ok(s.run(&["train"]));
    let log = s.work.join("train_log.jsonl");
    let first = std::fs::read_to_string(&log).unwrap();
    ok(s.run(&["train", "--resume"]));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), first, "finished run has nothing left to do");
}
