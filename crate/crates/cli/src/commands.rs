//! The work behind each subcommand, callable without a process boundary.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use drvc::audio::toy::{self, ToyCorpusConfig};
use drvc::audio::{build_manifest, cache, denormalize_mel, load_audio, normalize_mel, read_wav, write_wav, MelExtractor, SpeakerManifest, Split};
use drvc::config::AppConfig;
use drvc::engine::checkpoint::write_atomic;
use drvc::engine::data::{cache_features, load_bank, train_stats, PrepareSummary};
use drvc::engine::trainer::StepRecord;
use drvc::engine::{run_training, CheckpointState, RunOptions, TrainingOutcome};
use drvc::eval::{evaluate_model, EvalReport};
use drvc::vocoder::GriffinLim;
use drvc::{Error, Result};

use crate::plot;

/// Relative paths are placed under `work_dir`.
pub fn under_work_dir(cfg: &AppConfig, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        cfg.data.work_dir.join(path)
    }
}

pub fn synth_toy(out: &Path, toy: &ToyCorpusConfig) -> Result<usize> {
    Ok(toy::generate(out, toy)?.len())
}

/// Builds the manifest, caches features, then writes the manifest last so a
/// failure leaves no partial manifest behind.
pub fn prepare(cfg: &AppConfig, out: Option<&Path>) -> Result<(PathBuf, PrepareSummary)> {
    cfg.validate()?;
    let manifest = build_manifest(&cfg.data.data_root, cfg.data.eval_count_per_speaker)?;
    manifest.require_pairable()?;
    let summary = cache_features(cfg, &manifest)?;
    let path = match out {
        Some(p) => under_work_dir(cfg, p),
        None => cfg.manifest_path(),
    };
    manifest.write_jsonl(&path)?;
    Ok((path, summary))
}

fn read_manifest(cfg: &AppConfig) -> Result<SpeakerManifest> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "no manifest at {}; run `drvc prepare` first",
            path.display()
        )));
    }
    SpeakerManifest::read_jsonl(&path)
}

pub fn train(cfg: &AppConfig, resume: bool, stop: Option<Arc<AtomicBool>>) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let manifest = read_manifest(cfg)?;
    manifest.require_pairable()?;
    let stats = train_stats(cfg, &manifest)?;
    let bank = load_bank(cfg, &manifest, Split::Train, &stats)?;
    let resume = if resume {
        let path = cfg.checkpoint_file();
        if !path.exists() {
            return Err(Error::Config(format!("--resume: no checkpoint at {}", path.display())));
        }
        Some(path)
    } else {
        None
    };
    let opts = RunOptions {
        resume,
        stop,
        stop_after: None,
        write_log: true,
        keep_epoch_checkpoints: true,
    };
    run_training(cfg, &bank, &stats, &opts)
}

fn checkpoint_path(cfg: &AppConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.checkpoint_file())
}

#[derive(Debug, Clone)]
pub struct ConvertOutput {
    pub mel_path: PathBuf,
    pub wav_path: Option<PathBuf>,
    pub frames: usize,
    pub n_mels: usize,
}

/// Converts one WAV pair with the checkpoint's own feature settings.
pub fn convert(
    cfg: &AppConfig,
    checkpoint: Option<&Path>,
    source: &Path,
    target: &Path,
    out: &Path,
    audio: bool,
) -> Result<ConvertOutput> {
    let state = CheckpointState::load(&checkpoint_path(cfg, checkpoint))?;
    let mel_cfg = &state.config.mel;
    for wav in [source, target] {
        let (_, rate) = read_wav(wav)?;
        if rate != mel_cfg.sample_rate {
            return Err(Error::Contract(format!(
                "{} is {rate} Hz but the checkpoint was trained at {} Hz",
                wav.display(),
                mel_cfg.sample_rate
            )));
        }
    }
    let model = state.build_model()?;
    let extractor = MelExtractor::new(mel_cfg.clone())?;
    let features = |p: &Path| -> Result<_> {
        let clip = load_audio(p, mel_cfg.sample_rate)?;
        normalize_mel(&extractor.compute(&clip)?, &state.stats)
    };
    let converted = drvc::engine::convert(&model, &features(source)?, &features(target)?)?;
    let mel = denormalize_mel(&converted, &state.stats)?;
    let mel_path = under_work_dir(cfg, out);
    cache::write(&mel_path, &mel)?;
    let wav_path = if audio {
        let mut samples = GriffinLim::new(mel_cfg)?.vocode(&mel, state.config.eval.griffin_lim_iters)?;
        drvc::audio::clip::peak_normalize(&mut samples);
        let path = mel_path.with_extension("wav");
        write_wav(&path, &samples, mel_cfg.sample_rate)?;
        Some(path)
    } else {
        None
    };
    Ok(ConvertOutput {
        mel_path,
        wav_path,
        frames: mel.n_frames(),
        n_mels: mel.n_mels(),
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub fn read_training_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Scores the eval split and writes the JSON report, a CSV of pairs, an MCD
/// bar chart and (when a training log exists) a loss-curve plot.
pub fn evaluate(cfg: &AppConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<EvaluateOutput> {
    let state = CheckpointState::load(&checkpoint_path(cfg, checkpoint))?;
    let manifest = read_manifest(cfg)?;
    let model = state.build_model()?;
    let mut eval_cfg = state.config.clone();
    eval_cfg.data = cfg.data.clone();
    eval_cfg.eval = cfg.eval.clone();
    let report = evaluate_model(&model, &state.stats, &eval_cfg, &manifest)?;

    let report_path = match out {
        Some(p) => under_work_dir(cfg, p),
        None => cfg.data.work_dir.join("eval").join("report.json"),
    };
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let csv_path = report_path.with_extension("csv");
    write_atomic(&csv_path, report.overall.to_csv().as_bytes())?;

    let dir = report_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut plots = Vec::new();
    let bars = dir.join("mcd.svg");
    write_atomic(&bars, plot::mcd_bars(&report).as_bytes())?;
    plots.push(bars);
    let log_path = cfg.training_log_path();
    if log_path.exists() {
        let records = read_training_log(&log_path)?;
        if !records.is_empty() {
            let curve = dir.join("loss_curve.svg");
            write_atomic(&curve, plot::loss_curve(&records).as_bytes())?;
            plots.push(curve);
        }
    }
    Ok(EvaluateOutput {
        report,
        report_path,
        csv_path,
        plots,
    })
}
