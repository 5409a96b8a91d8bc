//! `drvc` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
//! (including training divergence).

pub mod commands;
pub mod plot;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use drvc::config::AppConfig;
use drvc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable that overrides `work_dir`.
pub const WORK_DIR_ENV: &str = "DRVC_WORK_DIR";

#[derive(Debug, Parser)]
#[command(name = "drvc", version, about = "Any-to-any voice conversion by disentangled content and style")]
pub struct Cli {
    /// TOML config; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic two-speaker corpus.
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        speakers: usize,
        #[arg(long, default_value_t = 20)]
        sentences: usize,
    },
    /// Scan data_root, write the manifest and the feature cache.
    Prepare {
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Manifest path (relative paths are under work_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the prepared manifest.
    Train {
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Remove a loss term (repeatable): cycle, identity, same-content,
        /// same-style, domain, adversarial.
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Content from --source, style from --target.
    Convert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Output feature file (relative paths are under work_dir).
        #[arg(long)]
        out: PathBuf,
        /// Also write a Griffin-Lim waveform next to the features.
        #[arg(long)]
        audio: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// MCD over every eval-split pairing, plus plots.
    Evaluate {
        /// Report path (relative paths are under work_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownStrategy { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Config file (or defaults), then `--seed`, then the work-dir override.
pub fn load_config(cli: &Cli, work_dir_override: Option<PathBuf>) -> drvc::Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    if let Some(dir) = work_dir_override {
        cfg.data.work_dir = dir;
    }
    Ok(cfg)
}

/// Runs one parsed invocation, printing a summary to stdout.
pub fn run(cli: Cli) -> drvc::Result<()> {
    let override_dir = std::env::var_os(WORK_DIR_ENV).map(PathBuf::from);
    let mut cfg = load_config(&cli, override_dir)?;
    match cli.command {
        Command::SynthToy { out, speakers, sentences } => {
            let toy = drvc::audio::toy::ToyCorpusConfig {
                n_speakers: speakers,
                n_sentences: sentences,
                sample_rate: cfg.mel.sample_rate,
                seed: cli.seed.unwrap_or(drvc::audio::toy::ToyCorpusConfig::default().seed),
                ..Default::default()
            };
            let n = commands::synth_toy(&out, &toy)?;
            println!("wrote {n} files under {}", out.display());
        }
        Command::Prepare { data_root, out } => {
            if let Some(root) = data_root {
                cfg.data.data_root = root;
            }
            let (path, s) = commands::prepare(&cfg, out.as_deref())?;
            println!(
                "manifest {}: {} speakers, {} train / {} eval utterances, {} frames cached",
                path.display(),
                s.speakers,
                s.train,
                s.eval,
                s.frames
            );
        }
        Command::Train { resume, ablate } => {
            cfg.training.ablate.extend(ablate);
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                log::warn!("cannot install interrupt handler: {e}");
            }
            let outcome = commands::train(&cfg, resume, Some(stop))?;
            if let Some(last) = outcome.records.last() {
                println!("step {} total loss {:.4}", last.step, last.losses.total);
            }
            if outcome.interrupted {
                println!("interrupted; checkpoint {}", outcome.checkpoint.display());
            } else {
                println!("checkpoint {}", outcome.checkpoint.display());
            }
        }
        Command::Convert {
            source,
            target,
            out,
            audio,
            checkpoint,
        } => {
            let r = commands::convert(&cfg, checkpoint.as_deref(), &source, &target, &out, audio)?;
            println!("converted mel {} x {} -> {}", r.frames, r.n_mels, r.mel_path.display());
            if let Some(wav) = r.wav_path {
                println!("waveform -> {}", wav.display());
            }
        }
        Command::Evaluate { out, checkpoint } => {
            let r = commands::evaluate(&cfg, checkpoint.as_deref(), out.as_deref())?;
            let rep = &r.report;
            println!(
                "MCD {:.3} +- {:.3} dB over {} pairs",
                rep.overall.mean_mcd,
                rep.overall.std,
                rep.overall.pairs.len()
            );
            if let Some(s) = rep.identity {
                println!("identity MCD {:.3} dB ({} pairs)", s.mean_mcd, s.count);
            }
            if let Some(s) = rep.cross {
                println!("cross-speaker MCD {:.3} dB ({} pairs)", s.mean_mcd, s.count);
            }
            println!("report {}", r.report_path.display());
        }
    }
    Ok(())
}
