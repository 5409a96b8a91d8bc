//! Feature cache population and loading.
//!
//! Cached features are raw log-mels at
//! `<work_dir>/features/<speaker>/<utterance>.drvf`; normalization happens at
//! load time with statistics from the training split.

use std::path::{Path, PathBuf};

use crate::audio::{cache, load_audio, normalize_mel, FeatureBank, MelExtractor, MelSpectrogram, MelStats, SpeakerManifest, Split, UtteranceRecord};
use crate::config::AppConfig;
use crate::error::Result;

pub fn feature_path(features_dir: &Path, record: &UtteranceRecord) -> PathBuf {
    features_dir
        .join(&record.speaker_id)
        .join(format!("{}.{}", record.utterance_id(), cache::EXTENSION))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareSummary {
    pub speakers: usize,
    pub train: usize,
    pub eval: usize,
    pub frames: usize,
}

/// Extracts and caches features for every record in the manifest.
pub fn cache_features(cfg: &AppConfig, manifest: &SpeakerManifest) -> Result<PrepareSummary> {
    let extractor = MelExtractor::new(cfg.mel.clone())?;
    let dir = cfg.features_dir();
    let mut frames = 0;
    for record in &manifest.records {
        let clip = load_audio(&record.audio_path, cfg.mel.sample_rate)?;
        let mel = extractor.compute(&clip)?;
        frames += mel.n_frames();
        cache::write(&feature_path(&dir, record), &mel)?;
    }
    Ok(PrepareSummary {
        speakers: manifest.speakers.len(),
        train: manifest.split(Split::Train).count(),
        eval: manifest.split(Split::Eval).count(),
        frames,
    })
}

pub fn load_cached(cfg: &AppConfig, record: &UtteranceRecord) -> Result<MelSpectrogram> {
    cache::read(&feature_path(&cfg.features_dir(), record), &record.speaker_id)
}

/// Raw training bank and the statistics computed over it.
pub fn train_stats(cfg: &AppConfig, manifest: &SpeakerManifest) -> Result<MelStats> {
    let raw = FeatureBank::from_manifest(manifest, Split::Train, |r| load_cached(cfg, r))?;
    MelStats::from_mels(raw.iter().map(|(_, m)| m))
}

/// Normalized features of one split.
pub fn load_bank(cfg: &AppConfig, manifest: &SpeakerManifest, split: Split, stats: &MelStats) -> Result<FeatureBank> {
    FeatureBank::from_manifest(manifest, split, |r| normalize_mel(&load_cached(cfg, r)?, stats))
}
