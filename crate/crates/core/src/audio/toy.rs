//! Synthetic parallel corpus with known factors.
//!
//! Each "sentence" is a sequence of band-limited pink-noise phones shared by
//! every speaker; each "speaker" is a fixed linear filter (spectral tilt plus
//! one resonance) applied to the shared sentence waveform. Content and style
//! are therefore known exactly, and every sentence exists for every speaker,
//! which gives parallel references for MCD scoring.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::clip::write_wav;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_speakers: usize,
    pub n_sentences: usize,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            n_sentences: 20,
            sample_rate: 22050,
            duration_secs: 1.0,
            seed: 2022,
        }
    }
}

const PHONE_CENTERS_HZ: [f64; 7] = [350.0, 650.0, 1000.0, 1500.0, 2200.0, 3100.0, 4300.0];

/// (tilt coefficient, resonance Hz); positive tilt darkens, negative brightens.
fn speaker_filter(k: usize) -> (f64, f64) {
    const TABLE: [(f64, f64); 4] = [(0.75, 700.0), (-0.75, 2600.0), (0.4, 1800.0), (-0.4, 450.0)];
    let (tilt, res) = TABLE[k % TABLE.len()];
    (tilt, res * (1.0 + 0.1 * (k / TABLE.len()) as f64))
}

struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        Self {
            b0: 1.0 - r,
            a1: -2.0 * r * (2.0 * PI * freq / rate).cos(),
            a2: r * r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x - self.a1 * self.y1 - self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// The speaker-independent source waveform of sentence `index`.
pub fn sentence_waveform(cfg: &ToyCorpusConfig, index: usize) -> Vec<f64> {
    let rate = cfg.sample_rate as f64;
    let n = (cfg.duration_secs * rate).round() as usize;
    let mut rng = seeded(cfg.seed, 1000 + index as u64);
    // Kellet's economy pink-noise filter.
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let dur = ((0.06 + 0.10 * rng.random::<f64>()) * rate) as usize;
        let silent = rng.random::<f64>() < 0.15;
        let center = PHONE_CENTERS_HZ[rng.random_range(0..PHONE_CENTERS_HZ.len())];
        let gain = 0.5 + rng.random::<f64>();
        let mut res = Resonator::new(center, 250.0, rate);
        for i in 0..dur.min(n - out.len()) {
            let white: f64 = rng.random::<f64>() * 2.0 - 1.0;
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            let pink = b0 + b1 + b2 + white * 0.1848;
            let env = (PI * (i as f64 + 0.5) / dur as f64).sin();
            let v = if silent { 0.02 * pink } else { gain * env * res.tick(pink) * 8.0 };
            out.push(v);
        }
    }
    out
}

/// `sentence` rendered by speaker `k`.
pub fn render(cfg: &ToyCorpusConfig, speaker: usize, sentence: &[f64]) -> Vec<f32> {
    let (tilt, res_hz) = speaker_filter(speaker);
    let mut res = Resonator::new(res_hz, 150.0, cfg.sample_rate as f64);
    let mut prev_in = 0.0;
    let mut prev_out = 0.0;
    let out: Vec<f64> = sentence
        .iter()
        .map(|&x| {
            let tilted = if tilt >= 0.0 {
                x + tilt * prev_out
            } else {
                x + tilt * prev_in
            };
            prev_in = x;
            prev_out = tilted;
            tilted + 6.0 * res.tick(x)
        })
        .collect();
    let peak = out.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter().map(|v| (0.5 * v / peak) as f32).collect()
}

pub fn speaker_name(k: usize) -> String {
    format!("spk{k}")
}

pub fn utterance_name(s: usize) -> String {
    format!("utt_{s:03}.wav")
}

/// Writes `root/spk<k>/utt_<s>.wav` for every speaker and sentence; returns
/// the written paths.
pub fn generate(root: &Path, cfg: &ToyCorpusConfig) -> Result<Vec<PathBuf>> {
    if cfg.n_speakers == 0 || cfg.n_sentences == 0 {
        return Err(Error::Config("toy corpus needs speakers and sentences".into()));
    }
    let mut paths = Vec::new();
    for k in 0..cfg.n_speakers {
        let dir = root.join(speaker_name(k));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in 0..cfg.n_sentences {
        let sentence = sentence_waveform(cfg, s);
        for k in 0..cfg.n_speakers {
            let path = root.join(speaker_name(k)).join(utterance_name(s));
            write_wav(&path, &render(cfg, k, &sentence), cfg.sample_rate)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
