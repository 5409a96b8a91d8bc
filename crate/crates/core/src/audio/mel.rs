use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::clip::AudioClip;
use crate::error::{Error, Result};

/// Short-time analysis and mel filterbank settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    /// Reflect-pad `win_length / 2` samples on both sides before framing.
    pub center: bool,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_mels: 80,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            center: false,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_mels == 0 || self.hop_length == 0 {
            return Err(Error::Config(
                "sample_rate, n_mels and hop_length must be positive".into(),
            ));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::Config(format!(
                "win_length {} must be in 1..={}",
                self.win_length, self.n_fft
            )));
        }
        Ok(())
    }

    /// Number of frames produced for `n_samples` input samples, or `None`
    /// when the input is shorter than one window.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        let padded = if self.center {
            n_samples + 2 * (self.win_length / 2)
        } else {
            n_samples
        };
        if padded < self.win_length {
            None
        } else {
            Some(1 + (padded - self.win_length) / self.hop_length)
        }
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// Log-mel frames, `[T x M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f32>,
    pub sample_rate: u32,
    pub hop_length: usize,
    pub speaker_id: String,
}

impl MelSpectrogram {
    pub fn new(
        frames: Array2<f32>,
        sample_rate: u32,
        hop_length: usize,
        speaker_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::EmptyInput("mel-spectrogram has no frames".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("mel-spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            frames,
            sample_rate,
            hop_length,
            speaker_id: speaker_id.into(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * F_SP
    }
}

/// Slaney-style triangular filterbank with area normalization, `[M x (n_fft/2 + 1)]`.
pub fn mel_filterbank(config: &MelConfig) -> Array2<f32> {
    let n_bins = config.n_fft / 2 + 1;
    let f_max = config.f_max.unwrap_or_else(|| config.nyquist());
    let mel_lo = hz_to_mel(config.f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * config.sample_rate as f64 / config.n_fft as f64)
        .collect();
    let mut fb = Array2::<f32>::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for (k, &f) in bin_hz.iter().enumerate() {
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            let w = up.min(down).max(0.0);
            fb[[m, k]] = (w * norm) as f32;
        }
    }
    fb
}

/// Periodic Hann window of `win_length`, zero-padded and centred in `n_fft`.
pub fn analysis_window(win_length: usize, n_fft: usize) -> Vec<f32> {
    let mut window = vec![0f32; n_fft];
    let offset = (n_fft - win_length) / 2;
    for i in 0..win_length {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / win_length as f64;
        window[offset + i] = (0.5 - 0.5 * phase.cos()) as f32;
    }
    window
}

fn reflect_pad(samples: &[f32], pad: usize) -> Vec<f32> {
    let n = samples.len() as isize;
    let idx = |i: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m >= n { period - m } else { m }) as usize
    };
    (-(pad as isize)..n + pad as isize)
        .map(|i| samples[idx(i)])
        .collect()
}

/// Reusable STFT magnitude + mel projection.
pub struct MelExtractor {
    config: MelConfig,
    filterbank: Array2<f32>,
    window: Vec<f32>,
    fft: Arc<dyn RealToComplex<f32>>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = mel_filterbank(&config);
        let window = analysis_window(config.win_length, config.n_fft);
        let fft = RealFftPlanner::<f32>::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            config,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<f32> {
        &self.filterbank
    }

    /// Linear-magnitude STFT, `[T x (n_fft/2 + 1)]`.
    pub fn magnitudes(&self, samples: &[f32]) -> Result<Array2<f32>> {
        let cfg = &self.config;
        let n_frames = cfg.frame_count(samples.len()).ok_or_else(|| {
            Error::EmptyInput(format!(
                "{} samples is shorter than one {}-sample window",
                samples.len(),
                cfg.win_length
            ))
        })?;
        let padded;
        let signal = if cfg.center {
            padded = reflect_pad(samples, cfg.win_length / 2);
            &padded[..]
        } else {
            samples
        };
        let offset = (cfg.n_fft - cfg.win_length) / 2;
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Array2::<f32>::zeros((n_frames, n_bins));
        let mut buf = self.fft.make_input_vec();
        let mut spec = self.fft.make_output_vec();
        for t in 0..n_frames {
            buf.iter_mut().for_each(|v| *v = 0.0);
            let start = t * cfg.hop_length;
            for i in 0..cfg.win_length {
                buf[offset + i] = signal[start + i] * self.window[offset + i];
            }
            self.fft
                .process(&mut buf, &mut spec)
                .map_err(|e| Error::Contract(format!("fft: {e}")))?;
            for (k, c) in spec.iter().enumerate() {
                out[[t, k]] = c.norm();
            }
        }
        Ok(out)
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.config.sample_rate {
            return Err(Error::Contract(format!(
                "clip sample rate {} does not match configured {}",
                clip.sample_rate, self.config.sample_rate
            )));
        }
        let mags = self.magnitudes(&clip.samples)?;
        let floor = self.config.log_floor as f32;
        let frames = mags
            .dot(&self.filterbank.t())
            .mapv(|v| v.max(floor).ln());
        MelSpectrogram::new(
            frames,
            clip.sample_rate,
            self.config.hop_length,
            clip.speaker_id.clone(),
        )
    }
}

pub fn compute_mel(clip: &AudioClip, config: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(config.clone())?.compute(clip)
}

/// Per-mel-bin mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const STD_EPSILON: f32 = 1e-5;

impl MelStats {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    /// Accumulates statistics over every frame of `mels`. Callers pass the
    /// training split only.
    pub fn from_mels<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sum_sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for mel in mels {
            let f = mel.frames.mapv(|v| v as f64);
            let s = f.sum_axis(Axis(0));
            let sq = f.mapv(|v| v * v).sum_axis(Axis(0));
            match (&mut sum, &mut sum_sq) {
                (Some(a), Some(b)) => {
                    if a.len() != s.len() {
                        return Err(Error::Contract("mel bin counts differ across inputs".into()));
                    }
                    *a += &s;
                    *b += &sq;
                }
                _ => {
                    sum = Some(s);
                    sum_sq = Some(sq);
                }
            }
            count += mel.n_frames();
        }
        let (sum, sum_sq) = match (sum, sum_sq) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::EmptyInput("no mel-spectrograms for statistics".into())),
        };
        let n = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std: Vec<f32> = sum
            .iter()
            .zip(sum_sq.iter())
            .map(|(s, sq)| {
                let m = s / n;
                ((sq / n - m * m).max(0.0)).sqrt() as f32
            })
            .collect();
        Ok(Self { mean, std })
    }

    fn clamped_std(&self) -> Vec<f32> {
        let mut warned = false;
        self.std
            .iter()
            .map(|&s| {
                if s < STD_EPSILON {
                    if !warned {
                        log::warn!("mel bin with near-zero std clamped to {STD_EPSILON}");
                        warned = true;
                    }
                    STD_EPSILON
                } else {
                    s
                }
            })
            .collect()
    }

    fn check(&self, mel: &MelSpectrogram) -> Result<()> {
        if self.mean.len() != mel.n_mels() || self.std.len() != mel.n_mels() {
            return Err(Error::Contract(format!(
                "stats have {} bins, mel has {}",
                self.mean.len(),
                mel.n_mels()
            )));
        }
        Ok(())
    }
}

/// `(mel - mean) / std` per bin; zero std is clamped to [`STD_EPSILON`].
pub fn normalize_mel(mel: &MelSpectrogram, stats: &MelStats) -> Result<MelSpectrogram> {
    stats.check(mel)?;
    let std = stats.clamped_std();
    let mut frames = mel.frames.clone();
    for mut row in frames.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }
    Ok(MelSpectrogram { frames, ..mel.clone() })
}

pub fn denormalize_mel(mel: &MelSpectrogram, stats: &MelStats) -> Result<MelSpectrogram> {
    stats.check(mel)?;
    let std = stats.clamped_std();
    let mut frames = mel.frames.clone();
    for mut row in frames.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&std) {
            *v = *v * s + m;
        }
    }
    Ok(MelSpectrogram { frames, ..mel.clone() })
}
