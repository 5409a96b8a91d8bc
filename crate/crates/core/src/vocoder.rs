//! Griffin-Lim phase reconstruction from log-mel spectrograms.
//!
//! A stand-in for a neural vocoder so converted features can be listened to
//! and scored; expect metallic, phasey output.

use std::f32::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::mel::{analysis_window, mel_filterbank};
use crate::audio::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};

/// Multiplicative-update iterations for the mel-to-linear inversion.
pub const NNLS_ITERS: usize = 50;

pub struct GriffinLim {
    config: MelConfig,
    filterbank: Array2<f32>,
    window: Vec<f32>,
    forward: Arc<dyn RealToComplex<f32>>,
    inverse: Arc<dyn ComplexToReal<f32>>,
}

impl GriffinLim {
    pub fn new(config: &MelConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f32>::new();
        Ok(Self {
            config: config.clone(),
            filterbank: mel_filterbank(config),
            window: analysis_window(config.win_length, config.n_fft),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
        })
    }

    /// Non-negative linear magnitudes `S` with `S F^T` close to `exp(mel)`.
    pub fn mel_to_linear(&self, mel: &MelSpectrogram) -> Result<Array2<f32>> {
        if mel.n_mels() != self.config.n_mels {
            return Err(Error::Contract(format!(
                "mel has {} bins, vocoder expects {}",
                mel.n_mels(),
                self.config.n_mels
            )));
        }
        let target = mel.frames.mapv(f32::exp);
        let fb = &self.filterbank;
        let gram = fb.t().dot(fb);
        let numer = target.dot(fb);
        let mut s = numer.mapv(|v| v.max(1e-8));
        for _ in 0..NNLS_ITERS {
            let denom = s.dot(&gram);
            ndarray::Zip::from(&mut s)
                .and(&numer)
                .and(&denom)
                .for_each(|s, &n, &d| *s *= n / (d + 1e-12));
        }
        Ok(s)
    }

    fn stft(&self, signal: &[f32], n_frames: usize) -> Result<Vec<Vec<Complex32>>> {
        let cfg = &self.config;
        let mut buf = self.forward.make_input_vec();
        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = t * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = signal.get(start + i).copied().unwrap_or(0.0) * self.window[i];
            }
            let mut spec = self.forward.make_output_vec();
            self.forward
                .process(&mut buf, &mut spec)
                .map_err(|e| Error::Contract(format!("fft: {e}")))?;
            frames.push(spec);
        }
        Ok(frames)
    }

    /// Windowed overlap-add with squared-window normalization.
    fn istft(&self, frames: &[Vec<Complex32>]) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let n_fft = cfg.n_fft;
        let len = (frames.len().saturating_sub(1)) * cfg.hop_length + n_fft;
        let mut out = vec![0f32; len];
        let mut norm = vec![0f32; len];
        let mut time = self.inverse.make_output_vec();
        for (t, spec) in frames.iter().enumerate() {
            let mut spec = spec.clone();
            spec[0].im = 0.0;
            if let Some(last) = spec.last_mut() {
                last.im = 0.0;
            }
            self.inverse
                .process(&mut spec, &mut time)
                .map_err(|e| Error::Contract(format!("inverse fft: {e}")))?;
            let start = t * cfg.hop_length;
            for i in 0..n_fft {
                out[start + i] += time[i] / n_fft as f32 * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        Ok(out)
    }

    /// Waveform whose STFT magnitude approximates `magnitudes` (`[T x K]`).
    pub fn reconstruct(&self, magnitudes: &Array2<f32>, iters: usize) -> Result<Vec<f32>> {
        let (t, k) = magnitudes.dim();
        if t == 0 {
            return Err(Error::EmptyInput("no frames to vocode".into()));
        }
        if k != self.config.n_fft / 2 + 1 {
            return Err(Error::Contract(format!("{k} magnitude bins for n_fft {}", self.config.n_fft)));
        }
        // Deterministic initial phase: a fixed pseudo-random pattern per bin.
        let mut spec: Vec<Vec<Complex32>> = (0..t)
            .map(|f| {
                (0..k)
                    .map(|b| {
                        let phase = 2.0 * PI * (((f * 7919 + b * 104_729) % 1000) as f32 / 1000.0);
                        Complex32::from_polar(magnitudes[[f, b]], phase)
                    })
                    .collect()
            })
            .collect();
        let mut signal = self.istft(&spec)?;
        for _ in 0..iters {
            let est = self.stft(&signal, t)?;
            for (f, (row, est_row)) in spec.iter_mut().zip(&est).enumerate() {
                for (b, (c, e)) in row.iter_mut().zip(est_row).enumerate() {
                    let mag = magnitudes[[f, b]];
                    let n = e.norm();
                    *c = if n > 1e-12 { e * (mag / n) } else { Complex32::new(mag, 0.0) };
                }
            }
            signal = self.istft(&spec)?;
        }
        if self.config.center {
            let pad = self.config.win_length / 2;
            let end = signal.len().saturating_sub(pad);
            signal = signal[pad.min(end)..end].to_vec();
        }
        Ok(signal)
    }

    /// Log-mel (not normalized) to waveform.
    pub fn vocode(&self, mel: &MelSpectrogram, iters: usize) -> Result<Vec<f32>> {
        let mags = self.mel_to_linear(mel)?;
        self.reconstruct(&mags, iters)
    }

    /// Spectral convergence `||S - |STFT(x)||| / ||S||` of a waveform.
    pub fn spectral_convergence(&self, magnitudes: &Array2<f32>, signal: &[f32]) -> Result<f64> {
        let est = self.stft(signal, magnitudes.nrows())?;
        let mut num = 0f64;
        let mut den = 0f64;
        for (f, row) in est.iter().enumerate() {
            for (b, e) in row.iter().enumerate() {
                let m = magnitudes[[f, b]] as f64;
                num += (m - e.norm() as f64).powi(2);
                den += m * m;
            }
        }
        Ok((num / den.max(1e-30)).sqrt())
    }
}
