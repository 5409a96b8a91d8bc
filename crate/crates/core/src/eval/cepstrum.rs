//! Mel-cepstra by all-pass frequency warping of the log-amplitude spectrum.
//!
//! Each STFT frame's log amplitude is resampled on a uniform grid of the
//! warped frequency `w' = w + 2 atan(alpha sin w / (1 - alpha cos w))` and
//! projected onto cosines, giving `log|X(w')| = c0 + sum_m c_m cos(m w')`.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::audio::{AudioClip, MelConfig, MelExtractor};
use crate::error::{Error, Result};

/// Floor on STFT magnitudes before the logarithm.
pub const AMPLITUDE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CepstralSequence {
    /// `[T x (order + 1)]`, column 0 is c0.
    pub coeffs: Array2<f64>,
    pub includes_c0: bool,
}

impl CepstralSequence {
    pub fn new(coeffs: Array2<f64>, includes_c0: bool) -> Result<Self> {
        if coeffs.ncols() == 0 || (includes_c0 && coeffs.ncols() < 2) {
            return Err(Error::Contract("cepstral sequence needs at least one coefficient beyond c0".into()));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite cepstral coefficient".into()));
        }
        Ok(Self { coeffs, includes_c0 })
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    /// Number of coefficients after c0.
    pub fn order(&self) -> usize {
        self.coeffs.ncols() - usize::from(self.includes_c0)
    }
}

/// Inverse warp: the linear frequency that lands at warped frequency `w`.
fn unwarp(w: f64, alpha: f64) -> f64 {
    w - 2.0 * (alpha * w.sin()).atan2(1.0 + alpha * w.cos())
}

pub struct CepstrumExtractor {
    stft: MelExtractor,
    order: usize,
    /// Fractional FFT bin sampled at each warped grid point.
    bins: Vec<f64>,
    /// `[order + 1] x grid` projection weights.
    basis: Array2<f64>,
}

impl CepstrumExtractor {
    /// Frames follow `mel` (FFT size, window, hop) so cepstra line up with
    /// the training features.
    pub fn new(mel: &MelConfig, order: usize, alpha: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("cepstrum order must be >= 1".into()));
        }
        let stft = MelExtractor::new(mel.clone())?;
        let n_bins = mel.n_fft / 2 + 1;
        let grid = n_bins;
        let step = PI / (grid - 1) as f64;
        let bins = (0..grid)
            .map(|j| unwarp(j as f64 * step, alpha) / PI * (n_bins - 1) as f64)
            .collect();
        let mut basis = Array2::<f64>::zeros((order + 1, grid));
        for m in 0..=order {
            let scale = if m == 0 { 1.0 } else { 2.0 } / (grid - 1) as f64;
            for j in 0..grid {
                let end = if j == 0 || j == grid - 1 { 0.5 } else { 1.0 };
                basis[[m, j]] = scale * end * (m as f64 * j as f64 * step).cos();
            }
        }
        Ok(Self {
            stft,
            order,
            bins,
            basis,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<CepstralSequence> {
        if clip.sample_rate != self.stft.config().sample_rate {
            return Err(Error::Contract(format!(
                "clip at {} Hz, cepstra configured for {} Hz",
                clip.sample_rate,
                self.stft.config().sample_rate
            )));
        }
        let mags = self.stft.magnitudes(&clip.samples)?;
        let (t, k) = mags.dim();
        let mut warped = Array2::<f64>::zeros((self.bins.len(), t));
        for f in 0..t {
            for (j, &pos) in self.bins.iter().enumerate() {
                let lo = (pos.floor() as usize).min(k - 1);
                let hi = (lo + 1).min(k - 1);
                let frac = pos - lo as f64;
                let a = (mags[[f, lo]] as f64).max(AMPLITUDE_FLOOR).ln();
                let b = (mags[[f, hi]] as f64).max(AMPLITUDE_FLOOR).ln();
                warped[[j, f]] = a + frac * (b - a);
            }
        }
        CepstralSequence::new(self.basis.dot(&warped).reversed_axes().as_standard_layout().to_owned(), true)
    }
}

/// One-shot extraction with a fresh extractor.
pub fn extract_cepstra(clip: &AudioClip, mel: &MelConfig, order: usize, alpha: f64) -> Result<CepstralSequence> {
    CepstrumExtractor::new(mel, order, alpha)?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 22050, "s", "u").unwrap()
    }

    #[test]
    fn unwarp_inverts_warp() {
        for alpha in [-0.4, 0.0, 0.455] {
            for i in 0..=20 {
                let w = PI * i as f64 / 20.0;
                let fwd = w + 2.0 * (alpha * w.sin()).atan2(1.0 - alpha * w.cos());
                assert!((unwarp(fwd, alpha) - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silence_is_flat() {
        let c = extract_cepstra(&clip(vec![0.0; 4096]), &MelConfig::default(), 34, 0.455).unwrap();
        assert_eq!(c.coeffs.ncols(), 35);
        assert_eq!(c.order(), 34);
        for row in c.coeffs.rows() {
            assert!((row[0] - AMPLITUDE_FLOOR.ln()).abs() < 1e-9);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-3));
        }
    }

    /// A known log spectrum `a + b cos(w')` on the warped axis comes back as
    /// `c0 = a`, `c1 = b` when there is no warping.
    #[test]
    fn cosine_projection_recovers_coefficients() {
        let ex = CepstrumExtractor::new(&MelConfig::default(), 4, 0.0).unwrap();
        let grid = ex.bins.len();
        let mut x = Array2::<f64>::zeros((grid, 1));
        for j in 0..grid {
            let w = PI * j as f64 / (grid - 1) as f64;
            x[[j, 0]] = 0.7 + 0.3 * w.cos() - 0.1 * (3.0 * w).cos();
        }
        let c = ex.basis.dot(&x);
        let expect = [0.7, 0.3, 0.0, -0.1, 0.0];
        for (m, e) in expect.iter().enumerate() {
            assert!((c[[m, 0]] - e).abs() < 1e-9, "c{m} = {}", c[[m, 0]]);
        }
    }

    #[test]
    fn identical_clips_identical_cepstra() {
        let s: Vec<f32> = (0..6000).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
        let a = extract_cepstra(&clip(s.clone()), &MelConfig::default(), 12, 0.455).unwrap();
        let b = extract_cepstra(&clip(s), &MelConfig::default(), 12, 0.455).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_clip_is_empty_input() {
        let err = extract_cepstra(&clip(vec![0.1; 100]), &MelConfig::default(), 12, 0.455).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }
}
