use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub utterance_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f32>,
        sample_rate: u32,
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("audio clip contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            speaker_id: speaker_id.into(),
            utterance_id: utterance_id.into(),
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a WAV file, down-mixes to mono and returns raw samples plus the
/// native sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 32-bit float samples.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Loads `path`, resamples to `target_rate` and peak-normalizes so that the
/// largest magnitude is 1. Silent input stays silent.
///
/// The speaker id is taken from the parent directory name and the utterance
/// id from the file stem.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    let (samples, rate) = read_wav(path)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no samples", path.display())));
    }
    let mut samples = resample(&samples, rate, target_rate);
    peak_normalize(&mut samples);
    let speaker = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let utterance = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(samples, target_rate, speaker, utterance)
}

pub fn peak_normalize(samples: &mut [f32]) {
    let peak = samples.iter().fold(0f32, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
}

const SINC_ZEROS: f64 = 16.0;

/// Band-limited windowed-sinc resampling.
///
/// The output has `floor(len * to / from)` samples. When downsampling the
/// kernel cutoff is lowered to the new Nyquist frequency.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = ((input.len() as f64) * ratio).floor() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let n = input.len() as isize;
    (0..out_len)
        .map(|j| {
            let center = j as f64 / ratio;
            let lo = (center - half_width).ceil() as isize;
            let hi = (center + half_width).floor() as isize;
            let mut acc = 0.0f64;
            for k in lo.max(0)..=hi.min(n - 1) {
                let x = center - k as f64;
                let w = 0.5 + 0.5 * (PI * x / half_width).cos();
                acc += input[k as usize] as f64 * cutoff * sinc(cutoff * x) * w;
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> Vec<f32> {
        (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect()
    }

    #[test]
    fn same_rate_is_noop() {
        let x = sine(220.0, 22050, 1000);
        assert_eq!(resample(&x, 22050, 22050), x);
    }

    #[test]
    fn halving_rate_matches_analytic_sine() {
        // Independent reference: the same tone evaluated directly on the
        // target grid.
        let n = 44100;
        let x = sine(440.0, 44100, n);
        let y = resample(&x, 44100, 22050);
        assert!((y.len() as i64 - (n / 2) as i64).abs() <= 1);
        let reference = sine(440.0, 22050, y.len());
        // Skip the edges where the kernel is truncated.
        let err = y[200..y.len() - 200]
            .iter()
            .zip(&reference[200..y.len() - 200])
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(err < 2e-3, "max err {err}");
    }

    #[test]
    fn odd_length_downsample_count() {
        let x = sine(300.0, 44100, 44101);
        let y = resample(&x, 44100, 22050);
        assert!((y.len() as i64 - 22050).abs() <= 1);
    }

    #[test]
    fn silent_file_normalizes_without_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spk").join("u.wav");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_wav(&path, &vec![0.0; 500], 22050).unwrap();
        let clip = load_audio(&path, 22050).unwrap();
        assert_eq!(clip.samples.len(), 500);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        assert_eq!(clip.speaker_id, "spk");
        assert_eq!(clip.utterance_id, "u");
    }

    #[test]
    fn load_resamples_and_peak_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &sine(440.0, 44100, 4410), 44100).unwrap();
        let clip = load_audio(&path, 22050).unwrap();
        assert_eq!(clip.sample_rate, 22050);
        assert!((clip.samples.len() as i64 - 2205).abs() <= 1);
        let peak = clip.samples.iter().fold(0f32, |m, s| m.max(s.abs()));
        assert!((peak - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_and_missing_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        write_wav(&path, &[], 22050).unwrap();
        assert!(matches!(load_audio(&path, 22050), Err(Error::EmptyInput(_))));
        assert!(matches!(
            load_audio(&dir.path().join("nope.wav"), 22050),
            Err(Error::Io { .. })
        ));
    }
}
