use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{SpeakerManifest, Split};
use super::mel::MelSpectrogram;
use super::segment::{crop_segment, PadPolicy};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Feature matrices grouped by speaker. Speaker index doubles as the domain
/// label.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub speakers: Vec<String>,
    pub utterances: Vec<Vec<MelSpectrogram>>,
}

impl FeatureBank {
    /// Loads every record of `split`; `load` maps a record to its (already
    /// normalized) features.
    pub fn from_manifest<F>(manifest: &SpeakerManifest, split: Split, mut load: F) -> Result<Self>
    where
        F: FnMut(&super::manifest::UtteranceRecord) -> Result<MelSpectrogram>,
    {
        let speakers: Vec<String> = match split {
            Split::Train => manifest.train_speakers(),
            Split::Eval => {
                let set: std::collections::BTreeSet<&str> =
                    manifest.split(Split::Eval).map(|r| r.speaker_id.as_str()).collect();
                set.into_iter().map(str::to_string).collect()
            }
        };
        let mut utterances = vec![Vec::new(); speakers.len()];
        for record in manifest.split(split) {
            let idx = speakers
                .iter()
                .position(|s| *s == record.speaker_id)
                .expect("speaker list derived from the same records");
            utterances[idx].push(load(record)?);
        }
        Ok(Self {
            speakers,
            utterances,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_utterances(&self) -> usize {
        self.utterances.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &MelSpectrogram)> {
        self.utterances
            .iter()
            .enumerate()
            .flat_map(|(s, utts)| utts.iter().map(move |m| (s, m)))
    }
}

#[derive(Debug, Clone)]
pub struct SampledPair {
    pub a: MelSpectrogram,
    pub b: MelSpectrogram,
    pub speaker_a: usize,
    pub speaker_b: usize,
}

/// Draws cropped utterance pairs from two distinct speakers.
pub struct PairSampler {
    rng: ChaCha8Rng,
    segment_frames: usize,
    pad: Box<dyn PadPolicy>,
}

impl PairSampler {
    pub fn new(rng: ChaCha8Rng, segment_frames: usize, pad: Box<dyn PadPolicy>) -> Self {
        Self {
            rng,
            segment_frames,
            pad,
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn set_rng_state(&mut self, state: &RngState) {
        self.rng = state.restore();
    }

    /// Ordered speaker indices `(a, b)`, `a != b`; the unordered pair is
    /// uniform over all pairs.
    pub fn sample_speakers(&mut self, n_speakers: usize) -> Result<(usize, usize)> {
        if n_speakers < 2 {
            return Err(Error::Config(format!(
                "pair sampling needs at least 2 speakers, found {n_speakers}"
            )));
        }
        let a = self.rng.random_range(0..n_speakers);
        let mut b = self.rng.random_range(0..n_speakers - 1);
        if b >= a {
            b += 1;
        }
        Ok((a, b))
    }

    pub fn sample_pair(&mut self, bank: &FeatureBank) -> Result<SampledPair> {
        let (sa, sb) = self.sample_speakers(bank.n_speakers())?;
        let a = self.draw(bank, sa)?;
        let b = self.draw(bank, sb)?;
        Ok(SampledPair {
            a,
            b,
            speaker_a: sa,
            speaker_b: sb,
        })
    }

    pub fn sample_batch(&mut self, bank: &FeatureBank, n: usize) -> Result<Vec<SampledPair>> {
        (0..n).map(|_| self.sample_pair(bank)).collect()
    }

    fn draw(&mut self, bank: &FeatureBank, speaker: usize) -> Result<MelSpectrogram> {
        let utts = &bank.utterances[speaker];
        if utts.is_empty() {
            return Err(Error::Config(format!(
                "speaker {} has no utterances",
                bank.speakers[speaker]
            )));
        }
        let i = self.rng.random_range(0..utts.len());
        crop_segment(&utts[i], self.segment_frames, self.pad.as_ref(), &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::segment::Reflect;
    use crate::rng::seeded;
    use ndarray::Array2;

    fn bank(n_speakers: usize) -> FeatureBank {
        let speakers: Vec<String> = (0..n_speakers).map(|i| format!("spk{i}")).collect();
        let utterances = speakers
            .iter()
            .enumerate()
            .map(|(s, id)| {
                (0..3)
                    .map(|u| {
                        MelSpectrogram::new(
                            Array2::from_elem((20 + u, 4), s as f32),
                            22050,
                            256,
                            id.clone(),
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .collect();
        FeatureBank {
            speakers,
            utterances,
        }
    }

    fn sampler(seed: u64) -> PairSampler {
        PairSampler::new(seeded(seed, 1), 16, Box::new(Reflect))
    }

    #[test]
    fn two_speakers_always_distinct() {
        let b = bank(2);
        let mut s = sampler(3);
        for _ in 0..200 {
            let p = s.sample_pair(&b).unwrap();
            assert_ne!(p.speaker_a, p.speaker_b);
            assert_ne!(p.a.speaker_id, p.b.speaker_id);
            assert_eq!(p.a.n_frames(), 16);
            assert_eq!(p.a.frames[[0, 0]], p.speaker_a as f32);
        }
    }

    #[test]
    fn single_speaker_is_config_error() {
        let mut s = sampler(0);
        assert!(matches!(s.sample_pair(&bank(1)), Err(Error::Config(_))));
    }

    #[test]
    fn unordered_pairs_uniform_chi_square() {
        // 4 speakers -> 6 unordered pairs; 10k draws.
        let mut s = sampler(11);
        let mut counts = [0usize; 6];
        let index = |a: usize, b: usize| {
            let (lo, hi) = (a.min(b), a.max(b));
            [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
                .iter()
                .position(|&p| p == (lo, hi))
                .unwrap()
        };
        let n = 10_000;
        for _ in 0..n {
            let (a, b) = s.sample_speakers(4).unwrap();
            counts[index(a, b)] += 1;
        }
        let expected = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 5 degrees of freedom.
        assert!(chi2 < 20.52, "chi2 = {chi2}");
    }

    #[test]
    fn fixed_seed_reproducible_and_resumable() {
        let b = bank(3);
        let mut s1 = sampler(5);
        let mut s2 = sampler(5);
        for _ in 0..20 {
            let (p, q) = (s1.sample_pair(&b).unwrap(), s2.sample_pair(&b).unwrap());
            assert_eq!((p.speaker_a, p.speaker_b), (q.speaker_a, q.speaker_b));
            assert_eq!(p.a, q.a);
        }
        let state = s1.rng_state();
        let next = s1.sample_pair(&b).unwrap();
        let mut s3 = sampler(99);
        s3.set_rng_state(&state);
        assert_eq!(s3.sample_pair(&b).unwrap().a, next.a);
    }
}
