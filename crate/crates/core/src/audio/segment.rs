use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Extends a too-short utterance to a fixed frame count.
pub trait PadPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Source frame index for output frame `i` of an `n`-frame input, `i >= n`.
    fn source_index(&self, i: usize, n: usize) -> usize;
}

/// Mirror about the last frame: frames `n, n+1, ..` repeat `n-1, n-2, ..`.
pub struct Reflect;

impl PadPolicy for Reflect {
    fn name(&self) -> &'static str {
        "reflect"
    }

    fn source_index(&self, i: usize, n: usize) -> usize {
        let m = i % (2 * n);
        if m < n {
            m
        } else {
            2 * n - 1 - m
        }
    }
}

/// Repeat the utterance from the start.
pub struct Tile;

impl PadPolicy for Tile {
    fn name(&self) -> &'static str {
        "tile"
    }

    fn source_index(&self, i: usize, n: usize) -> usize {
        i % n
    }
}

pub fn pad_policies() -> &'static Registry<dyn PadPolicy> {
    static REG: OnceLock<Registry<dyn PadPolicy>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn PadPolicy> = Registry::new("pad policy");
        r.register("reflect", || Box::new(Reflect));
        r.register("tile", || Box::new(Tile));
        r
    })
}

/// Fixed-length crop. Inputs at least `length` frames long yield a contiguous
/// slice whose start is drawn uniformly; shorter inputs are extended with
/// `policy` and consume no randomness.
pub fn crop_segment<R: Rng + ?Sized>(
    mel: &MelSpectrogram,
    length: usize,
    policy: &dyn PadPolicy,
    rng: &mut R,
) -> Result<MelSpectrogram> {
    if length == 0 {
        return Err(Error::Contract("segment length must be at least 1".into()));
    }
    let n = mel.n_frames();
    let frames = if n >= length {
        let start = rng.random_range(0..=n - length);
        mel.frames
            .slice(ndarray::s![start..start + length, ..])
            .to_owned()
    } else {
        let mut out = Array2::<f32>::zeros((length, mel.n_mels()));
        for i in 0..length {
            let src = if i < n { i } else { policy.source_index(i, n) };
            out.row_mut(i).assign(&mel.frames.row(src));
        }
        out
    };
    Ok(MelSpectrogram {
        frames,
        ..mel.clone()
    })
}
