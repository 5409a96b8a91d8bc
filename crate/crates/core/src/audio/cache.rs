//! Binary feature cache, one file per utterance.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `DRVF`                  |
//! | 4      | 4    | u32 format version (1)        |
//! | 8      | 4    | u32 T (frames)                |
//! | 12     | 4    | u32 M (mel bins)              |
//! | 16     | 4    | u32 sample rate               |
//! | 20     | 4    | u32 hop length                |
//! | 24     | 4·T·M| f32 values, frame-major       |

use std::path::Path;

use ndarray::Array2;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DRVF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const EXTENSION: &str = "drvf";

pub fn encode(mel: &MelSpectrogram) -> Vec<u8> {
    let (t, m) = mel.frames.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * m);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, t as u32, m as u32, mel.sample_rate, mel.hop_length as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in mel.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], speaker_id: &str) -> Result<MelSpectrogram> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Contract("not a feature cache file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != VERSION {
        return Err(Error::Contract(format!("unsupported feature cache version {version}")));
    }
    let (t, m) = (word(2) as usize, word(3) as usize);
    let (sample_rate, hop) = (word(4), word(5) as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * t * m {
        return Err(Error::Contract(format!(
            "feature cache body has {} bytes, header implies {}",
            body.len(),
            4 * t * m
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Array2::from_shape_vec((t, m), values)
        .map_err(|e| Error::Contract(format!("feature cache shape: {e}")))?;
    MelSpectrogram::new(frames, sample_rate, hop, speaker_id)
}

pub fn write(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode(mel)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, speaker_id: &str) -> Result<MelSpectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, speaker_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mel = MelSpectrogram::new(Array2::from_elem((2, 3), 1.5), 22050, 256, "s").unwrap();
        let bytes = encode(&mel);
        assert_eq!(bytes.len(), 24 + 4 * 6);
        assert_eq!(&bytes[..4], b"DRVF");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 22050);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 256);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.5);
    }

    #[test]
    fn truncated_rejected() {
        let mel = MelSpectrogram::new(Array2::zeros((2, 2)), 22050, 256, "s").unwrap();
        let bytes = encode(&mel);
        assert!(decode(&bytes[..bytes.len() - 1], "s").is_err());
        assert!(decode(b"nope", "s").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(t in 1usize..20, m in 1usize..10, seed in any::<u32>()) {
            let frames = Array2::from_shape_fn((t, m), |(i, j)| ((i * 31 + j * 7) as f32 + seed as f32).sin());
            let mel = MelSpectrogram::new(frames, 16000, 128, "spk").unwrap();
            prop_assert_eq!(decode(&encode(&mel), "spk").unwrap(), mel);
        }
    }
}
