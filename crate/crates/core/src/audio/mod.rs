//! Audio loading, mel features, dataset manifests and pair sampling.

pub mod cache;
pub mod clip;
pub mod manifest;
pub mod mel;
pub mod sampler;
pub mod segment;
pub mod toy;

pub use clip::{load_audio, read_wav, resample, write_wav, AudioClip};
pub use manifest::{build_manifest, SpeakerManifest, Split, UtteranceRecord};
pub use mel::{compute_mel, denormalize_mel, normalize_mel, MelConfig, MelExtractor, MelSpectrogram, MelStats};
pub use sampler::{FeatureBank, PairSampler, SampledPair};
pub use segment::{crop_segment, pad_policies, PadPolicy};
