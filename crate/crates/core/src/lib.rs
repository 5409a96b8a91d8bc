//! Any-to-any voice conversion by disentangling content and speaker style.
//!
//! Two utterances `a` and `b` from different speakers are split into a
//! time-varying content code and a time-invariant style code. Swapping the
//! style codes converts each utterance to the other speaker; swapping them a
//! second time must give the originals back. That double exchange, together
//! with identity reconstruction, embedding-consistency, speaker
//! classification and an adversarial term folded in through a gradient
//! reversal layer, forms the training objective.
//!
//! Modules:
//! - [`audio`]: WAV I/O, resampling, log-mel extraction, manifests, pair sampling
//! - [`model`]: encoders, generator, discriminator, domain classifier, GRL
//! - [`losses`]: every loss term and the weighted total, each ablatable by name
//! - [`engine`]: the double-exchange forward pass, Adam, schedules, checkpoints
//! - [`eval`]: mel-cepstra, DTW and mel-cepstral distortion
//! - [`vocoder`]: Griffin-Lim phase reconstruction from log-mels

pub mod audio;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod registry;
pub mod rng;
pub mod vocoder;

pub use error::{Error, Result};
