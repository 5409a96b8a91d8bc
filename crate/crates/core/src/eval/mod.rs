//! Mel-cepstral distortion between converted and reference utterances.

pub mod cepstrum;
pub mod dtw;
pub mod mcd;
pub mod protocol;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cepstrum::{extract_cepstra, CepstralSequence, CepstrumExtractor};
pub use dtw::{dtw_align, frame_distance, path_cost, Alignment};
pub use mcd::{evaluate_pairs, mcd, MCDResult, PairInput, PairScore, Summary};
pub use protocol::{evaluate_model, EvalReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Highest cepstral index; sequences hold `c0..=c_order`.
    pub cepstrum_order: usize,
    /// All-pass warping factor of the frequency axis.
    pub mcep_alpha: f64,
    pub include_c0: bool,
    pub griffin_lim_iters: usize,
    /// Cap on source utterances per (source, target) speaker pair; 0 = all.
    pub eval_utterances: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cepstrum_order: 34,
            mcep_alpha: 0.455,
            include_c0: false,
            griffin_lim_iters: 32,
            eval_utterances: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cepstrum_order == 0 {
            return Err(Error::Config("cepstrum_order must be >= 1".into()));
        }
        if !(self.mcep_alpha.abs() < 1.0) {
            return Err(Error::Config(format!("mcep_alpha {} must lie in (-1, 1)", self.mcep_alpha)));
        }
        Ok(())
    }
}
