//! Where the gradient reversal layer sits.

use std::sync::OnceLock;

use candle_core::Tensor;

use super::grl::{grl_apply, GrlConfig};
use crate::error::Result;
use crate::registry::Registry;

pub trait GrlPlacement: Send + Sync {
    fn name(&self) -> &'static str;
    /// Applied to mels entering the voice discriminator.
    fn voice_input(&self, mels: &Tensor, cfg: GrlConfig) -> Result<Tensor>;
    /// Applied to style codes entering the domain classifier.
    fn domain_input(&self, styles: &Tensor, cfg: GrlConfig) -> Result<Tensor>;
}

/// Reversal in front of the voice discriminator only; the domain classifier
/// trains cooperatively with the style encoder.
pub struct Discriminator;

impl GrlPlacement for Discriminator {
    fn name(&self) -> &'static str {
        "discriminator"
    }
    fn voice_input(&self, mels: &Tensor, cfg: GrlConfig) -> Result<Tensor> {
        grl_apply(mels, cfg)
    }
    fn domain_input(&self, styles: &Tensor, _cfg: GrlConfig) -> Result<Tensor> {
        Ok(styles.clone())
    }
}

/// Reversal in front of the domain (speaker) classifier only.
pub struct DomainClassifier;

impl GrlPlacement for DomainClassifier {
    fn name(&self) -> &'static str {
        "domain_classifier"
    }
    fn voice_input(&self, mels: &Tensor, _cfg: GrlConfig) -> Result<Tensor> {
        Ok(mels.clone())
    }
    fn domain_input(&self, styles: &Tensor, cfg: GrlConfig) -> Result<Tensor> {
        grl_apply(styles, cfg)
    }
}

pub struct Both;

impl GrlPlacement for Both {
    fn name(&self) -> &'static str {
        "both"
    }
    fn voice_input(&self, mels: &Tensor, cfg: GrlConfig) -> Result<Tensor> {
        grl_apply(mels, cfg)
    }
    fn domain_input(&self, styles: &Tensor, cfg: GrlConfig) -> Result<Tensor> {
        grl_apply(styles, cfg)
    }
}

pub fn grl_placements() -> &'static Registry<dyn GrlPlacement> {
    static REG: OnceLock<Registry<dyn GrlPlacement>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn GrlPlacement> = Registry::new("GRL placement");
        r.register("discriminator", || Box::new(Discriminator));
        r.register("domain_classifier", || Box::new(DomainClassifier));
        r.register("both", || Box::new(Both));
        r
    })
}
