//! Which parameters the same-content and same-style terms update.

use std::sync::OnceLock;

use candle_core::Tensor;

use crate::error::Result;
use crate::model::Drvc;
use crate::registry::Registry;

pub trait SameLossGradient: Send + Sync {
    fn name(&self) -> &'static str;
    /// `(content, style)` codes of the converted or cycled mels `x`.
    fn reencode(&self, model: &Drvc, x: &Tensor) -> Result<(Tensor, Tensor)>;
    /// The code of the original utterance the re-encoding is compared to.
    fn original(&self, code: &Tensor) -> Tensor;
}

/// Gradients reach every parameter on both sides of the comparison.
pub struct Joint;

/// Originals are detached and the re-encoding runs through weight-detached
/// encoders, so only the generator and the codes feeding it learn from these
/// terms. Jointly trained encoders can satisfy the terms by emitting a
/// constant code.
pub struct GeneratorOnly;

impl SameLossGradient for Joint {
    fn name(&self) -> &'static str {
        "joint"
    }
    fn reencode(&self, model: &Drvc, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((model.content_encoder.forward(x)?, model.style_encoder.forward(x)?))
    }
    fn original(&self, code: &Tensor) -> Tensor {
        code.clone()
    }
}

impl SameLossGradient for GeneratorOnly {
    fn name(&self) -> &'static str {
        "generator"
    }
    fn reencode(&self, model: &Drvc, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((
            model.content_encoder.detached().forward(x)?,
            model.style_encoder.detached().forward(x)?,
        ))
    }
    fn original(&self, code: &Tensor) -> Tensor {
        code.detach()
    }
}

pub fn same_loss_gradients() -> &'static Registry<dyn SameLossGradient> {
    static REG: OnceLock<Registry<dyn SameLossGradient>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn SameLossGradient> = Registry::new("same-loss gradient");
        r.register("generator", || Box::new(GeneratorOnly));
        r.register("joint", || Box::new(Joint));
        r
    })
}
