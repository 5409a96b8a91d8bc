use candle_core::Tensor;

use super::{adversarial_loss, cycle_loss, domain_loss, identity_loss, same_loss, LossTerm};
use crate::error::Result;

/// Everything the loss terms read from one double-exchange pass.
///
/// Mels are `[B, T, M]`; `content_pairs`/`style_pairs` hold
/// `(original, re-encoded)` for domains a and b; probabilities and one-hot
/// labels are `[B, K]`; logits are `[B]`.
pub struct LossInputs<'a> {
    pub a: &'a Tensor,
    pub b: &'a Tensor,
    pub a_hat: &'a Tensor,
    pub b_hat: &'a Tensor,
    pub a_rec: &'a Tensor,
    pub b_rec: &'a Tensor,
    pub content_pairs: [(&'a Tensor, &'a Tensor); 2],
    pub style_pairs: [(&'a Tensor, &'a Tensor); 2],
    pub probs_a: &'a Tensor,
    pub probs_b: &'a Tensor,
    pub labels_a: &'a Tensor,
    pub labels_b: &'a Tensor,
    pub logit_real_a: &'a Tensor,
    pub logit_fake_a: &'a Tensor,
    pub logit_real_b: &'a Tensor,
    pub logit_fake_b: &'a Tensor,
}

pub struct Cycle;
pub struct Identity;
pub struct SameContent;
pub struct SameStyle;
pub struct Domain;
pub struct Adversarial;

impl LossTerm for Cycle {
    fn name(&self) -> &'static str {
        "cycle"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        cycle_loss(x.a, x.a_hat, x.b, x.b_hat)
    }
}

impl LossTerm for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        identity_loss(x.a, x.a_rec, x.b, x.b_rec)
    }
}

fn summed_pairs(pairs: &[(&Tensor, &Tensor); 2]) -> Result<Tensor> {
    Ok((same_loss(pairs[0].0, pairs[0].1)? + same_loss(pairs[1].0, pairs[1].1)?)?)
}

impl LossTerm for SameContent {
    fn name(&self) -> &'static str {
        "same-content"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        summed_pairs(&x.content_pairs)
    }
}

impl LossTerm for SameStyle {
    fn name(&self) -> &'static str {
        "same-style"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        summed_pairs(&x.style_pairs)
    }
}

impl LossTerm for Domain {
    fn name(&self) -> &'static str {
        "domain"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        domain_loss(x.probs_a, x.labels_a, x.probs_b, x.labels_b)
    }
}

impl LossTerm for Adversarial {
    fn name(&self) -> &'static str {
        "adversarial"
    }
    fn compute(&self, x: &LossInputs) -> Result<Tensor> {
        Ok(adversarial_loss(x.logit_real_a, x.logit_fake_a, x.logit_real_b, x.logit_fake_b)?.disc)
    }
}
