//! Loss terms and their weighted total.
//!
//! Each term is a [`LossTerm`] registered under the name used by `--ablate`:
//! `cycle`, `identity`, `same-content`, `same-style`, `domain`,
//! `adversarial`. Removing a term from the active [`LossSet`] drops it from
//! the total entirely, so no gradient flows through it.

mod terms;

use std::sync::OnceLock;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::softplus;
use crate::model::{ContentEmbedding, StyleEmbedding};
use crate::registry::Registry;

pub use terms::LossInputs;

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Discriminator logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 30.0;

pub const TERM_NAMES: [&str; 6] = [
    "cycle",
    "identity",
    "same-content",
    "same-style",
    "domain",
    "adversarial",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_cycle: f64,
    pub w_id: f64,
    pub w_adv: f64,
    pub w_domain: f64,
    pub w_same: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cycle: 5.0,
            w_id: 2.0,
            w_adv: 1.0,
            w_domain: 10.0,
            w_same: 50.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_cycle: 0.0,
            w_id: 0.0,
            w_adv: 0.0,
            w_domain: 0.0,
            w_same: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_cycle, self.w_id, self.w_adv, self.w_domain, self.w_same];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        Ok(())
    }

    /// Weight attached to the term called `name`.
    pub fn for_term(&self, name: &str) -> f64 {
        match name {
            "cycle" => self.w_cycle,
            "identity" => self.w_id,
            "same-content" | "same-style" => self.w_same,
            "domain" => self.w_domain,
            "adversarial" => self.w_adv,
            _ => 0.0,
        }
    }
}

/// Per-term values of one step. `None` marks a disabled term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cycle: Option<f64>,
    pub identity: Option<f64>,
    pub same_content: Option<f64>,
    pub same_style: Option<f64>,
    pub domain: Option<f64>,
    pub adversarial: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "cycle" => self.cycle,
            "identity" => self.identity,
            "same-content" => self.same_content,
            "same-style" => self.same_style,
            "domain" => self.domain,
            "adversarial" => self.adversarial,
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, value: f64) {
        let slot = match name {
            "cycle" => &mut self.cycle,
            "identity" => &mut self.identity,
            "same-content" => &mut self.same_content,
            "same-style" => &mut self.same_style,
            "domain" => &mut self.domain,
            "adversarial" => &mut self.adversarial,
            _ => return,
        };
        *slot = Some(value);
    }

    pub fn enabled(&self, name: &str) -> bool {
        self.get(name).is_some()
    }
}

fn check_same_shape(x: &Tensor, y: &Tensor, what: &str) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Contract(format!(
            "{what}: shape {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_mean(x: &Tensor, y: &Tensor, what: &str) -> Result<Tensor> {
    check_same_shape(x, y, what)?;
    Ok((x - y)?.abs()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `E|orig - reenc|` over one content or style code pair.
pub fn same_loss(orig: &Tensor, reenc: &Tensor) -> Result<Tensor> {
    l1_mean(orig, reenc, "same loss")
}

fn array_tensor(values: &[f32], shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, shape, &candle_core::Device::Cpu)?)
}

pub fn same_loss_content(orig: &ContentEmbedding, reenc: &ContentEmbedding) -> Result<f64> {
    let shape = |c: &ContentEmbedding| [c.values.nrows(), c.values.ncols()];
    let a = array_tensor(&orig.values.iter().copied().collect::<Vec<_>>(), &shape(orig))?;
    let b = array_tensor(&reenc.values.iter().copied().collect::<Vec<_>>(), &shape(reenc))?;
    scalar(&same_loss(&a, &b)?)
}

pub fn same_loss_style(orig: &StyleEmbedding, reenc: &StyleEmbedding) -> Result<f64> {
    let a = array_tensor(&orig.values, &[orig.values.len()])?;
    let b = array_tensor(&reenc.values, &[reenc.values.len()])?;
    scalar(&same_loss(&a, &b)?)
}

fn check_one_hot(labels: &Tensor) -> Result<()> {
    let rows: Vec<Vec<f64>> = labels.to_dtype(DType::F64)?.to_vec2()?;
    for (i, row) in rows.iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Contract(format!("label row {i} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

fn cross_entropy(probs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let logp = probs.clamp(PROB_FLOOR, 1.0)?.log()?;
    Ok((labels * logp)?.sum(1)?.mean_all()?.neg()?)
}

/// `-1/2 (sum_i y_a(i) log p_a(i) + sum_i y_b(i) log p_b(i))`, averaged over
/// the batch. Inputs are `[B, K]`; labels must be one-hot.
pub fn domain_loss(probs_a: &Tensor, labels_a: &Tensor, probs_b: &Tensor, labels_b: &Tensor) -> Result<Tensor> {
    check_same_shape(probs_a, labels_a, "domain loss (a)")?;
    check_same_shape(probs_b, labels_b, "domain loss (b)")?;
    check_one_hot(labels_a)?;
    check_one_hot(labels_b)?;
    Ok(((cross_entropy(probs_a, labels_a)? + cross_entropy(probs_b, labels_b)?)? * 0.5)?)
}

/// `mean|a - a_hat| + mean|b - b_hat|`.
pub fn cycle_loss(a: &Tensor, a_hat: &Tensor, b: &Tensor, b_hat: &Tensor) -> Result<Tensor> {
    Ok((l1_mean(a, a_hat, "cycle loss (a)")? + l1_mean(b, b_hat, "cycle loss (b)")?)?)
}

/// Same reduction as [`cycle_loss`], applied to self-reconstructions.
pub fn identity_loss(a: &Tensor, a_rec: &Tensor, b: &Tensor, b_rec: &Tensor) -> Result<Tensor> {
    Ok((l1_mean(a, a_rec, "identity loss (a)")? + l1_mean(b, b_rec, "identity loss (b)")?)?)
}

/// Discriminator-side and generator-side adversarial terms.
pub struct AdversarialTerms {
    /// Binary cross-entropy, real -> 1 and synthetic -> 0, summed over the
    /// four inputs (each a batch mean). Differentiable.
    pub disc: Tensor,
    /// Detached, for logging: cross-entropy of the synthetic inputs against
    /// the real label. Training gets its generator signal from the gradient
    /// reversal layer instead.
    pub gen: f64,
}

pub fn adversarial_loss(
    logit_real_a: &Tensor,
    logit_fake_a: &Tensor,
    logit_real_b: &Tensor,
    logit_fake_b: &Tensor,
) -> Result<AdversarialTerms> {
    let clamp = |t: &Tensor| t.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let real = |t: &Tensor| -> Result<Tensor> { softplus(&clamp(t)?.neg()?)?.mean_all().map_err(Into::into) };
    let fake = |t: &Tensor| -> Result<Tensor> { softplus(&clamp(t)?)?.mean_all().map_err(Into::into) };
    let disc = (((real(logit_real_a)? + fake(logit_fake_a)?)? + real(logit_real_b)?)? + fake(logit_fake_b)?)?;
    let gen = scalar(&real(&logit_fake_a.detach())?)? + scalar(&real(&logit_fake_b.detach())?)?;
    Ok(AdversarialTerms { disc, gen })
}

/// Weighted sum of the enabled terms in `report`; `None` terms contribute 0.
pub fn total_loss(report: &LossReport, weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for name in TERM_NAMES {
        if let Some(v) = report.get(name) {
            if v.is_nan() {
                return Err(Error::Divergence(format!("loss term {name}")));
            }
            total += weights.for_term(name) * v;
        }
    }
    Ok(total)
}

/// A named, weighted contribution to the training objective.
pub trait LossTerm: Send + Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, inputs: &LossInputs) -> Result<Tensor>;
}

pub fn loss_terms() -> &'static Registry<dyn LossTerm> {
    static REG: OnceLock<Registry<dyn LossTerm>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn LossTerm> = Registry::new("loss term");
        r.register("cycle", || Box::new(terms::Cycle));
        r.register("identity", || Box::new(terms::Identity));
        r.register("same-content", || Box::new(terms::SameContent));
        r.register("same-style", || Box::new(terms::SameStyle));
        r.register("domain", || Box::new(terms::Domain));
        r.register("adversarial", || Box::new(terms::Adversarial));
        r
    })
}

/// The active terms of one training run.
pub struct LossSet {
    terms: Vec<Box<dyn LossTerm>>,
}

impl LossSet {
    pub fn all() -> Self {
        Self::without::<&str>(&[]).expect("no ablations")
    }

    /// Every registered term except the ablated ones. Unknown names are an
    /// error.
    pub fn without<S: AsRef<str>>(ablate: &[S]) -> Result<Self> {
        let reg = loss_terms();
        for name in ablate {
            if !reg.contains(name.as_ref()) {
                reg.create(name.as_ref())?;
            }
        }
        let terms = TERM_NAMES
            .iter()
            .filter(|n| !ablate.iter().any(|a| a.as_ref() == **n))
            .map(|n| reg.create(n))
            .collect::<Result<_>>()?;
        Ok(Self { terms })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|t| t.name()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.terms.iter().any(|t| t.name() == name)
    }

    /// Differentiable total and the per-term report.
    pub fn evaluate(&self, inputs: &LossInputs, weights: &LossWeights) -> Result<(Tensor, LossReport)> {
        let mut report = LossReport::default();
        let mut total: Option<Tensor> = None;
        for term in &self.terms {
            let value = term.compute(inputs)?;
            let v = scalar(&value)?;
            if !v.is_finite() {
                return Err(Error::Divergence(format!("loss term {}", term.name())));
            }
            report.set(term.name(), v);
            let weighted = value.affine(weights.for_term(term.name()), 0.0)?;
            total = Some(match total {
                Some(t) => (t + weighted)?,
                None => weighted,
            });
        }
        let total = match total {
            Some(t) => t,
            None => Tensor::zeros((), inputs.a.dtype(), inputs.a.device())?,
        };
        report.total = total_loss(&report, weights)?;
        Ok((total, report))
    }
}
