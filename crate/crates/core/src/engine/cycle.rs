//! The two style exchanges and the identity reconstructions.
//!
//! Both utterances of a pair travel through each network in one batched call:
//! rows `0..B` belong to `a`, rows `B..2B` to `b`.

use std::sync::OnceLock;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::params::tensor_is_finite;
use crate::model::Disentangler;
use crate::registry::Registry;

/// Chooses which style code each content code is paired with in an exchange.
pub trait StyleRouting: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns the styles for `(content of a, content of b)`.
    fn route<'t>(&self, a_style: &'t Tensor, b_style: &'t Tensor) -> (&'t Tensor, &'t Tensor);
}

/// `a` content with `b` style and vice versa.
pub struct Exchange;

impl StyleRouting for Exchange {
    fn name(&self) -> &'static str {
        "exchange"
    }
    fn route<'t>(&self, a_style: &'t Tensor, b_style: &'t Tensor) -> (&'t Tensor, &'t Tensor) {
        (b_style, a_style)
    }
}

pub fn style_routings() -> &'static Registry<dyn StyleRouting> {
    static REG: OnceLock<Registry<dyn StyleRouting>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn StyleRouting> = Registry::new("style routing");
        r.register("exchange", || Box::new(Exchange));
        r
    })
}

#[derive(Debug, Clone)]
pub struct FirstConversion {
    pub a_c: Tensor,
    pub b_c: Tensor,
    pub a_s: Tensor,
    pub b_s: Tensor,
    /// `G(a_C, b_S)`
    pub a_tilde: Tensor,
    /// `G(b_C, a_S)`
    pub b_tilde: Tensor,
    /// `G(a_C, a_S)`
    pub a_rec: Tensor,
    /// `G(b_C, b_S)`
    pub b_rec: Tensor,
}

#[derive(Debug, Clone)]
pub struct CycleBatch {
    pub first: FirstConversion,
    pub at_c: Tensor,
    pub bt_c: Tensor,
    pub at_s: Tensor,
    pub bt_s: Tensor,
    /// `G(a_tilde_C, b_tilde_S)`, should give back `a`.
    pub a_hat: Tensor,
    /// `G(b_tilde_C, a_tilde_S)`, should give back `b`.
    pub b_hat: Tensor,
}

fn halves(t: &Tensor, n: usize) -> Result<(Tensor, Tensor)> {
    Ok((t.narrow(0, 0, n)?, t.narrow(0, n, n)?))
}

fn check_finite(what: &str, ts: &[&Tensor]) -> Result<()> {
    for t in ts {
        if !tensor_is_finite(t)? {
            return Err(Error::Divergence(what.to_string()));
        }
    }
    Ok(())
}

/// Content and style codes of `a` and `b` (`[B, T, M]` each), returned as
/// `(a_c, b_c, a_s, b_s)`.
pub fn encode_pair(model: &dyn Disentangler, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!(
            "pair segments differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let n = a.dim(0)?;
    let x = Tensor::cat(&[a, b], 0)?;
    let (a_c, b_c) = halves(&model.content(&x)?, n)?;
    let (a_s, b_s) = halves(&model.style(&x)?, n)?;
    Ok((a_c, b_c, a_s, b_s))
}

/// Encodes both utterances, exchanges styles once and also recombines each
/// utterance with its own style.
pub fn first_conversion(
    model: &dyn Disentangler,
    a: &Tensor,
    b: &Tensor,
    routing: &dyn StyleRouting,
) -> Result<FirstConversion> {
    let n = a.dim(0)?;
    let (a_c, b_c, a_s, b_s) = encode_pair(model, a, b)?;
    let (sa, sb) = routing.route(&a_s, &b_s);
    let contents = Tensor::cat(&[&a_c, &b_c, &a_c, &b_c], 0)?;
    let styles = Tensor::cat(&[sa, sb, &a_s, &b_s], 0)?;
    let out = model.generate(&contents, &styles)?;
    let a_tilde = out.narrow(0, 0, n)?;
    let b_tilde = out.narrow(0, n, n)?;
    let a_rec = out.narrow(0, 2 * n, n)?;
    let b_rec = out.narrow(0, 3 * n, n)?;
    check_finite("first conversion output", &[&a_tilde, &b_tilde, &a_rec, &b_rec])?;
    Ok(FirstConversion {
        a_c,
        b_c,
        a_s,
        b_s,
        a_tilde,
        b_tilde,
        a_rec,
        b_rec,
    })
}

/// Re-encodes the converted pair and exchanges styles a second time.
pub fn second_conversion(
    model: &dyn Disentangler,
    first: FirstConversion,
    routing: &dyn StyleRouting,
) -> Result<CycleBatch> {
    let n = first.a_tilde.dim(0)?;
    let (at_c, bt_c, at_s, bt_s) = encode_pair(model, &first.a_tilde, &first.b_tilde)?;
    let (sa, sb) = routing.route(&at_s, &bt_s);
    let out = model.generate(&Tensor::cat(&[&at_c, &bt_c], 0)?, &Tensor::cat(&[sa, sb], 0)?)?;
    let (a_hat, b_hat) = halves(&out, n)?;
    check_finite("second conversion output", &[&a_hat, &b_hat])?;
    Ok(CycleBatch {
        first,
        at_c,
        bt_c,
        at_s,
        bt_s,
        a_hat,
        b_hat,
    })
}
