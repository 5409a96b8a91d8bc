//! How the generator injects the style vector into the content stream.

use std::sync::OnceLock;

use candle_core::{Tensor, D};
use rand::RngCore;

use super::layers::Linear;
use super::params::ModelParams;
use crate::error::Result;
use crate::registry::Registry;

#[derive(Debug, Clone, Copy)]
pub struct ConditioningDims {
    pub content_dim: usize,
    pub style_dim: usize,
    pub channels: usize,
    pub n_layers: usize,
}

/// Factory registered by name; builds the parameterized [`Conditioner`].
pub trait StyleConditioning: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(
        &self,
        params: &mut ModelParams,
        prefix: &str,
        dims: ConditioningDims,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Conditioner>>;
}

pub trait Conditioner: Send + Sync + std::fmt::Debug {
    /// Feature width entering the generator's first recurrent layer.
    fn head_input_dim(&self) -> usize;
    /// `content [B, T, dc]`, `style [B, ds]` -> `[B, T, head_input_dim]`.
    fn head_input(&self, content: &Tensor, style: &Tensor) -> Result<Tensor>;
    /// Applied after conv layer `layer` to `h [B, C, T]`.
    fn modulate(&self, layer: usize, h: &Tensor, style: &Tensor) -> Result<Tensor>;
}

fn broadcast_over_time(style: &Tensor, steps: usize) -> Result<Tensor> {
    let (b, ds) = style.dims2()?;
    Ok(style.unsqueeze(1)?.broadcast_as((b, steps, ds))?.contiguous()?)
}

/// Style vector concatenated to every content frame.
pub struct Concat;

#[derive(Debug)]
struct ConcatConditioner {
    dim: usize,
}

impl StyleConditioning for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn build(
        &self,
        _params: &mut ModelParams,
        _prefix: &str,
        dims: ConditioningDims,
        _rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Conditioner>> {
        Ok(Box::new(ConcatConditioner {
            dim: dims.content_dim + dims.style_dim,
        }))
    }
}

impl Conditioner for ConcatConditioner {
    fn head_input_dim(&self) -> usize {
        self.dim
    }

    fn head_input(&self, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        let steps = content.dim(1)?;
        Ok(Tensor::cat(&[content, &broadcast_over_time(style, steps)?], 2)?)
    }

    fn modulate(&self, _layer: usize, h: &Tensor, _style: &Tensor) -> Result<Tensor> {
        Ok(h.clone())
    }
}

/// Instance-normalize each conv output and re-scale/shift it with affine
/// parameters predicted from the style vector.
pub struct AdaptiveNorm;

#[derive(Debug)]
struct AdaptiveNormConditioner {
    content_dim: usize,
    affines: Vec<Linear>,
}

impl StyleConditioning for AdaptiveNorm {
    fn name(&self) -> &'static str {
        "adain"
    }

    fn build(
        &self,
        params: &mut ModelParams,
        prefix: &str,
        dims: ConditioningDims,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Conditioner>> {
        let affines = (0..dims.n_layers)
            .map(|i| Linear::new(params, &format!("{prefix}.adain{i}"), dims.style_dim, 2 * dims.channels, rng))
            .collect::<Result<_>>()?;
        Ok(Box::new(AdaptiveNormConditioner {
            content_dim: dims.content_dim,
            affines,
        }))
    }
}

impl Conditioner for AdaptiveNormConditioner {
    fn head_input_dim(&self) -> usize {
        self.content_dim
    }

    fn head_input(&self, content: &Tensor, _style: &Tensor) -> Result<Tensor> {
        Ok(content.clone())
    }

    fn modulate(&self, layer: usize, h: &Tensor, style: &Tensor) -> Result<Tensor> {
        let channels = h.dim(1)?;
        let mean = h.mean_keepdim(D::Minus1)?;
        let centered = h.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        let ab = self.affines[layer].forward(style)?;
        let gamma = (ab.narrow(1, 0, channels)? + 1.0)?.unsqueeze(2)?;
        let beta = ab.narrow(1, channels, channels)?.unsqueeze(2)?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

pub fn conditionings() -> &'static Registry<dyn StyleConditioning> {
    static REG: OnceLock<Registry<dyn StyleConditioning>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn StyleConditioning> = Registry::new("style conditioning");
        r.register("concat", || Box::new(Concat));
        r.register("adain", || Box::new(AdaptiveNorm));
        r
    })
}
