use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Component prefixes; every parameter name starts with one of these.
pub const GROUPS: [&str; 5] = [
    "content_encoder",
    "style_encoder",
    "generator",
    "voice_discriminator",
    "domain_classifier",
];

/// Named trainable arrays for all five components.
#[derive(Debug)]
pub struct ModelParams {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ModelParams {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform<R: Rng + ?Sized>(
        &mut self,
        name: String,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<Tensor> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, values, shape)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![0.0; n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place; every stored name must be present with
    /// the same shape.
    pub fn load(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Contract(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn first_non_finite(&self) -> Result<Option<String>> {
        for (name, var) in &self.vars {
            if !tensor_is_finite(var.as_tensor())? {
                return Ok(Some(name.clone()));
            }
        }
        Ok(None)
    }
}

pub fn tensor_is_finite(t: &Tensor) -> Result<bool> {
    let s = t.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
    Ok(s.is_finite())
}
