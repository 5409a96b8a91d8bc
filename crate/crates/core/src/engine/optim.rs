use std::collections::BTreeMap;
use std::sync::OnceLock;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::params::tensor_is_finite;
use crate::model::ModelParams;
use crate::registry::Registry;

/// Learning rate as a function of the epoch index.
pub trait LrSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn lr(&self, epoch: usize, cfg: &TrainingConfig) -> f64;
}

/// `max(lr_initial - epoch * decay, lr_floor)`
pub struct Subtractive;

/// `max(lr_initial * (1 - decay)^epoch, lr_floor)`
pub struct Multiplicative;

impl LrSchedule for Subtractive {
    fn name(&self) -> &'static str {
        "subtractive"
    }
    fn lr(&self, epoch: usize, cfg: &TrainingConfig) -> f64 {
        (cfg.lr_initial - epoch as f64 * cfg.lr_decay_per_epoch).max(cfg.lr_floor)
    }
}

impl LrSchedule for Multiplicative {
    fn name(&self) -> &'static str {
        "multiplicative"
    }
    fn lr(&self, epoch: usize, cfg: &TrainingConfig) -> f64 {
        let factor = (1.0 - cfg.lr_decay_per_epoch).max(0.0).powf(epoch as f64);
        (cfg.lr_initial * factor).max(cfg.lr_floor)
    }
}

pub fn lr_schedules() -> &'static Registry<dyn LrSchedule> {
    static REG: OnceLock<Registry<dyn LrSchedule>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn LrSchedule> = Registry::new("lr schedule");
        r.register("subtractive", || Box::new(Subtractive));
        r.register("multiplicative", || Box::new(Multiplicative));
        r
    })
}

/// Adam with per-parameter first and second moments kept by name so they can
/// be checkpointed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in params.iter() {
            m.insert(name.clone(), var.as_tensor().zeros_like()?);
            v.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m,
            v,
        })
    }

    pub fn from_config(params: &ModelParams, cfg: &TrainingConfig) -> Result<Self> {
        Self::new(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// Checks every gradient for NaN/Inf (naming the component on failure),
    /// then applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &ModelParams, grads: &GradStore, lr: f64) -> Result<()> {
        let mut updates = Vec::new();
        for (name, var) in params.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                if !tensor_is_finite(g)? {
                    return Err(Error::Divergence(format!(
                        "gradient of {} ({name})",
                        ModelParams::group_of(name)
                    )));
                }
                updates.push((name, var, g));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var, g) in updates {
            let m = self.m.get_mut(name).ok_or_else(|| Error::Contract(format!("no moment for {name}")))?;
            *m = ((&*m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::Contract(format!("no moment for {name}")))?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&self.m[name] / c1)?;
            let denom = ((&self.v[name] / c2)?.sqrt()? + self.eps)?;
            let delta = ((m_hat / denom)? * lr)?;
            var.set(&(var.as_tensor() - delta)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Var};

    #[test]
    fn subtractive_examples() {
        let cfg = TrainingConfig::default();
        let s = Subtractive;
        assert_eq!(s.lr(0, &cfg), 1e-4);
        assert!((s.lr(1, &cfg) - 9.5e-5).abs() < 1e-15);
        assert!((s.lr(10, &cfg) - 5e-5).abs() < 1e-15);
        assert_eq!(s.lr(1000, &cfg), cfg.lr_floor);
    }

    #[test]
    fn schedules_non_increasing_and_floored() {
        let cfg = TrainingConfig {
            lr_decay_per_epoch: 0.05,
            lr_floor: 1e-6,
            ..Default::default()
        };
        for name in lr_schedules().names() {
            let s = lr_schedules().create(name).unwrap();
            let mut prev = f64::INFINITY;
            for e in 0..500 {
                let lr = s.lr(e, &cfg);
                assert!(lr <= prev && lr >= cfg.lr_floor, "{name} epoch {e}");
                prev = lr;
            }
        }
    }

    /// One Adam step on a scalar against the closed form: with bias
    /// correction the first step moves by `lr * g / (|g| + eps)`.
    #[test]
    fn first_step_closed_form() {
        let mut params = ModelParams::new(DType::F64);
        params.zeros("generator.w".into(), &[2]).unwrap();
        let var: &Var = params.get("generator.w").unwrap();
        let target = Tensor::new(&[3.0f64, -1.0], var.device()).unwrap();
        let loss = (var.as_tensor() - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(&params, 0.9, 0.99, 1e-9).unwrap();
        adam.step(&params, &grads, 0.1).unwrap();
        let w: Vec<f64> = params.get("generator.w").unwrap().as_tensor().to_vec1().unwrap();
        assert!((w[0] - 0.1).abs() < 1e-9 && (w[1] + 0.1).abs() < 1e-9, "{w:?}");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut params = ModelParams::new(DType::F64);
        params.zeros("style_encoder.w".into(), &[1]).unwrap();
        let var = params.get("style_encoder.w").unwrap();
        let loss = (var.as_tensor().sqrt().unwrap() * -1.0).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(&params, 0.9, 0.99, 1e-9).unwrap();
        let err = adam.step(&params, &grads, 0.1).unwrap_err().to_string();
        assert!(err.contains("style_encoder"), "{err}");
        assert_eq!(adam.t, 0);
    }
}
