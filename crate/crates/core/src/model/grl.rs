//! Gradient reversal: identity on the way forward, `-lambda * grad` on the
//! way back.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub lambda_value: f64,
}

struct GradReversal {
    lambda: f64,
}

fn gather<T: Copy>(values: &[T], layout: &Layout) -> Vec<T> {
    match layout.contiguous_offsets() {
        Some((start, end)) => values[start..end].to_vec(),
        None => strided(values, layout),
    }
}

/// Elements of a non-contiguous view in logical order.
pub(super) fn strided<T: Copy>(values: &[T], layout: &Layout) -> Vec<T> {
    let dims = layout.dims();
    let stride = layout.stride();
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut index = vec![0usize; dims.len()];
    for _ in 0..n {
        let offset: usize = index.iter().zip(stride).map(|(i, s)| i * s).sum();
        out.push(values[layout.start_offset() + offset]);
        for d in (0..dims.len()).rev() {
            index[d] += 1;
            if index[d] < dims[d] {
                break;
            }
            index[d] = 0;
        }
    }
    out
}

impl CustomOp1 for GradReversal {
    fn name(&self) -> &'static str {
        "grad-reversal"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(gather(v, layout)),
            CpuStorage::F64(v) => CpuStorage::F64(gather(v, layout)),
            _ => candle_core::bail!("grad-reversal: only f32 and f64 are supported"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.affine(-self.lambda, 0.0)?))
    }
}

pub fn grl_apply(x: &Tensor, cfg: GrlConfig) -> Result<Tensor> {
    Ok(x.apply_op1(GradReversal {
        lambda: cfg.lambda_value,
    })?)
}

/// `2 / (1 + exp(-10 k)) - 1` for training progress `k`, clamped to `[0, 1]`.
pub fn grl_lambda_schedule(progress: f64) -> f64 {
    let k = if (0.0..=1.0).contains(&progress) {
        progress
    } else {
        log::warn!("training progress {progress} outside [0, 1], clamped");
        if progress.is_nan() {
            0.0
        } else {
            progress.clamp(0.0, 1.0)
        }
    };
    2.0 / (1.0 + (-10.0 * k).exp()) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn forward_identity() {
        let x = Tensor::new(&[1.0f32, -2.0], &Device::Cpu).unwrap();
        let y = grl_apply(&x, GrlConfig { lambda_value: 0.7 }).unwrap();
        assert_eq!(y.to_vec1::<f32>().unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn forward_identity_on_strided_input() {
        let x = Tensor::new(&[[1.0f64, 2.0], [3.0, 4.0]], &Device::Cpu).unwrap().t().unwrap();
        let y = grl_apply(&x, GrlConfig { lambda_value: 1.0 }).unwrap();
        assert_eq!(y.to_vec2::<f64>().unwrap(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    }

    #[test]
    fn backward_flips_sign() {
        let x = Var::new(&[1.0f64, -2.0], &Device::Cpu).unwrap();
        let upstream = Tensor::new(&[0.5f64, -0.2], &Device::Cpu).unwrap();
        let y = grl_apply(x.as_tensor(), GrlConfig { lambda_value: 1.0 }).unwrap();
        let loss = (y * &upstream).unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&x).unwrap().to_vec1::<f64>().unwrap(), vec![-0.5, 0.2]);
    }

    #[test]
    fn backward_scales_by_lambda() {
        let x = Var::new(&[3.0f64], &Device::Cpu).unwrap();
        let y = grl_apply(x.as_tensor(), GrlConfig { lambda_value: 0.25 }).unwrap();
        let loss = y.affine(2.0, 0.0).unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&x).unwrap().to_vec1::<f64>().unwrap(), vec![-0.5]);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(grl_lambda_schedule(0.0), 0.0);
        assert!((grl_lambda_schedule(1.0) - 0.9999092).abs() < 1e-6);
        assert!((grl_lambda_schedule(0.1) - 0.462117).abs() < 1e-6);
        assert_eq!(grl_lambda_schedule(-3.0), 0.0);
        assert_eq!(grl_lambda_schedule(7.0), grl_lambda_schedule(1.0));
        let mut prev = -1.0;
        for i in 0..=100 {
            let v = grl_lambda_schedule(i as f64 / 100.0);
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }
}
