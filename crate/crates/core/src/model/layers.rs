use candle_core::{Tensor, D};
use rand::Rng;

use super::params::ModelParams;
use crate::error::Result;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Divides by the root-mean-square over the last axis. Encoder outputs pass
/// through this so the L1 same-losses cannot be met by shrinking codes to 0.
pub fn rms_normalize(x: &Tensor) -> Result<Tensor> {
    let rms = (x.sqr()?.mean_keepdim(D::Minus1)? + 1e-8)?.sqrt()?;
    Ok(x.broadcast_div(&rms)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// `x W^T + b` over the last axis, computed as one 2-D matmul.
fn affine_rows(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (last, lead) = dims.split_last().expect("rank >= 1");
    let rows: usize = lead.iter().product();
    let y = x
        .reshape((rows, *last))?
        .matmul(&weight.t()?)?
        .broadcast_add(bias)?;
    let mut out = lead.to_vec();
    out.push(weight.dim(0)?);
    Ok(y.reshape(out)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.fan_in_uniform(format!("{prefix}.weight"), &[outputs, inputs], inputs, rng)?;
        let bias = params.zeros(format!("{prefix}.bias"), &[outputs])?;
        Ok(Self { weight, bias })
    }

    /// `[..., in] -> [..., out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        affine_rows(x, &self.weight, &self.bias)
    }

    /// Same weights, cut from the autograd graph.
    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

/// Same-padded, stride-1 convolution over time.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.fan_in_uniform(
            format!("{prefix}.weight"),
            &[outputs, inputs, kernel],
            inputs * kernel,
            rng,
        )?;
        let bias = params.zeros(format!("{prefix}.bias"), &[outputs])?;
        Ok(Self {
            weight,
            bias,
            padding: kernel / 2,
        })
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            padding: self.padding,
        }
    }

    /// `[B, C_in, T] -> [B, C_out, T]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // im2col: the backward of narrow/cat/matmul is much cheaper than the
        // native conv backward on CPU.
        let (batch, _, steps) = x.dims3()?;
        let (outputs, inputs, kernel) = self.weight.dims3()?;
        let padded = x.pad_with_zeros(2, self.padding, self.padding)?;
        let taps: Vec<Tensor> = (0..kernel)
            .map(|k| padded.narrow(2, k, steps))
            .collect::<candle_core::Result<_>>()?;
        // [B, k, C, T] -> [B, T, k, C] so columns match weight [out, C, k]
        // permuted to [out, k, C].
        let cols = Tensor::stack(&taps, 1)?
            .permute((0, 3, 1, 2))?
            .reshape((batch * steps, kernel * inputs))?;
        let w = self.weight.permute((0, 2, 1))?.reshape((outputs, kernel * inputs))?;
        let y = cols.matmul(&w.t()?)?.broadcast_add(&self.bias)?;
        Ok(y.reshape((batch, steps, outputs))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Single-layer unidirectional LSTM. Gate rows are ordered
/// `[input, forget, output, cell]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = params.fan_in_uniform(format!("{prefix}.w_ih"), &[4 * hidden, inputs], hidden, rng)?;
        let w_hh = params.fan_in_uniform(format!("{prefix}.w_hh"), &[4 * hidden, hidden], hidden, rng)?;
        let bias = params.zeros(format!("{prefix}.bias"), &[4 * hidden])?;
        Ok(Self { w_ih, w_hh, bias })
    }

    pub fn detached(&self) -> Self {
        Self {
            w_ih: self.w_ih.detach(),
            w_hh: self.w_hh.detach(),
            bias: self.bias.detach(),
        }
    }

    /// `[B, T, in] -> [B, T, hidden]`, zero initial state.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let projected = affine_rows(x, &self.w_ih, &self.bias)?;
        super::recurrence::lstm_recurrence(&projected.contiguous()?, &self.w_hh)
    }

    /// The same recurrence spelled out in per-timestep tensor ops.
    #[cfg(test)]
    pub fn forward_unfused(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, steps, _) = x.dims3()?;
        let h_dim = self.w_hh.dim(1)?;
        // sigmoid(x) = (tanh(x/2) + 1) / 2, so one tanh covers all four gates.
        let scale: Vec<f64> = (0..4 * h_dim)
            .map(|i| if i < 3 * h_dim { 0.5 } else { 1.0 })
            .collect();
        let gate_scale = Tensor::from_vec(scale, 4 * h_dim, x.device())?.to_dtype(x.dtype())?;
        let projected = x
            .broadcast_matmul(&self.w_ih.t()?)?
            .broadcast_add(&self.bias)?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((batch, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gates = projected.narrow(1, t, 1)?.squeeze(1)?;
            let gates = if t == 0 { gates } else { (gates + h.matmul(&w_hh_t)?)? };
            let act = gates.broadcast_mul(&gate_scale)?.tanh()?;
            let sig = act.narrow(1, 0, 3 * h_dim)?.affine(0.5, 0.5)?;
            let i = sig.narrow(1, 0, h_dim)?;
            let f = sig.narrow(1, h_dim, h_dim)?;
            let o = sig.narrow(1, 2 * h_dim, h_dim)?;
            let g = act.narrow(1, 3 * h_dim, h_dim)?;
            c = if t == 0 { (i * g)? } else { ((f * &c)? + (i * g)?)? };
            h = (o * c.tanh()?)?;
            outputs.push(h.clone());
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use crate::rng::seeded;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn activations() {
        let x = t(&[-2.0, 0.0, 3.0]);
        let s: Vec<f64> = sigmoid(&x).unwrap().to_vec1().unwrap();
        for (a, b) in s.iter().zip([-2.0f64, 0.0, 3.0]) {
            assert!((a - 1.0 / (1.0 + (-b).exp())).abs() < 1e-12);
        }
        let l: Vec<f64> = leaky_relu(&x, 0.2).unwrap().to_vec1().unwrap();
        assert_eq!(l, vec![-0.4, 0.0, 3.0]);
        let sp: Vec<f64> = softplus(&t(&[-40.0, 0.0, 40.0])).unwrap().to_vec1().unwrap();
        assert!((sp[1] - 2f64.ln()).abs() < 1e-12);
        assert!(sp[0] >= 0.0 && sp[0] < 1e-17);
        assert!((sp[2] - 40.0).abs() < 1e-12);
        let r: Vec<Vec<f64>> = rms_normalize(&Tensor::new(&[[3.0f64, 4.0], [0.0, 0.0]], &Device::Cpu).unwrap())
            .unwrap()
            .to_vec2()
            .unwrap();
        let k = (12.5f64 + 1e-8).sqrt();
        assert!((r[0][0] - 3.0 / k).abs() < 1e-12 && (r[0][1] - 4.0 / k).abs() < 1e-12);
        assert_eq!(r[1], vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one_for_large_logits() {
        let x = Tensor::new(&[[1000.0f64, 1000.0], [-5.0, 3.0]], &Device::Cpu).unwrap();
        let p: Vec<Vec<f64>> = softmax_last(&x).unwrap().to_vec2().unwrap();
        assert_eq!(p[0], vec![0.5, 0.5]);
        assert!((p[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Direct per-element LSTM recurrence written without tensor ops.
    #[test]
    fn lstm_matches_scalar_reference() {
        let mut params = ModelParams::new(DType::F64);
        let mut rng = seeded(3, 0);
        let lstm = Lstm::new(&mut params, "l", 2, 3, &mut rng).unwrap();
        let bias = params.get("l.bias").unwrap();
        bias.set(&Tensor::new(&[0.1f64, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.2, 0.1, -0.3, 0.4, 0.05], &Device::Cpu).unwrap())
            .unwrap();
        let xs = Tensor::new(&[[[0.5f64, -1.0], [0.2, 0.3], [-0.7, 0.9]]], &Device::Cpu).unwrap();
        let got: Vec<Vec<Vec<f64>>> = lstm.forward(&xs).unwrap().to_vec3().unwrap();

        let w_ih: Vec<Vec<f64>> = params.get("l.w_ih").unwrap().to_vec2().unwrap();
        let w_hh: Vec<Vec<f64>> = params.get("l.w_hh").unwrap().to_vec2().unwrap();
        let b: Vec<f64> = bias.to_vec1().unwrap();
        let x: Vec<Vec<Vec<f64>>> = xs.to_vec3().unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for t in 0..3 {
            let pre: Vec<f64> = (0..12)
                .map(|r| {
                    b[r] + (0..2).map(|k| w_ih[r][k] * x[0][t][k]).sum::<f64>()
                        + (0..3).map(|k| w_hh[r][k] * h[k]).sum::<f64>()
                })
                .collect();
            for j in 0..3 {
                let (i, f, o, g) = (sig(pre[j]), sig(pre[3 + j]), sig(pre[6 + j]), pre[9 + j].tanh());
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            for j in 0..3 {
                assert!((got[0][t][j] - h[j]).abs() < 1e-12, "t={t} j={j}");
            }
        }
    }

    #[test]
    fn fused_recurrence_matches_op_by_op_graph() {
        let mut params = ModelParams::new(DType::F64);
        let mut rng = seeded(9, 0);
        let lstm = Lstm::new(&mut params, "l", 3, 4, &mut rng).unwrap();
        let bias = params.get("l.bias").unwrap();
        bias.set(&Tensor::rand(-0.5f64, 0.5, 16, &Device::Cpu).unwrap()).unwrap();
        let x = Tensor::rand(-1f64, 1.0, (2, 5, 3), &Device::Cpu).unwrap();
        let w = Tensor::rand(-1f64, 1.0, (2, 5, 4), &Device::Cpu).unwrap();
        let fused = lstm.forward(&x).unwrap();
        let plain = lstm.forward_unfused(&x).unwrap();
        let diff: f64 = (&fused - &plain).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-12, "forward diff {diff}");
        let g_fused = (fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let g_plain = (plain * &w).unwrap().sum_all().unwrap().backward().unwrap();
        for (name, var) in params.iter() {
            let a = g_fused.get(var.as_tensor()).unwrap();
            let b = g_plain.get(var.as_tensor()).unwrap();
            let d: f64 = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
            assert!(d < 1e-10, "{name}: {d}");
        }
    }

    #[test]
    fn fused_recurrence_f32_and_strided_input() {
        let mut params = ModelParams::new(DType::F32);
        let mut rng = seeded(4, 0);
        let lstm = Lstm::new(&mut params, "l", 3, 2, &mut rng).unwrap();
        // [B, in, T] transposed to [B, T, in] is non-contiguous.
        let x = Tensor::rand(-1f32, 1.0, (2, 3, 6), &Device::Cpu).unwrap().transpose(1, 2).unwrap();
        let a: Vec<f32> = lstm.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = lstm.forward_unfused(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_keeps_length() {
        let mut params = ModelParams::new(DType::F32);
        let mut rng = seeded(0, 0);
        let conv = Conv1d::new(&mut params, "c", 3, 4, 5, &mut rng).unwrap();
        let x = Tensor::zeros((2, 3, 11), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 4, 11]);
        assert_eq!(params.num_scalars(), 4 * 3 * 5 + 4);
    }
}
