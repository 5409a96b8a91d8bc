//! Fused LSTM recurrence with a hand-written backward pass.
//!
//! Input projections are ordinary tensor ops; only the time loop
//! `gates_t = P_t + h_{t-1} W_hh^T` with gate order `[i, f, o, g]` lives
//! here, so the autograd graph gets one node per layer instead of a dozen per
//! timestep.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};
use ndarray::{s, Array2, ArrayView2};

use crate::error::Result;

struct Recurrence {
    batch: usize,
    steps: usize,
    hidden: usize,
}

fn values(storage: &CpuStorage, layout: &Layout) -> candle_core::Result<Vec<f64>> {
    fn collect<T: Copy>(v: &[T], layout: &Layout, f: impl Fn(T) -> f64) -> Vec<f64> {
        match layout.contiguous_offsets() {
            Some((a, b)) => v[a..b].iter().map(|x| f(*x)).collect(),
            None => super::grl::strided(v, layout).into_iter().map(f).collect(),
        }
    }
    match storage {
        CpuStorage::F32(v) => Ok(collect(v, layout, f64::from)),
        CpuStorage::F64(v) => Ok(collect(v, layout, |x| x)),
        _ => candle_core::bail!("lstm recurrence: only f32 and f64 are supported"),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-timestep activations kept for the backward pass, each `[B, H]`.
struct Trace {
    i: Vec<Array2<f64>>,
    f: Vec<Array2<f64>>,
    o: Vec<Array2<f64>>,
    g: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
}

impl Recurrence {
    /// Pre-activations of step `t` without the recurrent term, `[B, 4H]`.
    fn projected_at(&self, p: &[f64], t: usize) -> Array2<f64> {
        let g4 = 4 * self.hidden;
        Array2::from_shape_fn((self.batch, g4), |(b, r)| p[(b * self.steps + t) * g4 + r])
    }

    /// `p`: `[B, T, 4H]`, `w`: `[4H, H]`.
    fn run(&self, p: &[f64], w: &ArrayView2<f64>) -> Trace {
        let h_n = self.hidden;
        let mut tr = Trace {
            i: Vec::with_capacity(self.steps),
            f: Vec::with_capacity(self.steps),
            o: Vec::with_capacity(self.steps),
            g: Vec::with_capacity(self.steps),
            c: Vec::with_capacity(self.steps),
            h: Vec::with_capacity(self.steps),
        };
        for t in 0..self.steps {
            let mut pre = self.projected_at(p, t);
            if t > 0 {
                pre += &tr.h[t - 1].dot(&w.t());
            }
            let i = pre.slice(s![.., 0..h_n]).mapv(sigmoid);
            let f = pre.slice(s![.., h_n..2 * h_n]).mapv(sigmoid);
            let o = pre.slice(s![.., 2 * h_n..3 * h_n]).mapv(sigmoid);
            let g = pre.slice(s![.., 3 * h_n..]).mapv(f64::tanh);
            let mut c = &i * &g;
            if t > 0 {
                c += &(&f * &tr.c[t - 1]);
            }
            let h = &o * &c.mapv(f64::tanh);
            tr.i.push(i);
            tr.f.push(f);
            tr.o.push(o);
            tr.g.push(g);
            tr.c.push(c);
            tr.h.push(h);
        }
        tr
    }

    /// Gradients with respect to `p` (`[B, T, 4H]`) and `w` (`[4H, H]`)
    /// given `dh` (`[B, T, H]`).
    fn grads(&self, p: &[f64], w: &ArrayView2<f64>, dh_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (b_n, t_n, h_n) = (self.batch, self.steps, self.hidden);
        let g4 = 4 * h_n;
        let tr = self.run(p, w);
        let mut dp = vec![0.0; b_n * t_n * g4];
        let mut dw = Array2::<f64>::zeros((g4, h_n));
        let mut dh_next = Array2::<f64>::zeros((b_n, h_n));
        let mut dc_next = Array2::<f64>::zeros((b_n, h_n));
        let mut da = Array2::<f64>::zeros((b_n, g4));
        for t in (0..t_n).rev() {
            for b in 0..b_n {
                for j in 0..h_n {
                    let dh = dh_out[(b * t_n + t) * h_n + j] + dh_next[[b, j]];
                    let tc = tr.c[t][[b, j]].tanh();
                    let (i, f, o, g) = (tr.i[t][[b, j]], tr.f[t][[b, j]], tr.o[t][[b, j]], tr.g[t][[b, j]]);
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[[b, j]];
                    let c_prev = if t > 0 { tr.c[t - 1][[b, j]] } else { 0.0 };
                    da[[b, j]] = dc * g * i * (1.0 - i);
                    da[[b, h_n + j]] = dc * c_prev * f * (1.0 - f);
                    da[[b, 2 * h_n + j]] = dh * tc * o * (1.0 - o);
                    da[[b, 3 * h_n + j]] = dc * i * (1.0 - g * g);
                    dc_next[[b, j]] = dc * f;
                }
                for r in 0..g4 {
                    dp[(b * t_n + t) * g4 + r] = da[[b, r]];
                }
            }
            if t > 0 {
                dw += &da.t().dot(&tr.h[t - 1]);
                dh_next = da.dot(w);
            }
        }
        (dp, dw.into_raw_vec_and_offset().0)
    }
}

fn storage(v: Vec<f64>, dtype: DType) -> candle_core::Result<CpuStorage> {
    Ok(match dtype {
        DType::F32 => CpuStorage::F32(v.into_iter().map(|x| x as f32).collect()),
        DType::F64 => CpuStorage::F64(v),
        other => candle_core::bail!("lstm recurrence: unsupported dtype {other:?}"),
    })
}

fn flat(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()
}

impl CustomOp2 for Recurrence {
    fn name(&self) -> &'static str {
        "lstm-recurrence"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let p = values(s1, l1)?;
        let w = values(s2, l2)?;
        let w = ArrayView2::from_shape((4 * self.hidden, self.hidden), &w).expect("w_hh shape");
        let tr = self.run(&p, &w);
        let mut h = Vec::with_capacity(self.batch * self.steps * self.hidden);
        for b in 0..self.batch {
            for t in 0..self.steps {
                h.extend(tr.h[t].row(b).iter());
            }
        }
        Ok((storage(h, if matches!(s1, CpuStorage::F32(_)) { DType::F32 } else { DType::F64 })?, Shape::from((self.batch, self.steps, self.hidden))))
    }

    fn bwd(&self, p: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let w_flat = flat(w)?;
        let w_view = ArrayView2::from_shape((4 * self.hidden, self.hidden), &w_flat).expect("w_hh shape");
        let (dp, dw) = self.grads(&flat(p)?, &w_view, &flat(grad)?);
        let dp = Tensor::from_vec(dp, p.dims(), p.device())?.to_dtype(p.dtype())?;
        let dw = Tensor::from_vec(dw, w.dims(), w.device())?.to_dtype(w.dtype())?;
        Ok((Some(dp), Some(dw)))
    }
}

/// `projected`: `[B, T, 4H]` input projections plus bias; `w_hh`: `[4H, H]`.
/// Returns hidden states `[B, T, H]` from a zero initial state.
pub fn lstm_recurrence(projected: &Tensor, w_hh: &Tensor) -> Result<Tensor> {
    let (batch, steps, g4) = projected.dims3()?;
    let (rows, hidden) = w_hh.dims2()?;
    if g4 != 4 * hidden || rows != g4 {
        return Err(crate::Error::Contract(format!(
            "lstm shapes: projections {:?}, recurrent weights {:?}",
            projected.dims(),
            w_hh.dims()
        )));
    }
    Ok(projected.apply_op2(w_hh, Recurrence { batch, steps, hidden })?)
}
