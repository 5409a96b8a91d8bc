//! Mel-cepstral distortion: `(10 / ln 10) sqrt(2 sum_d (c_d - c'_d)^2)` per
//! aligned frame pair, averaged along the DTW path.

use serde::{Deserialize, Serialize};

use super::cepstrum::CepstralSequence;
use super::dtw::{dtw_align, frame_distance};
use crate::error::{Error, Result};

pub fn mcd_constant() -> f64 {
    10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2
}

/// Path-mean MCD in dB and the aligned length.
pub fn mcd_with_length(x: &CepstralSequence, y: &CepstralSequence, include_c0: bool) -> Result<(f64, usize)> {
    let alignment = dtw_align(x, y, include_c0)?;
    let sum: f64 = alignment
        .path
        .iter()
        .map(|&(i, j)| frame_distance(x, i, y, j, include_c0))
        .sum();
    let len = alignment.path.len();
    Ok((mcd_constant() * sum / len as f64, len))
}

pub fn mcd(x: &CepstralSequence, y: &CepstralSequence, include_c0: bool) -> Result<f64> {
    Ok(mcd_with_length(x, y, include_c0)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub source: String,
    pub target: String,
    pub mcd: f64,
    pub aligned_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCDResult {
    pub mean_mcd: f64,
    /// Population standard deviation of the per-pair values.
    pub std: f64,
    pub pairs: Vec<PairScore>,
}

/// Mean, spread and count of a subset of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_mcd: f64,
    pub std: f64,
    pub count: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MCDResult {
    pub fn from_scores(pairs: Vec<PairScore>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("no pairs to evaluate".into()));
        }
        let values: Vec<f64> = pairs.iter().map(|p| p.mcd).collect();
        let (mean_mcd, std) = mean_std(&values);
        Ok(Self { mean_mcd, std, pairs })
    }

    /// Summary over the pairs accepted by `keep`, `None` if none are.
    pub fn summary_where(&self, keep: impl Fn(&PairScore) -> bool) -> Option<Summary> {
        let values: Vec<f64> = self.pairs.iter().filter(|p| keep(p)).map(|p| p.mcd).collect();
        if values.is_empty() {
            return None;
        }
        let (mean_mcd, std) = mean_std(&values);
        Some(Summary {
            mean_mcd,
            std,
            count: values.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,mcd,aligned_len\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{},{}\n", p.source, p.target, p.mcd, p.aligned_len));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PairInput {
    pub source: String,
    pub target: String,
    pub converted: CepstralSequence,
    pub reference: CepstralSequence,
}

pub fn evaluate_pairs(pairs: &[PairInput], include_c0: bool) -> Result<MCDResult> {
    if pairs.is_empty() {
        return Err(Error::Contract("evaluation needs at least one pair".into()));
    }
    let scores = pairs
        .iter()
        .map(|p| {
            let (mcd, aligned_len) = mcd_with_length(&p.converted, &p.reference, include_c0)?;
            Ok(PairScore {
                source: p.source.clone(),
                target: p.target.clone(),
                mcd,
                aligned_len,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MCDResult::from_scores(scores)
}
