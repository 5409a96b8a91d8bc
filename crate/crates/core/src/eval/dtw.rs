//! Dynamic time warping with steps (1,0), (0,1), (1,1) and no band.

use super::cepstrum::CepstralSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Monotone, continuous path from `(0, 0)` to `(Tx-1, Ty-1)`.
    pub path: Vec<(usize, usize)>,
    /// Sum of frame distances along the path.
    pub cost: f64,
}

/// Euclidean distance over the compared coefficients of two frames.
pub fn frame_distance(x: &CepstralSequence, i: usize, y: &CepstralSequence, j: usize, include_c0: bool) -> f64 {
    let skip = usize::from(x.includes_c0 && !include_c0);
    x.coeffs
        .row(i)
        .iter()
        .zip(y.coeffs.row(j).iter())
        .skip(skip)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn path_cost(x: &CepstralSequence, y: &CepstralSequence, path: &[(usize, usize)], include_c0: bool) -> f64 {
    path.iter().map(|&(i, j)| frame_distance(x, i, y, j, include_c0)).sum()
}

fn check_pair(x: &CepstralSequence, y: &CepstralSequence) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("DTW needs non-empty sequences".into()));
    }
    if x.coeffs.ncols() != y.coeffs.ncols() || x.includes_c0 != y.includes_c0 {
        return Err(Error::Contract(format!(
            "cepstral orders differ: {} vs {} columns",
            x.coeffs.ncols(),
            y.coeffs.ncols()
        )));
    }
    Ok(())
}

/// Minimum-cost warping path. Ties prefer the diagonal step, then advancing
/// `x`, then advancing `y`.
pub fn dtw_align(x: &CepstralSequence, y: &CepstralSequence, include_c0: bool) -> Result<Alignment> {
    check_pair(x, y)?;
    let (n, m) = (x.len(), y.len());
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = frame_distance(x, i, y, j, include_c0);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = best + d;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
        let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
        let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        path,
        cost: acc[at(n - 1, m - 1)],
    })
}
