//! Ordinary least squares via Householder QR.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Columns whose QR pivot is below this fraction of the largest pivot make
/// the design rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// `RSS / (n_obs - n_params)`, zero for an exactly identified fit.
    pub residual_variance: f64,
    pub n_obs: usize,
    pub n_params: usize,
}

/// Least-squares fit of `response` on the columns of a row-major `n × p`
/// design.
pub fn fit_ols(design: &[f64], n: usize, p: usize, response: &[f64]) -> Result<OlsFit> {
    if design.len() != n * p {
        return Err(Error::DimensionMismatch { expected: n * p, found: design.len() });
    }
    if response.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: response.len() });
    }
    if p == 0 || n < p {
        return Err(Error::DimensionMismatch { expected: p.max(1), found: n });
    }

    // column-major working copy; R ends up in the upper triangle
    let mut a = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            a[j * n + i] = design[i * p + j];
        }
    }
    let mut b = response.to_vec();
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let (head, tail) = a.split_at_mut((k + 1) * n);
        let v = &mut head[k * n + k..];
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let apply = |col: &mut [f64]| {
            let s = 2.0 * col.iter().zip(v.iter()).map(|(c, vi)| c * vi).sum::<f64>() / vnorm2;
            col.iter_mut().zip(v.iter()).for_each(|(c, vi)| *c -= s * vi);
        };
        for j in 0..p - k - 1 {
            apply(&mut tail[j * n + k..(j + 1) * n]);
        }
        apply(&mut b[k..]);
    }

    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if let Some(column) = diag.iter().position(|d| d.abs() <= RANK_TOLERANCE * scale) {
        return Err(Error::RankDeficient { column });
    }

    let mut coefficients = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in k + 1..p {
            s -= a[j * n + k] * coefficients[j];
        }
        coefficients[k] = s / diag[k];
    }
    let rss: f64 = b[p..].iter().map(|r| r * r).sum();
    let residual_variance = if n > p { rss / (n - p) as f64 } else { 0.0 };
    Ok(OlsFit { coefficients, residual_variance, n_obs: n, n_params: p })
}
