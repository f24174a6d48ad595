//! Gaussian kernel, Gram matrices and the median-distance bandwidth heuristic.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
}

/// A positive-definite kernel with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Gaussian,
            bandwidth,
        })
    }

    /// Gaussian kernel with the median heuristic bandwidth of `x`.
    pub fn median_heuristic(x: &DMatrix<f64>) -> Result<Self> {
        Self::gaussian(median_heuristic(x)?)
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

/// Row-major copy of a matrix so that each row is a contiguous slice.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

/// Median Euclidean distance over distinct pairs `i < j`.
pub fn median_heuristic(x: &DMatrix<f64>) -> Result<f64> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "median heuristic needs at least two rows".into(),
        ));
    }
    let rows = row_major(x);
    let mut dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = &rows[i * p..(i + 1) * p];
            let rows = &rows;
            (i + 1..n).map(move |j| {
                let xj = &rows[j * p..(j + 1) * p];
                xi.iter()
                    .zip(xj)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    let m = dists.len();
    let median = if m % 2 == 1 {
        *dists.select_nth_unstable_by(m / 2, f64::total_cmp).1
    } else {
        let (lower, upper, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
        let hi = *upper;
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median > 0.0 {
        Ok(median)
    } else if dists.iter().any(|&d| d > 0.0) {
        // more than half the pairs coincide; fall back to the smallest positive distance
        Ok(dists.iter().copied().filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min))
    } else {
        Err(Error::DegenerateCovariates)
    }
}

/// Cross-kernel matrix between the rows of `xa` and `xb`.
pub fn gram(xa: &DMatrix<f64>, xb: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if xa.ncols() != xb.ncols() {
        return Err(Error::DimensionMismatch {
            expected: xa.ncols(),
            found: xb.ncols(),
        });
    }
    let p = xa.ncols();
    let (ra, rb) = (row_major(xa), row_major(xb));
    Ok(gram_row_major(&ra, &rb, p, spec))
}

pub(crate) fn gram_row_major(ra: &[f64], rb: &[f64], p: usize, spec: &KernelSpec) -> DMatrix<f64> {
    let na = if p == 0 { 0 } else { ra.len() / p };
    let nb = if p == 0 { 0 } else { rb.len() / p };
    // fill column by column; column j holds K(., b_j)
    let mut data = vec![0.0; na * nb];
    data.par_chunks_mut(na.max(1)).enumerate().for_each(|(j, col)| {
        let bj = &rb[j * p..(j + 1) * p];
        for (i, out) in col.iter_mut().enumerate() {
            *out = spec.eval(&ra[i * p..(i + 1) * p], bj);
        }
    });
    DMatrix::from_vec(na, nb, data)
}

/// Symmetric Gram matrix of `x` with itself; only the lower triangle is evaluated.
pub fn gram_symmetric(x: &DMatrix<f64>, spec: &KernelSpec) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let rows = row_major(x);
    let mut k = DMatrix::zeros(n, n);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let xj = &rows[j * p..(j + 1) * p];
            (j..n).map(|i| spec.eval(&rows[i * p..(i + 1) * p], xj)).collect()
        })
        .collect();
    for (j, col) in cols.into_iter().enumerate() {
        for (offset, v) in col.into_iter().enumerate() {
            k[(j + offset, j)] = v;
            k[(j, j + offset)] = v;
        }
    }
    k
}
