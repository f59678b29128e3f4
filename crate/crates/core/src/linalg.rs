//! Small dense linear-algebra helpers: covariance accumulation and a
//! validated symmetric positive definite matrix type.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Relative ridge added to covariance estimates: `eps = 1e-6 * trace / d`.
pub const RIDGE_FACTOR: f64 = 1e-6;
/// Floor on the ridge so a zero-scatter covariance stays invertible.
pub const MIN_RIDGE: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetric positive definite matrix, stored row-major together with the
/// lower Cholesky factor `L` (`A = L Lᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    values: Vec<f64>,
    lower: Vec<f64>,
}

impl SpdMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (values[i * dim + j] - values[j * dim + i]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let chol = Cholesky::new(DMatrix::from_row_slice(dim, dim, &values)).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let lower = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
        Ok(Self { dim, values, lower })
    }

    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Self {
            dim,
            lower: values.clone(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Lᵀ v`, so that `‖Lᵀ v‖² = vᵀ A v`.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|j| (j..d).map(|i| self.lower[i * d + j] * v[i]).sum())
            .collect()
    }

    /// `vᵀ A v` evaluated directly from the stored entries.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.values[i * d..(i + 1) * d];
                v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }
}

/// Accumulates `Σ (x - m)(x - m)ᵀ` over centered rows.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    dim: usize,
    upper: Vec<f64>,
    count: usize,
}

impl ScatterAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; dim * dim],
            count: 0,
        }
    }

    pub fn add_centered(&mut self, centered: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let ci = centered[i];
            let row = &mut self.upper[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Scatter divided by the number of rows, as a full row-major matrix.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyInput("covariance needs at least one row"));
        }
        let d = self.dim;
        let n = self.count as f64;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = self.upper[i * d + j] / n;
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
        Ok(out)
    }
}

/// Inverts `cov + eps I` with `eps = max(1e-6 * trace(cov) / d, 1e-12)`.
pub fn regularized_inverse(dim: usize, cov: &[f64]) -> Result<SpdMatrix> {
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    let eps = (RIDGE_FACTOR * trace / dim as f64).max(MIN_RIDGE);
    let mut m = DMatrix::from_row_slice(dim, dim, cov);
    for i in 0..dim {
        m[(i, i)] += eps;
    }
    let inv = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?.inverse();
    let values = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| 0.5 * (inv[(i, j)] + inv[(j, i)]))
        .collect();
    SpdMatrix::new(dim, values)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
