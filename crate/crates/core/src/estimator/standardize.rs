use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// Per-column affine map to zero mean and unit population standard
/// deviation. Zero-variance columns keep `std = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimatorError> {
        self.check_dim(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.std[j]
        }))
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    fn check_dim(&self, got: usize) -> Result<(), EstimatorError> {
        if got != self.dim() {
            return Err(EstimatorError::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

pub fn fit_standardizer(x: &DMatrix<f64>) -> Result<Standardizer, EstimatorError> {
    let n = x.nrows();
    if n < 2 {
        return Err(EstimatorError::TooFewRows { need: 2, got: n });
    }
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        mean.push(m);
        std.push(if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 });
    }
    Ok(Standardizer { mean, std })
}
