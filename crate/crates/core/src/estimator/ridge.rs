use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EstimatorError, Standardizer};

/// L2-penalized linear model with an unpenalized intercept, fitted on
/// standardized features, whose predictions are clipped to the training
/// target range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

/// Relative pivot size below which a `lambda = 0` system is treated as
/// singular.
const SINGULAR_RTOL: f64 = 1e-12;

/// Minimizes `||y - X w - b||^2 + lambda ||w||^2` exactly.
///
/// `x` must already be standardized by `standardizer`; the standardizer is
/// only stored in the returned model.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    standardizer: Standardizer,
) -> Result<RidgeModel, EstimatorError> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(EstimatorError::TooFewRows { need: 1, got: 0 });
    }
    if y.len() != n {
        return Err(EstimatorError::TargetLength { rows: n, targets: y.len() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::BadLambda(lambda));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    if standardizer.dim() != d {
        return Err(EstimatorError::Dimension {
            expected: standardizer.dim(),
            got: d,
        });
    }

    // Centering eliminates the intercept from the normal equations.
    let x_mean = x.row_mean();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut gram = xc.tr_mul(&xc);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let max_diag = (0..d).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
    let chol = gram.cholesky().ok_or(EstimatorError::Singular)?;
    if d > 0 {
        let l = chol.l_dirty();
        let min_pivot = (0..d).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot <= SINGULAR_RTOL * max_diag.max(f64::MIN_POSITIVE) {
            return Err(EstimatorError::Singular);
        }
    }
    let w = chol.solve(&rhs);
    let intercept = y_mean - x_mean.transpose().dot(&w);
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(RidgeModel {
        weights: w.iter().copied().collect(),
        intercept,
        lambda,
        standardizer,
        clip_lo: lo,
        clip_hi: hi,
    })
}

impl RidgeModel {
    /// Linear output on an already standardized row, without clipping.
    pub fn decision_standardized(&self, z: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Unclipped prediction for a raw feature row.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        let z = self.standardizer.apply_row(x)?;
        Ok(self.decision_standardized(&z))
    }

    /// Prediction for a raw feature row, clipped to `[clip_lo, clip_hi]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        Ok(self.predict_raw(x)?.clamp(self.clip_lo, self.clip_hi))
    }

    /// `max |X^T (X w + b - y) + lambda w|` on standardized rows.
    pub fn stationarity_residual(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let w = DVector::from_column_slice(&self.weights);
        let mut resid = x * &w;
        for (r, t) in resid.iter_mut().zip(y) {
            *r += self.intercept - t;
        }
        let g = x.tr_mul(&resid) + w * self.lambda;
        g.amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_generator() {
        let x = DMatrix::from_fn(12, 3, |i, j| ((i * 5 + j * 7) % 11) as f64 - 5.0 + (i * j) as f64 * 0.1);
        let truth = [1.5, -2.0, 0.25];
        let y: Vec<f64> = (0..12)
            .map(|i| 3.0 + (0..3).map(|j| truth[j] * x[(i, j)]).sum::<f64>())
            .collect();
        let m = fit_ridge(&x, &y, 0.0, Standardizer::identity(3)).unwrap();
        for (w, t) in m.weights.iter().zip(truth) {
            assert!((w - t).abs() < 1e-8);
        }
        assert!((m.intercept - 3.0).abs() < 1e-8);
        assert!(m.stationarity_residual(&x, &y) < 1e-6);
    }

    #[test]
    fn huge_penalty_predicts_the_mean() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i as f64).powi(j as i32 + 1));
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 2.0 + 1.0).collect();
        let m = fit_ridge(&x, &y, 1e14, Standardizer::identity(2)).unwrap();
        let mean = y.iter().sum::<f64>() / 10.0;
        for i in 0..10 {
            let p = m.predict_raw(&[x[(i, 0)], x[(i, 1)]]).unwrap();
            assert!((p - mean).abs() < 1e-6, "{p} vs {mean}");
        }
    }

    #[test]
    fn collinear_without_penalty_is_singular() {
        let x = DMatrix::from_fn(6, 2, |i, j| i as f64 * (j + 1) as f64);
        let y = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert!(matches!(
            fit_ridge(&x, &y, 0.0, Standardizer::identity(2)),
            Err(EstimatorError::Singular)
        ));
        assert!(fit_ridge(&x, &y, 0.1, Standardizer::identity(2)).is_ok());
    }

    #[test]
    fn clipping() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = vec![0.0, 1.0, 2.0];
        let m = fit_ridge(&x, &y, 0.0, Standardizer::identity(1)).unwrap();
        assert_eq!((m.clip_lo, m.clip_hi), (0.0, 2.0));
        assert_eq!(m.predict(&[10.0]).unwrap(), 2.0);
        assert_eq!(m.predict(&[-10.0]).unwrap(), 0.0);
        assert!((m.predict(&[1.5]).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(EstimatorError::Dimension { .. })));
    }
}
