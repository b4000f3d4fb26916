use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EstimatorError, Standardizer};

const SIMPLEX_TOL: f64 = 1e-6;

/// Multinomial logistic model over compositional targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub class_labels: Vec<String>,
    /// `K x d`, one row per class.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub standardizer: Standardizer,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxOptions {
    /// Stop when the gradient max-norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftmaxOptions {
    fn default() -> Self {
        SoftmaxOptions {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Cross-entropy objective `sum_i H(Y_i, softmax(W x_i + b)) + lambda/2 ||W||^2`
/// over a flat parameter vector `[W (row-major K x d), b (K)]`.
pub struct SoftmaxObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    lambda: f64,
}

impl<'a> SoftmaxObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DMatrix<f64>, lambda: f64) -> Self {
        SoftmaxObjective { x, y, lambda }
    }

    pub fn n_params(&self) -> usize {
        self.y.ncols() * (self.x.ncols() + 1)
    }

    fn unpack(&self, params: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (k, d) = (self.y.ncols(), self.x.ncols());
        (
            DMatrix::from_row_slice(k, d, &params[..k * d]),
            DVector::from_column_slice(&params[k * d..]),
        )
    }

    fn logits(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let mut z = self.x * w.transpose();
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
        z
    }

    fn penalty(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * self.lambda * w.norm_squared()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let (w, b) = self.unpack(params);
        let z = self.logits(&w, &b);
        let mut total = 0.0;
        for (zr, yr) in z.row_iter().zip(self.y.row_iter()) {
            let max = zr.max();
            let lse = max + zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += zr.iter().zip(yr.iter()).map(|(zk, yk)| yk * (lse - zk)).sum::<f64>();
        }
        total + self.penalty(&w)
    }

    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = self.unpack(params);
        let mut z = self.logits(&w, &b);
        let mut total = 0.0;
        for (mut zr, yr) in z.row_iter_mut().zip(self.y.row_iter()) {
            let max = zr.max();
            let lse = max + zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += zr.iter().zip(yr.iter()).map(|(zk, yk)| yk * (lse - zk)).sum::<f64>();
            for (zk, yk) in zr.iter_mut().zip(yr.iter()) {
                // residual p - y
                *zk = (*zk - lse).exp() - yk;
            }
        }
        let gw = z.tr_mul(self.x) + &w * self.lambda;
        let (k, d) = (w.nrows(), w.ncols());
        let mut grad = Vec::with_capacity(k * (d + 1));
        for i in 0..k {
            grad.extend(gw.row(i).iter());
        }
        grad.extend(z.row_sum().iter());
        (total + self.penalty(&w), grad)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.loss_and_gradient(params).1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Inverse of a diagonal bound on the Hessian. The multinomial curvature is
/// at most `1/2 x x^T` per row, so `W[k][j]` gets `lambda + 1/2 sum_i x_ij^2`
/// and each intercept `n / 2`.
fn preconditioner(obj: &SoftmaxObjective<'_>) -> Vec<f64> {
    let (n, d) = obj.x.shape();
    let k = obj.y.ncols();
    let col: Vec<f64> = (0..d)
        .map(|j| 1.0 / (obj.lambda + 0.5 * obj.x.column(j).norm_squared()).max(1e-12))
        .collect();
    let mut diag = Vec::with_capacity(k * (d + 1));
    for _ in 0..k {
        diag.extend(&col);
    }
    diag.extend(std::iter::repeat_n(1.0 / (0.5 * n as f64).max(1e-12), k));
    diag
}

/// Limited-memory BFGS with a diagonal initial inverse Hessian and
/// backtracking line search.
fn minimize(obj: &SoftmaxObjective<'_>, opts: SoftmaxOptions) -> (Vec<f64>, FitDiagnostics) {
    const ARMIJO: f64 = 1e-4;
    const MEMORY: usize = 10;
    let diag = preconditioner(obj);
    let mut params = vec![0.0; obj.n_params()];
    let (mut f, mut g) = obj.loss_and_gradient(&params);
    let mut gnorm = max_abs(&g);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_iter && gnorm >= opts.tol {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0, |(s, y, _)| {
            let yhy: f64 = y.iter().zip(&diag).map(|(v, h)| v * v * h).sum();
            dot(s, y) / yhy
        });
        for (qi, h) in q.iter_mut().zip(&diag) {
            *qi *= gamma * h;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().zip(&diag).map(|(gi, h)| -gi * h).collect();
            slope = dot(&g, &dir);
        }

        let mut t = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = params.iter().zip(&dir).map(|(p, di)| p + t * di).collect();
            let (fc, gc) = obj.loss_and_gradient(&cand);
            let gc_norm = max_abs(&gc);
            let sufficient = fc <= f + ARMIJO * t * slope;
            // near the optimum the decrease drops below the rounding of f
            let flat = (fc - f).abs() <= 1e-13 * f.abs().max(1.0) && gc_norm < gnorm;
            if fc.is_finite() && (sufficient || flat) {
                break Some((cand, fc, gc, gc_norm));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        iterations += 1;
        let Some((cand, fc, gc, gc_norm)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = cand.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        params = cand;
        f = fc;
        g = gc;
        gnorm = gc_norm;
    }
    (
        params,
        FitDiagnostics {
            iterations,
            gradient_norm: gnorm,
            converged: gnorm < opts.tol,
        },
    )
}

fn check_targets(y: &DMatrix<f64>) -> Result<(), EstimatorError> {
    for (i, row) in y.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(EstimatorError::NotSimplex(i));
        }
    }
    Ok(())
}

/// Fits a softmax model on standardized rows `x` against simplex rows `y`.
pub fn fit_softmax(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    class_labels: Vec<String>,
    standardizer: Standardizer,
    opts: SoftmaxOptions,
) -> Result<(SoftmaxModel, FitDiagnostics), EstimatorError> {
    let (n, d) = x.shape();
    let k = y.ncols();
    if n == 0 {
        return Err(EstimatorError::TooFewRows { need: 1, got: 0 });
    }
    if y.nrows() != n {
        return Err(EstimatorError::TargetLength { rows: n, targets: y.nrows() });
    }
    if k < 2 || class_labels.len() != k {
        return Err(EstimatorError::Classes(k, class_labels.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::BadLambda(lambda));
    }
    if standardizer.dim() != d {
        return Err(EstimatorError::Dimension {
            expected: standardizer.dim(),
            got: d,
        });
    }
    check_targets(y)?;
    let obj = SoftmaxObjective::new(x, y, lambda);
    let (params, diag) = minimize(&obj, opts);
    let weights = params[..k * d].chunks(d.max(1)).take(k).map(|r| r[..d].to_vec()).collect();
    Ok((
        SoftmaxModel {
            class_labels,
            weights,
            intercepts: params[k * d..].to_vec(),
            standardizer,
            lambda,
        },
        diag,
    ))
}

impl SoftmaxModel {
    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn predict_standardized(&self, z: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + dot(w, z))
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    /// Class shares for a raw feature row.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        let z = self.standardizer.apply_row(x)?;
        Ok(self.predict_standardized(&z))
    }

    /// Mean cross-entropy of the model on standardized rows.
    pub fn mean_cross_entropy(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (xr, yr) in x.row_iter().zip(y.row_iter()) {
            let z: Vec<f64> = xr.iter().copied().collect();
            let p = self.predict_standardized(&z);
            total -= yr
                .iter()
                .zip(&p)
                .filter(|(yk, _)| **yk > 0.0)
                .map(|(yk, pk)| yk * pk.max(f64::MIN_POSITIVE).ln())
                .sum::<f64>();
        }
        total / x.nrows().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let m = SoftmaxModel {
            class_labels: labels(4),
            weights: vec![vec![0.0; 3]; 4],
            intercepts: vec![0.0; 4],
            standardizer: Standardizer::identity(3),
            lambda: 0.0,
        };
        assert_eq!(m.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn huge_penalty_predicts_base_rates() {
        let mut rng = rand_pcg::Pcg32::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(40, 3, |i, j| [[0.2, 0.3, 0.5], [0.4, 0.4, 0.2]][i % 2][j]);
        let (m, diag) = fit_softmax(&x, &y, 1e9, labels(3), Standardizer::identity(3), SoftmaxOptions::default()).unwrap();
        assert!(diag.converged, "{diag:?}");
        let p = m.predict(&[0.3, -0.2, 0.9]).unwrap();
        for (pk, base) in p.iter().zip([0.3, 0.35, 0.35]) {
            assert!((pk - base).abs() < 1e-5, "{p:?}");
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(matches!(
            fit_softmax(&x, &y, 1.0, labels(2), Standardizer::identity(1), SoftmaxOptions::default()),
            Err(EstimatorError::NotSimplex(0))
        ));
        let y = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let xn = DMatrix::from_element(2, 1, f64::NAN);
        assert!(matches!(
            fit_softmax(&xn, &y, 1.0, labels(2), Standardizer::identity(1), SoftmaxOptions::default()),
            Err(EstimatorError::NonFinite)
        ));
    }

    #[test]
    fn converges_and_predictions_sum_to_one() {
        let mut rng = rand_pcg::Pcg32::seed_from_u64(9);
        let x = DMatrix::from_fn(60, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(60, 3, |i, j| {
            let mut z = [x[(i, 0)], x[(i, 1)] - x[(i, 2)], 0.3 * x[(i, 3)]];
            softmax_in_place(&mut z);
            z[j]
        });
        let (m, diag) = fit_softmax(&x, &y, 0.1, labels(3), Standardizer::identity(4), SoftmaxOptions::default()).unwrap();
        assert!(diag.converged, "{diag:?}");
        for _ in 0..20 {
            let row: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = m.predict(&row).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
