//! K-fold cross-validated training: one global regularization strength is
//! chosen by mean held-out loss, then the fold models at that strength are
//! averaged parameter-wise.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use super::ridge::{fit_ridge, RidgeModel};
use super::softmax::{fit_softmax, SoftmaxModel, SoftmaxOptions};
use super::standardize::{fit_standardizer, Standardizer};
use super::EstimatorError;

#[derive(Clone, Debug, PartialEq)]
pub struct CvOptions {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            lambda_grid: crate::protocol::default_lambda_grid(),
            folds: crate::protocol::FOLDS,
            seed: 0,
        }
    }
}

/// Averaged model plus the selection trace.
#[derive(Clone, Debug)]
pub struct CvOutcome<M> {
    pub model: M,
    pub selected_lambda: f64,
    /// Mean held-out loss for every grid value, in grid order.
    pub cv_losses: Vec<(f64, f64)>,
    /// The fold models at the selected strength.
    pub fold_models: Vec<M>,
}

/// Fold id per row: a seeded shuffle followed by round-robin dealing.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_pcg::Pcg32::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn check_setup(n: usize, fold_ids: &[usize], opts_grid: &[f64]) -> Result<usize, EstimatorError> {
    if opts_grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    if let Some(&bad) = opts_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(EstimatorError::BadLambda(bad));
    }
    if fold_ids.len() != n {
        return Err(EstimatorError::TargetLength { rows: n, targets: fold_ids.len() });
    }
    let folds = fold_ids.iter().max().map_or(0, |m| m + 1);
    if folds < 2 {
        return Err(EstimatorError::Folds(folds));
    }
    for f in 0..folds {
        if !fold_ids.contains(&f) {
            return Err(EstimatorError::EmptyFold(f));
        }
    }
    Ok(folds)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

fn split(fold_ids: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..fold_ids.len()).filter(|&i| fold_ids[i] != fold).collect();
    let held = (0..fold_ids.len()).filter(|&i| fold_ids[i] == fold).collect();
    (train, held)
}

fn select<M>(grid: &[f64], folds: usize, fits: Vec<(M, f64)>) -> (usize, Vec<(f64, f64)>, Vec<M>) {
    let losses: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(gi, &l)| {
            let mean = fits[gi * folds..(gi + 1) * folds].iter().map(|f| f.1).sum::<f64>() / folds as f64;
            (l, mean)
        })
        .collect();
    // first minimum wins, so ties favour the earlier grid entry
    let best = losses
        .iter()
        .enumerate()
        .fold(0, |b, (i, l)| if l.1 < losses[b].1 { i } else { b });
    let models = fits
        .into_iter()
        .skip(best * folds)
        .take(folds)
        .map(|f| f.0)
        .collect();
    (best, losses, models)
}

/// Cross-validated ridge on raw features; the standardizer is fitted on all
/// rows and shared by every fold model.
pub fn cv_train_ridge(x: &DMatrix<f64>, y: &[f64], opts: &CvOptions) -> Result<CvOutcome<RidgeModel>, EstimatorError> {
    if opts.folds < 2 {
        return Err(EstimatorError::Folds(opts.folds));
    }
    if x.nrows() < opts.folds {
        return Err(EstimatorError::EmptyFold(x.nrows()));
    }
    let ids = fold_assignment(x.nrows(), opts.folds, opts.seed);
    cv_train_ridge_with_folds(x, y, &opts.lambda_grid, &ids)
}

pub fn cv_train_ridge_with_folds(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    fold_ids: &[usize],
) -> Result<CvOutcome<RidgeModel>, EstimatorError> {
    if y.len() != x.nrows() {
        return Err(EstimatorError::TargetLength { rows: x.nrows(), targets: y.len() });
    }
    let folds = check_setup(x.nrows(), fold_ids, grid)?;
    let standardizer = fit_standardizer(x)?;
    let z = standardizer.apply(x)?;
    let jobs: Vec<(f64, usize)> = grid.iter().flat_map(|&l| (0..folds).map(move |f| (l, f))).collect();
    let fits = jobs
        .par_iter()
        .map(|&(lambda, fold)| {
            let (tr, ho) = split(fold_ids, fold);
            let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let m = fit_ridge(&rows(&z, &tr), &ytr, lambda, standardizer.clone())?;
            let mse = ho
                .iter()
                .map(|&i| {
                    let zi: Vec<f64> = z.row(i).iter().copied().collect();
                    let e = m.decision_standardized(&zi) - y[i];
                    e * e
                })
                .sum::<f64>()
                / ho.len() as f64;
            Ok((m, mse))
        })
        .collect::<Result<Vec<_>, EstimatorError>>()?;
    let (best, cv_losses, fold_models) = select(grid, folds, fits);
    let k = fold_models.len() as f64;
    let d = x.ncols();
    let mut weights = vec![0.0; d];
    let mut intercept = 0.0;
    for m in &fold_models {
        for (a, w) in weights.iter_mut().zip(&m.weights) {
            *a += w / k;
        }
        intercept += m.intercept / k;
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(CvOutcome {
        model: RidgeModel {
            weights,
            intercept,
            lambda: grid[best],
            standardizer,
            clip_lo: lo,
            clip_hi: hi,
        },
        selected_lambda: grid[best],
        cv_losses,
        fold_models,
    })
}

/// Cross-validated softmax regression on raw features.
pub fn cv_train_softmax(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    class_labels: &[String],
    opts: &CvOptions,
    solver: SoftmaxOptions,
) -> Result<CvOutcome<SoftmaxModel>, EstimatorError> {
    if opts.folds < 2 {
        return Err(EstimatorError::Folds(opts.folds));
    }
    if x.nrows() < opts.folds {
        return Err(EstimatorError::EmptyFold(x.nrows()));
    }
    let ids = fold_assignment(x.nrows(), opts.folds, opts.seed);
    cv_train_softmax_with_folds(x, y, class_labels, &opts.lambda_grid, &ids, solver)
}

pub fn cv_train_softmax_with_folds(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    class_labels: &[String],
    grid: &[f64],
    fold_ids: &[usize],
    solver: SoftmaxOptions,
) -> Result<CvOutcome<SoftmaxModel>, EstimatorError> {
    if y.nrows() != x.nrows() {
        return Err(EstimatorError::TargetLength { rows: x.nrows(), targets: y.nrows() });
    }
    let folds = check_setup(x.nrows(), fold_ids, grid)?;
    let standardizer: Standardizer = fit_standardizer(x)?;
    let z = standardizer.apply(x)?;
    let jobs: Vec<(f64, usize)> = grid.iter().flat_map(|&l| (0..folds).map(move |f| (l, f))).collect();
    let fits = jobs
        .par_iter()
        .map(|&(lambda, fold)| {
            let (tr, ho) = split(fold_ids, fold);
            let (m, _) = fit_softmax(
                &rows(&z, &tr),
                &rows(y, &tr),
                lambda,
                class_labels.to_vec(),
                standardizer.clone(),
                solver,
            )?;
            let loss = m.mean_cross_entropy(&rows(&z, &ho), &rows(y, &ho));
            Ok((m, loss))
        })
        .collect::<Result<Vec<_>, EstimatorError>>()?;
    let (best, cv_losses, fold_models) = select(grid, folds, fits);
    let k = fold_models.len() as f64;
    let mut weights = vec![vec![0.0; x.ncols()]; y.ncols()];
    let mut intercepts = vec![0.0; y.ncols()];
    for m in &fold_models {
        for (acc, row) in weights.iter_mut().zip(&m.weights) {
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w / k;
            }
        }
        for (a, b) in intercepts.iter_mut().zip(&m.intercepts) {
            *a += b / k;
        }
    }
    Ok(CvOutcome {
        model: SoftmaxModel {
            class_labels: class_labels.to_vec(),
            weights,
            intercepts,
            standardizer,
            lambda: grid[best],
        },
        selected_lambda: grid[best],
        cv_losses,
        fold_models,
    })
}
