use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use carcensus::estimator::{fit_softmax, SoftmaxObjective, SoftmaxOptions, Standardizer};

fn problem(seed: u64, n: usize, d: usize, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = Pcg32::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let mut y = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.01..1.0));
    for mut row in y.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn gradient_matches_central_differences(
        seed in any::<u64>(), n in 2usize..25, d in 1usize..=10, k in 2usize..=5, lambda in 0.0f64..3.0,
    ) {
        let (x, y) = problem(seed, n, d, k);
        let obj = SoftmaxObjective::new(&x, &y, lambda);
        let mut rng = Pcg32::seed_from_u64(seed ^ 0x5eed);
        let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = obj.gradient(&params);
        let h = 1e-5;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..params.len() {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (obj.loss(&up) - obj.loss(&dn)) / (2.0 * h);
            diff += (g[i] - fd).powi(2);
            norm += g[i].powi(2);
        }
        prop_assert!(diff.sqrt() <= 1e-4 * norm.sqrt().max(1e-8));
    }

    #[test]
    fn fitted_model_is_stationary_and_outputs_a_simplex(
        seed in any::<u64>(), n in 5usize..40, d in 1usize..6, k in 2usize..=4,
    ) {
        let (x, y) = problem(seed, n, d, k);
        let labels = (0..k).map(|c| format!("c{c}")).collect();
        let (model, diag) =
            fit_softmax(&x, &y, 0.5, labels, Standardizer::identity(d), SoftmaxOptions::default()).unwrap();
        prop_assert!(diag.converged, "{diag:?}");
        let mut params: Vec<f64> = model.weights.iter().flatten().copied().collect();
        params.extend(&model.intercepts);
        let g = SoftmaxObjective::new(&x, &y, 0.5).gradient(&params);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-5));
        for i in 0..n {
            let p = model.predict_standardized(&x.row(i).iter().copied().collect::<Vec<_>>());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v > 0.0));
        }
    }
}
