//! Library routines checked against brute-force references.

use nalgebra::DMatrix;
use proptest::prelude::*;

use carcensus::analytics::pearson;
use carcensus::calibration::{calibrate, fit_isotonic, pava};
use carcensus::detection::average_precision;
use carcensus::estimator::{fit_ridge, fit_standardizer, Standardizer};
use carcensus::oracles::{oracle_ap, oracle_isotonic, oracle_pearson, oracle_ridge};

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn isotonic_fit_matches_partition_search(
        pairs in prop::collection::vec((-6i32..6, any::<bool>()), 1..=10)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 3.0).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
        let map = fit_isotonic(&scores, &labels).unwrap();
        let (want, _) = oracle_isotonic(&scores, &labels).unwrap();
        for (s, w) in scores.iter().zip(&want) {
            prop_assert!((calibrate(&map, *s) - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn pava_output_is_monotone_and_preserves_weighted_mean(
        vw in prop::collection::vec((-5.0f64..5.0, 0.1f64..3.0), 1..40)
    ) {
        let (v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
        let fit = pava(&v, &w);
        prop_assert!(fit.windows(2).all(|p| p[0] <= p[1] + 1e-12));
        let mean = |xs: &[f64]| xs.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        prop_assert!((mean(&fit) - mean(&v)).abs() <= 1e-9);
    }

    #[test]
    fn ridge_matches_dense_elimination(
        seed in any::<u64>(),
        n in 3usize..40,
        d in 1usize..12,
        lambda in prop::sample::select(vec![0.01, 1.0, 100.0]),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_pcg::Pcg32::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = fit_standardizer(&x).unwrap().apply(&x).unwrap();
        let m = fit_ridge(&z, &y, lambda, Standardizer::identity(d)).unwrap();
        let (w, b) = oracle_ridge(&rows(&z), &y, lambda).unwrap();
        for (a, o) in m.weights.iter().zip(&w) {
            prop_assert!((a - o).abs() <= 1e-8);
        }
        prop_assert!((m.intercept - b).abs() <= 1e-8);
        prop_assert!(m.stationarity_residual(&z, &y) < 1e-6);
    }

    #[test]
    fn pearson_matches_reference(
        seed in any::<u64>(),
        n in 5usize..100,
        slope in -2.0f64..2.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_pcg::Pcg32::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + rng.random_range(-20.0..20.0)).collect();
        let (r, p) = pearson(&xs, &ys).unwrap();
        let (ro, po) = oracle_pearson(&xs, &ys).unwrap();
        prop_assert!((r - ro).abs() <= 1e-10);
        prop_assert!((p - po).abs() <= 1e-8);
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5..40),
        a in 0.5f64..4.0,
        c in -20.0f64..20.0,
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let Ok((r, _)) = pearson(&xs, &ys) else { return Ok(()) };
        let (rt, _) = pearson(&ys, &xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| a * x + c).collect();
        let (rs, _) = pearson(&shifted, &ys).unwrap();
        prop_assert!((r - rt).abs() <= 1e-12);
        prop_assert!((r - rs).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn ap_matches_reference_on_every_short_sequence() {
    for len in 0..=8usize {
        for bits in 0u32..(1 << len) {
            let labels: Vec<bool> = (0..len).map(|i| bits & (1 << i) != 0).collect();
            let pos = labels.iter().filter(|l| **l).count();
            for n_truth in pos.max(1)..=pos + 3 {
                assert_eq!(
                    average_precision(&labels, n_truth).unwrap(),
                    oracle_ap(&labels, n_truth).unwrap(),
                    "{labels:?} / {n_truth}"
                );
            }
        }
    }
}

#[test]
fn worked_pearson_example() {
    let (r, p) = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
    let (ro, po) = oracle_pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
    assert!((r - ro).abs() < 1e-12 && (p - po).abs() < 1e-12);
    assert!((r - 0.9827076298239907).abs() < 1e-12, "{r}");
}
