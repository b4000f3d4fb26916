//! Isotonic calibration of detection scores into correctness probabilities.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot fit an isotonic map to zero points")]
    Empty,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {value} at index {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("invalid calibration json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Nondecreasing piecewise-linear map from score to probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    /// `(score, probability)` with strictly increasing scores.
    pub knots: Vec<(f64, f64)>,
}

/// Weighted pool-adjacent-violators on values already in order.
///
/// Returns one fitted value per input.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let sums: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    pava_sums(&sums, weights)
}

/// PAVA on per-point weighted sums rather than means.
fn pava_sums(sums: &[f64], weights: &[f64]) -> Vec<f64> {
    // (weighted sum, total weight, number of points); means are formed from
    // the running sums so pooled values carry no accumulated rounding
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(sums.len());
    for (&v, &w) in sums.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(s, bw, n)) = blocks.last() {
            if s / bw <= cur.0 / cur.1 {
                break;
            }
            blocks.pop();
            cur = (s + cur.0, bw + cur.1, n + cur.2);
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(sums.len());
    for (s, w, n) in blocks {
        out.extend(std::iter::repeat_n(s / w, n));
    }
    out
}

/// Fits the least-squares monotone map of binary `labels` on `scores`.
///
/// Tied scores are merged into one knot carrying their mean label and
/// combined weight before pooling.
pub fn fit_isotonic(scores: &[f64], labels: &[f64]) -> Result<IsotonicMap, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(CalibrationError::Empty);
    }
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        if !s.is_finite() {
            return Err(CalibrationError::NonFiniteScore(i));
        }
        if y != 0.0 && y != 1.0 {
            return Err(CalibrationError::NonBinaryLabel { index: i, value: y });
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in order {
        let s = scores[i];
        if xs.last() == Some(&s) {
            *sums.last_mut().unwrap() += labels[i];
            *weights.last_mut().unwrap() += 1.0;
        } else {
            xs.push(s);
            sums.push(labels[i]);
            weights.push(1.0);
        }
    }
    let fitted = pava_sums(&sums, &weights);
    Ok(IsotonicMap {
        knots: xs.into_iter().zip(fitted).collect(),
    })
}

impl IsotonicMap {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.knots.is_empty() {
            return Err(CalibrationError::InvalidKnots("no knots".into()));
        }
        for (i, &(s, p)) in self.knots.iter().enumerate() {
            if !s.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(CalibrationError::InvalidKnots(format!("knot {i} = ({s}, {p})")));
            }
            if i > 0 {
                let (ps, pp) = self.knots[i - 1];
                if s <= ps {
                    return Err(CalibrationError::InvalidKnots(format!(
                        "scores not strictly increasing at knot {i}"
                    )));
                }
                if p < pp {
                    return Err(CalibrationError::InvalidKnots(format!(
                        "probabilities decrease at knot {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let map: IsotonicMap = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("serializable map");
        s.push('\n');
        s
    }
}

/// Probability for `score` by linear interpolation between knots, constant
/// beyond the first and last knot.
pub fn calibrate(map: &IsotonicMap, score: f64) -> f64 {
    let knots = &map.knots;
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if score <= first.0 {
        return first.1;
    }
    if score >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|&(s, _)| s <= score);
    let (s0, p0) = knots[hi - 1];
    let (s1, p1) = knots[hi];
    if score == s0 {
        return p0;
    }
    let t = (score - s0) / (s1 - s0);
    (p0 + t * (p1 - p0)).clamp(p0, p1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(map: &IsotonicMap) -> Vec<f64> {
        map.knots.iter().map(|k| k.1).collect()
    }

    #[test]
    fn monotone_labels_are_kept() {
        let m = fit_isotonic(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(probs(&m), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn violator_is_pooled() {
        let m = fit_isotonic(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(probs(&m), vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn all_positive_is_constant_one() {
        let m = fit_isotonic(&[3.0, -1.0, 0.5], &[1.0, 1.0, 1.0]).unwrap();
        assert!(probs(&m).iter().all(|&p| p == 1.0));
        assert_eq!(calibrate(&m, -100.0), 1.0);
    }

    #[test]
    fn ties_merge_into_one_knot() {
        let m = fit_isotonic(&[0.0, 0.0, 1.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.knots, vec![(0.0, 0.5), (1.0, 2.0 / 3.0)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_isotonic(&[], &[]), Err(CalibrationError::Empty)));
        assert!(matches!(
            fit_isotonic(&[1.0], &[0.5]),
            Err(CalibrationError::NonBinaryLabel { .. })
        ));
        assert!(matches!(
            fit_isotonic(&[1.0, 2.0], &[1.0]),
            Err(CalibrationError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn interpolation_examples() {
        let m = IsotonicMap {
            knots: vec![(-2.0, 0.2), (0.0, 0.6)],
        };
        assert_eq!(calibrate(&m, -2.0), 0.2);
        assert_eq!(calibrate(&m, 0.0), 0.6);
        assert!((calibrate(&m, -1.0) - 0.4).abs() < 1e-15);
        assert_eq!(calibrate(&m, 100.0), 0.6);
        assert_eq!(calibrate(&m, -100.0), 0.2);
    }

    #[test]
    fn json_shape() {
        let m = IsotonicMap {
            knots: vec![(-2.0, 0.2), (0.1, 0.6)],
        };
        assert_eq!(m.to_json(), "{\"knots\":[[-2.0,0.2],[0.1,0.6]]}\n");
    }

    proptest! {
        #[test]
        fn fitted_map_invariants(pts in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 1..60)) {
            let scores: Vec<f64> = pts.iter().map(|p| (p.0 * 4.0).round() / 4.0).collect();
            let labels: Vec<f64> = pts.iter().map(|p| p.1 as u8 as f64).collect();
            let m = fit_isotonic(&scores, &labels).unwrap();
            m.validate().unwrap();
            // mass preservation over the training points
            let mass: f64 = scores.iter().map(|&s| calibrate(&m, s)).sum();
            prop_assert!((mass - labels.iter().sum::<f64>()).abs() < 1e-9);
            // monotone sweep
            let mut prev = f64::NEG_INFINITY;
            for k in -30..=30 {
                let p = calibrate(&m, k as f64 * 0.2);
                prop_assert!(p >= prev);
                prop_assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
            // JSON round trip is exact
            let back: IsotonicMap = serde_json::from_str(&m.to_json()).unwrap();
            prop_assert_eq!(back, m.clone());
            // refitting on block means keeps the block structure
            let refit_labels: Vec<f64> = m.knots.iter().map(|k| k.1).collect();
            let xs: Vec<f64> = m.knots.iter().map(|k| k.0).collect();
            let w = vec![1.0; xs.len()];
            prop_assert_eq!(pava(&refit_labels, &w), refit_labels);
        }
    }
}
