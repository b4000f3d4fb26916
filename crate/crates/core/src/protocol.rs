//! Protocol constants and the provenance block written into every report.

use serde::{Deserialize, Serialize};

/// Detection threshold applied to prior-adjusted scores.
pub const DETECTION_THRESHOLD: f64 = -2.3;
/// Detection threshold used for reporting on raw scores, before the prior.
pub const RAW_REPORTING_THRESHOLD: f64 = -1.5;
/// Number of cross-validation folds.
pub const FOLDS: usize = 5;
/// Minimum region population for eligibility.
pub const MIN_POPULATION: u64 = 500;
/// Minimum number of retained detections for eligibility.
pub const MIN_CARS: usize = 50;
/// Jaccard overlap required for a detection to count as correct.
pub const IOU_MIN: f64 = 0.5;
/// Number of class hypotheses kept per detection.
pub const TOP_K: usize = 20;

/// Default regularization grid: 10^-3 to 10^3 in decade steps.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]
}

/// Settings that determine a run, echoed into model and report files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub detection_threshold: f64,
    pub folds: usize,
    pub min_population: u64,
    pub min_cars: usize,
    pub iou_min: f64,
    pub top_k: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub weighting: crate::features::Weighting,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            detection_threshold: DETECTION_THRESHOLD,
            folds: FOLDS,
            min_population: MIN_POPULATION,
            min_cars: MIN_CARS,
            iou_min: IOU_MIN,
            top_k: TOP_K,
            seed: 0,
            lambda_grid: default_lambda_grid(),
            weighting: Default::default(),
        }
    }
}
