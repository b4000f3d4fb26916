//! Standardization, ridge and softmax regression, and the cross-validated
//! training protocol. Serialized models live in [`ModelBundle`].

mod cv;
mod ridge;
mod softmax;
mod standardize;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cv::{
    cv_train_ridge, cv_train_ridge_with_folds, cv_train_softmax, cv_train_softmax_with_folds,
    fold_assignment, CvOptions, CvOutcome,
};
pub use ridge::{fit_ridge, RidgeModel};
pub use softmax::{fit_softmax, FitDiagnostics, SoftmaxModel, SoftmaxObjective, SoftmaxOptions};
pub use standardize::{fit_standardizer, Standardizer};

use crate::protocol::ProtocolConfig;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("{rows} rows but {targets} targets")]
    TargetLength { rows: usize, targets: usize },
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("regularization strength must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error("normal equations are singular; use lambda > 0")]
    Singular,
    #[error("non-finite value in features or targets")]
    NonFinite,
    #[error("target row {0} is not on the simplex")]
    NotSimplex(usize),
    #[error("softmax needs K >= 2 classes with one label each (K = {0}, labels = {1})")]
    Classes(usize, usize),
    #[error("empty regularization grid")]
    EmptyGrid,
    #[error("need at least 2 folds, got {0}")]
    Folds(usize),
    #[error("fold {0} has no samples")]
    EmptyFold(usize),
    #[error("feature layout `{found}` does not match `{expected}`")]
    Layout { expected: String, found: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("invalid model json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A fitted model for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetModel {
    Ridge(RidgeModel),
    Softmax(SoftmaxModel),
}

/// Prediction for one region: a scalar or a vector of class shares.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Scalar(f64),
    Shares(Vec<(String, f64)>),
}

impl TargetModel {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, EstimatorError> {
        match self {
            TargetModel::Ridge(m) => m.predict(x).map(Prediction::Scalar),
            TargetModel::Softmax(m) => {
                let p = m.predict(x)?;
                Ok(Prediction::Shares(m.class_labels.iter().cloned().zip(p).collect()))
            }
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            TargetModel::Ridge(m) => m.lambda,
            TargetModel::Softmax(m) => m.lambda,
        }
    }
}

/// Contents of `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub feature_layout: String,
    pub protocol: ProtocolConfig,
    pub train_regions: usize,
    pub models: BTreeMap<String, TargetModel>,
}

impl ModelBundle {
    pub fn new(protocol: ProtocolConfig, train_regions: usize) -> Self {
        ModelBundle {
            feature_layout: crate::FEATURE_LAYOUT_VERSION.to_string(),
            protocol,
            train_regions,
            models: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable model");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EstimatorError> {
        let bundle: ModelBundle = serde_json::from_str(text)?;
        if bundle.feature_layout != crate::FEATURE_LAYOUT_VERSION {
            return Err(EstimatorError::Layout {
                expected: crate::FEATURE_LAYOUT_VERSION.into(),
                found: bundle.feature_layout,
            });
        }
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, EstimatorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const PREDICTIONS_HEADER: &str = "region_id,target,predicted_value";

/// One `predictions.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub region_id: String,
    /// `income`, `vote_share`, or `<target>:<class>` for share targets.
    pub target: String,
    pub value: f64,
}

/// Flattens a model prediction into rows, one per scalar component.
pub fn prediction_rows(region_id: &str, target: &str, p: &Prediction) -> Vec<PredictionRow> {
    match p {
        Prediction::Scalar(v) => vec![PredictionRow {
            region_id: region_id.to_string(),
            target: target.to_string(),
            value: *v,
        }],
        Prediction::Shares(shares) => shares
            .iter()
            .map(|(class, v)| PredictionRow {
                region_id: region_id.to_string(),
                target: format!("{target}:{class}"),
                value: *v,
            })
            .collect(),
    }
}

pub fn predictions_to_csv(rows: &[PredictionRow]) -> Vec<u8> {
    crate::io::csv_bytes(
        &["region_id", "target", "predicted_value"],
        rows.iter().map(|r| [r.region_id.clone(), r.target.clone(), r.value.to_string()]),
    )
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, crate::IngestError> {
    let mut reader = crate::io::open_csv(path, PREDICTIONS_HEADER)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for rec in crate::io::records(&mut reader) {
        let (line, r) = rec?;
        let row = PredictionRow {
            region_id: r[0].trim().to_string(),
            target: r[1].trim().to_string(),
            value: crate::io::parse_finite(line, "predicted_value", &r[2])?,
        };
        if !seen.insert((row.region_id.clone(), row.target.clone())) {
            return Err(crate::IngestError::Duplicate {
                line,
                what: "region_id,target".into(),
                id: format!("{},{}", row.region_id, row.target),
            });
        }
        out.push(row);
    }
    Ok(out)
}
