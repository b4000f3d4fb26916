//! Location-size prior: an additive score offset looked up in a 2-D
//! histogram over (normalized vertical box center, log box area).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, Detection};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("{axis} edges must have at least two strictly increasing finite values")]
    BadEdges { axis: &'static str },
    #[error("weight grid is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    Shape {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("non-finite weight at cell ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("image height must be positive")]
    BadHeight,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("invalid prior json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationSizePrior {
    /// Height of the image frame used to normalize the box center.
    pub image_height: f64,
    /// Bin edges over `(y + h/2) / image_height`.
    pub center_y_edges: Vec<f64>,
    /// Bin edges over `ln(w * h)`.
    pub log_area_edges: Vec<f64>,
    /// `weights[i][j]` is the log-weight of center bin `i`, area bin `j`.
    pub weights: Vec<Vec<f64>>,
}

/// Outcome of [`apply_prior`]: the adjusted detection and whether the box
/// fell outside the histogram support and was clamped to the nearest cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorApplied {
    pub detection: Detection,
    pub clamped: bool,
}

fn edges_ok(edges: &[f64]) -> bool {
    edges.len() >= 2
        && edges.iter().all(|e| e.is_finite())
        && edges.windows(2).all(|w| w[0] < w[1])
}

/// Bin index for `v`; values outside the edges clamp to the end bins.
fn bin(edges: &[f64], v: f64) -> (usize, bool) {
    let n = edges.len() - 1;
    if v < edges[0] {
        return (0, true);
    }
    if v > edges[n] {
        return (n - 1, true);
    }
    // last bin is closed on the right
    let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(n - 1);
    (i, false)
}

impl LocationSizePrior {
    /// All-zero prior over the given edges.
    pub fn neutral(
        image_height: f64,
        center_y_edges: Vec<f64>,
        log_area_edges: Vec<f64>,
    ) -> Result<Self, PriorError> {
        let weights = vec![vec![0.0; log_area_edges.len().saturating_sub(1)]; center_y_edges.len().saturating_sub(1)];
        let p = LocationSizePrior {
            image_height,
            center_y_edges,
            log_area_edges,
            weights,
        };
        p.validate()?;
        Ok(p)
    }

    /// Fits log-weights from the relative frequency of true boxes per cell:
    /// `ln((count + 1) / (max_count + 1))`, so the most populated cell has
    /// weight 0 and every other cell lowers the score.
    pub fn fit(
        truths: &[BoundingBox],
        image_height: f64,
        center_y_edges: Vec<f64>,
        log_area_edges: Vec<f64>,
    ) -> Result<Self, PriorError> {
        let mut p = Self::neutral(image_height, center_y_edges, log_area_edges)?;
        let mut counts = vec![vec![0usize; p.weights[0].len()]; p.weights.len()];
        for b in truths {
            let (i, j, _) = p.cell(b);
            counts[i][j] += 1;
        }
        let max = counts.iter().flatten().copied().max().unwrap_or(0) as f64;
        for (row, crow) in p.weights.iter_mut().zip(&counts) {
            for (w, &c) in row.iter_mut().zip(crow) {
                *w = ((c as f64 + 1.0) / (max + 1.0)).ln();
            }
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if !(self.image_height > 0.0 && self.image_height.is_finite()) {
            return Err(PriorError::BadHeight);
        }
        if !edges_ok(&self.center_y_edges) {
            return Err(PriorError::BadEdges { axis: "center_y" });
        }
        if !edges_ok(&self.log_area_edges) {
            return Err(PriorError::BadEdges { axis: "log_area" });
        }
        let want_rows = self.center_y_edges.len() - 1;
        let want_cols = self.log_area_edges.len() - 1;
        let cols = self.weights.first().map_or(0, Vec::len);
        if self.weights.len() != want_rows || self.weights.iter().any(|r| r.len() != want_cols) {
            return Err(PriorError::Shape {
                rows: self.weights.len(),
                cols,
                want_rows,
                want_cols,
            });
        }
        for (i, row) in self.weights.iter().enumerate() {
            if let Some(j) = row.iter().position(|w| !w.is_finite()) {
                return Err(PriorError::NonFinite(i, j));
            }
        }
        Ok(())
    }

    /// Cell for a box and whether it had to be clamped into the support.
    pub fn cell(&self, b: &BoundingBox) -> (usize, usize, bool) {
        let cy = (b.y + b.h / 2.0) / self.image_height;
        let la = b.area().ln();
        let (i, ci) = bin(&self.center_y_edges, cy);
        let (j, cj) = bin(&self.log_area_edges, la);
        (i, j, ci || cj)
    }

    pub fn weight_for(&self, b: &BoundingBox) -> f64 {
        let (i, j, _) = self.cell(b);
        self.weights[i][j]
    }

    pub fn load(path: &Path) -> Result<Self, PriorError> {
        let text = std::fs::read_to_string(path)?;
        let p: LocationSizePrior = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable prior");
        s.push('\n');
        s
    }
}

/// Adds the prior's cell log-weight to the raw score. The raw score is kept.
pub fn apply_prior(d: &Detection, prior: &LocationSizePrior) -> PriorApplied {
    let (i, j, clamped) = prior.cell(&d.bbox);
    let mut detection = d.clone();
    detection.adjusted_score = Some(d.raw_score + prior.weights[i][j]);
    PriorApplied { detection, clamped }
}

/// Default center edges: ten equal bins over the image height.
pub fn default_center_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Default log-area edges: boxes from 50x50 up to the full 860x573 frame.
pub fn default_log_area_edges() -> Vec<f64> {
    let lo = (50.0f64 * 50.0).ln();
    let hi = (860.0f64 * 573.0).ln();
    (0..=8).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect()
}
