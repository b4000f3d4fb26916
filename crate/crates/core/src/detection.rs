//! Detection records, score thresholds, IoU matching and average precision.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::IngestError;
use crate::protocol::TOP_K;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BoundingBox { x, y, w, h }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Intersection over union (Jaccard similarity) of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // max/min are exactly symmetric, so the result is too
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(default)]
    pub region_id: String,
    pub bbox: BoundingBox,
    #[serde(rename = "score")]
    pub raw_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_prob: Option<f64>,
    /// Top class hypotheses `(category_id, probability)`, most likely first.
    #[serde(rename = "classes", default)]
    pub class_hypotheses: Vec<(String, f64)>,
}

impl Detection {
    pub fn new(image_id: &str, region_id: &str, bbox: BoundingBox, raw_score: f64) -> Self {
        Detection {
            image_id: image_id.to_string(),
            region_id: region_id.to_string(),
            bbox,
            raw_score,
            adjusted_score: None,
            calibrated_prob: None,
            class_hypotheses: Vec::new(),
        }
    }

    pub fn with_classes(mut self, classes: &[(&str, f64)]) -> Self {
        self.class_hypotheses = classes.iter().map(|(c, p)| (c.to_string(), *p)).collect();
        self
    }

    pub fn score(&self, kind: ScoreKind) -> Option<f64> {
        match kind {
            ScoreKind::Raw => Some(self.raw_score),
            ScoreKind::Adjusted => self.adjusted_score,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.bbox.is_valid() {
            return Err(format!("invalid bbox {:?}", <[f64; 4]>::from(self.bbox)));
        }
        if !self.raw_score.is_finite() {
            return Err("non-finite score".into());
        }
        if self.class_hypotheses.len() > TOP_K {
            return Err(format!(
                "{} class hypotheses, at most {TOP_K} allowed",
                self.class_hypotheses.len()
            ));
        }
        let mut total = 0.0;
        for (i, (id, p)) in self.class_hypotheses.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(format!("probability {p} of `{id}` outside [0,1]"));
            }
            if i > 0 && *p > self.class_hypotheses[i - 1].1 {
                return Err("class hypotheses not sorted by probability".into());
            }
            total += p;
        }
        if total > 1.0 + 1e-6 {
            return Err(format!("class probabilities sum to {total}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub image_id: String,
    pub bbox: BoundingBox,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    mut check: impl FnMut(&T) -> Result<(), String>,
) -> Result<Vec<T>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line.map_err(|e| IngestError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&text).map_err(|source| IngestError::Json {
            line: line_no,
            source,
        })?;
        check(&item).map_err(|message| IngestError::Row {
            line: line_no,
            message,
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Reads `detections.jsonl`, validating every record.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>, IngestError> {
    read_jsonl(path, Detection::validate)
}

/// Reads `truths.jsonl`.
pub fn read_truths(path: &Path) -> Result<Vec<TruthBox>, IngestError> {
    read_jsonl(path, |t: &TruthBox| {
        if t.bbox.is_valid() {
            Ok(())
        } else {
            Err("invalid bbox".into())
        }
    })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable record");
        out.push(b'\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    Raw,
    Adjusted,
}

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("detection in image `{0}` has no prior-adjusted score")]
    MissingAdjustedScore(String),
    #[error("average precision is undefined without ground truth boxes")]
    NoTruth,
}

/// Keeps detections whose chosen score is `>= tau`, preserving order.
pub fn threshold(
    dets: &[Detection],
    tau: f64,
    kind: ScoreKind,
) -> Result<Vec<Detection>, DetectionError> {
    let mut kept = Vec::new();
    for d in dets {
        let s = d
            .score(kind)
            .ok_or_else(|| DetectionError::MissingAdjustedScore(d.image_id.clone()))?;
        if s >= tau {
            kept.push(d.clone());
        }
    }
    Ok(kept)
}

/// Greedy matching of score-ordered detections to one image's truth boxes.
///
/// Each detection, in order, claims the unmatched truth with the highest
/// IoU (earlier truth index on ties) if that IoU is at least `iou_min`.
pub fn match_greedy(dets: &[BoundingBox], truths: &[BoundingBox], iou_min: f64) -> Vec<bool> {
    let mut taken = vec![false; truths.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, t) in truths.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(d, t);
                if v >= iou_min && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Scored correctness labels for a detection set, plus the truth count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledScores {
    /// `(score, correct)` sorted by score descending.
    pub items: Vec<(f64, bool)>,
    pub n_truth: usize,
}

impl LabeledScores {
    pub fn labels(&self) -> Vec<bool> {
        self.items.iter().map(|&(_, l)| l).collect()
    }
}

/// Matches detections to truths image by image and pools the labels.
///
/// Images are independent, so they are processed in parallel; the output
/// does not depend on scheduling.
pub fn label_detections(
    dets: &[Detection],
    truths: &[TruthBox],
    iou_min: f64,
    kind: ScoreKind,
) -> Result<LabeledScores, DetectionError> {
    let mut per_image: BTreeMap<&str, (Vec<(f64, BoundingBox)>, Vec<BoundingBox>)> = BTreeMap::new();
    for d in dets {
        let s = d
            .score(kind)
            .ok_or_else(|| DetectionError::MissingAdjustedScore(d.image_id.clone()))?;
        per_image.entry(&d.image_id).or_default().0.push((s, d.bbox));
    }
    for t in truths {
        per_image.entry(&t.image_id).or_default().1.push(t.bbox);
    }
    let groups: Vec<_> = per_image.into_values().collect();
    let matched: Vec<Vec<(f64, bool)>> = groups
        .into_par_iter()
        .map(|(mut ds, ts)| {
            ds.sort_by(|a, b| b.0.total_cmp(&a.0));
            let boxes: Vec<BoundingBox> = ds.iter().map(|(_, b)| *b).collect();
            let labels = match_greedy(&boxes, &ts, iou_min);
            ds.iter().map(|(s, _)| *s).zip(labels).collect()
        })
        .collect();
    let mut items: Vec<(f64, bool)> = matched.into_iter().flatten().collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(LabeledScores {
        items,
        n_truth: truths.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall after each rank of a score-ordered label list.
pub fn pr_curve(labels: &[bool], n_truth: usize) -> Result<Vec<PrPoint>, DetectionError> {
    if n_truth == 0 {
        return Err(DetectionError::NoTruth);
    }
    let mut tp = 0usize;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            tp += l as usize;
            PrPoint {
                recall: tp as f64 / n_truth as f64,
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect())
}

/// Uninterpolated average precision: the mean over truths of the precision
/// at the rank where each is recovered (unrecovered truths contribute 0).
pub fn average_precision(labels: &[bool], n_truth: usize) -> Result<f64, DetectionError> {
    let curve = pr_curve(labels, n_truth)?;
    let total: f64 = curve
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(p, _)| p.precision)
        .sum();
    Ok(total / n_truth as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 5.0, 5.0)), 0.0);
        assert_eq!(iou(&a, &b(10.0, 0.0, 5.0, 5.0)), 0.0);
        assert!((iou(&a, &b(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn det(score: f64) -> Detection {
        Detection::new("i", "r", b(0.0, 0.0, 1.0, 1.0), score)
    }

    #[test]
    fn threshold_is_inclusive_and_stable() {
        let dets = vec![det(-3.0), det(-2.3), det(-1.0)];
        let kept = threshold(&dets, -2.3, ScoreKind::Raw).unwrap();
        assert_eq!(kept.iter().map(|d| d.raw_score).collect::<Vec<_>>(), vec![-2.3, -1.0]);
        assert_eq!(threshold(&dets, f64::NEG_INFINITY, ScoreKind::Raw).unwrap(), dets);
        assert!(matches!(
            threshold(&dets, 0.0, ScoreKind::Adjusted),
            Err(DetectionError::MissingAdjustedScore(_))
        ));
    }

    #[test]
    fn greedy_matching_examples() {
        let t = b(0.0, 0.0, 10.0, 10.0);
        // IoU 0.6: 10x10 vs 10x6 inside -> 60/100
        assert_eq!(match_greedy(&[b(0.0, 0.0, 10.0, 6.0)], &[t], 0.5), vec![true]);
        assert_eq!(
            match_greedy(&[b(0.0, 0.0, 10.0, 9.0), b(0.0, 0.0, 10.0, 10.0)], &[t], 0.5),
            vec![true, false]
        );
        assert_eq!(match_greedy(&[b(0.0, 0.0, 10.0, 4.0)], &[t], 0.5), vec![false]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true], 1).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, true], 1).unwrap(), 0.5);
        assert_eq!(average_precision(&[], 2).unwrap(), 0.0);
        assert_eq!(average_precision(&[true], 0), Err(DetectionError::NoTruth));
    }

    #[test]
    fn jsonl_wire_format() {
        let line = r#"{"image_id": "im1", "region_id": "z1", "bbox": [1, 2, 60, 55], "score": -1.37, "classes": [["c12", 0.41], ["c7", 0.22]]}"#;
        let d: Detection = serde_json::from_str(line).unwrap();
        assert_eq!(d.bbox, b(1.0, 2.0, 60.0, 55.0));
        assert_eq!(d.raw_score, -1.37);
        assert_eq!(d.class_hypotheses[0], ("c12".to_string(), 0.41));
        assert!(d.validate().is_ok());
        let out = String::from_utf8(to_jsonl(&[d.clone()])).unwrap();
        assert_eq!(
            out,
            "{\"image_id\":\"im1\",\"region_id\":\"z1\",\"bbox\":[1.0,2.0,60.0,55.0],\"score\":-1.37,\"classes\":[[\"c12\",0.41],[\"c7\",0.22]]}\n"
        );
        let back: Detection = serde_json::from_str(out.trim()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn validate_rejects_bad_hypotheses() {
        let base = det(0.0);
        assert!(base.clone().with_classes(&[("a", 0.2), ("b", 0.3)]).validate().is_err());
        assert!(base.clone().with_classes(&[("a", 0.7), ("b", 0.4)]).validate().is_err());
        assert!(base.clone().with_classes(&[("a", 1.2)]).validate().is_err());
        let many: Vec<(String, f64)> = (0..21).map(|i| (format!("c{i}"), 0.01)).collect();
        let mut d = base.clone();
        d.class_hypotheses = many;
        assert!(d.validate().is_err());
        let mut d = base;
        d.bbox.w = 0.0;
        assert!(d.validate().is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-100.0f64..100.0, -100.0f64..100.0, 0.5f64..80.0, 0.5f64..80.0)
            .prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn greedy_positive_count_bounded(ds in proptest::collection::vec(arb_box(), 0..8),
                                         ts in proptest::collection::vec(arb_box(), 0..8)) {
            let labels = match_greedy(&ds, &ts, 0.5);
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assert!(pos <= ds.len().min(ts.len()));
        }

        #[test]
        fn ap_depends_only_on_order(labels in proptest::collection::vec(any::<bool>(), 1..12),
                                    scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            // scores strictly decreasing; a positive monotone transform keeps the order
            let scores: Vec<f64> = (0..labels.len()).map(|i| -(i as f64)).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (s * scale + shift).exp()).collect();
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.sort_by(|&a, &c| transformed[c].total_cmp(&transformed[a]));
            let reordered: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let n = labels.iter().filter(|&&l| l).count().max(1);
            prop_assert_eq!(average_precision(&labels, n).unwrap(), average_precision(&reordered, n).unwrap());
        }
    }

    #[test]
    fn labeling_is_per_image() {
        let dets = vec![
            Detection::new("a", "", b(0.0, 0.0, 10.0, 10.0), 1.0),
            Detection::new("b", "", b(0.0, 0.0, 10.0, 10.0), 2.0),
            Detection::new("a", "", b(0.0, 0.0, 10.0, 10.0), 0.5),
        ];
        let truths = vec![TruthBox {
            image_id: "a".into(),
            bbox: b(0.0, 0.0, 10.0, 10.0),
        }];
        let ls = label_detections(&dets, &truths, 0.5, ScoreKind::Raw).unwrap();
        assert_eq!(ls.items, vec![(2.0, false), (1.0, true), (0.5, false)]);
        assert_eq!(ls.n_truth, 1);
    }
}
