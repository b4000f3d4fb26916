//! Aggregation of a region's classified detections into the fixed
//! 88-component car-attribute feature vector.
//!
//! Layout (frozen, see [`feature_names`]):
//!
//! | index  | feature                                    |
//! |--------|--------------------------------------------|
//! | 0      | cars per image                             |
//! | 1      | average price (2012 USD)                   |
//! | 2, 3   | average city / highway mpg                 |
//! | 4, 5   | % hybrid, % electric                       |
//! | 6-12   | % per country (alphabetical)               |
//! | 13     | % foreign (not USA)                        |
//! | 14-24  | % per body type                            |
//! | 25-29  | % per five-year model-year bucket          |
//! | 30-87  | % per make (alphabetical)                  |

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BodyType, Catalog, Country, Make, BODY_TYPES, COUNTRIES, MAKES, YEAR_BUCKETS};
use crate::detection::Detection;
use crate::error::IngestError;
use crate::io::{self, parse_finite};

pub const FEATURE_COUNT: usize = 88;

pub const CARS_PER_IMAGE: usize = 0;
pub const AVG_PRICE: usize = 1;
pub const AVG_CITY_MPG: usize = 2;
pub const AVG_HIGHWAY_MPG: usize = 3;
pub const PCT_HYBRID: usize = 4;
pub const PCT_ELECTRIC: usize = 5;
pub const COUNTRY_START: usize = 6;
pub const PCT_FOREIGN: usize = 13;
pub const BODY_START: usize = 14;
pub const YEAR_START: usize = 25;
pub const MAKE_START: usize = 30;

/// Index ranges of the four percentage groups that each sum to 100.
pub const PERCENT_GROUPS: [std::ops::Range<usize>; 4] = [
    COUNTRY_START..COUNTRY_START + 7,
    BODY_START..BODY_START + 11,
    YEAR_START..YEAR_START + 5,
    MAKE_START..MAKE_START + 58,
];

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Column names of the feature layout, in order.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "cars_per_image",
        "avg_price_usd",
        "avg_city_mpg",
        "avg_highway_mpg",
        "pct_hybrid",
        "pct_electric",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(COUNTRIES.iter().map(|c| format!("pct_country_{}", slug(c))));
    names.push("pct_foreign".into());
    names.extend(BODY_TYPES.iter().map(|b| format!("pct_body_{}", slug(b))));
    names.extend(YEAR_BUCKETS.iter().map(|(lo, hi)| format!("pct_year_{lo}_{hi}")));
    names.extend(MAKES.iter().map(|m| format!("pct_make_{}", slug(m))));
    debug_assert_eq!(names.len(), FEATURE_COUNT);
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        if v.len() != FEATURE_COUNT {
            return Err(format!("feature vector has {} components, expected {FEATURE_COUNT}", v.len()));
        }
        Ok(FeatureVector(v))
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pct_country(&self, c: Country) -> f64 {
        self.0[COUNTRY_START + c.index()]
    }

    pub fn pct_body(&self, b: BodyType) -> f64 {
        self.0[BODY_START + b.index()]
    }

    pub fn pct_make(&self, m: Make) -> f64 {
        self.0[MAKE_START + m.index()]
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Post-threshold detections of one region together with the number of
/// images that were searched.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionCensus {
    pub region_id: String,
    pub image_count: u64,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Each detection counts once, as its top-1 category.
    #[default]
    Hard,
    /// Each detection spreads its calibrated probability (1 when absent)
    /// over its class hypotheses in proportion to their probabilities.
    Probabilistic,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("region `{0}` has no detections")]
    NoDetections(String),
    #[error("region `{0}` has zero images")]
    NoImages(String),
    #[error("detection in image `{0}` has no class hypotheses")]
    NoHypotheses(String),
    #[error("category `{0}` is not in the catalog")]
    UnknownCategory(String),
}

/// Highest-probability hypothesis; ties go to the lexicographically
/// smallest category id.
pub fn resolve_category(d: &Detection) -> Result<&str, FeatureError> {
    let mut iter = d.class_hypotheses.iter();
    let first = iter
        .next()
        .ok_or_else(|| FeatureError::NoHypotheses(d.image_id.clone()))?;
    let mut best = (first.0.as_str(), first.1);
    for (id, p) in iter {
        if *p > best.1 || (*p == best.1 && id.as_str() < best.0) {
            best = (id.as_str(), *p);
        }
    }
    Ok(best.0)
}

/// Hard-count aggregation (the default mode).
pub fn aggregate_features(census: &RegionCensus, catalog: &Catalog) -> Result<FeatureVector, FeatureError> {
    aggregate_features_with(census, catalog, Weighting::Hard)
}

pub fn aggregate_features_with(
    census: &RegionCensus,
    catalog: &Catalog,
    mode: Weighting,
) -> Result<FeatureVector, FeatureError> {
    if census.image_count == 0 {
        return Err(FeatureError::NoImages(census.region_id.clone()));
    }
    if census.detections.is_empty() {
        return Err(FeatureError::NoDetections(census.region_id.clone()));
    }
    let lookup = |id: &str| catalog.get(id).ok_or_else(|| FeatureError::UnknownCategory(id.to_string()));

    let mut units = Vec::new();
    for d in &census.detections {
        match mode {
            Weighting::Hard => units.push((lookup(resolve_category(d)?)?, 1.0)),
            Weighting::Probabilistic => {
                if d.class_hypotheses.is_empty() {
                    return Err(FeatureError::NoHypotheses(d.image_id.clone()));
                }
                let mass: f64 = d.class_hypotheses.iter().map(|h| h.1).sum();
                let conf = d.calibrated_prob.unwrap_or(1.0);
                for (id, p) in &d.class_hypotheses {
                    let share = if mass > 0.0 { p / mass } else { 1.0 / d.class_hypotheses.len() as f64 };
                    units.push((lookup(id)?, conf * share));
                }
            }
        }
    }

    let total: f64 = units.iter().map(|u| u.1).sum();
    if total <= 0.0 {
        return Err(FeatureError::NoDetections(census.region_id.clone()));
    }
    let mut f = vec![0.0; FEATURE_COUNT];
    f[CARS_PER_IMAGE] = total / census.image_count as f64;

    let (mut price, mut city, mut city_w, mut hwy, mut hwy_w) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(c, w) in &units {
        price += w * c.price_usd;
        if let Some(m) = c.city_mpg {
            city += w * m;
            city_w += w;
        }
        if let Some(m) = c.highway_mpg {
            hwy += w * m;
            hwy_w += w;
        }
        let pct = 100.0 * w / total;
        if c.is_hybrid {
            f[PCT_HYBRID] += pct;
        }
        if c.is_electric {
            f[PCT_ELECTRIC] += pct;
        }
        f[COUNTRY_START + c.country.index()] += pct;
        f[BODY_START + c.body_type.index()] += pct;
        f[YEAR_START + c.year_bucket()] += pct;
        f[MAKE_START + c.make.index()] += pct;
    }
    f[AVG_PRICE] = price / total;
    // regions where no car reports mpg (all electric) get 0
    f[AVG_CITY_MPG] = if city_w > 0.0 { city / city_w } else { 0.0 };
    f[AVG_HIGHWAY_MPG] = if hwy_w > 0.0 { hwy / hwy_w } else { 0.0 };
    f[PCT_FOREIGN] = 100.0 - f[COUNTRY_START + Country::USA.index()];
    Ok(FeatureVector(f))
}

/// Serializes `features.csv` rows.
pub fn features_to_csv(rows: &[(String, FeatureVector)]) -> Vec<u8> {
    let mut header = vec!["region_id".to_string()];
    header.extend(feature_names());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    io::csv_bytes(
        &header_refs,
        rows.iter().map(|(id, f)| {
            std::iter::once(id.clone())
                .chain(f.as_slice().iter().map(|v| v.to_string()))
                .collect::<Vec<_>>()
        }),
    )
}

pub fn features_header() -> String {
    std::iter::once("region_id".to_string())
        .chain(feature_names())
        .collect::<Vec<_>>()
        .join(",")
}

/// Reads `features.csv`.
pub fn read_features(path: &Path) -> Result<Vec<(String, FeatureVector)>, IngestError> {
    let header = features_header();
    let names = feature_names();
    let mut reader = io::open_csv(path, &header)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let id = r[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id,
            });
        }
        let vals = (0..FEATURE_COUNT)
            .map(|i| parse_finite(line, &names[i], &r[i + 1]))
            .collect::<Result<Vec<f64>, _>>()?;
        out.push((id, FeatureVector(vals)));
    }
    Ok(out)
}


pub const IMAGES_HEADER: &str = "region_id,image_count";

/// Reads `images.csv`, the number of images searched per region.
pub fn read_image_counts(path: &Path) -> Result<std::collections::BTreeMap<String, u64>, IngestError> {
    let mut reader = io::open_csv(path, IMAGES_HEADER)?;
    let mut out = std::collections::BTreeMap::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let id = r[0].trim().to_string();
        let count: u64 = io::parse_num(line, "image_count", &r[1])?;
        if out.insert(id.clone(), count).is_some() {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id,
            });
        }
    }
    Ok(out)
}
