//! Synthetic datasets with known generating models, written in the same
//! file formats the pipeline ingests.
//!
//! Region targets are computed from each region's realized feature vector,
//! obtained by thresholding and aggregating the generated detections with
//! the library's own featurization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{parse_catalog, BodyType, Catalog, Country, Make, VehicleCategory, MAKES};
use crate::detection::{threshold, to_jsonl, BoundingBox, Detection, ScoreKind, TruthBox};
use crate::error::IngestError;
use crate::estimator::fit_standardizer;
use crate::features::{aggregate_features, features_to_csv, FeatureVector, RegionCensus, FEATURE_COUNT, IMAGES_HEADER};
use crate::io::{csv_bytes, write_atomic};
use crate::protocol::{DETECTION_THRESHOLD, MIN_CARS, MIN_POPULATION};
use crate::regions::{county_side, Side, ACS_HEADER, REGIONS_HEADER, VOTES_HEADER};

pub const RACE_CLASSES: usize = 4;
pub const EDUCATION_CLASSES: usize = 5;

const IMAGE_W: f64 = 860.0;
const IMAGE_H: f64 = 573.0;
const INCOME_MEAN: f64 = 55_000.0;
const INCOME_STD: f64 = 15_000.0;
const VOTE_MEAN: f64 = 0.52;
const VOTE_STD: f64 = 0.08;
const ACTIVE_FEATURES: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_regions: usize,
    #[serde(default = "default_counties")]
    pub counties: Vec<String>,
    /// Income weights on standardized features (dollars per unit).
    #[serde(default)]
    pub true_ridge_weights: Option<Vec<f64>>,
    /// Race logit weights, `4 x 88`, on standardized features.
    #[serde(default)]
    pub true_softmax_weights: Option<Vec<Vec<f64>>>,
    /// Absolute income noise in dollars. When absent, every target gets
    /// noise of `noise_fraction` times its noiseless spread.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default = "default_noise_fraction")]
    pub noise_fraction: f64,
    /// Inclusive range of true cars per region.
    #[serde(default = "default_cars")]
    pub cars_per_region: [usize; 2],
    /// Existing catalog.csv to use instead of a generated one.
    #[serde(default)]
    pub catalog_ref: Option<PathBuf>,
    /// Fraction of regions given a population below the eligibility floor.
    #[serde(default = "default_small_fraction")]
    pub small_region_fraction: f64,
    #[serde(default = "default_val_images")]
    pub validation_images: usize,
}

fn default_counties() -> Vec<String> {
    [
        "Adams", "Alameda", "Allen", "Baker", "Benton", "Boone", "Butler", "Calhoun", "Carroll", "Clark", "Clay",
        "Cook", "Custer", "Dakota", "Essex", "Fulton", "Grant", "Harris", "Jackson", "King", "Lake", "Marion",
        "Orange", "Polk", "Washington", "York",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_noise_fraction() -> f64 {
    0.05
}

fn default_cars() -> [usize; 2] {
    [60, 140]
}

fn default_small_fraction() -> f64 {
    0.05
}

fn default_val_images() -> usize {
    200
}

impl SynthSpec {
    pub fn new(seed: u64, n_regions: usize) -> Self {
        SynthSpec {
            seed,
            n_regions,
            counties: default_counties(),
            true_ridge_weights: None,
            true_softmax_weights: None,
            noise_sigma: None,
            noise_fraction: default_noise_fraction(),
            cars_per_region: default_cars(),
            catalog_ref: None,
            small_region_fraction: default_small_fraction(),
            validation_images: default_val_images(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Io(path.to_path_buf(), e))?;
        let mut spec: SynthSpec = serde_json::from_str(&text)?;
        // catalog paths are relative to the spec file
        if let (Some(c), Some(dir)) = (&spec.catalog_ref, path.parent()) {
            if c.is_relative() {
                spec.catalog_ref = Some(dir.join(c));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_regions < 10 {
            return bad(format!("n_regions must be >= 10, got {}", self.n_regions));
        }
        let sides: Vec<Option<Side>> = self.counties.iter().map(|c| county_side(c)).collect();
        if let Some(i) = sides.iter().position(Option::is_none) {
            return bad(format!("county `{}` does not start with a letter", self.counties[i]));
        }
        if !sides.contains(&Some(Side::Train)) || !sides.contains(&Some(Side::Test)) {
            return bad("counties must include both A-C and D-Z initials".into());
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("noise_sigma must be >= 0, got {s}"));
            }
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return bad(format!("noise_fraction must be >= 0, got {}", self.noise_fraction));
        }
        let [lo, hi] = self.cars_per_region;
        if lo == 0 || lo > hi {
            return bad(format!("cars_per_region [{lo}, {hi}] must be a non-empty positive range"));
        }
        if !(0.0..1.0).contains(&self.small_region_fraction) {
            return bad("small_region_fraction must be in [0, 1)".into());
        }
        if let Some(w) = &self.true_ridge_weights {
            if w.len() != FEATURE_COUNT {
                return bad(format!("true_ridge_weights has {} entries, expected {FEATURE_COUNT}", w.len()));
            }
        }
        if let Some(w) = &self.true_softmax_weights {
            if w.len() != RACE_CLASSES || w.iter().any(|r| r.len() != FEATURE_COUNT) {
                return bad(format!("true_softmax_weights must be {RACE_CLASSES} x {FEATURE_COUNT}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("infeasible dataset: {0}")]
    Infeasible(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("spec json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Generating parameters, written as `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub income_weights: Vec<f64>,
    pub vote_weights: Vec<f64>,
    pub race_weights: Vec<Vec<f64>>,
    pub race_intercepts: Vec<f64>,
    pub education_weights: Vec<Vec<f64>>,
    pub education_intercepts: Vec<f64>,
    pub eligible_regions: usize,
    pub train_regions: usize,
}

/// In-memory result of a generation run; `files` maps file names to bytes.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub truth: SynthTruth,
    pub files: BTreeMap<String, Vec<u8>>,
}

fn normal(rng: &mut Pcg32) -> f64 {
    StandardNormal.sample(rng)
}

fn make_country(make: &str) -> &'static str {
    match make {
        "Aston Martin" | "Bentley" | "Jaguar" | "Land Rover" | "Lotus" | "McLaren" | "Mini" | "Rolls-Royce" => "England",
        "Audi" | "BMW" | "Maybach" | "Mercedes-Benz" | "Porsche" | "Smart" | "Volkswagen" => "Germany",
        "Ferrari" | "Fiat" | "Lamborghini" | "Maserati" => "Italy",
        "Acura" | "Honda" | "Infiniti" | "Isuzu" | "Lexus" | "Mazda" | "Mitsubishi" | "Nissan" | "Scion" | "Subaru"
        | "Suzuki" | "Toyota" => "Japan",
        "Daewoo" | "Hyundai" | "Kia" => "South Korea",
        "Saab" | "Volvo" => "Sweden",
        _ => "USA",
    }
}

/// Relative frequency of each body type among generated models.
const BODY_MIX: [f64; 11] = [3.0, 6.0, 8.0, 6.0, 30.0, 15.0, 5.0, 3.0, 4.0, 4.0, 5.0];

fn generate_catalog(rng: &mut Pcg32) -> Vec<VehicleCategory> {
    let body_pick = WeightedIndex::new(BODY_MIX).expect("positive mix");
    let mut out = Vec::new();
    for (mi, name) in MAKES.iter().enumerate() {
        let make = Make::from_index(mi).expect("make index");
        let country = Country::parse(make_country(name)).expect("country");
        let electric = matches!(*name, "Tesla" | "Fisker");
        let luxury = 1.0 + rng.random_range(0.0..1.5);
        let models = rng.random_range(2..=5);
        for m in 0..models {
            let body = BodyType::from_index(body_pick.sample(rng)).expect("body index");
            let year_min = rng.random_range(1990..=2012);
            let year_max = (year_min + rng.random_range(0..=4)).min(2014);
            let price = (9_000.0 * luxury * (1.0 + 0.35 * normal(rng)).max(0.3)).round();
            let hybrid = !electric && rng.random_bool(0.06);
            let (city, hwy) = if electric {
                (None, None)
            } else {
                let base = if body.is_pickup() { 15.0 } else { 22.0 } + if hybrid { 18.0 } else { 0.0 };
                let c = (base + 3.0 * normal(rng)).clamp(9.0, 55.0).round();
                (Some(c), Some((c * 1.35).round()))
            };
            out.push(VehicleCategory {
                category_id: format!("c{:03}{}", mi, m),
                make,
                model: format!("{} Model {}", name, m + 1),
                body_type: body,
                year_min,
                year_max,
                country,
                city_mpg: city,
                highway_mpg: hwy,
                price_usd: price,
                is_hybrid: hybrid,
                is_electric: electric,
            });
        }
    }
    out
}

fn random_box(rng: &mut Pcg32) -> BoundingBox {
    let w = rng.random_range(50.0..300.0f64).round();
    let h = (w * rng.random_range(0.5..0.9)).round().max(50.0);
    let x = rng.random_range(0.0..IMAGE_W - w).round();
    let y = rng.random_range(0.0..IMAGE_H - h).round();
    BoundingBox::new(x, y, w, h)
}

/// Five hypotheses with `top` strictly most likely.
fn hypotheses(rng: &mut Pcg32, top: usize, n_cat: usize, ids: &[String]) -> Vec<(String, f64)> {
    let p1: f64 = rng.random_range(0.35..0.8);
    let mut rest = 1.0 - p1;
    let mut out = vec![(ids[top].clone(), p1)];
    let mut used = vec![top];
    while out.len() < 5 && used.len() < n_cat {
        let c = rng.random_range(0..n_cat);
        if used.contains(&c) {
            continue;
        }
        used.push(c);
        let p = (rest * rng.random_range(0.2..0.6f64)).min(p1 * 0.9);
        rest -= p;
        out.push((ids[c].clone(), p));
    }
    out[1..].sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

trait Tag {
    fn tag(self, hyps: Vec<(String, f64)>) -> Self;
}

impl Tag for Detection {
    fn tag(mut self, hyps: Vec<(String, f64)>) -> Self {
        self.class_hypotheses = hyps;
        self
    }
}

fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.iter_mut().map(|v| {
        *v = (*v - max).exp();
        *v
    }).sum();
    z.iter_mut().for_each(|v| *v /= total);
}

/// Integer counts summing to `total` whose proportions track `shares`
/// (largest-remainder rounding).
fn apportion(shares: &[f64], total: u64) -> Vec<u64> {
    let raw: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<u64> = raw.iter().map(|v| v.floor() as u64).collect();
    let mut left = total - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn sparse_weights(rng: &mut Pcg32, scale: f64) -> Vec<f64> {
    let mut w = vec![0.0; FEATURE_COUNT];
    for _ in 0..ACTIVE_FEATURES {
        w[rng.random_range(0..FEATURE_COUNT)] += normal(rng) * scale / (ACTIVE_FEATURES as f64).sqrt();
    }
    w
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

struct RegionDraft {
    id: String,
    kind: &'static str,
    city: String,
    county: String,
    population: u64,
    images: u64,
    detections: Vec<Detection>,
}

/// Generates a dataset in memory. Deterministic for a fixed spec.
pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut rng = Pcg32::seed_from_u64(spec.seed);
    let categories = match &spec.catalog_ref {
        Some(p) => parse_catalog(p)?,
        None => generate_catalog(&mut rng),
    };
    let catalog = Catalog::new(categories)?;
    let ids: Vec<String> = catalog.categories().iter().map(|c| c.category_id.clone()).collect();
    let n_cat = ids.len();
    if n_cat < 5 {
        return Err(SynthError::Spec("catalog needs at least 5 categories".into()));
    }

    // category popularity, tilted per region by a 3-d latent factor
    let base: Vec<f64> = (0..n_cat).map(|_| 0.8 * normal(&mut rng)).collect();
    let loadings: Vec<[f64; 3]> = (0..n_cat)
        .map(|_| [normal(&mut rng), normal(&mut rng), normal(&mut rng)])
        .collect();

    let mut drafts = Vec::with_capacity(spec.n_regions);
    for r in 0..spec.n_regions {
        let id = format!("r{r:04}");
        let county = spec.counties[r % spec.counties.len()].clone();
        let kind = match r % 5 {
            0 | 1 => "city",
            2 | 3 => "zip",
            _ => "precinct",
        };
        let population = if rng.random_bool(spec.small_region_fraction) {
            rng.random_range(50..MIN_POPULATION)
        } else {
            rng.random_range(800..20_000)
        };
        let z = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
        let weights: Vec<f64> = (0..n_cat)
            .map(|c| (base[c] + 0.9 * dot(&loadings[c], &z)).exp())
            .collect();
        let pick = WeightedIndex::new(&weights).expect("positive weights");
        let cars = rng.random_range(spec.cars_per_region[0]..=spec.cars_per_region[1]);
        let images = (cars as u64).div_ceil(3) + rng.random_range(0..5);
        let mut detections = Vec::new();
        for _ in 0..cars {
            let cat = pick.sample(&mut rng);
            let img = rng.random_range(0..images);
            let score = -0.5 + 0.6 * normal(&mut rng);
            detections.push(
                Detection::new(&format!("{id}-i{img:04}"), &id, random_box(&mut rng), score)
                    .tag(hypotheses(&mut rng, cat, n_cat, &ids)),
            );
        }
        // background firings, mostly below the detection threshold
        for _ in 0..cars / 4 {
            let cat = rng.random_range(0..n_cat);
            let img = rng.random_range(0..images);
            let score = -3.0 + 0.5 * normal(&mut rng);
            detections.push(
                Detection::new(&format!("{id}-i{img:04}"), &id, random_box(&mut rng), score)
                    .tag(hypotheses(&mut rng, cat, n_cat, &ids)),
            );
        }
        detections.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        drafts.push(RegionDraft {
            id,
            kind,
            city: format!("City{}", r / 3),
            county,
            population,
            images,
            detections,
        });
    }

    // realized features of eligible regions
    let mut eligible: Vec<(usize, FeatureVector)> = Vec::new();
    for (i, d) in drafts.iter().enumerate() {
        let kept = threshold(&d.detections, DETECTION_THRESHOLD, ScoreKind::Raw).expect("raw scores present");
        if d.population < MIN_POPULATION || kept.len() < MIN_CARS {
            continue;
        }
        let census = RegionCensus {
            region_id: d.id.clone(),
            image_count: d.images,
            detections: kept,
        };
        let f = aggregate_features(&census, &catalog).map_err(|e| SynthError::Infeasible(e.to_string()))?;
        eligible.push((i, f));
    }
    let train = eligible
        .iter()
        .filter(|(i, _)| county_side(&drafts[*i].county) == Some(Side::Train))
        .count();
    if eligible.len() < 2 || train == 0 {
        return Err(SynthError::Infeasible(format!(
            "{} eligible regions, {train} on the training side",
            eligible.len()
        )));
    }
    let x = DMatrix::from_fn(eligible.len(), FEATURE_COUNT, |r, c| eligible[r].1[c]);
    let stdz = fit_standardizer(&x).map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let z: Vec<Vec<f64>> = eligible
        .iter()
        .map(|(_, f)| stdz.apply_row(f.as_slice()).expect("layout"))
        .collect();

    let income_w = spec
        .true_ridge_weights
        .clone()
        .unwrap_or_else(|| sparse_weights(&mut rng, INCOME_STD));
    let mut vote_w = sparse_weights(&mut rng, VOTE_STD);
    // denser sedan fleets lean Democrat, pickups Republican
    vote_w[crate::features::BODY_START + BodyType::SEDAN.index()] += 0.03;
    for b in 6..9 {
        vote_w[crate::features::BODY_START + b] -= 0.02;
    }
    let race_w = spec.true_softmax_weights.clone().unwrap_or_else(|| {
        let mut w: Vec<Vec<f64>> = (0..RACE_CLASSES).map(|_| sparse_weights(&mut rng, 1.0)).collect();
        w[0] = vec![0.0; FEATURE_COUNT];
        w
    });
    let race_b = vec![1.2, 0.0, -0.5, -0.3];
    let mut edu_w: Vec<Vec<f64>> = (0..EDUCATION_CLASSES).map(|_| sparse_weights(&mut rng, 0.8)).collect();
    edu_w[0] = vec![0.0; FEATURE_COUNT];
    let edu_b = vec![-0.4, 0.5, 0.4, 0.2, -0.3];

    let income_clean: Vec<f64> = z.iter().map(|zi| INCOME_MEAN + dot(&income_w, zi)).collect();
    let vote_clean: Vec<f64> = z.iter().map(|zi| VOTE_MEAN + dot(&vote_w, zi)).collect();
    let logits = |w: &[Vec<f64>], b: &[f64]| -> Vec<Vec<f64>> {
        z.iter().map(|zi| w.iter().zip(b).map(|(wk, bk)| bk + dot(wk, zi)).collect()).collect()
    };
    let race_logits = logits(&race_w, &race_b);
    let edu_logits = logits(&edu_w, &edu_b);
    let frac = spec.noise_fraction;
    let income_sigma = spec.noise_sigma.unwrap_or(frac * std_dev(&income_clean));
    let vote_sigma = frac * std_dev(&vote_clean);
    let class_sigma = |l: &[Vec<f64>], k: usize| frac * std_dev(&l.iter().map(|r| r[k]).collect::<Vec<_>>());
    let race_sigma: Vec<f64> = (0..RACE_CLASSES).map(|k| class_sigma(&race_logits, k)).collect();
    let edu_sigma: Vec<f64> = (0..EDUCATION_CLASSES).map(|k| class_sigma(&edu_logits, k)).collect();

    let mut acs_rows = Vec::new();
    let mut vote_rows = Vec::new();
    let mut feature_rows = Vec::new();
    for (row, (ri, f)) in eligible.iter().enumerate() {
        let d = &drafts[*ri];
        let income = (income_clean[row] + income_sigma * normal(&mut rng)).max(5_000.0).round();
        let share = (vote_clean[row] + vote_sigma * normal(&mut rng)).clamp(0.02, 0.98);
        let mut race: Vec<f64> = race_logits[row]
            .iter()
            .zip(&race_sigma)
            .map(|(l, s)| l + s * normal(&mut rng))
            .collect();
        softmax(&mut race);
        let mut edu: Vec<f64> = edu_logits[row]
            .iter()
            .zip(&edu_sigma)
            .map(|(l, s)| l + s * normal(&mut rng))
            .collect();
        softmax(&mut edu);
        let race_counts = apportion(&race, d.population);
        let edu_counts = apportion(&edu, d.population * 7 / 10);
        let mut acs = vec![d.id.clone(), format!("{income}")];
        acs.extend(race_counts[..3].iter().map(u64::to_string));
        acs.extend(edu_counts.iter().map(u64::to_string));
        acs_rows.push(acs);
        let turnout = d.population * 45 / 100;
        let obama = (share * turnout as f64).round() as u64;
        vote_rows.push(vec![d.id.clone(), obama.to_string(), (turnout - obama).to_string()]);
        feature_rows.push((d.id.clone(), f.clone()));
    }
    // ineligible regions still carry (noise-only) ground truth
    for (ri, d) in drafts.iter().enumerate() {
        if eligible.iter().any(|(i, _)| *i == ri) {
            continue;
        }
        let income = (INCOME_MEAN + INCOME_STD * normal(&mut rng)).max(5_000.0).round();
        let race_counts = apportion(&[0.6, 0.15, 0.1, 0.15], d.population);
        let edu_counts = apportion(&[0.1, 0.3, 0.3, 0.2, 0.1], d.population * 7 / 10);
        let mut acs = vec![d.id.clone(), format!("{income}")];
        acs.extend(race_counts[..3].iter().map(u64::to_string));
        acs.extend(edu_counts.iter().map(u64::to_string));
        acs_rows.push(acs);
        let turnout = d.population * 45 / 100;
        let obama = turnout / 2;
        vote_rows.push(vec![d.id.clone(), obama.to_string(), (turnout - obama).to_string()]);
    }
    acs_rows.sort();
    vote_rows.sort();

    let region_rows: Vec<Vec<String>> = drafts
        .iter()
        .map(|d| {
            vec![
                d.id.clone(),
                d.kind.to_string(),
                d.city.clone(),
                "ST".to_string(),
                d.county.clone(),
                d.population.to_string(),
            ]
        })
        .collect();
    let image_rows: Vec<Vec<String>> = drafts
        .iter()
        .map(|d| vec![d.id.clone(), d.images.to_string()])
        .collect();
    let all_dets: Vec<Detection> = drafts.iter().flat_map(|d| d.detections.iter().cloned()).collect();
    let (val_dets, val_truths) = validation_set(&mut rng, spec.validation_images, &ids);

    let truth = SynthTruth {
        seed: spec.seed,
        income_weights: income_w,
        vote_weights: vote_w,
        race_weights: race_w,
        race_intercepts: race_b,
        education_weights: edu_w,
        education_intercepts: edu_b,
        eligible_regions: eligible.len(),
        train_regions: train,
    };
    let mut files = BTreeMap::new();
    files.insert("catalog.csv".to_string(), catalog.to_csv());
    files.insert("regions.csv".to_string(), csv_bytes(&REGIONS_HEADER.split(',').collect::<Vec<_>>(), &region_rows));
    files.insert("acs.csv".to_string(), csv_bytes(&ACS_HEADER.split(',').collect::<Vec<_>>(), &acs_rows));
    files.insert("votes.csv".to_string(), csv_bytes(&VOTES_HEADER.split(',').collect::<Vec<_>>(), &vote_rows));
    files.insert("images.csv".to_string(), csv_bytes(&IMAGES_HEADER.split(',').collect::<Vec<_>>(), &image_rows));
    files.insert("detections.jsonl".to_string(), to_jsonl(&all_dets));
    files.insert("val_detections.jsonl".to_string(), to_jsonl(&val_dets));
    files.insert("val_truths.jsonl".to_string(), to_jsonl(&val_truths));
    files.insert("features_expected.csv".to_string(), features_to_csv(&feature_rows));
    let mut t = serde_json::to_string_pretty(&truth)?;
    t.push('\n');
    files.insert("truth.json".to_string(), t.into_bytes());
    Ok(SynthDataset { truth, files })
}

/// Labelled detector output for calibration: each image holds 0-4 cars,
/// detected with jittered boxes, plus background firings.
fn validation_set(rng: &mut Pcg32, images: usize, ids: &[String]) -> (Vec<Detection>, Vec<TruthBox>) {
    let mut dets = Vec::new();
    let mut truths = Vec::new();
    for i in 0..images {
        let image_id = format!("val{i:04}");
        for _ in 0..rng.random_range(0..=4) {
            let b = random_box(rng);
            truths.push(TruthBox { image_id: image_id.clone(), bbox: b });
            if rng.random_bool(0.9) {
                let jitter = |v: f64, r: &mut Pcg32| v + (r.random_range(-0.05..0.05) * b.w).round();
                let jb = BoundingBox::new(jitter(b.x, rng), jitter(b.y, rng), b.w, b.h);
                let score = -0.5 + 0.6 * normal(rng);
                let cat = rng.random_range(0..ids.len());
                dets.push(Detection::new(&image_id, "", jb, score).tag(hypotheses(rng, cat, ids.len(), ids)));
            }
        }
        for _ in 0..rng.random_range(0..=3) {
            let score = -2.6 + 0.7 * normal(rng);
            let cat = rng.random_range(0..ids.len());
            dets.push(
                Detection::new(&image_id, "", random_box(rng), score).tag(hypotheses(rng, cat, ids.len(), ids)),
            );
        }
    }
    (dets, truths)
}

/// Generates a dataset and writes every file into `out_dir`.
pub fn write_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthDataset, SynthError> {
    let ds = generate_dataset(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| SynthError::Io(out_dir.to_path_buf(), e))?;
    for (name, bytes) in &ds.files {
        let path = out_dir.join(name);
        write_atomic(&path, bytes).map_err(|e| SynthError::Io(path.clone(), e))?;
    }
    Ok(ds)
}
