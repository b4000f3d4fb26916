use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde_json::json;

use carcensus::analytics::{choropleth_to_csv, conditional_table, evaluate, CityTally};
use carcensus::calibration::{calibrate, fit_isotonic, IsotonicMap};
use carcensus::catalog::{parse_catalog, BodyType, Catalog};
use carcensus::detection::{
    average_precision, label_detections, read_detections, read_truths, threshold, Detection, ScoreKind,
};
use carcensus::estimator::{
    cv_train_ridge, cv_train_softmax, prediction_rows, predictions_to_csv, read_predictions, CvOptions, ModelBundle,
    SoftmaxOptions, TargetModel,
};
use carcensus::features::{
    aggregate_features_with, features_to_csv, read_features, read_image_counts, resolve_category, FeatureVector,
    RegionCensus,
};
use carcensus::geo::{
    filter_near_road, generate_grid, merge_points, points_to_csv, read_points, ConstantOracle, GpsPoint,
    PolylineOracle, RoadOracle,
};
use carcensus::io::{csv_bytes, write_atomic};
use carcensus::prior::{apply_prior, default_center_edges, default_log_area_edges, LocationSizePrior};
use carcensus::protocol::ProtocolConfig;
use carcensus::regions::{
    is_eligible_with, parse_regions, parse_split_override, split_by_county, split_to_csv, Region, RegionKind, Side,
    SplitAssignment, EDUCATION_LABELS, RACE_LABELS,
};
use carcensus::synth::{write_dataset, SynthSpec};

use crate::{Command, ProtocolArgs, SplitArg};

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json_text(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub(crate) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            catalog,
            regions,
            acs,
            votes,
            split_out,
        } => ingest(&catalog, &regions, acs.as_deref(), votes.as_deref(), split_out.as_deref()),
        Command::Calibrate {
            detections,
            truths,
            prior,
            iou_min,
            out,
            prior_out,
        } => calibrate_cmd(&detections, &truths, prior.as_deref(), iou_min, &out, prior_out.as_deref()),
        Command::Featurize {
            catalog,
            regions,
            detections,
            images,
            calibration,
            prior,
            protocol,
            out,
            skipped,
        } => {
            let skipped = skipped.unwrap_or_else(|| sibling(&out, "skipped.csv"));
            featurize(&FeaturizeInputs {
                catalog,
                regions,
                detections,
                images,
                calibration,
                prior,
                protocol,
                out,
                skipped,
            })
        }
        Command::Train {
            features,
            regions,
            acs,
            votes,
            override_split,
            lambda_grid,
            folds,
            seed,
            protocol,
            out,
        } => {
            if folds < 2 {
                bail!("--folds must be at least 2, got {folds}");
            }
            if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                bail!("--lambda-grid needs finite values >= 0");
            }
            let config = protocol.config(seed, folds, lambda_grid);
            train(&features, &regions, acs.as_deref(), votes.as_deref(), override_split.as_deref(), config, &out)
        }
        Command::Predict {
            model,
            features,
            regions,
            override_split,
            split,
            out,
        } => predict(&model, &features, &regions, override_split.as_deref(), split, &out),
        Command::Evaluate {
            predictions,
            model,
            regions,
            acs,
            votes,
            out,
            choropleth,
            choropleth_target,
        } => evaluate_cmd(
            &predictions,
            &model,
            &regions,
            acs.as_deref(),
            votes.as_deref(),
            &out,
            choropleth.as_deref().map(|p| (p, choropleth_target.as_str())),
        ),
        Command::Heuristic {
            catalog,
            regions,
            votes,
            detections,
            prior,
            detection_threshold,
            out,
        } => heuristic(&catalog, &regions, &votes, &detections, prior.as_deref(), detection_threshold, &out),
        Command::SampleGrid {
            center_lat,
            center_lon,
            side_m,
            spacing_m,
            roads,
            max_road_dist,
            extra_points,
            concurrency,
            out,
        } => sample_grid(
            GpsPoint::new(center_lat, center_lon)?,
            side_m,
            spacing_m,
            roads.as_deref(),
            max_road_dist,
            extra_points.as_deref(),
            concurrency,
            &out,
        ),
        Command::Synth { spec, out_dir, seed } => {
            let mut s = SynthSpec::load(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let ds = write_dataset(&s, &out_dir)?;
            println!(
                "{}",
                json!({
                    "out_dir": out_dir.display().to_string(),
                    "regions": s.n_regions,
                    "eligible_regions": ds.truth.eligible_regions,
                    "train_regions": ds.truth.train_regions,
                    "files": ds.files.keys().collect::<Vec<_>>(),
                })
            );
            Ok(())
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

fn load_catalog(path: &Path) -> Result<Catalog> {
    let cats = parse_catalog(path).with_context(|| format!("{}", path.display()))?;
    Ok(Catalog::new(cats).with_context(|| format!("{}", path.display()))?)
}

fn load_regions(regions: &Path, acs: Option<&Path>, votes: Option<&Path>) -> Result<Vec<Region>> {
    Ok(parse_regions(regions, acs, votes)?)
}

fn ingest(
    catalog: &Path,
    regions: &Path,
    acs: Option<&Path>,
    votes: Option<&Path>,
    split_out: Option<&Path>,
) -> Result<()> {
    let cat = load_catalog(catalog)?;
    let regs = load_regions(regions, acs, votes)?;
    let split = split_by_county(&regs)?;
    if let Some(p) = split_out {
        write(p, &split_to_csv(&split))?;
    }
    let train = split.iter().filter(|s| s.side == Side::Train).count();
    println!(
        "{}",
        json!({
            "categories": cat.len(),
            "regions": regs.len(),
            "train_regions": train,
            "test_regions": split.len() - train,
            "with_income": regs.iter().filter(|r| r.income_median.is_some()).count(),
            "with_votes": regs.iter().filter(|r| r.vote_share().is_some()).count(),
        })
    );
    Ok(())
}

/// Applies the prior when given; returns the score kind to use downstream.
fn adjust(dets: Vec<Detection>, prior: Option<&Path>) -> Result<(Vec<Detection>, ScoreKind)> {
    let Some(p) = prior else {
        return Ok((dets, ScoreKind::Raw));
    };
    let prior = LocationSizePrior::load(p).with_context(|| format!("{}", p.display()))?;
    let mut clamped = 0usize;
    let out = dets
        .iter()
        .map(|d| {
            let a = apply_prior(d, &prior);
            clamped += usize::from(a.clamped);
            a.detection
        })
        .collect();
    if clamped > 0 {
        eprintln!("warning: {clamped} detections fell outside the prior support and were clamped");
    }
    Ok((out, ScoreKind::Adjusted))
}

fn calibrate_cmd(
    detections: &Path,
    truths: &Path,
    prior: Option<&Path>,
    iou_min: f64,
    out: &Path,
    prior_out: Option<&Path>,
) -> Result<()> {
    let dets = read_detections(detections).with_context(|| format!("{}", detections.display()))?;
    let truths = read_truths(truths).with_context(|| format!("{}", truths.display()))?;
    let (dets, kind) = adjust(dets, prior)?;
    let labeled = label_detections(&dets, &truths, iou_min, kind)?;
    let scores: Vec<f64> = labeled.items.iter().map(|i| i.0).collect();
    let labels: Vec<f64> = labeled.items.iter().map(|i| f64::from(u8::from(i.1))).collect();
    let map = fit_isotonic(&scores, &labels)?;
    write(out, map.to_json().as_bytes())?;
    if let Some(p) = prior_out {
        let boxes: Vec<_> = truths.iter().map(|t| t.bbox).collect();
        let fitted = LocationSizePrior::fit(
            &boxes,
            f64::from(carcensus::geo::IMAGE_HEIGHT),
            default_center_edges(),
            default_log_area_edges(),
        )?;
        write(p, fitted.to_json().as_bytes())?;
    }
    let ap = average_precision(&labeled.labels(), labeled.n_truth)?;
    println!(
        "{}",
        json!({
            "detections": labeled.items.len(),
            "truths": labeled.n_truth,
            "correct": labeled.items.iter().filter(|i| i.1).count(),
            "average_precision": ap,
            "knots": map.knots.len(),
        })
    );
    Ok(())
}

struct FeaturizeInputs {
    catalog: PathBuf,
    regions: PathBuf,
    detections: PathBuf,
    images: Option<PathBuf>,
    calibration: Option<PathBuf>,
    prior: Option<PathBuf>,
    protocol: ProtocolArgs,
    out: PathBuf,
    skipped: PathBuf,
}

/// Thresholded detections grouped by region, after checking that every
/// detection names a known region.
fn retained_by_region(
    dets: &[Detection],
    regions: &[Region],
    tau: f64,
    kind: ScoreKind,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let known: BTreeSet<&str> = regions.iter().map(|r| r.region_id.as_str()).collect();
    if let Some(d) = dets.iter().find(|d| !known.contains(d.region_id.as_str())) {
        bail!("detection in image `{}` refers to unknown region `{}`", d.image_id, d.region_id);
    }
    let mut groups: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in threshold(dets, tau, kind)? {
        groups.entry(d.region_id.clone()).or_default().push(d);
    }
    Ok(groups)
}

fn featurize(a: &FeaturizeInputs) -> Result<()> {
    let catalog = load_catalog(&a.catalog)?;
    let regions = load_regions(&a.regions, None, None)?;
    let dets = read_detections(&a.detections).with_context(|| format!("{}", a.detections.display()))?;
    let image_counts: BTreeMap<String, u64> = match &a.images {
        Some(p) => read_image_counts(p).with_context(|| format!("{}", p.display()))?,
        None => {
            let mut seen: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
            for d in &dets {
                seen.entry(d.region_id.clone()).or_default().insert(&d.image_id);
            }
            seen.into_iter().map(|(k, v)| (k, v.len() as u64)).collect()
        }
    };
    let (dets, kind) = adjust(dets, a.prior.as_deref())?;
    let mut groups = retained_by_region(&dets, &regions, a.protocol.detection_threshold, kind)?;
    if let Some(p) = &a.calibration {
        let map = IsotonicMap::load(p).with_context(|| format!("{}", p.display()))?;
        for d in groups.values_mut().flatten() {
            let s = d.score(kind).expect("score kind checked by threshold");
            d.calibrated_prob = Some(calibrate(&map, s));
        }
    }
    let mut rows: Vec<(String, FeatureVector)> = Vec::new();
    let mut skipped: Vec<[String; 2]> = Vec::new();
    for r in &regions {
        let kept = groups.remove(&r.region_id).unwrap_or_default();
        if kept.is_empty() {
            skipped.push([r.region_id.clone(), "no_detections".into()]);
            continue;
        }
        if !is_eligible_with(r, kept.len(), a.protocol.min_population, a.protocol.min_cars) {
            skipped.push([r.region_id.clone(), "ineligible".into()]);
            continue;
        }
        let census = RegionCensus {
            region_id: r.region_id.clone(),
            image_count: image_counts.get(&r.region_id).copied().unwrap_or(0),
            detections: kept,
        };
        let f = aggregate_features_with(&census, &catalog, a.protocol.weighting.into())
            .with_context(|| format!("region `{}`", r.region_id))?;
        rows.push((r.region_id.clone(), f));
    }
    write(&a.out, &features_to_csv(&rows))?;
    write(&a.skipped, &csv_bytes(&["region_id", "reason"], &skipped))?;
    eprintln!("featurized {} regions, skipped {}", rows.len(), skipped.len());
    Ok(())
}

fn load_split(regions: &[Region], override_split: Option<&Path>) -> Result<HashMap<String, Side>> {
    let split: Vec<SplitAssignment> = match override_split {
        Some(p) => parse_split_override(p).with_context(|| format!("{}", p.display()))?,
        None => split_by_county(regions)?,
    };
    Ok(split.into_iter().map(|s| (s.region_id, s.side)).collect())
}

/// Ground-truth value of a (possibly `target:class`) prediction target.
fn actual_value(r: &Region, target: &str) -> Option<f64> {
    let (base, class) = match target.split_once(':') {
        Some((b, c)) => (b, Some(c)),
        None => (target, None),
    };
    match (base, class) {
        ("income", None) => r.income_median,
        ("vote_share", None) => r.vote_share(),
        ("race", Some(c)) => {
            let i = RACE_LABELS.iter().position(|l| *l == c)?;
            r.race_shares.map(|s| s[i])
        }
        ("education", Some(c)) => {
            let i = EDUCATION_LABELS.iter().position(|l| *l == c)?;
            r.edu_shares.map(|s| s[i])
        }
        _ => None,
    }
}

fn train(
    features: &Path,
    regions: &Path,
    acs: Option<&Path>,
    votes: Option<&Path>,
    override_split: Option<&Path>,
    config: ProtocolConfig,
    out: &Path,
) -> Result<()> {
    let feats = read_features(features).with_context(|| format!("{}", features.display()))?;
    let regs = load_regions(regions, acs, votes)?;
    let by_id: HashMap<&str, &Region> = regs.iter().map(|r| (r.region_id.as_str(), r)).collect();
    let sides = load_split(&regs, override_split)?;
    let mut train_rows: Vec<(&Region, &FeatureVector)> = Vec::new();
    for (id, f) in &feats {
        let r = by_id
            .get(id.as_str())
            .ok_or_else(|| anyhow!("features.csv region `{id}` is not in the regions table"))?;
        match sides.get(id) {
            Some(Side::Train) => train_rows.push((r, f)),
            Some(Side::Test) => {}
            None => bail!("region `{id}` has no side in the split override"),
        }
    }
    if train_rows.is_empty() {
        bail!("the training split is empty: no featurized region lies in an A-C county");
    }
    let opts = CvOptions {
        lambda_grid: config.lambda_grid.clone(),
        folds: config.folds,
        seed: config.seed,
    };
    let matrix = |rows: &[&FeatureVector]| {
        DMatrix::from_fn(rows.len(), carcensus::features::FEATURE_COUNT, |i, j| rows[i][j])
    };
    let need = |name: &str, n: usize| -> Result<()> {
        if n < config.folds {
            bail!("target `{name}`: {n} training regions, need at least {} for {}-fold CV", config.folds, config.folds);
        }
        Ok(())
    };
    let mut bundle = ModelBundle::new(config.clone(), train_rows.len());
    let scalar_targets: [(&str, fn(&Region) -> Option<f64>); 2] =
        [("income", |r| r.income_median), ("vote_share", |r| r.vote_share())];
    for (name, get) in scalar_targets {
        let rows: Vec<(&FeatureVector, f64)> = train_rows.iter().filter_map(|(r, f)| Some((*f, get(r)?))).collect();
        if rows.is_empty() {
            continue;
        }
        need(name, rows.len())?;
        let x = matrix(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let cv = cv_train_ridge(&x, &y, &opts).with_context(|| format!("training `{name}`"))?;
        eprintln!("{name}: lambda {} (cv mse {:.6e})", cv.selected_lambda, best_loss(&cv.cv_losses));
        bundle.models.insert(name.to_string(), TargetModel::Ridge(cv.model));
    }
    let share_targets: [(&str, &[&str], fn(&Region) -> Option<Vec<f64>>); 2] = [
        ("race", &RACE_LABELS, |r| r.race_shares.map(|s| s.to_vec())),
        ("education", &EDUCATION_LABELS, |r| r.edu_shares.map(|s| s.to_vec())),
    ];
    for (name, labels, get) in share_targets {
        let rows: Vec<(&FeatureVector, Vec<f64>)> =
            train_rows.iter().filter_map(|(r, f)| Some((*f, get(r)?))).collect();
        if rows.is_empty() {
            continue;
        }
        need(name, rows.len())?;
        let x = matrix(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        let y = DMatrix::from_fn(rows.len(), labels.len(), |i, k| rows[i].1[k]);
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let cv = cv_train_softmax(&x, &y, &labels, &opts, SoftmaxOptions::default())
            .with_context(|| format!("training `{name}`"))?;
        eprintln!("{name}: lambda {} (cv cross-entropy {:.6e})", cv.selected_lambda, best_loss(&cv.cv_losses));
        bundle.models.insert(name.to_string(), TargetModel::Softmax(cv.model));
    }
    if bundle.models.is_empty() {
        bail!("no targets available: pass --acs and/or --votes");
    }
    write(out, bundle.to_json().as_bytes())
}

fn best_loss(losses: &[(f64, f64)]) -> f64 {
    losses.iter().map(|l| l.1).fold(f64::INFINITY, f64::min)
}

fn predict(
    model: &Path,
    features: &Path,
    regions: &Path,
    override_split: Option<&Path>,
    split: SplitArg,
    out: &Path,
) -> Result<()> {
    let bundle = ModelBundle::load(model).with_context(|| format!("{}", model.display()))?;
    let feats = read_features(features).with_context(|| format!("{}", features.display()))?;
    let regs = load_regions(regions, None, None)?;
    let sides = load_split(&regs, override_split)?;
    let mut rows = Vec::new();
    for (id, f) in &feats {
        let side = *sides
            .get(id)
            .ok_or_else(|| anyhow!("features.csv region `{id}` has no split side"))?;
        let wanted = match split {
            SplitArg::All => true,
            SplitArg::Train => side == Side::Train,
            SplitArg::Test => side == Side::Test,
        };
        if !wanted {
            continue;
        }
        for (name, m) in &bundle.models {
            rows.extend(prediction_rows(id, name, &m.predict(f.as_slice())?));
        }
    }
    write(out, &predictions_to_csv(&rows))
}

fn evaluate_cmd(
    predictions: &Path,
    model: &Path,
    regions: &Path,
    acs: Option<&Path>,
    votes: Option<&Path>,
    out: &Path,
    choropleth: Option<(&Path, &str)>,
) -> Result<()> {
    let bundle = ModelBundle::load(model).with_context(|| format!("{}", model.display()))?;
    let preds = read_predictions(predictions).with_context(|| format!("{}", predictions.display()))?;
    let regs = load_regions(regions, acs, votes)?;
    let by_id: HashMap<&str, &Region> = regs.iter().map(|r| (r.region_id.as_str(), r)).collect();
    let mut per_target: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &preds {
        let r = by_id
            .get(p.region_id.as_str())
            .ok_or_else(|| anyhow!("prediction for unknown region `{}`", p.region_id))?;
        if let Some(actual) = actual_value(r, &p.target) {
            let e = per_target.entry(&p.target).or_default();
            e.0.push(p.value);
            e.1.push(actual);
        }
    }
    if per_target.is_empty() {
        bail!("no prediction has matching ground truth");
    }
    let mut reports = Vec::new();
    for (target, (pred, actual)) in &per_target {
        let r = evaluate(target, pred, actual, *target == "vote_share").with_context(|| format!("target `{target}`"))?;
        reports.push(r);
    }
    let doc = json!({
        "protocol": bundle.protocol,
        "feature_layout": bundle.feature_layout,
        "reports": reports,
    });
    write(out, json_text(&doc).as_bytes())?;
    if let Some((path, target)) = choropleth {
        let rows: Vec<(String, f64)> = preds
            .iter()
            .filter(|p| p.target == target)
            .map(|p| (p.region_id.clone(), p.value))
            .collect();
        if rows.is_empty() {
            bail!("no predictions for choropleth target `{target}`");
        }
        write(path, &choropleth_to_csv(&rows))?;
    }
    Ok(())
}

fn heuristic(
    catalog: &Path,
    regions: &Path,
    votes: &Path,
    detections: &Path,
    prior: Option<&Path>,
    tau: f64,
    out: &Path,
) -> Result<()> {
    let catalog = load_catalog(catalog)?;
    let regs = load_regions(regions, None, Some(votes))?;
    let dets = read_detections(detections).with_context(|| format!("{}", detections.display()))?;
    let (dets, kind) = adjust(dets, prior)?;
    let groups = retained_by_region(&dets, &regs, tau, kind)?;
    let mut tallies = Vec::new();
    for r in regs.iter().filter(|r| r.kind == RegionKind::City) {
        let (Some(obama), Some(mccain)) = (r.obama_votes, r.mccain_votes) else {
            continue;
        };
        let (mut sedans, mut pickups) = (0u64, 0u64);
        for d in groups.get(&r.region_id).map(Vec::as_slice).unwrap_or_default() {
            let id = resolve_category(d)?;
            let cat = catalog.get(id).ok_or_else(|| anyhow!("category `{id}` is not in the catalog"))?;
            if cat.body_type == BodyType::SEDAN {
                sedans += 1;
            } else if cat.body_type.is_pickup() {
                pickups += 1;
            }
        }
        tallies.push(CityTally {
            city_id: r.region_id.clone(),
            sedans,
            pickups,
            obama_votes: obama,
            mccain_votes: mccain,
        });
    }
    let table = conditional_table(&tallies);
    let doc = json!({
        "detection_threshold": tau,
        "cities": tallies.len(),
        "table": table,
    });
    write(out, json_text(&doc).as_bytes())?;
    if table.p_dem_given_more_sedans.is_none() || table.p_rep_given_more_pickups.is_none() {
        bail!("conditional undefined: no counted city on one side of the sedan/pickup comparison");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample_grid(
    center: GpsPoint,
    side_m: f64,
    spacing_m: f64,
    roads: Option<&Path>,
    max_dist: f64,
    extra: Option<&Path>,
    concurrency: usize,
    out: &Path,
) -> Result<()> {
    let grid = generate_grid(center, side_m, spacing_m)?;
    let oracle: Box<dyn RoadOracle> = match roads {
        Some(p) => Box::new(PolylineOracle::load(p).with_context(|| format!("{}", p.display()))?),
        None => Box::new(ConstantOracle(0.0)),
    };
    let outcome = filter_near_road(&grid, oracle.as_ref(), max_dist, concurrency);
    let mut points = outcome.kept;
    if let Some(p) = extra {
        let more = read_points(p).with_context(|| format!("{}", p.display()))?;
        points = merge_points(&points, &more);
    }
    write(out, &points_to_csv(&points))?;
    if !outcome.errors.is_empty() {
        let rows: Vec<[String; 4]> = outcome
            .errors
            .iter()
            .map(|(i, p, m)| [i.to_string(), format!("{:.7}", p.lat), format!("{:.7}", p.lon), m.clone()])
            .collect();
        let err_path = sibling(out, "oracle_errors.csv");
        write(&err_path, &csv_bytes(&["index", "lat", "lon", "message"], &rows))?;
        eprintln!("warning: road oracle failed on {} points, listed in {}", rows.len(), err_path.display());
    }
    eprintln!("{} grid points, {} written", grid.len(), points.len());
    Ok(())
}
