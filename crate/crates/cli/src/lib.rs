//! Command line driver: parses arguments and runs one pipeline stage.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use carcensus::protocol::{self, ProtocolConfig};

#[derive(Debug, Parser)]
#[command(name = "carcensus", version = carcensus::FEATURE_LAYOUT_VERSION, about = "Estimate neighborhood demographics from detected cars")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Hard,
    Probabilistic,
}

impl From<WeightingArg> for carcensus::features::Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Hard => Self::Hard,
            WeightingArg::Probabilistic => Self::Probabilistic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

/// Protocol settings shared by the stages that consume them.
#[derive(Clone, Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = protocol::DETECTION_THRESHOLD, allow_negative_numbers = true)]
    pub detection_threshold: f64,
    #[arg(long, default_value_t = protocol::MIN_POPULATION)]
    pub min_population: u64,
    #[arg(long, default_value_t = protocol::MIN_CARS)]
    pub min_cars: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::Hard)]
    pub weighting: WeightingArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the catalog and region tables and report the derived split.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        acs: Option<PathBuf>,
        #[arg(long)]
        votes: Option<PathBuf>,
        /// Write the derived `region_id,side` assignment here.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Fit the isotonic score calibration (and optionally the location-size
    /// prior) on labelled validation detections.
    Calibrate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        truths: PathBuf,
        /// Apply this prior before fitting, calibrating adjusted scores.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = protocol::IOU_MIN)]
        iou_min: f64,
        #[arg(long)]
        out: PathBuf,
        /// Fit a location-size prior from the truth boxes and write it here.
        #[arg(long)]
        prior_out: Option<PathBuf>,
    },
    /// Aggregate detections into the 88-component feature vector per region.
    Featurize {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// `region_id,image_count`; defaults to distinct image ids seen.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `skipped.csv` next to `--out`.
        #[arg(long)]
        skipped: Option<PathBuf>,
    },
    /// Cross-validated training on the A-C county side.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        acs: Option<PathBuf>,
        #[arg(long)]
        votes: Option<PathBuf>,
        /// Explicit `region_id,side` file replacing the county split.
        #[arg(long)]
        override_split: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = protocol::default_lambda_grid())]
        lambda_grid: Vec<f64>,
        #[arg(long, default_value_t = protocol::FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a trained model to feature rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        override_split: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        acs: Option<PathBuf>,
        #[arg(long)]
        votes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        choropleth: Option<PathBuf>,
        /// Target written to the choropleth file.
        #[arg(long, default_value = "vote_share")]
        choropleth_target: String,
    },
    /// Sedan/pickup conditional frequencies over city regions.
    Heuristic {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        votes: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = protocol::DETECTION_THRESHOLD, allow_negative_numbers = true)]
        detection_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan acquisition points on a square grid near roads.
    SampleGrid {
        #[arg(long, allow_negative_numbers = true)]
        center_lat: f64,
        #[arg(long, allow_negative_numbers = true)]
        center_lon: f64,
        #[arg(long, default_value_t = carcensus::geo::DEFAULT_SIDE_M)]
        side_m: f64,
        #[arg(long, default_value_t = carcensus::geo::DEFAULT_SPACING_M)]
        spacing_m: f64,
        /// Road segments for the polyline oracle; without it every point is
        /// treated as on-road.
        #[arg(long)]
        roads: Option<PathBuf>,
        #[arg(long, default_value_t = carcensus::geo::DEFAULT_MAX_ROAD_DIST_M)]
        max_road_dist: f64,
        /// Additional `lat,lon` points merged after deduplication.
        #[arg(long)]
        extra_points: Option<PathBuf>,
        /// Maximum concurrent oracle queries.
        #[arg(long, default_value_t = 8)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl ProtocolArgs {
    pub fn config(&self, seed: u64, folds: usize, lambda_grid: Vec<f64>) -> ProtocolConfig {
        ProtocolConfig {
            detection_threshold: self.detection_threshold,
            folds,
            min_population: self.min_population,
            min_cars: self.min_cars,
            seed,
            lambda_grid,
            weighting: self.weighting.into(),
            ..ProtocolConfig::default()
        }
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code: 0 on success, 1 on invalid input, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
