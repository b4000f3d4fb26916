//! carcensus: region-level demographic estimation from street-level
//! vehicle detections.
//!
//! The crate is organised as a pipeline of pure stages:
//!
//! * [`catalog`] and [`regions`] ingest the vehicle category catalog,
//!   region definitions and ground truth, and implement the county-letter
//!   train/test split.
//! * [`detection`] and [`prior`] model detection records, thresholds, the
//!   location-size prior, IoU matching and average precision.
//! * [`calibration`] maps detection scores to probabilities with isotonic
//!   regression.
//! * [`features`] aggregates a region's detections into the fixed
//!   88-component feature vector.
//! * [`estimator`] standardizes features and fits ridge and softmax models
//!   under cross-validation with fold-model averaging and clipping.
//! * [`analytics`] holds evaluation statistics and the sedan/pickup
//!   conditional estimator.
//! * [`geo`] plans image acquisition points and camera geometry.
//! * [`synth`] generates synthetic datasets and [`oracles`] provides
//!   brute-force reference solvers used by the test suites.

pub mod analytics;
pub mod calibration;
pub mod catalog;
pub mod detection;
pub mod error;
pub mod estimator;
pub mod features;
pub mod geo;
pub mod io;
pub mod oracles;
pub mod prior;
pub mod protocol;
pub mod regions;
pub mod synth;

pub use error::IngestError;

/// Version tag of the frozen feature layout, embedded in serialized models.
pub const FEATURE_LAYOUT_VERSION: &str = "carcensus-features-v1";
