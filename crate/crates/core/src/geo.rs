//! Acquisition planning: GPS grids, road-proximity filtering, camera
//! headings and the rectilinear-to-equirectangular pixel mapping.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::IngestError;
use crate::io::{self, parse_finite};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const IMAGE_WIDTH: u32 = 860;
pub const IMAGE_HEIGHT: u32 = 573;
pub const HFOV_DEG: f64 = 90.0;
pub const HEADING_COUNT: usize = 6;
pub const DEFAULT_SIDE_M: f64 = 20_000.0;
pub const DEFAULT_SPACING_M: f64 = 25.0;
pub const DEFAULT_MAX_ROAD_DIST_M: f64 = 12.5;

pub const ROADS_HEADER: &str = "lat1,lon1,lat2,lon2";
pub const POINTS_HEADER: &str = "lat,lon";

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} is not finite")]
    Longitude(f64),
    #[error("grid center at latitude {0} is within 1 degree of a pole")]
    NearPole(f64),
    #[error("side {side} m and spacing {spacing} m must be positive with side a multiple of spacing")]
    GridSize { side: f64, spacing: f64 },
    #[error("pixel ({0}, {1}) outside the output frame")]
    PixelOutside(f64, f64),
    #[error("panorama dimensions must be positive")]
    PanoSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Wraps a longitude into `[-180, 180)`.
pub fn wrap_lon(lon: f64) -> f64 {
    (lon + 180.0).rem_euclid(360.0) - 180.0
}

impl GpsPoint {
    /// Validates latitude and wraps longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::Longitude(lon));
        }
        Ok(GpsPoint { lat, lon: wrap_lon(lon) })
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: &GpsPoint, b: &GpsPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Square grid of `(side/spacing + 1)^2` points centered on `center`,
/// built on the local flat-earth approximation. Rows run south to north,
/// points within a row west to east.
pub fn generate_grid(center: GpsPoint, side_m: f64, spacing_m: f64) -> Result<Vec<GpsPoint>, GeoError> {
    if !(side_m > 0.0 && spacing_m > 0.0 && side_m.is_finite() && spacing_m.is_finite()) {
        return Err(GeoError::GridSize { side: side_m, spacing: spacing_m });
    }
    let ratio = side_m / spacing_m;
    let intervals = ratio.round();
    if (ratio - intervals).abs() > 1e-9 * ratio.max(1.0) {
        return Err(GeoError::GridSize { side: side_m, spacing: spacing_m });
    }
    if center.lat.abs() > 89.0 {
        return Err(GeoError::NearPole(center.lat));
    }
    let n = intervals as usize;
    let half = n as f64 / 2.0;
    let dlat = (spacing_m / EARTH_RADIUS_M).to_degrees();
    let dlon = (spacing_m / (EARTH_RADIUS_M * center.lat.to_radians().cos())).to_degrees();
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        let lat = center.lat + (i as f64 - half) * dlat;
        for j in 0..=n {
            out.push(GpsPoint {
                lat,
                lon: wrap_lon(center.lon + (j as f64 - half) * dlon),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct OracleError(pub String);

/// Distance from a point to the nearest road, in meters.
pub trait RoadOracle: Sync {
    fn distance_m(&self, p: &GpsPoint) -> Result<f64, OracleError>;
}

/// Reports the same distance for every point.
#[derive(Clone, Copy, Debug)]
pub struct ConstantOracle(pub f64);

impl RoadOracle for ConstantOracle {
    fn distance_m(&self, _: &GpsPoint) -> Result<f64, OracleError> {
        Ok(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoadSegment {
    pub a: GpsPoint,
    pub b: GpsPoint,
}

/// Minimum distance to a set of road segments, evaluated in the local
/// tangent plane of the query point.
#[derive(Clone, Debug, Default)]
pub struct PolylineOracle {
    pub segments: Vec<RoadSegment>,
}

impl PolylineOracle {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let mut reader = io::open_csv(path, ROADS_HEADER)?;
        let mut segments = Vec::new();
        for rec in io::records(&mut reader) {
            let (line, r) = rec?;
            let pt = |la: usize, lo: usize| -> Result<GpsPoint, IngestError> {
                let lat = parse_finite(line, &ROADS_HEADER.split(',').nth(la).unwrap_or(""), &r[la])?;
                let lon = parse_finite(line, &ROADS_HEADER.split(',').nth(lo).unwrap_or(""), &r[lo])?;
                GpsPoint::new(lat, lon).map_err(|e| IngestError::Row { line, message: e.to_string() })
            };
            segments.push(RoadSegment { a: pt(0, 1)?, b: pt(2, 3)? });
        }
        Ok(PolylineOracle { segments })
    }
}

fn local_xy(origin: &GpsPoint, p: &GpsPoint) -> (f64, f64) {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let dlon = wrap_lon(p.lon - origin.lon);
    (dlon * origin.lat.to_radians().cos() * k, (p.lat - origin.lat) * k)
}

impl RoadOracle for PolylineOracle {
    fn distance_m(&self, p: &GpsPoint) -> Result<f64, OracleError> {
        if self.segments.is_empty() {
            return Err(OracleError("no road segments loaded".into()));
        }
        let mut best = f64::INFINITY;
        for s in &self.segments {
            let (ax, ay) = local_xy(p, &s.a);
            let (bx, by) = local_xy(p, &s.b);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (cx, cy) = (ax + t * dx, ay + t * dy);
            best = best.min((cx * cx + cy * cy).sqrt());
        }
        Ok(best)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<GpsPoint>,
    /// `(input index, point, message)` for points the oracle failed on.
    pub errors: Vec<(usize, GpsPoint, String)>,
}

/// Keeps points within `max_dist_m` (inclusive) of a road, in input order.
///
/// At most `max_in_flight` oracle calls run at once.
pub fn filter_near_road<O: RoadOracle + ?Sized>(
    points: &[GpsPoint],
    oracle: &O,
    max_dist_m: f64,
    max_in_flight: usize,
) -> FilterOutcome {
    let query = || -> Vec<Result<f64, OracleError>> {
        points.par_iter().map(|p| oracle.distance_m(p)).collect()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
    {
        Ok(pool) => pool.install(query),
        Err(_) => points.iter().map(|p| oracle.distance_m(p)).collect(),
    };
    let mut out = FilterOutcome::default();
    for (i, (p, r)) in points.iter().zip(results).enumerate() {
        match r {
            Ok(d) if d <= max_dist_m => out.kept.push(*p),
            Ok(_) => {}
            Err(e) => out.errors.push((i, *p, e.0)),
        }
    }
    out
}

/// Appends extra points, dropping any that coincide (at 7 decimal places)
/// with a point already present.
pub fn merge_points(points: &[GpsPoint], extra: &[GpsPoint]) -> Vec<GpsPoint> {
    let key = |p: &GpsPoint| ((p.lat * 1e7).round() as i64, (p.lon * 1e7).round() as i64);
    let mut seen = HashSet::new();
    points
        .iter()
        .chain(extra)
        .filter(|p| seen.insert(key(p)))
        .copied()
        .collect()
}

pub fn points_to_csv(points: &[GpsPoint]) -> Vec<u8> {
    let mut out = String::with_capacity(points.len() * 24 + 8);
    out.push_str(POINTS_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{:.7},{:.7}\n", p.lat, p.lon));
    }
    out.into_bytes()
}

pub fn read_points(path: &Path) -> Result<Vec<GpsPoint>, IngestError> {
    let mut reader = io::open_csv(path, POINTS_HEADER)?;
    let mut out = Vec::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let lat = parse_finite(line, "lat", &r[0])?;
        let lon = parse_finite(line, "lon", &r[1])?;
        out.push(GpsPoint::new(lat, lon).map_err(|e| IngestError::Row { line, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPlan {
    pub point: GpsPoint,
    /// Yaw angles in degrees, ascending.
    pub headings: Vec<f64>,
    pub image_width: u32,
    pub image_height: u32,
    pub hfov: f64,
}

impl CameraPlan {
    /// Angular overlap between adjacent views, in degrees.
    pub fn adjacent_overlap(&self) -> f64 {
        self.hfov - 360.0 / self.headings.len() as f64
    }
}

/// Six evenly spaced headings starting at north.
pub fn rotations(point: GpsPoint) -> CameraPlan {
    CameraPlan {
        point,
        headings: (0..HEADING_COUNT).map(|i| i as f64 * 360.0 / HEADING_COUNT as f64).collect(),
        image_width: IMAGE_WIDTH,
        image_height: IMAGE_HEIGHT,
        hfov: HFOV_DEG,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unwarped {
    pub x: f64,
    pub y: f64,
    /// Set when the vertical coordinate had to be clamped into the panorama.
    pub clamped: bool,
}

/// Viewing ray `(yaw offset, pitch)` in degrees for an output pixel of a
/// rectilinear view with the given size and horizontal field of view.
/// Pitch is positive upward; pixel `v` grows downward.
pub fn pixel_ray(width: f64, height: f64, hfov_deg: f64, u: f64, v: f64) -> (f64, f64) {
    let focal = (width / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    let dx = u - width / 2.0;
    let dy = v - height / 2.0;
    let yaw = dx.atan2(focal);
    let pitch = (-dy).atan2((dx * dx + focal * focal).sqrt());
    (yaw.to_degrees(), pitch.to_degrees())
}

/// Maps an output pixel `(u, v)` of the 860x573, 90-degree view at
/// `heading_deg` to a pixel in an equirectangular panorama.
pub fn unwarp(pano_width: f64, pano_height: f64, heading_deg: f64, pixel: (f64, f64)) -> Result<Unwarped, GeoError> {
    let (w, h) = (IMAGE_WIDTH as f64, IMAGE_HEIGHT as f64);
    let (u, v) = pixel;
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Err(GeoError::PixelOutside(u, v));
    }
    if !(pano_width > 0.0 && pano_height > 0.0) {
        return Err(GeoError::PanoSize);
    }
    let (yaw_off, pitch) = pixel_ray(w, h, HFOV_DEG, u, v);
    let yaw = (heading_deg + yaw_off).rem_euclid(360.0);
    let x = yaw / 360.0 * pano_width;
    let y_raw = (0.5 - pitch / 180.0) * pano_height;
    let y = y_raw.clamp(0.0, pano_height);
    Ok(Unwarped { x, y, clamped: y != y_raw })
}
