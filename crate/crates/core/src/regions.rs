//! Regions, joined ACS/vote ground truth, the county-letter split and the
//! eligibility rule.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::IngestError;
use crate::io::{self, parse_finite, parse_num};

pub const REGIONS_HEADER: &str = "region_id,kind,city,state,county,population";
pub const ACS_HEADER: &str = "region_id,B19013_001E,B02001_002E,B02001_003E,B02001_005E,B06009_002E,B06009_003E,B06009_004E,B06009_005E,B06009_006E";
pub const VOTES_HEADER: &str = "region_id,obama_votes,mccain_votes";
pub const SPLIT_HEADER: &str = "region_id,side";

pub const RACE_LABELS: [&str; 4] = ["white", "black", "asian", "other"];
pub const EDUCATION_LABELS: [&str; 5] = [
    "less_than_high_school",
    "high_school",
    "some_college",
    "bachelors",
    "graduate",
];

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    City,
    Zip,
    Precinct,
}

impl RegionKind {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "city" => Some(RegionKind::City),
            "zip" => Some(RegionKind::Zip),
            "precinct" => Some(RegionKind::Precinct),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::City => "city",
            RegionKind::Zip => "zip",
            RegionKind::Precinct => "precinct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub kind: RegionKind,
    pub city: String,
    pub state: String,
    pub county: String,
    pub population: u64,
    pub income_median: Option<f64>,
    /// Shares of (white, black, asian, other).
    pub race_shares: Option<[f64; 4]>,
    /// Shares over [`EDUCATION_LABELS`].
    pub edu_shares: Option<[f64; 5]>,
    pub obama_votes: Option<u64>,
    pub mccain_votes: Option<u64>,
}

impl Region {
    pub fn new(
        region_id: &str,
        kind: RegionKind,
        city: &str,
        state: &str,
        county: &str,
        population: u64,
    ) -> Self {
        Region {
            region_id: region_id.to_string(),
            kind,
            city: city.to_string(),
            state: state.to_string(),
            county: county.to_string(),
            population,
            income_median: None,
            race_shares: None,
            edu_shares: None,
            obama_votes: None,
            mccain_votes: None,
        }
    }

    /// Two-candidate Obama share. `None` when votes are missing or both
    /// counts are zero.
    pub fn vote_share(&self) -> Option<f64> {
        let (o, m) = (self.obama_votes?, self.mccain_votes?);
        let total = o + m;
        (total > 0).then(|| o as f64 / total as f64)
    }

    /// True when vote counts are present but sum to zero.
    pub fn vote_share_undefined(&self) -> bool {
        matches!((self.obama_votes, self.mccain_votes), (Some(0), Some(0)))
    }
}

fn simplex_ok(shares: &[f64]) -> bool {
    shares.iter().all(|&s| s >= -SIMPLEX_TOL && s.is_finite())
        && (shares.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

/// Reads `regions.csv` and joins the optional ACS and vote files.
///
/// Fields that a ground-truth file does not provide stay `None`.
pub fn parse_regions(
    regions_path: &Path,
    acs_path: Option<&Path>,
    votes_path: Option<&Path>,
) -> Result<Vec<Region>, IngestError> {
    let mut regions = read_region_rows(regions_path)?;
    let index: HashMap<String, usize> = regions
        .iter()
        .enumerate()
        .map(|(i, r)| (r.region_id.clone(), i))
        .collect();
    if let Some(p) = acs_path {
        join_acs(p, &index, &mut regions)?;
    }
    if let Some(p) = votes_path {
        join_votes(p, &index, &mut regions)?;
    }
    Ok(regions)
}

fn read_region_rows(path: &Path) -> Result<Vec<Region>, IngestError> {
    let mut reader = io::open_csv(path, REGIONS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let id = r[0].trim();
        if id.is_empty() {
            return Err(IngestError::field(line, "region_id", "empty id"));
        }
        let kind = RegionKind::parse(&r[1])
            .ok_or_else(|| IngestError::field(line, "kind", format!("unknown value `{}`", &r[1])))?;
        let county = r[4].trim();
        if county.is_empty() {
            return Err(IngestError::field(line, "county", "empty county"));
        }
        let population: u64 = parse_num(line, "population", &r[5])?;
        if !seen.insert(id.to_string()) {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id: id.to_string(),
            });
        }
        out.push(Region::new(id, kind, r[2].trim(), r[3].trim(), county, population));
    }
    Ok(out)
}

fn count_field(line: u64, field: &str, raw: &str) -> Result<Option<f64>, IngestError> {
    if raw.trim().is_empty() {
        return Ok(None);
    }
    let v = parse_finite(line, field, raw)?;
    if v < 0.0 {
        return Err(IngestError::field(line, field, format!("negative value {v}")));
    }
    Ok(Some(v))
}

/// All-present or all-absent group of count columns.
fn count_group(
    line: u64,
    r: &csv::StringRecord,
    cols: std::ops::Range<usize>,
    names: &[&str],
) -> Result<Option<Vec<f64>>, IngestError> {
    let mut vals = Vec::with_capacity(cols.len());
    for (i, col) in cols.enumerate() {
        vals.push(count_field(line, names[i], &r[col])?);
    }
    if vals.iter().all(Option::is_none) {
        return Ok(None);
    }
    if vals.iter().any(Option::is_none) {
        return Err(IngestError::Row {
            line,
            message: format!("partially missing group {}", names.join("/")),
        });
    }
    Ok(Some(vals.into_iter().flatten().collect()))
}

fn join_acs(
    path: &Path,
    index: &HashMap<String, usize>,
    regions: &mut [Region],
) -> Result<(), IngestError> {
    let names: Vec<&str> = ACS_HEADER.split(',').collect();
    let mut reader = io::open_csv(path, ACS_HEADER)?;
    let mut seen = HashSet::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let id = r[0].trim();
        let &i = index.get(id).ok_or_else(|| IngestError::UnknownRegion {
            line,
            id: id.to_string(),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id: id.to_string(),
            });
        }
        let region = &mut regions[i];
        region.income_median = count_field(line, names[1], &r[1])?;

        if let Some(race) = count_group(line, &r, 2..5, &names[2..5])? {
            let pop = region.population as f64;
            let known: f64 = race.iter().sum();
            if known > pop + 1e-9 {
                return Err(IngestError::Row {
                    line,
                    message: format!(
                        "race counts sum to {known}, exceeding population {}",
                        region.population
                    ),
                });
            }
            if pop > 0.0 {
                let shares = [race[0] / pop, race[1] / pop, race[2] / pop, (pop - known) / pop];
                if !simplex_ok(&shares) {
                    return Err(IngestError::Row {
                        line,
                        message: format!("race shares {shares:?} are not on the simplex"),
                    });
                }
                region.race_shares = Some(shares);
            }
        }

        if let Some(edu) = count_group(line, &r, 5..10, &names[5..10])? {
            let total: f64 = edu.iter().sum();
            if total > 0.0 {
                let mut shares = [0.0; 5];
                for (s, c) in shares.iter_mut().zip(&edu) {
                    *s = c / total;
                }
                if !simplex_ok(&shares) {
                    return Err(IngestError::Row {
                        line,
                        message: format!("education shares {shares:?} are not on the simplex"),
                    });
                }
                region.edu_shares = Some(shares);
            }
        }
    }
    Ok(())
}

fn join_votes(
    path: &Path,
    index: &HashMap<String, usize>,
    regions: &mut [Region],
) -> Result<(), IngestError> {
    let mut reader = io::open_csv(path, VOTES_HEADER)?;
    let mut seen = HashSet::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let id = r[0].trim();
        let &i = index.get(id).ok_or_else(|| IngestError::UnknownRegion {
            line,
            id: id.to_string(),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id: id.to_string(),
            });
        }
        let votes = |field: &str, raw: &str| -> Result<u64, IngestError> {
            let v: i64 = parse_num(line, field, raw)?;
            u64::try_from(v)
                .map_err(|_| IngestError::field(line, field, format!("negative vote count {v}")))
        };
        regions[i].obama_votes = Some(votes("obama_votes", &r[1])?);
        regions[i].mccain_votes = Some(votes("mccain_votes", &r[2])?);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Train => "train",
            Side::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub region_id: String,
    pub side: Side,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("region `{region_id}`: county `{county}` does not begin with an ASCII letter")]
    BadCounty { region_id: String, county: String },
}

/// Side for a single county name: A-C (case-insensitive) trains, D-Z tests.
pub fn county_side(county: &str) -> Option<Side> {
    let first = county.trim().chars().next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    Some(match first.to_ascii_uppercase() {
        'A' | 'B' | 'C' => Side::Train,
        _ => Side::Test,
    })
}

/// Assigns every region to the train or test side by its county's initial.
pub fn split_by_county(regions: &[Region]) -> Result<Vec<SplitAssignment>, SplitError> {
    regions
        .iter()
        .map(|r| {
            county_side(&r.county)
                .map(|side| SplitAssignment {
                    region_id: r.region_id.clone(),
                    side,
                })
                .ok_or_else(|| SplitError::BadCounty {
                    region_id: r.region_id.clone(),
                    county: r.county.clone(),
                })
        })
        .collect()
}

/// Reads an explicit `region_id,side` override file.
pub fn parse_split_override(path: &Path) -> Result<Vec<SplitAssignment>, IngestError> {
    let mut reader = io::open_csv(path, SPLIT_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let side = match r[1].trim() {
            "train" => Side::Train,
            "test" => Side::Test,
            other => {
                return Err(IngestError::field(line, "side", format!("unknown value `{other}`")))
            }
        };
        let id = r[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(IngestError::Duplicate {
                line,
                what: "region_id".into(),
                id,
            });
        }
        out.push(SplitAssignment { region_id: id, side });
    }
    Ok(out)
}

pub fn split_to_csv(split: &[SplitAssignment]) -> Vec<u8> {
    io::csv_bytes(
        &["region_id", "side"],
        split.iter().map(|s| [s.region_id.as_str(), s.side.as_str()]),
    )
}

/// Population of at least `min_population` and at least `min_cars`
/// retained detections, both inclusive.
pub fn is_eligible_with(region: &Region, detected_cars: usize, min_population: u64, min_cars: usize) -> bool {
    region.population >= min_population && detected_cars >= min_cars
}

/// Eligibility under the default protocol thresholds.
pub fn is_eligible(region: &Region, detected_cars: usize) -> bool {
    is_eligible_with(
        region,
        detected_cars,
        crate::protocol::MIN_POPULATION,
        crate::protocol::MIN_CARS,
    )
}
