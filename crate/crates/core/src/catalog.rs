//! Vehicle category catalog: closed label sets and `catalog.csv` ingestion.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::IngestError;
use crate::io::{self, parse_finite, parse_num};

pub const CATALOG_HEADER: &str = "category_id,make,model,body_type,year_min,year_max,country,city_mpg,highway_mpg,price_usd,is_hybrid,is_electric";

pub const MIN_YEAR: i32 = 1990;
pub const MAX_YEAR: i32 = 2014;

/// Makes, in the canonical (alphabetical) order used by the feature layout.
pub const MAKES: [&str; 58] = [
    "Acura",
    "AM General",
    "Aston Martin",
    "Audi",
    "Bentley",
    "BMW",
    "Buick",
    "Cadillac",
    "Chevrolet",
    "Chrysler",
    "Daewoo",
    "Dodge",
    "Eagle",
    "Ferrari",
    "Fiat",
    "Fisker",
    "Ford",
    "Geo",
    "GMC",
    "Honda",
    "Hummer",
    "Hyundai",
    "Infiniti",
    "Isuzu",
    "Jaguar",
    "Jeep",
    "Kia",
    "Lamborghini",
    "Land Rover",
    "Lexus",
    "Lincoln",
    "Lotus",
    "Maserati",
    "Maybach",
    "Mazda",
    "McLaren",
    "Mercedes-Benz",
    "Mercury",
    "Mini",
    "Mitsubishi",
    "Nissan",
    "Oldsmobile",
    "Panoz",
    "Plymouth",
    "Pontiac",
    "Porsche",
    "Ram",
    "Rolls-Royce",
    "Saab",
    "Saturn",
    "Scion",
    "Smart",
    "Subaru",
    "Suzuki",
    "Tesla",
    "Toyota",
    "Volkswagen",
    "Volvo",
];

pub const BODY_TYPES: [&str; 11] = [
    "convertible",
    "coupe",
    "hatchback",
    "minivan",
    "sedan",
    "SUV",
    "truck-regular",
    "truck-extended",
    "truck-crew",
    "van",
    "wagon",
];

pub const COUNTRIES: [&str; 7] = [
    "England",
    "Germany",
    "Italy",
    "Japan",
    "South Korea",
    "Sweden",
    "USA",
];

/// Five-year model-year buckets, by lower bound.
pub const YEAR_BUCKETS: [(i32, i32); 5] = [
    (1990, 1994),
    (1995, 1999),
    (2000, 2004),
    (2005, 2009),
    (2010, 2014),
];

macro_rules! label_set {
    ($(#[$meta:meta])* $name:ident, $table:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(u8);

        impl $name {
            pub const COUNT: usize = $table.len();

            /// Case-insensitive lookup of a label name.
            pub fn parse(raw: &str) -> Option<Self> {
                let raw = raw.trim();
                $table
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(raw))
                    .map(|i| $name(i as u8))
            }

            pub fn from_index(i: usize) -> Option<Self> {
                (i < $table.len()).then(|| $name(i as u8))
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }

            pub fn name(self) -> &'static str {
                $table[self.0 as usize]
            }

            pub fn all() -> impl Iterator<Item = Self> {
                (0..$table.len()).map(|i| $name(i as u8))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                $name::parse(&raw).ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        raw
                    ))
                })
            }
        }
    };
}

label_set!(
    /// One of the 58 vehicle makes.
    Make,
    MAKES
);
label_set!(
    /// One of the 11 body types.
    BodyType,
    BODY_TYPES
);
label_set!(
    /// Manufacturing country.
    Country,
    COUNTRIES
);

impl BodyType {
    pub const SEDAN: BodyType = BodyType(4);

    /// Regular, extended and crew cab pickups.
    pub fn is_pickup(self) -> bool {
        (6..=8).contains(&self.0)
    }
}

impl Country {
    pub const USA: Country = Country(6);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleCategory {
    pub category_id: String,
    pub make: Make,
    pub model: String,
    pub body_type: BodyType,
    pub year_min: i32,
    pub year_max: i32,
    pub country: Country,
    pub city_mpg: Option<f64>,
    pub highway_mpg: Option<f64>,
    /// Price in 2012 US dollars.
    pub price_usd: f64,
    pub is_hybrid: bool,
    pub is_electric: bool,
}

impl VehicleCategory {
    /// Index into [`YEAR_BUCKETS`], chosen by the earliest possible model year.
    pub fn year_bucket(&self) -> usize {
        (((self.year_min - MIN_YEAR) / 5).clamp(0, 4)) as usize
    }

    /// Checks the record invariants, returning the offending field and reason.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.category_id.trim().is_empty() {
            return Err(("category_id", "empty id".into()));
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year_min) {
            return Err(("year_min", format!("{} outside {MIN_YEAR}..={MAX_YEAR}", self.year_min)));
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year_max) {
            return Err(("year_max", format!("{} outside {MIN_YEAR}..={MAX_YEAR}", self.year_max)));
        }
        if self.year_min > self.year_max {
            return Err(("year_max", format!("{} precedes year_min {}", self.year_max, self.year_min)));
        }
        if !(self.price_usd > 0.0 && self.price_usd.is_finite()) {
            return Err(("price_usd", format!("must be positive, got {}", self.price_usd)));
        }
        for (field, mpg) in [("city_mpg", self.city_mpg), ("highway_mpg", self.highway_mpg)] {
            if let Some(v) = mpg {
                if !(v > 0.0 && v.is_finite()) {
                    return Err((field, format!("must be positive, got {v}")));
                }
            }
        }
        if self.is_electric && self.is_hybrid {
            return Err(("is_hybrid", "electric cars cannot also be hybrid".into()));
        }
        Ok(())
    }
}

/// A validated catalog with id lookup.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    categories: Vec<VehicleCategory>,
    index: std::collections::HashMap<String, usize>,
}

impl Catalog {
    pub fn new(categories: Vec<VehicleCategory>) -> Result<Self, IngestError> {
        let mut index = std::collections::HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            let line = i as u64 + 2;
            c.validate()
                .map_err(|(field, msg)| IngestError::field(line, field, msg))?;
            if index.insert(c.category_id.clone(), i).is_some() {
                return Err(IngestError::Duplicate {
                    line,
                    what: "category_id".into(),
                    id: c.category_id.clone(),
                });
            }
        }
        Ok(Catalog { categories, index })
    }

    pub fn get(&self, id: &str) -> Option<&VehicleCategory> {
        self.index.get(id).map(|&i| &self.categories[i])
    }

    pub fn categories(&self) -> &[VehicleCategory] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let header: Vec<&str> = CATALOG_HEADER.split(',').collect();
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rows = self.categories.iter().map(|c| {
            vec![
                c.category_id.clone(),
                c.make.name().to_string(),
                c.model.clone(),
                c.body_type.name().to_string(),
                c.year_min.to_string(),
                c.year_max.to_string(),
                c.country.name().to_string(),
                fmt_opt(c.city_mpg),
                fmt_opt(c.highway_mpg),
                c.price_usd.to_string(),
                c.is_hybrid.to_string(),
                c.is_electric.to_string(),
            ]
        });
        io::csv_bytes(&header, rows)
    }
}

fn parse_bool(line: u64, field: &str, raw: &str) -> Result<bool, IngestError> {
    match raw.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(IngestError::field(
            line,
            field,
            format!("expected `true` or `false`, got `{other}`"),
        )),
    }
}

fn parse_label<T>(
    line: u64,
    field: &str,
    raw: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<T, IngestError> {
    parse(raw).ok_or_else(|| IngestError::field(line, field, format!("unknown value `{raw}`")))
}

/// Reads and validates `catalog.csv`, returning categories in file order.
pub fn parse_catalog(path: &Path) -> Result<Vec<VehicleCategory>, IngestError> {
    let mut reader = io::open_csv(path, CATALOG_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in io::records(&mut reader) {
        let (line, r) = rec?;
        let cat = VehicleCategory {
            category_id: r[0].trim().to_string(),
            make: parse_label(line, "make", &r[1], Make::parse)?,
            model: r[2].to_string(),
            body_type: parse_label(line, "body_type", &r[3], BodyType::parse)?,
            year_min: parse_num(line, "year_min", &r[4])?,
            year_max: parse_num(line, "year_max", &r[5])?,
            country: parse_label(line, "country", &r[6], Country::parse)?,
            city_mpg: opt_finite(line, "city_mpg", &r[7])?,
            highway_mpg: opt_finite(line, "highway_mpg", &r[8])?,
            price_usd: parse_finite(line, "price_usd", &r[9])?,
            is_hybrid: parse_bool(line, "is_hybrid", &r[10])?,
            is_electric: parse_bool(line, "is_electric", &r[11])?,
        };
        cat.validate()
            .map_err(|(field, msg)| IngestError::field(line, field, msg))?;
        if !seen.insert(cat.category_id.clone()) {
            return Err(IngestError::Duplicate {
                line,
                what: "category_id".into(),
                id: cat.category_id,
            });
        }
        out.push(cat);
    }
    Ok(out)
}

fn opt_finite(line: u64, field: &str, raw: &str) -> Result<Option<f64>, IngestError> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse_finite(line, field, raw).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{CATALOG_HEADER}\n{body}").unwrap();
        f
    }

    #[test]
    fn label_sets_have_expected_sizes() {
        assert_eq!(Make::COUNT, 58);
        assert_eq!(BodyType::COUNT, 11);
        assert_eq!(Country::COUNT, 7);
        let unique: HashSet<_> = MAKES.iter().collect();
        assert_eq!(unique.len(), 58);
        // alphabetical, ignoring case
        for w in MAKES.windows(2) {
            assert!(w[0].to_lowercase() < w[1].to_lowercase(), "{} vs {}", w[0], w[1]);
        }
    }

    #[test]
    fn accepts_valid_row() {
        let f = write_tmp("c1,Honda,Accord,sedan,1990,1994,Japan,20,30,10000,false,false\n");
        let cats = parse_catalog(f.path()).unwrap();
        assert_eq!(cats.len(), 1);
        assert_eq!(cats[0].make.name(), "Honda");
        assert_eq!(cats[0].body_type, BodyType::SEDAN);
        assert_eq!(cats[0].year_bucket(), 0);
    }

    #[test]
    fn electric_may_omit_mpg() {
        let f = write_tmp("t1,Tesla,Model S,sedan,2012,2014,USA,,,70000,false,true\n");
        let cats = parse_catalog(f.path()).unwrap();
        assert_eq!(cats[0].city_mpg, None);
        assert!(cats[0].is_electric);
    }

    #[test]
    fn rejects_unknown_make_with_line() {
        let f = write_tmp(
            "c1,Honda,Accord,sedan,1990,1994,Japan,20,30,10000,false,false\n\
             c2,Hondda,Civic,sedan,1990,1994,Japan,20,30,10000,false,false\n",
        );
        let err = parse_catalog(f.path()).unwrap_err();
        match &err {
            IngestError::Field { line, field, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(field, "make");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("Hondda"));
    }

    #[test]
    fn rejects_duplicate_id() {
        let f = write_tmp(
            "c42,Honda,Accord,sedan,1990,1994,Japan,20,30,10000,false,false\n\
             c42,Ford,F-150,truck-regular,2010,2014,USA,15,20,30000,false,false\n",
        );
        match parse_catalog(f.path()).unwrap_err() {
            IngestError::Duplicate { line, id, .. } => {
                assert_eq!(line, 3);
                assert_eq!(id, "c42");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_number_and_bad_years() {
        let f = write_tmp("c1,Honda,Accord,sedan,19x0,1994,Japan,20,30,10000,false,false\n");
        assert!(matches!(
            parse_catalog(f.path()).unwrap_err(),
            IngestError::Field { ref field, .. } if field == "year_min"
        ));
        let f = write_tmp("c1,Honda,Accord,sedan,1989,1994,Japan,20,30,10000,false,false\n");
        assert!(parse_catalog(f.path()).is_err());
        let f = write_tmp("c1,Honda,Accord,sedan,1996,1994,Japan,20,30,10000,false,false\n");
        assert!(parse_catalog(f.path()).is_err());
        let f = write_tmp("c1,Honda,Accord,sedan,1990,1994,Japan,20,30,0,false,false\n");
        assert!(parse_catalog(f.path()).is_err());
        let f = write_tmp("c1,Honda,Accord,sedan,1990,1994,Japan,20,30,100,true,true\n");
        assert!(parse_catalog(f.path()).is_err());
    }

    #[test]
    fn rejects_wrong_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,make").unwrap();
        assert!(matches!(
            parse_catalog(f.path()).unwrap_err(),
            IngestError::Header { .. }
        ));
    }

    #[test]
    fn csv_round_trip() {
        let f = write_tmp(
            "c1,Honda,Accord,sedan,1990,1994,Japan,20,30,10000.5,true,false\n\
             t1,Tesla,Model S,sedan,2012,2014,USA,,,70000,false,true\n",
        );
        let cats = parse_catalog(f.path()).unwrap();
        let catalog = Catalog::new(cats.clone()).unwrap();
        let mut g = tempfile::NamedTempFile::new().unwrap();
        g.write_all(&catalog.to_csv()).unwrap();
        assert_eq!(parse_catalog(g.path()).unwrap(), cats);
    }
}
