//! Evaluation statistics and the sedan/pickup vote heuristic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined for a constant input")]
    Constant,
    #[error("share {0} outside [0, 1]")]
    ShareRange(f64),
    #[error("non-finite input value")]
    NonFinite,
}

fn check_pair(xs: &[f64], ys: &[f64], need: usize) -> Result<(), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < need {
        return Err(StatsError::TooFew { need, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Sample Pearson correlation and its two-sided p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatsError> {
    check_pair(xs, ys, 3)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

/// Fraction of regions whose predicted winner matches the actual winner.
/// A share strictly above 0.5 is Democrat; exactly 0.5 counts as Republican.
pub fn precinct_accuracy(predicted: &[f64], actual: &[f64]) -> Result<f64, StatsError> {
    check_pair(predicted, actual, 1)?;
    if let Some(&bad) = predicted.iter().chain(actual).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StatsError::ShareRange(bad));
    }
    let hits = predicted
        .iter()
        .zip(actual)
        .filter(|(p, a)| (**p > 0.5) == (**a > 0.5))
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean absolute error.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64, StatsError> {
    check_pair(predicted, actual, 1)?;
    let total: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(total / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: String,
    pub n: usize,
    pub pearson_r: f64,
    pub p_value: f64,
    pub mae: f64,
    pub accuracy: Option<f64>,
}

/// Builds a report; `with_accuracy` adds the 50%-threshold classification
/// accuracy (for vote-share targets).
pub fn evaluate(
    target: &str,
    predicted: &[f64],
    actual: &[f64],
    with_accuracy: bool,
) -> Result<EvalReport, StatsError> {
    let (pearson_r, p_value) = pearson(predicted, actual)?;
    let accuracy = if with_accuracy {
        Some(precinct_accuracy(predicted, actual)?)
    } else {
        None
    };
    Ok(EvalReport {
        target: target.to_string(),
        n: predicted.len(),
        pearson_r,
        p_value,
        mae: mae(predicted, actual)?,
        accuracy,
    })
}

/// `choropleth.csv` rows of `region_id,value`.
pub fn choropleth_to_csv(rows: &[(String, f64)]) -> Vec<u8> {
    crate::io::csv_bytes(&["region_id", "value"], rows.iter().map(|(id, v)| [id.clone(), v.to_string()]))
}

/// Sedan and pickup counts with the two-candidate vote of one city.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityTally {
    pub city_id: String,
    pub sedans: u64,
    /// Regular, extended and crew cab pickups combined.
    pub pickups: u64,
    pub obama_votes: u64,
    pub mccain_votes: u64,
}

impl CityTally {
    /// Pickup-to-sedan ratio `r`; infinite when there are no sedans.
    pub fn ratio(&self) -> f64 {
        self.pickups as f64 / self.sedans as f64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeuristicError {
    #[error("no counted city has more sedans than pickups")]
    NoSedanCities,
    #[error("no counted city has more pickups than sedans")]
    NoPickupCities,
}

/// Counts behind the conditional estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    /// Cities counted (`C`): no tie in vehicles or votes.
    pub counted: usize,
    pub excluded_ties: usize,
    pub n_s: usize,
    pub n_p: usize,
    pub n_ds: usize,
    pub n_rp: usize,
    /// `P(Democrat | more sedans)`; absent when no city has more sedans.
    pub p_dem_given_more_sedans: Option<f64>,
    /// `P(Republican | more pickups)`; absent when no city has more pickups.
    pub p_rep_given_more_pickups: Option<f64>,
}

/// Tallies the city sets and forms the joint/marginal frequency ratios.
pub fn conditional_table(tallies: &[CityTally]) -> ConditionalTable {
    let counted: Vec<&CityTally> = tallies
        .iter()
        .filter(|t| t.sedans != t.pickups && t.obama_votes != t.mccain_votes)
        .collect();
    let c = counted.len();
    let more_sedans = |t: &CityTally| t.sedans > t.pickups;
    let dem = |t: &CityTally| t.obama_votes > t.mccain_votes;
    let n_s = counted.iter().filter(|t| more_sedans(t)).count();
    let n_p = c - n_s;
    let n_ds = counted.iter().filter(|t| more_sedans(t) && dem(t)).count();
    let n_rp = counted.iter().filter(|t| !more_sedans(t) && !dem(t)).count();
    // joint / marginal, both as frequencies over the counted cities
    let cond = |joint: usize, marginal: usize| {
        (marginal > 0).then(|| (joint as f64 / c as f64) / (marginal as f64 / c as f64))
    };
    ConditionalTable {
        counted: c,
        excluded_ties: tallies.len() - c,
        n_s,
        n_p,
        n_ds,
        n_rp,
        p_dem_given_more_sedans: cond(n_ds, n_s),
        p_rep_given_more_pickups: cond(n_rp, n_p),
    }
}

/// `(P(Democrat | more sedans), P(Republican | more pickups))`.
pub fn sedan_truck_conditionals(tallies: &[CityTally]) -> Result<(f64, f64), HeuristicError> {
    let t = conditional_table(tallies);
    Ok((
        t.p_dem_given_more_sedans.ok_or(HeuristicError::NoSedanCities)?,
        t.p_rep_given_more_pickups.ok_or(HeuristicError::NoPickupCities)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn city(id: &str, sedans: u64, pickups: u64, obama: u64, mccain: u64) -> CityTally {
        CityTally {
            city_id: id.into(),
            sedans,
            pickups,
            obama_votes: obama,
            mccain_votes: mccain,
        }
    }

    #[test]
    fn gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn t_p_value_df1_is_cauchy() {
        // df = 1: p = 1 - 2 atan(|t|) / pi
        for t in [0.1, 1.0, 3.0, 25.0] {
            let want = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((t_two_sided_p(t, 1.0) - want).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (r, p) = pearson(&xs, &xs.map(|x| 2.0 * x)).unwrap();
        assert_eq!((r, p), (1.0, 0.0));
        let (r, _) = pearson(&xs, &xs.map(|x| -x)).unwrap();
        assert_eq!(r, -1.0);
        assert_eq!(pearson(&xs, &[1.0; 5]), Err(StatsError::Constant));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(precinct_accuracy(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 1.0);
        assert_eq!(precinct_accuracy(&[0.6, 0.4], &[0.55, 0.6]).unwrap(), 0.5);
        assert_eq!(precinct_accuracy(&[0.5; 3], &[0.51; 3]).unwrap(), 0.0);
        assert!(precinct_accuracy(&[], &[]).is_err());
        assert!(precinct_accuracy(&[1.2], &[0.3]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[2.0, 1.0], &[4.0, 2.0]).unwrap(), 1.5);
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(1, 2))));
    }

    #[test]
    fn four_city_case() {
        let cities = [
            city("a", 10, 2, 60, 40),
            city("b", 8, 3, 70, 30),
            city("c", 2, 9, 30, 70),
            city("d", 3, 7, 55, 45),
        ];
        assert_eq!(sedan_truck_conditionals(&cities).unwrap(), (1.0, 0.5));
        let t = conditional_table(&cities);
        assert_eq!((t.counted, t.n_s, t.n_p, t.n_ds, t.n_rp), (4, 2, 2, 2, 1));
    }

    #[test]
    fn degenerate_sets() {
        let cities = [city("a", 10, 2, 60, 40), city("b", 8, 3, 70, 30)];
        let t = conditional_table(&cities);
        assert_eq!(t.p_dem_given_more_sedans, Some(1.0));
        assert_eq!(t.p_rep_given_more_pickups, None);
        assert_eq!(sedan_truck_conditionals(&cities), Err(HeuristicError::NoPickupCities));
        assert_eq!(sedan_truck_conditionals(&[]), Err(HeuristicError::NoSedanCities));
    }

    #[test]
    fn ties_are_excluded() {
        let cities = [city("a", 5, 5, 60, 40), city("b", 8, 3, 50, 50), city("c", 8, 3, 51, 49)];
        let t = conditional_table(&cities);
        assert_eq!(t.counted, 1);
        assert_eq!(t.excluded_ties, 2);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5..40),
                                    a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (r, p) = pearson(&xs, &ys).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let (r2, _) = pearson(&xs2, &ys).unwrap();
            prop_assert!((r - r2).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -a * y).collect();
            let (r3, _) = pearson(&xs, &neg).unwrap();
            prop_assert!((r + r3).abs() < 1e-12);
        }

        #[test]
        fn accuracy_invariant_under_crossing_preserving_maps(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
                                                            k in 0.2f64..5.0) {
            let pred: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let act: Vec<f64> = pts.iter().map(|p| p.1).collect();
            // x -> x^k is strictly monotone on [0,1]; rescale so 0.5 stays fixed
            let warp = |x: f64| if x <= 0.5 { 0.5 * (2.0 * x).powf(k) } else { 1.0 - 0.5 * (2.0 * (1.0 - x)).powf(k) };
            let warped: Vec<f64> = pred.iter().map(|&x| warp(x)).collect();
            prop_assert_eq!(precinct_accuracy(&pred, &act).unwrap(), precinct_accuracy(&warped, &act).unwrap());
        }

        #[test]
        fn conditionals_in_unit_interval_and_duplication_invariant(
            raw in proptest::collection::vec((0u64..20, 0u64..20, 0u64..100, 0u64..100), 0..25),
            k in 2usize..6)
        {
            let cities: Vec<CityTally> = raw.iter().enumerate()
                .map(|(i, &(s, p, o, m))| city(&i.to_string(), s, p, o, m)).collect();
            let t = conditional_table(&cities);
            for v in [t.p_dem_given_more_sedans, t.p_rep_given_more_pickups].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let dup: Vec<CityTally> = cities.iter().flat_map(|c| std::iter::repeat_n(c.clone(), k)).collect();
            let td = conditional_table(&dup);
            prop_assert_eq!(t.p_dem_given_more_sedans, td.p_dem_given_more_sedans);
            prop_assert_eq!(t.p_rep_given_more_pickups, td.p_rep_given_more_pickups);
        }
    }
}
