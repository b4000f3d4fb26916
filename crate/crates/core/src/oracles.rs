//! Brute-force reference implementations used to cross-check the numerical
//! modules. Nothing here calls into the modules being checked.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("input too large for the oracle: {0}")]
    TooLarge(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("singular system")]
    Singular,
    #[error("need at least {0} samples")]
    TooFew(usize),
    #[error("constant input")]
    Constant,
    #[error("no ground-truth boxes")]
    NoTruth,
}

pub const ISOTONIC_MAX_N: usize = 12;
pub const RIDGE_MAX_COLS: usize = 20;
pub const AP_MAX_DETECTIONS: usize = 20;

/// Exact isotonic least squares by enumerating every contiguous block
/// partition of the score-sorted sample. Equal scores always share a block.
///
/// Returns the fitted value per input position and the squared error.
pub fn oracle_isotonic(scores: &[f64], labels: &[f64]) -> Result<(Vec<f64>, f64), OracleError> {
    let n = scores.len();
    if labels.len() != n {
        return Err(OracleError::Length(n, labels.len()));
    }
    if n > ISOTONIC_MAX_N {
        return Err(OracleError::TooLarge(format!("n = {n} > {ISOTONIC_MAX_N}")));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // groups of equal score, in ascending score order
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let m = groups.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << (m - 1)) {
        // bit k set => cut between group k and k+1
        let mut means = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut cur: Vec<usize> = Vec::new();
        for (k, g) in groups.iter().enumerate() {
            cur.extend(g);
            if k == m - 1 || mask & (1 << k) != 0 {
                let mean = cur.iter().map(|&i| labels[i]).sum::<f64>() / cur.len() as f64;
                means.push(mean);
                members.push(std::mem::take(&mut cur));
            }
        }
        if means.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let mut fit = vec![0.0; n];
        let mut sse = 0.0;
        for (mean, idx) in means.iter().zip(&members) {
            for &i in idx {
                fit[i] = *mean;
                sse += (labels[i] - mean) * (labels[i] - mean);
            }
        }
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, fit));
        }
    }
    // the all-in-one partition is always feasible
    let (sse, fit) = best.expect("at least one feasible partition");
    Ok((fit, sse))
}

/// Penalized least squares `||y - X w - b||^2 + lambda ||w||^2` solved on the
/// full `(d+1)` normal system by Gaussian elimination with partial pivoting.
pub fn oracle_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64), OracleError> {
    let n = x.len();
    if y.len() != n {
        return Err(OracleError::Length(n, y.len()));
    }
    if n == 0 {
        return Err(OracleError::TooFew(1));
    }
    let d = x[0].len();
    if d > RIDGE_MAX_COLS {
        return Err(OracleError::TooLarge(format!("{d} columns > {RIDGE_MAX_COLS}")));
    }
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(OracleError::Length(d, row.len()));
    }
    let m = d + 1;
    // augmented matrix [A | rhs], last unknown is the intercept
    let mut a = vec![vec![0.0; m + 1]; m];
    for (row, &t) in x.iter().zip(y) {
        let ext: Vec<f64> = row.iter().copied().chain(std::iter::once(1.0)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += ext[i] * ext[j];
            }
            a[i][m] += ext[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate().take(d) {
        r[i] += lambda;
    }
    let scale = a.iter().flat_map(|r| r[..m].iter()).fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(OracleError::Singular);
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut sol = vec![0.0; m];
    for i in (0..m).rev() {
        let tail: f64 = (i + 1..m).map(|j| a[i][j] * sol[j]).sum();
        sol[i] = (a[i][m] - tail) / a[i][i];
    }
    let b = sol.pop().expect("intercept");
    Ok((sol, b))
}

/// Average precision as the sum of precision at every correct detection,
/// divided by the number of ground-truth boxes.
pub fn oracle_ap(labels: &[bool], n_truth: usize) -> Result<f64, OracleError> {
    if n_truth == 0 {
        return Err(OracleError::NoTruth);
    }
    if labels.len() > AP_MAX_DETECTIONS {
        return Err(OracleError::TooLarge(format!("{} detections", labels.len())));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &hit) in labels.iter().enumerate() {
        if hit {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_truth as f64)
}

/// Double-double value `hi + lo`.
#[derive(Clone, Copy, Debug, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd { hi: p, lo: a.mul_add(b, -p) }
}

impl Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let s = two_sum(s.hi, s.lo + t.hi);
        two_sum(s.hi, s.lo + t.lo)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.hi / o.hi;
        two_sum(q1, q2).add(Dd::from(q3))
    }

    fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::default();
        }
        let x = self.hi.sqrt();
        let sq = two_prod(x, x);
        let corr = (self.add(sq.neg())).hi / (2.0 * x);
        two_sum(x, corr)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Pearson correlation with double-double sums, and the two-sided p-value
/// from the closed-form Student-t distribution for integer degrees of
/// freedom.
pub fn oracle_pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), OracleError> {
    let n = xs.len();
    if ys.len() != n {
        return Err(OracleError::Length(n, ys.len()));
    }
    if n < 3 {
        return Err(OracleError::TooFew(3));
    }
    let nn = Dd::from(n as f64);
    let mean = |v: &[f64]| v.iter().fold(Dd::default(), |s, &x| s.add(Dd::from(x))).div(nn);
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut syy, mut sxy) = (Dd::default(), Dd::default(), Dd::default());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = Dd::from(x).add(mx.neg());
        let dy = Dd::from(y).add(my.neg());
        sxx = sxx.add(dx.mul(dx));
        syy = syy.add(dy.mul(dy));
        sxy = sxy.add(dx.mul(dy));
    }
    if sxx.hi == 0.0 || syy.hi == 0.0 {
        return Err(OracleError::Constant);
    }
    let r = sxy.div(sxx.mul(syy).sqrt());
    let r_val = r.value().clamp(-1.0, 1.0);
    let one_minus_r2 = Dd::from(1.0).add(r.mul(r).neg());
    if one_minus_r2.hi <= 0.0 {
        return Ok((r_val, 0.0));
    }
    let nu = n - 2;
    // theta = atan(t / sqrt(nu)) with t = r sqrt(nu / (1 - r^2)), so
    // sin(theta) = |r| and cos^2(theta) = 1 - r^2
    let sin = r_val.abs();
    let cos2 = one_minus_r2.value();
    let cos = cos2.sqrt();
    let theta = sin.atan2(cos);
    let a = if nu % 2 == 1 {
        let mut series = 0.0;
        if nu > 1 {
            let mut term = cos;
            series = term;
            let mut k = 1;
            while 2 * k + 1 <= nu - 2 {
                term *= cos2 * (2 * k) as f64 / (2 * k + 1) as f64;
                series += term;
                k += 1;
            }
        }
        2.0 / std::f64::consts::PI * (theta + sin * series)
    } else {
        let mut term = 1.0;
        let mut series = 1.0;
        let mut k = 1;
        while 2 * k <= nu - 2 {
            term *= cos2 * (2 * k - 1) as f64 / (2 * k) as f64;
            series += term;
            k += 1;
        }
        sin * series
    };
    Ok((r_val, (1.0 - a).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_small_cases() {
        let (fit, obj) = oracle_isotonic(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(fit, vec![0.5, 0.5, 1.0]);
        assert_eq!(obj, 0.5);
        let (fit, obj) = oracle_isotonic(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(fit, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(obj, 0.0);
        let (fit, _) = oracle_isotonic(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(fit, vec![1.0; 3]);
        assert!(oracle_isotonic(&[0.0; 13], &[0.0; 13]).is_err());
    }

    #[test]
    fn isotonic_ties_share_a_value() {
        let (fit, _) = oracle_isotonic(&[1.0, 1.0, 2.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(fit, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn ridge_identity_design_limit() {
        // the exact lambda = 0 system is rank deficient with an intercept;
        // the vanishing-penalty limit is w = y - mean(y), b = mean(y)
        let y = [3.0, -1.0, 4.0, 2.0];
        let x: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        assert_eq!(oracle_ridge(&x, &y, 0.0), Err(OracleError::Singular));
        let (w, b) = oracle_ridge(&x, &y, 1e-10).unwrap();
        assert!((b - 2.0).abs() < 1e-8);
        for (wi, yi) in w.iter().zip(y) {
            assert!((wi - (yi - 2.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_huge_penalty() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 0.5], vec![3.0, 1.0]];
        let (w, b) = oracle_ridge(&x, &[1.0, 2.0, 6.0], 1e12).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-9));
        assert!((b - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(oracle_ap(&[true, false, true], 2).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(oracle_ap(&[], 3).unwrap(), 0.0);
        assert_eq!(oracle_ap(&[true], 0), Err(OracleError::NoTruth));
    }

    #[test]
    fn pearson_closed_forms() {
        let (r, p) = oracle_pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((r, p), (1.0, 0.0));
        // n = 3, r = 0.5: nu = 1, p = 1 - 2 asin(0.5) / pi = 2/3
        let (r, p) = oracle_pearson(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!((p - 2.0 / 3.0).abs() < 1e-14);
        // n = 4 (nu = 2): p = 1 - |r|
        let (r, p) = oracle_pearson(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, 3.0, 2.0]).unwrap();
        assert!((p - (1.0 - r.abs())).abs() < 1e-14);
        assert_eq!(oracle_pearson(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(OracleError::Constant));
    }
}
