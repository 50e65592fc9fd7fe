//! Nonparametric tests used to judge learning curves and paired runs.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{HicaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    pub z: f64,
    /// One-sided p-value for an increasing trend.
    pub p_increasing: f64,
}

/// Mann-Kendall trend test with the tie correction on the variance.
pub fn mann_kendall(series: &[f64]) -> Result<MannKendall> {
    let n = series.len();
    if n < 3 {
        return Err(HicaError::InvalidArgument(format!(
            "trend test needs at least 3 points, got {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(HicaError::NonFinite("trend series".into()));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]).expect("finite") {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if variance <= 0.0 {
        0.0
    } else if s > 0 {
        (s as f64 - 1.0) / variance.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / variance.sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(MannKendall {
        s,
        variance,
        z,
        p_increasing: 1.0 - normal.cdf(z),
    })
}

/// One-sided sign test that `a` tends to be smaller than `b`. Ties are
/// dropped. Returns `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HicaError::dim("sign test", a.len(), b.len()));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count() as u64;
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count() as u64;
    let n = wins + losses;
    if n == 0 {
        return Ok(1.0);
    }
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    Ok(if wins == 0 { 1.0 } else { binom.sf(wins - 1) })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increasing_series_is_significant() {
        let up: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mk = mann_kendall(&up).unwrap();
        assert_eq!(mk.s, 190);
        // n = 20: var = 20*19*45/18 = 950
        assert!((mk.variance - 950.0).abs() < 1e-9);
        assert!((mk.z - 189.0 / 950f64.sqrt()).abs() < 1e-12);
        assert!(mk.p_increasing < 1e-6);
        let down: Vec<f64> = up.iter().rev().cloned().collect();
        assert!(mann_kendall(&down).unwrap().p_increasing > 0.999);
    }

    #[test]
    fn ties_shrink_the_variance() {
        // Groups of sizes 2 and 3: tie term = 2*1*9 + 3*2*11 = 84.
        let series = [1.0, 1.0, 2.0, 2.0, 2.0];
        let mk = mann_kendall(&series).unwrap();
        assert_eq!(mk.s, 6);
        assert!((mk.variance - (5.0 * 4.0 * 15.0 - 84.0) / 18.0).abs() < 1e-12);
        let flat = mann_kendall(&[3.0; 6]).unwrap();
        assert_eq!((flat.s, flat.z), (0, 0.0));
        assert!(mann_kendall(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn sign_test_matches_binomial_tail() {
        let a = [1.0; 10];
        let b = [2.0; 10];
        assert!((sign_test_less(&a, &b).unwrap() - 1.0 / 1024.0).abs() < 1e-12);
        // 8 wins, 2 losses: (45 + 10 + 1) / 1024
        let mut b2 = [2.0; 10];
        b2[0] = 0.0;
        b2[1] = 0.0;
        assert!((sign_test_less(&a, &b2).unwrap() - 56.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_less(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
