use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ForecastRecord;
use crate::stats::{mean_sd, pearson};

/// Signed percent error with the denominator floored at 1.
pub fn pct_error(y_hat: f64, y_true: f64) -> f64 {
    100.0 * (y_hat - y_true) / y_true.max(1.0)
}

/// Mean and population SD of absolute percent errors. `None` for no records.
pub fn mape<'a>(records: impl IntoIterator<Item = &'a ForecastRecord>) -> Option<(f64, f64)> {
    let points: Vec<f64> = records
        .into_iter()
        .map(|r| pct_error(r.y_hat, r.y_true).abs())
        .collect();
    mean_sd(&points)
}

/// Mean and population SD of signed percent errors. `None` for no records.
pub fn mpe<'a>(records: impl IntoIterator<Item = &'a ForecastRecord>) -> Option<(f64, f64)> {
    let points: Vec<f64> = records.into_iter().map(|r| pct_error(r.y_hat, r.y_true)).collect();
    mean_sd(&points)
}

#[derive(Debug, Error, PartialEq)]
pub enum LeadLagError {
    #[error("series lengths differ ({pred} vs {actual})")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("need at least {needed} overlapping difference points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("difference series is constant at every lag")]
    Degenerate,
}

/// Cross-correlation profile of differenced forecast and actual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadLagResult {
    pub profile: BTreeMap<i32, f64>,
    pub ell_star: i32,
    pub rho_star: f64,
}

const MIN_LAG_POINTS: usize = 3;
const TIE_TOL: f64 = 1e-12;

fn diff(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `rho(l) = Pearson(dpred[t - l], dactual[t])` over every `t` where both
/// differences exist, for `l` in `-lag_max..=lag_max`.
///
/// Inputs are aligned week by week; `NaN` marks a missing value. Lags with
/// fewer than three pairs or zero variance are left out of the profile.
/// `ell_star` maximises `rho`; near-ties (within 1e-12) go to the lag
/// closest to zero, then to the negative one.
pub fn lead_lag(pred: &[f64], actual: &[f64], lag_max: usize) -> Result<LeadLagResult, LeadLagError> {
    if pred.len() != actual.len() {
        return Err(LeadLagError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    let dp = diff(pred);
    let da = diff(actual);
    let overlap = dp
        .iter()
        .zip(&da)
        .filter(|(p, a)| p.is_finite() && a.is_finite())
        .count();
    let needed = lag_max + 3;
    if overlap < needed {
        return Err(LeadLagError::TooShort { needed, got: overlap });
    }
    let n = dp.len() as i64;
    let lag_max = lag_max as i64;
    let mut profile = BTreeMap::new();
    for ell in -lag_max..=lag_max {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
            .filter_map(|t| {
                let s = t - ell;
                if s < 0 || s >= n {
                    return None;
                }
                let (x, y) = (dp[s as usize], da[t as usize]);
                (x.is_finite() && y.is_finite()).then_some((x, y))
            })
            .unzip();
        if xs.len() < MIN_LAG_POINTS {
            continue;
        }
        if let Some(r) = pearson(&xs, &ys) {
            profile.insert(ell as i32, r);
        }
    }
    let best = profile.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let (&ell_star, &rho_star) = profile
        .iter()
        .filter(|(_, r)| **r >= best - TIE_TOL)
        .min_by_key(|(l, _)| (l.abs(), **l))
        .ok_or(LeadLagError::Degenerate)?;
    Ok(LeadLagResult {
        profile,
        ell_star,
        rho_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelId;
    use crate::panel::WeekStamp;

    fn rec(y_hat: f64, y_true: f64) -> ForecastRecord {
        ForecastRecord::new(
            "A",
            WeekStamp::parse("2021-01-03").unwrap(),
            ModelId::Lag1,
            1,
            y_hat,
            y_true,
        )
    }

    #[test]
    fn point_errors() {
        assert_eq!(mape(&[rec(110.0, 100.0)]), Some((10.0, 0.0)));
        assert_eq!(mape(&[rec(0.5, 0.0)]), Some((50.0, 0.0)));
        assert_eq!(mpe(&[rec(90.0, 100.0)]), Some((-10.0, 0.0)));
        assert_eq!(mape(&[rec(3.0, 3.0), rec(7.0, 7.0)]), Some((0.0, 0.0)));
        assert_eq!(mape(&[]), None);
    }

    #[test]
    fn symmetric_errors() {
        let (m, sd) = mpe(&[rec(110.0, 100.0), rec(90.0, 100.0)]).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((sd - 10.0).abs() < 1e-12);
        let (m, sd) = mape(&[rec(110.0, 100.0), rec(90.0, 100.0)]).unwrap();
        assert!((m - 10.0).abs() < 1e-12 && sd.abs() < 1e-12);
    }

    fn series() -> Vec<f64> {
        vec![
            3.0, 5.0, 4.0, 9.0, 7.0, 8.0, 12.0, 10.0, 15.0, 11.0, 13.0, 18.0, 14.0, 16.0, 21.0, 17.0,
        ]
    }

    #[test]
    fn identity_peaks_at_zero() {
        let y = series();
        let res = lead_lag(&y, &y, 4).unwrap();
        assert_eq!(res.ell_star, 0);
        assert!((res.rho_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn persistence_peaks_at_minus_one() {
        let y = series();
        let mut pred = vec![f64::NAN];
        pred.extend_from_slice(&y[..y.len() - 1]);
        let res = lead_lag(&pred, &y, 4).unwrap();
        assert_eq!(res.ell_star, -1);
        assert!((res.rho_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leading_forecast_peaks_at_plus_two() {
        let y = series();
        let mut pred: Vec<f64> = y[2..].to_vec();
        pred.extend([f64::NAN, f64::NAN]);
        let res = lead_lag(&pred, &y, 4).unwrap();
        assert_eq!(res.ell_star, 2);
        assert!((res.rho_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_bounded_and_complete() {
        let y = series();
        let pred: Vec<f64> = y.iter().map(|v| v * 0.5 + (v * 3.1).sin()).collect();
        let res = lead_lag(&pred, &y, 4).unwrap();
        assert_eq!(res.profile.len(), 9);
        assert!(res.profile.values().all(|r| (-1.0..=1.0).contains(r)));
        assert_eq!(res.rho_star, res.profile[&res.ell_star]);
    }

    #[test]
    fn tie_prefers_zero_then_negative() {
        // alternating differences correlate perfectly at every even lag
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let res = lead_lag(&y, &y, 4).unwrap();
        assert_eq!(res.ell_star, 0);
        let mut pred = vec![f64::NAN];
        pred.extend_from_slice(&y[..19]);
        let res = lead_lag(&pred, &y, 4).unwrap();
        assert_eq!(res.ell_star, -1);
    }

    #[test]
    fn degenerate_and_short() {
        let flat: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(lead_lag(&flat, &flat, 4), Err(LeadLagError::Degenerate));
        let short = [1.0, 2.0, 4.0, 3.0, 5.0];
        assert!(matches!(
            lead_lag(&short, &short, 4),
            Err(LeadLagError::TooShort { needed: 7, got: 4 })
        ));
    }
}
