//! Classical one-step-ahead forecasters over an `L`-week window.
//!
//! Every forecaster returns a [`Forecast`] whose value is finite and
//! non-negative: negative point forecasts are clipped to zero, and
//! degenerate fits walk down the ladder ARX → AR(1) → Lag-1 with
//! `fallback_used` set.

mod holt;
pub mod ols;
mod regression;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::WeekStamp;

pub use holt::{fit_forecast_holt, fit_holt, HoltFit};
pub use regression::{fit_forecast_ar1, fit_forecast_arx, fit_forecast_linreg, forecast_lag1, impute_window};

/// Default rolling window length.
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("{model} needs at least {needed} observations, got {got}")]
    TooShort { model: ModelId, needed: usize, got: usize },
    #[error("history has {history} weeks but exogenous window has {exog}")]
    LengthMismatch { history: usize, exog: usize },
    #[error("week {0} in exogenous window does not match history")]
    WeekMismatch(WeekStamp),
    #[error("weeks {0} and {1} are not consecutive")]
    NonConsecutive(WeekStamp, WeekStamp),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

/// Every model class the harness knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "lag1")]
    Lag1,
    #[serde(rename = "ar1")]
    Ar1,
    #[serde(rename = "es")]
    Holt,
    #[serde(rename = "arx")]
    Arx,
    #[serde(rename = "linreg")]
    LinReg,
    #[serde(rename = "llm")]
    LlmDirect,
    #[serde(rename = "hybrid_arx")]
    HybridArx,
    #[serde(rename = "hybrid_linreg")]
    HybridLinReg,
}

impl ModelId {
    pub const ALL: [ModelId; 8] = [
        ModelId::Lag1,
        ModelId::Ar1,
        ModelId::Holt,
        ModelId::Arx,
        ModelId::LinReg,
        ModelId::LlmDirect,
        ModelId::HybridArx,
        ModelId::HybridLinReg,
    ];

    pub const CLASSICAL: [ModelId; 4] = [ModelId::Lag1, ModelId::Ar1, ModelId::Holt, ModelId::Arx];

    /// Short identifier used on the command line and in JSON.
    pub fn key(self) -> &'static str {
        match self {
            ModelId::Lag1 => "lag1",
            ModelId::Ar1 => "ar1",
            ModelId::Holt => "es",
            ModelId::Arx => "arx",
            ModelId::LinReg => "linreg",
            ModelId::LlmDirect => "llm",
            ModelId::HybridArx => "hybrid_arx",
            ModelId::HybridLinReg => "hybrid_linreg",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelId::Lag1 => "Lag-1",
            ModelId::Ar1 => "AR(1)",
            ModelId::Holt => "Exp. Smoothing",
            ModelId::Arx => "ARX",
            ModelId::LinReg => "Linear Reg.",
            ModelId::LlmDirect => "LLM (Prompt-Only)",
            ModelId::HybridArx => "Hybrid ARX",
            ModelId::HybridLinReg => "Hybrid Linear Reg.",
        }
    }

    /// Whether repeated runs can differ (the model talks to a backend).
    pub fn uses_backend(self) -> bool {
        matches!(self, ModelId::LlmDirect | ModelId::HybridArx | ModelId::HybridLinReg)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "lag1" | "lag-1" | "persistence" => ModelId::Lag1,
            "ar1" | "ar(1)" => ModelId::Ar1,
            "es" | "holt" | "exp_smoothing" => ModelId::Holt,
            "arx" => ModelId::Arx,
            "linreg" | "lr" => ModelId::LinReg,
            "llm" | "llm_direct" => ModelId::LlmDirect,
            "hybrid_arx" | "hybridarx" => ModelId::HybridArx,
            "hybrid_linreg" | "hybrid_lr" => ModelId::HybridLinReg,
            other => return Err(format!("unknown model `{other}`")),
        })
    }
}

fn check_consecutive(weeks: &[WeekStamp]) -> Result<(), ModelError> {
    for pair in weeks.windows(2) {
        if pair[0].weeks_until(pair[1]) != 1 || (pair[1].0 - pair[0].0).num_days() != 7 {
            return Err(ModelError::NonConsecutive(pair[0], pair[1]));
        }
    }
    Ok(())
}

/// The most recent weekly observations of the target, oldest first.
///
/// Values only need to be finite; the panel is where `y >= 0` is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    weeks: Vec<WeekStamp>,
    values: Vec<f64>,
}

impl History {
    pub fn new(points: Vec<(WeekStamp, f64)>) -> Result<Self, ModelError> {
        let (weeks, values): (Vec<_>, Vec<_>) = points.into_iter().unzip();
        check_consecutive(&weeks)?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::InvalidValue(format!("history value {v}")));
        }
        Ok(History { weeks, values })
    }

    /// Convenience constructor for consecutive weeks starting at `start`.
    pub fn from_values(start: WeekStamp, values: &[f64]) -> Result<Self, ModelError> {
        History::new(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (start.plus_weeks(i as i64), *v))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weeks(&self) -> &[WeekStamp] {
        &self.weeks
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Week being forecast.
    pub fn target_week(&self) -> Option<WeekStamp> {
        self.weeks.last().map(|w| w.next())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogRow {
    pub week: WeekStamp,
    pub x_b: Option<f64>,
    pub x_v: Option<f64>,
    pub s_t: Option<f64>,
}

impl ExogRow {
    pub fn values(&self) -> [Option<f64>; 3] {
        [self.x_b, self.x_v, self.s_t]
    }
}

/// Exogenous indicator rows aligned one-to-one with a [`History`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogWindow {
    pub rows: Vec<ExogRow>,
}

impl ExogWindow {
    pub fn new(rows: Vec<ExogRow>) -> Result<Self, ModelError> {
        let weeks: Vec<_> = rows.iter().map(|r| r.week).collect();
        check_consecutive(&weeks)?;
        for v in rows.iter().flat_map(|r| r.values()).flatten() {
            if !v.is_finite() {
                return Err(ModelError::InvalidValue(format!("exogenous value {v}")));
            }
        }
        Ok(ExogWindow { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn check_aligned(&self, h: &History) -> Result<(), ModelError> {
        if self.rows.len() != h.len() {
            return Err(ModelError::LengthMismatch {
                history: h.len(),
                exog: self.rows.len(),
            });
        }
        for (row, week) in self.rows.iter().zip(h.weeks()) {
            if row.week != *week {
                return Err(ModelError::WeekMismatch(row.week));
            }
        }
        Ok(())
    }

    /// Last observed value of each column (`None` if never observed).
    pub fn last_observed(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.rows.iter().rev().find_map(|r| r.values()[k]);
        }
        out
    }
}

/// Next-week exogenous values, observed or predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogNext {
    pub x_b: f64,
    pub x_v: f64,
    pub s_t: f64,
}

impl ExogNext {
    /// Builds the triple with negatives clipped to zero.
    pub fn new(x_b: f64, x_v: f64, s_t: f64) -> Result<Self, ModelError> {
        if ![x_b, x_v, s_t].iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidValue(format!(
                "next exogenous ({x_b}, {x_v}, {s_t})"
            )));
        }
        Ok(ExogNext {
            x_b: clip(x_b),
            x_v: clip(x_v),
            s_t: clip(s_t),
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x_b, self.x_v, self.s_t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub value: f64,
    pub model: ModelId,
    pub fallback_used: bool,
}

/// Fit internals exposed for reports and tests. Coefficients are intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub coefficients: Vec<f64>,
    pub residual_sse: f64,
    pub rank_deficient: bool,
}

/// Non-negativity clip applied to final forecasts only.
pub(crate) fn clip(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wk(s: &str) -> WeekStamp {
        WeekStamp::parse(s).unwrap()
    }

    #[test]
    fn model_keys_parse_back() {
        for m in ModelId::ALL {
            assert_eq!(m.key().parse::<ModelId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.key()));
        }
        assert_eq!("holt".parse::<ModelId>().unwrap(), ModelId::Holt);
        assert!("arima".parse::<ModelId>().is_err());
    }

    #[test]
    fn history_rejects_gaps_and_non_finite() {
        assert!(History::new(vec![(wk("2021-01-03"), 1.0), (wk("2021-01-17"), 1.0)]).is_err());
        assert!(History::from_values(wk("2021-01-03"), &[1.0, -1.0]).is_ok());
        assert!(History::from_values(wk("2021-01-03"), &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn exog_next_clips() {
        let n = ExogNext::new(-3.0, 0.0, 1.0).unwrap();
        assert_eq!(n.as_array(), [0.0, 0.0, 1.0]);
        assert!(ExogNext::new(f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn clip_never_negative_zero() {
        assert!(clip(-0.0).is_sign_positive());
        assert_eq!(clip(-5.0), 0.0);
        assert_eq!(clip(2.5), 2.5);
    }
}
