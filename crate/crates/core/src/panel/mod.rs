//! Weekly county panel: the canonical dataset every model and metric reads.
//!
//! A [`Panel`] holds one [`CountySeries`] per county (plus an optional
//! state-level aggregate series used for fallback substitution). Each series
//! lies on a contiguous weekly grid: weeks that were absent from the source
//! files are materialized as rows with every value missing and `gap = true`.

mod load;
mod ops;
mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_panel, LoadReport, PanelLoader};
pub use ops::{
    aggregate_daily_to_weekly, apply_state_fallback, assign_tertiles, rank_indicators, write_indicator_csv, CountyMeta,
    FallbackReport, IndicatorCorrelation, IndicatorRanking, Tertile, TertileAssignment,
};
pub use schema::{AggMode, Role, SchemaConfig, SourceSpec, DEFAULT_EXCLUDED_COUNTIES};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("{file}: required column `{column}` not found in header")]
    MissingColumn { file: String, column: String },
    #[error("{file}: no column mapped to role `{role}`")]
    MissingRole { file: String, role: &'static str },
    #[error("no source maps a column to the target role `y`")]
    NoTarget,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("dates must be strictly increasing ({prev} then {next})")]
    NotIncreasing { prev: NaiveDate, next: NaiveDate },
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Week-ending date of a weekly observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekStamp(pub NaiveDate);

impl WeekStamp {
    pub fn new(date: NaiveDate) -> Self {
        WeekStamp(date)
    }

    pub fn parse(s: &str) -> Result<Self, chrono::ParseError> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map(WeekStamp)
    }

    pub fn date(self) -> NaiveDate {
        self.0
    }

    pub fn next(self) -> Self {
        self.plus_weeks(1)
    }

    pub fn prev(self) -> Self {
        self.plus_weeks(-1)
    }

    pub fn plus_weeks(self, n: i64) -> Self {
        WeekStamp(self.0 + Duration::days(7 * n))
    }

    /// Signed number of whole weeks from `self` to `other`.
    pub fn weeks_until(self, other: WeekStamp) -> i64 {
        (other.0 - self.0).num_days() / 7
    }
}

impl fmt::Display for WeekStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CountyId {
    pub name: String,
    /// Marks the synthetic state-aggregate series used for fallback.
    #[serde(default)]
    pub state_level: bool,
}

impl CountyId {
    pub fn county(name: impl Into<String>) -> Self {
        CountyId {
            name: name.into(),
            state_level: false,
        }
    }

    pub fn state(name: impl Into<String>) -> Self {
        CountyId {
            name: name.into(),
            state_level: true,
        }
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// A panel column addressed by role.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Y,
    XB,
    XV,
    St,
    Indicator(String),
}

impl Field {
    /// Parse the names used in configs and CSV output (`y`, `x_b`, `x_v`,
    /// `s_t`, anything else is an extra indicator; `indicator:` prefix optional).
    pub fn parse(name: &str) -> Field {
        match name.trim() {
            "y" => Field::Y,
            "x_b" => Field::XB,
            "x_v" => Field::XV,
            "s_t" => Field::St,
            other => Field::Indicator(other.strip_prefix("indicator:").unwrap_or(other).to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Field::Y => "y",
            Field::XB => "x_b",
            Field::XV => "x_v",
            Field::St => "s_t",
            Field::Indicator(name) => name,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One county-week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub week: WeekStamp,
    /// 14-day average hospitalized patients.
    pub y: Option<f64>,
    /// Adult ICU beds, weekly mean.
    pub x_b: Option<f64>,
    /// Patients on ventilators, weekly mean.
    pub x_v: Option<f64>,
    /// Anosmia/ageusia search volume, weekly sum.
    pub s_t: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Option<f64>>,
    /// Row was inserted to fill a hole in the weekly grid.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gap: bool,
    /// Fields whose value was substituted from the state-level series.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub substituted: BTreeSet<String>,
}

impl PanelRow {
    pub fn empty(week: WeekStamp) -> Self {
        PanelRow {
            week,
            y: None,
            x_b: None,
            x_v: None,
            s_t: None,
            extra: BTreeMap::new(),
            gap: false,
            substituted: BTreeSet::new(),
        }
    }

    pub fn get(&self, field: &Field) -> Option<f64> {
        match field {
            Field::Y => self.y,
            Field::XB => self.x_b,
            Field::XV => self.x_v,
            Field::St => self.s_t,
            Field::Indicator(name) => self.extra.get(name).copied().flatten(),
        }
    }

    pub fn set(&mut self, field: &Field, value: Option<f64>) {
        match field {
            Field::Y => self.y = value,
            Field::XB => self.x_b = value,
            Field::XV => self.x_v = value,
            Field::St => self.s_t = value,
            Field::Indicator(name) => {
                self.extra.insert(name.clone(), value);
            }
        }
    }
}

/// All rows of one county, ordered by week on a contiguous weekly grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountySeries {
    pub county: CountyId,
    pub rows: Vec<PanelRow>,
}

impl CountySeries {
    pub fn row(&self, week: WeekStamp) -> Option<&PanelRow> {
        let first = self.rows.first()?.week;
        let idx = first.weeks_until(week);
        if idx < 0 {
            return None;
        }
        self.rows.get(idx as usize).filter(|r| r.week == week)
    }

    pub fn index_of(&self, week: WeekStamp) -> Option<usize> {
        let first = self.rows.first()?.week;
        let idx = first.weeks_until(week);
        (idx >= 0 && (idx as usize) < self.rows.len() && self.rows[idx as usize].week == week).then_some(idx as usize)
    }
}

/// Validated weekly county panel. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    series: Vec<CountySeries>,
    #[serde(default)]
    populations: BTreeMap<String, u64>,
}

impl Panel {
    /// Build a panel, checking every structural invariant: unique county
    /// names, at most one state-level series, weeks strictly increasing in
    /// steps of exactly seven days, and finite values.
    pub fn new(mut series: Vec<CountySeries>) -> Result<Self, PanelError> {
        series.sort_by(|a, b| a.county.name.cmp(&b.county.name));
        let mut seen = BTreeSet::new();
        let mut states = 0;
        for s in &series {
            if !seen.insert(s.county.name.clone()) {
                return Err(PanelError::Invalid(format!("duplicate county `{}`", s.county.name)));
            }
            if s.county.state_level {
                states += 1;
            }
            for pair in s.rows.windows(2) {
                if pair[0].week.weeks_until(pair[1].week) != 1 || (pair[1].week.0 - pair[0].week.0).num_days() != 7 {
                    return Err(PanelError::Invalid(format!(
                        "{}: weeks {} and {} are not consecutive",
                        s.county.name, pair[0].week, pair[1].week
                    )));
                }
            }
            for row in &s.rows {
                let core = [row.y, row.x_b, row.x_v, row.s_t];
                if core.iter().flatten().any(|v| !v.is_finite() || *v < 0.0)
                    || row.extra.values().flatten().any(|v| !v.is_finite())
                {
                    return Err(PanelError::Invalid(format!(
                        "{} {}: non-finite or negative value",
                        s.county.name, row.week
                    )));
                }
            }
        }
        if states > 1 {
            return Err(PanelError::Invalid("more than one state-level series".into()));
        }
        Ok(Panel {
            series,
            populations: BTreeMap::new(),
        })
    }

    pub fn with_populations(mut self, populations: BTreeMap<String, u64>) -> Self {
        self.populations = populations;
        self
    }

    /// Every series, state-level included, sorted by name.
    pub fn all_series(&self) -> &[CountySeries] {
        &self.series
    }

    /// County series only (the state-level aggregate is skipped).
    pub fn counties(&self) -> impl Iterator<Item = &CountySeries> {
        self.series.iter().filter(|s| !s.county.state_level)
    }

    pub fn state_series(&self) -> Option<&CountySeries> {
        self.series.iter().find(|s| s.county.state_level)
    }

    pub fn county(&self, name: &str) -> Option<&CountySeries> {
        self.series.iter().find(|s| s.county.name == name)
    }

    pub fn population(&self, name: &str) -> Option<u64> {
        self.populations.get(name).copied()
    }

    pub fn populations(&self) -> &BTreeMap<String, u64> {
        &self.populations
    }

    /// First and last week over all series.
    pub fn week_range(&self) -> Option<(WeekStamp, WeekStamp)> {
        let first = self
            .series
            .iter()
            .filter_map(|s| s.rows.first())
            .map(|r| r.week)
            .min()?;
        let last = self.series.iter().filter_map(|s| s.rows.last()).map(|r| r.week).max()?;
        Some((first, last))
    }

    /// Names of every extra indicator present anywhere in the panel.
    pub fn indicator_names(&self) -> BTreeSet<String> {
        self.series
            .iter()
            .flat_map(|s| s.rows.iter())
            .flat_map(|r| r.extra.keys().cloned())
            .collect()
    }

    /// Rebuild with modified series; re-validates.
    pub(crate) fn map_series(&self, f: impl Fn(&CountySeries) -> CountySeries) -> Result<Panel, PanelError> {
        let series = self.series.iter().map(f).collect();
        Ok(Panel::new(series)?.with_populations(self.populations.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wk(s: &str) -> WeekStamp {
        WeekStamp::parse(s).unwrap()
    }

    fn series(name: &str, weeks: &[&str]) -> CountySeries {
        CountySeries {
            county: CountyId::county(name),
            rows: weeks.iter().map(|w| PanelRow::empty(wk(w))).collect(),
        }
    }

    #[test]
    fn rejects_non_consecutive_weeks() {
        let s = series("A County", &["2021-01-03", "2021-01-17"]);
        assert!(matches!(Panel::new(vec![s]), Err(PanelError::Invalid(_))));
    }

    #[test]
    fn rejects_duplicate_names() {
        let a = series("A County", &["2021-01-03"]);
        let b = series("A County", &["2021-01-03"]);
        assert!(Panel::new(vec![a, b]).is_err());
    }

    #[test]
    fn row_lookup_by_week() {
        let s = series("A County", &["2021-01-03", "2021-01-10", "2021-01-17"]);
        assert_eq!(s.index_of(wk("2021-01-10")), Some(1));
        assert_eq!(s.index_of(wk("2021-01-24")), None);
        assert_eq!(s.index_of(wk("2020-12-27")), None);
        assert!(s.row(wk("2021-01-17")).is_some());
    }

    #[test]
    fn field_names_round_trip() {
        for name in ["y", "x_b", "x_v", "s_t", "mobility"] {
            assert_eq!(Field::parse(name).name(), name);
        }
        assert_eq!(Field::parse("indicator:cli"), Field::Indicator("cli".into()));
    }
}
