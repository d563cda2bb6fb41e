use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::load::week_ending;
use super::schema::AggMode;
use super::{Field, Panel, PanelError, WeekStamp};
use crate::stats;

/// Collapse a daily series into week-ending buckets. Weeks without any
/// finite observation are absent from the output.
pub fn aggregate_daily_to_weekly(
    daily: &[(NaiveDate, f64)],
    mode: AggMode,
    week_end: Weekday,
) -> Result<Vec<(WeekStamp, f64)>, PanelError> {
    for pair in daily.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(PanelError::NotIncreasing {
                prev: pair[0].0,
                next: pair[1].0,
            });
        }
    }
    let mut out: Vec<(WeekStamp, f64, usize)> = Vec::new();
    for &(date, value) in daily {
        if !value.is_finite() {
            continue;
        }
        let week = week_ending(date, week_end);
        match out.last_mut() {
            Some((w, sum, n)) if *w == week => {
                *sum += value;
                *n += 1;
            }
            _ => out.push((week, value, 1)),
        }
    }
    Ok(out
        .into_iter()
        .map(|(w, sum, n)| match mode {
            AggMode::Sum => (w, sum),
            AggMode::Mean => (w, sum / n as f64),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FallbackReport {
    pub field: String,
    pub substituted: usize,
    pub warning: Option<String>,
}

/// Fill missing county cells of `field` with the state-level value for the
/// same week. Observed county values are never touched; every substituted
/// cell records the field name in its row's `substituted` set.
pub fn apply_state_fallback(panel: &Panel, field: &Field) -> Result<(Panel, FallbackReport), PanelError> {
    let mut report = FallbackReport {
        field: field.name().to_string(),
        ..Default::default()
    };
    let Some(state) = panel.state_series() else {
        let msg = format!("no state-level series; fallback for `{field}` skipped");
        log::warn!("{msg}");
        report.warning = Some(msg);
        return Ok((panel.clone(), report));
    };
    let state_values: BTreeMap<WeekStamp, f64> = state
        .rows
        .iter()
        .filter_map(|r| r.get(field).map(|v| (r.week, v)))
        .collect();
    let substituted = std::cell::Cell::new(0usize);
    let out = panel.map_series(|s| {
        let mut s = s.clone();
        if s.county.state_level {
            return s;
        }
        for row in &mut s.rows {
            if row.get(field).is_none() {
                if let Some(&v) = state_values.get(&row.week) {
                    row.set(field, Some(v));
                    row.substituted.insert(field.name().to_string());
                    substituted.set(substituted.get() + 1);
                }
            }
        }
        s
    })?;
    report.substituted = substituted.get();
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tertile {
    Low,
    Mid,
    High,
}

impl Tertile {
    pub const ALL: [Tertile; 3] = [Tertile::Low, Tertile::Mid, Tertile::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Tertile::Low => "low",
            Tertile::Mid => "mid",
            Tertile::High => "high",
        }
    }
}

impl fmt::Display for Tertile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyMeta {
    pub county: String,
    pub population: Option<u64>,
    pub mean_weekly_y: f64,
    pub tertile: Tertile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TertileAssignment {
    pub meta: BTreeMap<String, CountyMeta>,
    pub warnings: Vec<String>,
}

impl TertileAssignment {
    pub fn tertile_of(&self, county: &str) -> Option<Tertile> {
        self.meta.get(county).map(|m| m.tertile)
    }

    pub fn members(&self, tertile: Tertile) -> Vec<&str> {
        self.meta
            .values()
            .filter(|m| m.tertile == tertile)
            .map(|m| m.county.as_str())
            .collect()
    }
}

/// Split `n` ranked counties into (low, mid, high) sizes; the remainder goes
/// to Low first, then Mid.
pub(crate) fn tertile_sizes(n: usize) -> (usize, usize, usize) {
    let q = n / 3;
    let r = n % 3;
    (q + (r >= 1) as usize, q + (r >= 2) as usize, q)
}

/// Rank counties by mean weekly `y` inside `window` (inclusive) and cut the
/// ranking into thirds. Ties are broken by county name.
pub fn assign_tertiles(panel: &Panel, window: (WeekStamp, WeekStamp)) -> TertileAssignment {
    let mut warnings = Vec::new();
    let mut ranked: Vec<(String, f64)> = Vec::new();
    for s in panel.counties() {
        let ys: Vec<f64> = s
            .rows
            .iter()
            .filter(|r| r.week >= window.0 && r.week <= window.1)
            .filter_map(|r| r.y)
            .collect();
        match stats::mean(&ys) {
            Some(m) => ranked.push((s.county.name.clone(), m)),
            None => {
                let msg = format!(
                    "{}: no observed y in stratification window, excluded from tertiles",
                    s.county.name
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let (low, mid, _) = tertile_sizes(ranked.len());
    let meta = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (county, mean_weekly_y))| {
            let tertile = if i < low {
                Tertile::Low
            } else if i < low + mid {
                Tertile::Mid
            } else {
                Tertile::High
            };
            let population = panel.population(&county);
            (
                county.clone(),
                CountyMeta {
                    county,
                    population,
                    mean_weekly_y,
                    tertile,
                },
            )
        })
        .collect();
    TertileAssignment { meta, warnings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorCorrelation {
    pub indicator: String,
    pub r: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndicatorRanking {
    pub entries: Vec<IndicatorCorrelation>,
    pub notes: Vec<String>,
}

pub(crate) const MIN_CORRELATION_PAIRS: usize = 3;

/// Pearson correlation of every indicator column against `y`, pooled over
/// all county-weeks where both are observed, sorted by |r| descending.
pub fn rank_indicators(panel: &Panel) -> IndicatorRanking {
    let mut fields = vec![Field::XB, Field::XV, Field::St];
    fields.extend(panel.indicator_names().into_iter().map(Field::Indicator));
    let mut ranking = IndicatorRanking::default();
    for field in fields {
        let (xs, ys): (Vec<f64>, Vec<f64>) = panel
            .counties()
            .flat_map(|s| s.rows.iter())
            .filter_map(|r| Some((r.get(&field)?, r.y?)))
            .unzip();
        if xs.len() < MIN_CORRELATION_PAIRS {
            ranking
                .notes
                .push(format!("{field}: only {} complete pairs, omitted", xs.len()));
            continue;
        }
        match stats::pearson(&xs, &ys) {
            Some(r) => ranking.entries.push(IndicatorCorrelation {
                indicator: field.name().to_string(),
                r,
                n_obs: xs.len(),
            }),
            None => ranking.notes.push(format!("{field}: constant series, omitted")),
        }
    }
    ranking.entries.sort_by(|a, b| {
        b.r.abs()
            .total_cmp(&a.r.abs())
            .then_with(|| a.indicator.cmp(&b.indicator))
    });
    ranking
}

/// Plot-data CSV: `indicator,r,n_obs`.
pub fn write_indicator_csv<W: Write>(entries: &[IndicatorCorrelation], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
