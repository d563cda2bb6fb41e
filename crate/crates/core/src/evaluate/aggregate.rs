use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{lead_lag, mape, mpe, LeadLagResult};
use super::ForecastRecord;
use crate::models::ModelId;
use crate::panel::{Tertile, TertileAssignment, WeekStamp};
use crate::stats::{mean, mean_sd};

/// MAPE/MPE of one county, model and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub county: String,
    pub model: ModelId,
    pub run: u32,
    pub mape_mean: f64,
    pub mape_sd: f64,
    pub mpe_mean: f64,
    pub mpe_sd: f64,
    pub n_weeks: usize,
}

/// Run-averaged MAPE/MPE of one county and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyMetrics {
    pub county: String,
    pub model: ModelId,
    pub mape_mean: f64,
    pub mape_sd: f64,
    pub mpe_mean: f64,
    pub mpe_sd: f64,
    pub n_weeks: usize,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLeadLag {
    pub county: String,
    pub model: ModelId,
    pub run: u32,
    pub result: Option<LeadLagResult>,
    pub note: Option<String>,
}

/// Run-averaged lead-lag of one county and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyLeadLag {
    pub county: String,
    pub model: ModelId,
    pub ell_star: f64,
    pub rho_star: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mape,
    Mpe,
    EllStar,
    RhoStar,
}

impl Metric {
    pub fn is_lead_lag(self) -> bool {
        matches!(self, Metric::EllStar | Metric::RhoStar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mape => "mape",
            Metric::Mpe => "mpe",
            Metric::EllStar => "ell_star",
            Metric::RhoStar => "rho_star",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Overall,
    Low,
    Mid,
    High,
}

impl Group {
    pub const TERTILES: [Group; 3] = [Group::Low, Group::Mid, Group::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Overall => "overall",
            Group::Low => "low",
            Group::Mid => "mid",
            Group::High => "high",
        }
    }
}

impl From<Tertile> for Group {
    fn from(t: Tertile) -> Self {
        match t {
            Tertile::Low => Group::Low,
            Tertile::Mid => Group::Mid,
            Tertile::High => Group::High,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean and population SD of one metric across the counties of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertileSummary {
    pub group: Group,
    pub model: ModelId,
    pub metric: Metric,
    pub mean: f64,
    pub sd: f64,
    pub n_counties: usize,
}

fn group_by<K: Ord>(
    records: &[ForecastRecord],
    key: impl Fn(&ForecastRecord) -> K,
) -> BTreeMap<K, Vec<&ForecastRecord>> {
    let mut groups: BTreeMap<K, Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
}

pub fn run_metrics(records: &[ForecastRecord]) -> Vec<RunMetrics> {
    group_by(records, |r| (r.model, r.county.clone(), r.run))
        .into_iter()
        .filter_map(|((model, county, run), recs)| {
            let (mape_mean, mape_sd) = mape(recs.iter().copied())?;
            let (mpe_mean, mpe_sd) = mpe(recs.iter().copied())?;
            Some(RunMetrics {
                county,
                model,
                run,
                mape_mean,
                mape_sd,
                mpe_mean,
                mpe_sd,
                n_weeks: recs.len(),
            })
        })
        .collect()
}

/// Per-run metrics averaged over runs, one row per (model, county).
pub fn county_metrics(runs: &[RunMetrics]) -> Vec<CountyMetrics> {
    let mut groups: BTreeMap<(ModelId, &str), Vec<&RunMetrics>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.model, r.county.as_str())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((model, county), rs)| {
            let avg = |f: fn(&RunMetrics) -> f64| mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0);
            CountyMetrics {
                county: county.to_string(),
                model,
                mape_mean: avg(|r| r.mape_mean),
                mape_sd: avg(|r| r.mape_sd),
                mpe_mean: avg(|r| r.mpe_mean),
                mpe_sd: avg(|r| r.mpe_sd),
                n_weeks: rs.iter().map(|r| r.n_weeks).max().unwrap_or(0),
                n_runs: rs.len(),
            }
        })
        .collect()
}

/// Forecast and actual series on the contiguous week grid spanned by
/// `recs`, with `NaN` where no record exists.
fn aligned_series(recs: &[&ForecastRecord]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = recs.iter().map(|r| r.week).min() else {
        return (Vec::new(), Vec::new());
    };
    let last: WeekStamp = recs.iter().map(|r| r.week).max().unwrap_or(first);
    let n = first.weeks_until(last) as usize + 1;
    let mut pred = vec![f64::NAN; n];
    let mut actual = vec![f64::NAN; n];
    for r in recs {
        let i = first.weeks_until(r.week) as usize;
        pred[i] = r.y_hat;
        actual[i] = r.y_true;
    }
    (pred, actual)
}

/// Lead-lag for every (model, county, run). Lag-1 is skipped: its
/// alignment at `l = -1` holds by construction.
pub fn run_lead_lag(records: &[ForecastRecord], lag_max: usize) -> Vec<RunLeadLag> {
    group_by(records, |r| (r.model, r.county.clone(), r.run))
        .into_iter()
        .filter(|((model, _, _), _)| *model != ModelId::Lag1)
        .map(|((model, county, run), recs)| {
            let (pred, actual) = aligned_series(&recs);
            let (result, note) = match lead_lag(&pred, &actual, lag_max) {
                Ok(res) => (Some(res), None),
                Err(e) => {
                    log::warn!("{county} {model} run {run}: lead-lag unavailable: {e}");
                    (None, Some(e.to_string()))
                }
            };
            RunLeadLag {
                county,
                model,
                run,
                result,
                note,
            }
        })
        .collect()
}

/// Run-averaged `l*` and `rho*`; counties where no run produced a result are dropped.
pub fn county_lead_lag(runs: &[RunLeadLag]) -> Vec<CountyLeadLag> {
    let mut groups: BTreeMap<(ModelId, &str), Vec<&LeadLagResult>> = BTreeMap::new();
    for r in runs {
        let entry = groups.entry((r.model, r.county.as_str())).or_default();
        if let Some(res) = &r.result {
            entry.push(res);
        }
    }
    groups
        .into_iter()
        .filter(|(_, rs)| !rs.is_empty())
        .map(|((model, county), rs)| CountyLeadLag {
            county: county.to_string(),
            model,
            ell_star: mean(&rs.iter().map(|r| r.ell_star as f64).collect::<Vec<_>>()).unwrap_or(0.0),
            rho_star: mean(&rs.iter().map(|r| r.rho_star).collect::<Vec<_>>()).unwrap_or(0.0),
            n_runs: rs.len(),
        })
        .collect()
}

/// Mean and population SD of per-county `values` within each tertile.
///
/// MPE and the lead-lag metrics also get an `Overall` row across every
/// county with a tertile. Lag-1 never yields lead-lag rows. Counties
/// without a tertile and empty tertiles are reported in the warnings.
pub fn aggregate(
    values: &[(String, f64)],
    tertiles: &TertileAssignment,
    model: ModelId,
    metric: Metric,
) -> (Vec<TertileSummary>, Vec<String>) {
    let mut warnings = Vec::new();
    if model == ModelId::Lag1 && metric.is_lead_lag() {
        return (Vec::new(), warnings);
    }
    let mut by_group: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for (county, v) in values {
        match tertiles.tertile_of(county) {
            Some(t) => by_group.entry(t.into()).or_default().push(*v),
            None => warnings.push(format!("{county}: no tertile, left out of {model} {metric} summary")),
        }
    }
    let mut rows = Vec::new();
    let mut push = |group: Group, vals: &[f64]| {
        if let Some((mean, sd)) = mean_sd(vals) {
            rows.push(TertileSummary {
                group,
                model,
                metric,
                mean,
                sd,
                n_counties: vals.len(),
            });
        }
    };
    if metric != Metric::Mape {
        let all: Vec<f64> = Group::TERTILES
            .iter()
            .flat_map(|g| by_group.get(g).into_iter().flatten().copied())
            .collect();
        push(Group::Overall, &all);
    }
    for g in Group::TERTILES {
        match by_group.get(&g) {
            Some(vals) => push(g, vals),
            None => warnings.push(format!("{model} {metric}: {g} tertile has no counties, omitted")),
        }
    }
    (rows, warnings)
}

/// Everything derived from a record set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_metrics: Vec<RunMetrics>,
    pub county_metrics: Vec<CountyMetrics>,
    pub run_lead_lag: Vec<RunLeadLag>,
    pub county_lead_lag: Vec<CountyLeadLag>,
    pub tertile_rows: Vec<TertileSummary>,
    pub warnings: Vec<String>,
}

pub fn summarize(records: &[ForecastRecord], tertiles: &TertileAssignment, lag_max: usize) -> Summary {
    let run_metrics = run_metrics(records);
    let county_metrics = county_metrics(&run_metrics);
    let run_lead_lag = run_lead_lag(records, lag_max);
    let county_lead_lag = county_lead_lag(&run_lead_lag);
    let mut models: Vec<ModelId> = records.iter().map(|r| r.model).collect();
    models.sort();
    models.dedup();

    let mut tertile_rows = Vec::new();
    let mut warnings = Vec::new();
    for model in models {
        let metric_values = |f: fn(&CountyMetrics) -> f64| -> Vec<(String, f64)> {
            county_metrics
                .iter()
                .filter(|c| c.model == model)
                .map(|c| (c.county.clone(), f(c)))
                .collect()
        };
        let ll_values = |f: fn(&CountyLeadLag) -> f64| -> Vec<(String, f64)> {
            county_lead_lag
                .iter()
                .filter(|c| c.model == model)
                .map(|c| (c.county.clone(), f(c)))
                .collect()
        };
        let inputs = [
            (Metric::Mape, metric_values(|c| c.mape_mean)),
            (Metric::Mpe, metric_values(|c| c.mpe_mean)),
            (Metric::EllStar, ll_values(|c| c.ell_star)),
            (Metric::RhoStar, ll_values(|c| c.rho_star)),
        ];
        for (metric, values) in inputs {
            if metric.is_lead_lag() && (model == ModelId::Lag1 || values.is_empty()) {
                continue;
            }
            let (rows, w) = aggregate(&values, tertiles, model, metric);
            tertile_rows.extend(rows);
            warnings.extend(w);
        }
    }
    warnings.extend(run_lead_lag.iter().filter_map(|r| {
        r.note
            .as_ref()
            .map(|n| format!("{} {} run {}: lead-lag unavailable: {n}", r.county, r.model, r.run))
    }));
    Summary {
        run_metrics,
        county_metrics,
        run_lead_lag,
        county_lead_lag,
        tertile_rows,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::CountyMeta;

    fn tertiles(assign: &[(&str, Tertile)]) -> TertileAssignment {
        TertileAssignment {
            meta: assign
                .iter()
                .map(|(c, t)| {
                    (
                        c.to_string(),
                        CountyMeta {
                            county: c.to_string(),
                            population: None,
                            mean_weekly_y: 0.0,
                            tertile: *t,
                        },
                    )
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    fn wk(i: i64) -> WeekStamp {
        WeekStamp::parse("2021-01-03").unwrap().plus_weeks(i)
    }

    #[test]
    fn constant_values_have_zero_sd() {
        let names: Vec<String> = (0..20).map(|i| format!("C{i}")).collect();
        let t = tertiles(&names.iter().map(|n| (n.as_str(), Tertile::Low)).collect::<Vec<_>>());
        let values: Vec<_> = names.iter().map(|n| (n.clone(), 10.0)).collect();
        let (rows, warnings) = aggregate(&values, &t, ModelId::Ar1, Metric::Mape);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].mean, rows[0].sd, rows[0].n_counties), (10.0, 0.0, 20));
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn population_sd_of_two() {
        let t = tertiles(&[("A", Tertile::Mid), ("B", Tertile::Mid)]);
        let values = vec![("A".to_string(), 10.0), ("B".to_string(), 20.0)];
        let (rows, _) = aggregate(&values, &t, ModelId::Holt, Metric::Mape);
        assert_eq!((rows[0].mean, rows[0].sd), (15.0, 5.0));
    }

    #[test]
    fn lag1_has_no_lead_lag_rows() {
        let t = tertiles(&[("A", Tertile::Low)]);
        let values = vec![("A".to_string(), -1.0)];
        assert!(aggregate(&values, &t, ModelId::Lag1, Metric::EllStar).0.is_empty());
        assert!(aggregate(&values, &t, ModelId::Lag1, Metric::RhoStar).0.is_empty());
        assert_eq!(aggregate(&values, &t, ModelId::Ar1, Metric::EllStar).0.len(), 2);
    }

    #[test]
    fn mpe_overall_averages_counties() {
        let t = tertiles(&[("A", Tertile::Low), ("B", Tertile::Low), ("C", Tertile::High)]);
        let values = vec![("A".into(), 1.0), ("B".into(), 3.0), ("C".into(), 8.0)];
        let (rows, _) = aggregate(&values, &t, ModelId::Ar1, Metric::Mpe);
        let overall = rows.iter().find(|r| r.group == Group::Overall).unwrap();
        assert_eq!((overall.mean, overall.n_counties), (4.0, 3));
        assert!(rows.iter().all(|r| r.group != Group::Mid));
    }

    #[test]
    fn runs_are_averaged_before_aggregation() {
        let mut records = Vec::new();
        for (run, y_hat) in [(1, 110.0), (2, 130.0)] {
            records.push(ForecastRecord::new("A", wk(0), ModelId::LlmDirect, run, y_hat, 100.0));
        }
        let runs = run_metrics(&records);
        assert_eq!(runs.len(), 2);
        let county = county_metrics(&runs);
        assert_eq!(county.len(), 1);
        assert!((county[0].mape_mean - 20.0).abs() < 1e-12);
        assert_eq!(county[0].n_runs, 2);
    }

    #[test]
    fn lead_lag_grid_fills_gaps() {
        let ys = [3.0, 5.0, 4.0, 9.0, 7.0, 8.0, 12.0, 10.0, 15.0, 11.0, 13.0, 18.0];
        let mut records = Vec::new();
        for i in 1..ys.len() {
            if i == 6 {
                continue;
            }
            records.push(ForecastRecord::new(
                "A",
                wk(i as i64),
                ModelId::Ar1,
                1,
                ys[i - 1],
                ys[i],
            ));
            records.push(ForecastRecord::new(
                "A",
                wk(i as i64),
                ModelId::Lag1,
                1,
                ys[i - 1],
                ys[i],
            ));
        }
        let ll = run_lead_lag(&records, 2);
        assert_eq!(ll.len(), 1);
        let res = ll[0].result.as_ref().unwrap();
        assert_eq!(res.ell_star, -1);
        assert!((res.rho_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_has_expected_matrix() {
        let t = tertiles(&[("A", Tertile::Low), ("B", Tertile::Mid), ("C", Tertile::High)]);
        let mut records = Vec::new();
        for county in ["A", "B", "C"] {
            for i in 0..12 {
                let y = 10.0 + ((i * 7) % 5) as f64 + county.len() as f64;
                for model in [ModelId::Lag1, ModelId::Holt] {
                    records.push(ForecastRecord::new(county, wk(i), model, 1, y + (i % 3) as f64, y));
                }
            }
        }
        let s = summarize(&records, &t, 2);
        let count = |m: ModelId, metric: Metric| {
            s.tertile_rows
                .iter()
                .filter(|r| r.model == m && r.metric == metric)
                .count()
        };
        assert_eq!(count(ModelId::Lag1, Metric::Mape), 3);
        assert_eq!(count(ModelId::Lag1, Metric::Mpe), 4);
        assert_eq!(count(ModelId::Lag1, Metric::EllStar), 0);
        assert_eq!(count(ModelId::Holt, Metric::Mape), 3);
        assert!(s.county_metrics.iter().all(|c| c.mape_mean >= c.mpe_mean.abs()));
    }
}
