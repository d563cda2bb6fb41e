//! Rolling-origin backtesting, forecast-error metrics and cross-county
//! aggregation.
//!
//! For every county and every target week with a fully observed `L`-week
//! lookback, a model sees only rows dated at or before the origin and emits
//! one [`ForecastRecord`] per run. Records feed [`metrics`] (MAPE, MPE,
//! lead-lag), which [`aggregate`] turns into per-county and per-tertile
//! summaries; [`report`] writes them as CSV tables.

pub mod aggregate;
pub mod metrics;
pub mod report;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{
    forecast_y, CompletionBackend, ContextError, PromptMode, PromptSpec, RecentEntry, RetryPolicy, LABEL_Y,
};
use crate::hybrid::{hybrid_forecast, Downstream, HybridConfig, HybridError, Stage1Flags};
use crate::models::{
    fit_forecast_ar1, fit_forecast_arx, fit_forecast_holt, fit_forecast_linreg, forecast_lag1, impute_window, ExogNext,
    ExogRow, ExogWindow, Forecast, History, ModelError, ModelId, DEFAULT_WINDOW,
};
use crate::panel::{CountySeries, Panel, PanelRow, WeekStamp};

pub use aggregate::{
    aggregate, county_lead_lag, county_metrics, run_lead_lag, run_metrics, summarize, CountyLeadLag, CountyMetrics,
    Group, Metric, RunLeadLag, RunMetrics, Summary, TertileSummary,
};
pub use metrics::{lead_lag, mape, mpe, pct_error, LeadLagError, LeadLagResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("model {0} needs a completion backend")]
    BackendRequired(ModelId),
    #[error("{county} {week}: {source}")]
    Model {
        county: String,
        week: WeekStamp,
        source: ModelError,
    },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad record line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window_len: usize,
    pub n_runs: u32,
    pub lag_max: usize,
    /// Inclusive range of target weeks; `None` means every week with a full lookback.
    pub eval_period: Option<(WeekStamp, WeekStamp)>,
    pub models: Vec<ModelId>,
    pub strict_context: bool,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window_len: DEFAULT_WINDOW,
            n_runs: 3,
            lag_max: 4,
            eval_period: None,
            models: ModelId::CLASSICAL.to_vec(),
            strict_context: true,
            retry: RetryPolicy::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.window_len < 2 {
            return Err(EvalError::Config(format!(
                "window_len must be >= 2, got {}",
                self.window_len
            )));
        }
        if self.lag_max < 1 {
            return Err(EvalError::Config("lag_max must be >= 1".into()));
        }
        if self.n_runs < 1 {
            return Err(EvalError::Config("n_runs must be >= 1".into()));
        }
        if let Some((a, b)) = self.eval_period {
            if a > b {
                return Err(EvalError::Config(format!("eval_period start {a} is after end {b}")));
            }
        }
        Ok(())
    }

    fn in_period(&self, week: WeekStamp) -> bool {
        self.eval_period.is_none_or(|(a, b)| week >= a && week <= b)
    }
}

/// Stage-1 context values that fed a hybrid forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub x_b: f64,
    pub x_v: f64,
    pub s_t: f64,
    #[serde(flatten)]
    pub flags: Stage1Flags,
}

/// One scored one-step-ahead forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub county: String,
    /// Target week (origin + 1).
    pub week: WeekStamp,
    pub model: ModelId,
    pub run: u32,
    pub y_hat: f64,
    pub y_true: f64,
    pub pct_error: f64,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Stage1Record>,
}

impl ForecastRecord {
    pub fn new(county: &str, week: WeekStamp, model: ModelId, run: u32, y_hat: f64, y_true: f64) -> Self {
        ForecastRecord {
            county: county.to_string(),
            week,
            model,
            run,
            y_hat,
            y_true,
            pct_error: pct_error(y_hat, y_true),
            fallback_used: false,
            stage1: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RollingOutput {
    pub records: Vec<ForecastRecord>,
    /// Windows skipped because some `y` in the lookback or the target was missing.
    pub skipped_windows: usize,
    /// Backend forecasts that stayed unparseable or unreachable after retry.
    pub missing_forecasts: usize,
    pub warnings: Vec<String>,
}

impl RollingOutput {
    fn merge(&mut self, other: RollingOutput) {
        self.records.extend(other.records);
        self.skipped_windows += other.skipped_windows;
        self.missing_forecasts += other.missing_forecasts;
        self.warnings.extend(other.warnings);
    }
}

/// One evaluable origin: the lookback rows and the target row.
struct Origin<'a> {
    window: &'a [PanelRow],
    target: &'a PanelRow,
}

fn origins<'a>(series: &'a CountySeries, cfg: &EvalConfig, skipped: &mut usize) -> Vec<Origin<'a>> {
    let l = cfg.window_len;
    let mut out = Vec::new();
    for j in l..series.rows.len() {
        let target = &series.rows[j];
        if !cfg.in_period(target.week) {
            continue;
        }
        let window = &series.rows[j - l..j];
        if target.y.is_none() || window.iter().any(|r| r.y.is_none()) {
            log::debug!("{} {}: incomplete window, skipped", series.county.name, target.week);
            *skipped += 1;
            continue;
        }
        out.push(Origin { window, target });
    }
    out
}

fn history(window: &[PanelRow]) -> Result<History, ModelError> {
    History::new(window.iter().map(|r| (r.week, r.y.unwrap_or(0.0))).collect())
}

fn exog_window(window: &[PanelRow]) -> Result<ExogWindow, ModelError> {
    ExogWindow::new(
        window
            .iter()
            .map(|r| ExogRow {
                week: r.week,
                x_b: r.x_b,
                x_v: r.x_v,
                s_t: r.s_t,
            })
            .collect(),
    )
}

/// Next-week exogenous input for the classical regressions: the last
/// imputed window row, so nothing after the origin is read.
fn carried_forward(w: &ExogWindow) -> Result<ExogNext, ModelError> {
    let imputed = impute_window(w);
    let last = imputed.rows.last().ok_or(ModelError::EmptyHistory)?;
    let [b, v, s] = last.values().map(|x| x.unwrap_or(0.0));
    ExogNext::new(b, v, s)
}

fn classical(model: ModelId, window: &[PanelRow]) -> Result<Forecast, ModelError> {
    let h = history(window)?;
    match model {
        ModelId::Lag1 => forecast_lag1(&h),
        ModelId::Ar1 => fit_forecast_ar1(&h).map(|(f, _)| f),
        ModelId::Holt => fit_forecast_holt(&h),
        ModelId::Arx | ModelId::LinReg => {
            let w = exog_window(window)?;
            let next = carried_forward(&w)?;
            if model == ModelId::Arx {
                fit_forecast_arx(&h, &w, &next).map(|(f, _)| f)
            } else {
                fit_forecast_linreg(&h, &w, &next).map(|(f, _)| f)
            }
        }
        _ => unreachable!("{model} is not a classical model"),
    }
}

fn llm_spec(county: &str, window: &[PanelRow], target: WeekStamp) -> PromptSpec {
    PromptSpec {
        geography: county.to_string(),
        prediction_date: target,
        recent_block: window
            .iter()
            .map(|r| RecentEntry {
                date: r.week,
                values: vec![(LABEL_Y.to_string(), r.y)],
            })
            .collect(),
        mode: PromptMode::UnivariateY,
    }
}

fn model_err(county: &str, week: WeekStamp) -> impl FnOnce(ModelError) -> EvalError + '_ {
    move |source| EvalError::Model {
        county: county.to_string(),
        week,
        source,
    }
}

fn evaluate_county(
    series: &CountySeries,
    model: ModelId,
    cfg: &EvalConfig,
    backend: Option<&dyn CompletionBackend>,
) -> Result<RollingOutput, EvalError> {
    let name = series.county.name.as_str();
    let mut out = RollingOutput::default();
    let origins = origins(series, cfg, &mut out.skipped_windows);

    if !model.uses_backend() {
        let mut once = Vec::with_capacity(origins.len());
        for o in &origins {
            let f = classical(model, o.window).map_err(model_err(name, o.target.week))?;
            let mut rec = ForecastRecord::new(name, o.target.week, model, 1, f.value, o.target.y.unwrap_or(0.0));
            rec.fallback_used = f.fallback_used;
            once.push(rec);
        }
        for run in 1..=cfg.n_runs {
            out.records.extend(once.iter().cloned().map(|mut r| {
                r.run = run;
                r
            }));
        }
    } else {
        let backend = backend.ok_or(EvalError::BackendRequired(model))?;
        for run in 1..=cfg.n_runs {
            for o in &origins {
                let week = o.target.week;
                let y_true = o.target.y.unwrap_or(0.0);
                match model {
                    ModelId::LlmDirect => {
                        let spec = llm_spec(name, o.window, week);
                        let parsed = forecast_y(backend, &spec, cfg.window_len, run, cfg.retry)?;
                        match parsed.value {
                            Some(v) => out.records.push(ForecastRecord::new(name, week, model, run, v, y_true)),
                            None => {
                                log::warn!("{name} {week} run {run}: no parseable forecast");
                                out.missing_forecasts += 1;
                            }
                        }
                    }
                    _ => {
                        let downstream = if model == ModelId::HybridArx {
                            Downstream::Arx
                        } else {
                            Downstream::LinReg
                        };
                        let h = history(o.window).map_err(model_err(name, week))?;
                        let w = exog_window(o.window).map_err(model_err(name, week))?;
                        let mut hc = HybridConfig::new(downstream, backend, run);
                        hc.strict = cfg.strict_context;
                        hc.retry = cfg.retry;
                        let res = match hybrid_forecast(name, &h, &w, &hc) {
                            Ok(r) => r,
                            Err(HybridError::Model(e)) => return Err(model_err(name, week)(e)),
                            Err(HybridError::Context(e)) => return Err(e.into()),
                        };
                        if res.flags.any_fallback() {
                            out.missing_forecasts += 1;
                        }
                        let mut rec = ForecastRecord::new(name, week, model, run, res.forecast.value, y_true);
                        rec.fallback_used = res.forecast.fallback_used;
                        rec.stage1 = Some(Stage1Record {
                            x_b: res.exog_next.x_b,
                            x_v: res.exog_next.x_v,
                            s_t: res.exog_next.s_t,
                            flags: res.flags,
                        });
                        out.records.push(rec);
                    }
                }
            }
        }
    }
    if origins.is_empty() {
        let msg = format!("{name}: no valid evaluation windows for {model}");
        log::warn!("{msg}");
        out.warnings.push(msg);
    }
    Ok(out)
}

/// Run one model over every county of the panel (state-level series
/// excluded). Output order is county name, then run, then week.
pub fn rolling_origin(
    panel: &Panel,
    model: ModelId,
    cfg: &EvalConfig,
    backend: Option<&dyn CompletionBackend>,
) -> Result<RollingOutput, EvalError> {
    cfg.validate()?;
    if model.uses_backend() && backend.is_none() {
        return Err(EvalError::BackendRequired(model));
    }
    let series: Vec<&CountySeries> = panel.counties().collect();
    let parts: Vec<Result<RollingOutput, EvalError>> = series
        .par_iter()
        .map(|s| evaluate_county(s, model, cfg, backend))
        .collect();
    let mut out = RollingOutput::default();
    for part in parts {
        out.merge(part?);
    }
    Ok(out)
}

/// Every model in `cfg.models`, in that order.
pub fn evaluate_models(
    panel: &Panel,
    cfg: &EvalConfig,
    backend: Option<&dyn CompletionBackend>,
) -> Result<RollingOutput, EvalError> {
    let mut out = RollingOutput::default();
    for &model in &cfg.models {
        out.merge(rolling_origin(panel, model, cfg, backend)?);
    }
    Ok(out)
}

pub fn write_records_jsonl<W: Write>(records: &[ForecastRecord], mut writer: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<ForecastRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::context::{stub_backend, StubKind};
    use crate::panel::CountyId;

    fn start() -> WeekStamp {
        WeekStamp::parse("2021-01-03").unwrap()
    }

    fn series(name: &str, ys: &[Option<f64>]) -> CountySeries {
        CountySeries {
            county: CountyId::county(name),
            rows: ys
                .iter()
                .enumerate()
                .map(|(i, y)| {
                    let mut r = PanelRow::empty(start().plus_weeks(i as i64));
                    r.y = *y;
                    r.x_b = y.map(|v| 2.0 * v + 1.0 + (i % 3) as f64);
                    r.x_v = Some((i * i % 7) as f64);
                    r.s_t = Some(50.0 + (i % 4) as f64);
                    r
                })
                .collect(),
        }
    }

    fn cfg(models: &[ModelId], runs: u32) -> EvalConfig {
        EvalConfig {
            models: models.to_vec(),
            n_runs: runs,
            retry: RetryPolicy::no_backoff(),
            ..EvalConfig::default()
        }
    }

    #[test]
    fn ten_weeks_give_two_targets_per_run() {
        let ys: Vec<_> = (0..10).map(|i| Some(10.0 + i as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let out = rolling_origin(&panel, ModelId::Lag1, &cfg(&[ModelId::Lag1], 3), None).unwrap();
        assert_eq!(out.records.len(), 6);
        for run in 1..=3 {
            let weeks: Vec<_> = out.records.iter().filter(|r| r.run == run).map(|r| r.week).collect();
            assert_eq!(weeks, vec![start().plus_weeks(8), start().plus_weeks(9)]);
        }
    }

    #[test]
    fn lag1_records_previous_value() {
        let ys: Vec<_> = (0..14).map(|i| Some(((i * 37) % 11) as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let out = rolling_origin(&panel, ModelId::Lag1, &cfg(&[ModelId::Lag1], 1), None).unwrap();
        for r in &out.records {
            let idx = start().weeks_until(r.week) as usize;
            assert_eq!(r.y_hat, ys[idx - 1].unwrap());
            assert_eq!(r.y_true, ys[idx].unwrap());
        }
    }

    #[test]
    fn gaps_skip_windows() {
        let mut ys: Vec<_> = (0..12).map(|i| Some(5.0 + i as f64)).collect();
        ys[9] = None;
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let out = rolling_origin(&panel, ModelId::Ar1, &cfg(&[ModelId::Ar1], 1), None).unwrap();
        // targets 8..=11; 9 is missing, 10 and 11 have it in the lookback
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped_windows, 3);
    }

    #[test]
    fn short_county_warns() {
        let ys: Vec<_> = (0..5).map(|i| Some(i as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let out = rolling_origin(&panel, ModelId::Holt, &cfg(&[ModelId::Holt], 1), None).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn eval_period_limits_targets() {
        let ys: Vec<_> = (0..20).map(|i| Some(1.0 + i as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let mut c = cfg(&[ModelId::Lag1], 1);
        c.eval_period = Some((start().plus_weeks(10), start().plus_weeks(12)));
        let out = rolling_origin(&panel, ModelId::Lag1, &c, None).unwrap();
        assert_eq!(out.records.len(), 3);
    }

    #[test]
    fn backend_models_require_backend() {
        let ys: Vec<_> = (0..10).map(|i| Some(i as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let err = rolling_origin(&panel, ModelId::LlmDirect, &cfg(&[], 1), None).unwrap_err();
        assert!(matches!(err, EvalError::BackendRequired(ModelId::LlmDirect)));
    }

    #[test]
    fn llm_with_persistence_stub_matches_lag1() {
        let ys: Vec<_> = (0..12).map(|i| Some(3.0 + (i % 5) as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let backend = stub_backend(StubKind::Persistence);
        let c = cfg(&[], 2);
        let llm = rolling_origin(&panel, ModelId::LlmDirect, &c, Some(&backend)).unwrap();
        let lag = rolling_origin(&panel, ModelId::Lag1, &c, None).unwrap();
        assert_eq!(llm.records.len(), lag.records.len());
        for (a, b) in llm.records.iter().zip(&lag.records) {
            assert_eq!(a.y_hat, b.y_hat);
            assert_eq!(a.run, b.run);
        }
    }

    #[test]
    fn llm_garbage_is_counted_missing() {
        let ys: Vec<_> = (0..10).map(|i| Some(i as f64)).collect();
        let panel = Panel::new(vec![series("Adams County", &ys)]).unwrap();
        let backend = stub_backend(StubKind::Scripted(vec!["nope".into()]));
        let out = rolling_origin(&panel, ModelId::LlmDirect, &cfg(&[], 1), Some(&backend)).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.missing_forecasts, 2);
    }

    #[test]
    fn hybrid_oracle_records_carry_stage1() {
        let ys: Vec<_> = (0..12).map(|i| Some(4.0 + ((i * 7) % 5) as f64)).collect();
        let panel = Arc::new(Panel::new(vec![series("Adams County", &ys)]).unwrap());
        let backend = stub_backend(StubKind::Oracle(panel.clone()));
        let out = rolling_origin(&panel, ModelId::HybridArx, &cfg(&[], 1), Some(&backend)).unwrap();
        assert_eq!(out.records.len(), 4);
        for r in &out.records {
            let row = panel.county("Adams County").unwrap().row(r.week).unwrap();
            let s = r.stage1.unwrap();
            assert_eq!(
                (s.x_b, s.x_v, s.s_t),
                (row.x_b.unwrap(), row.x_v.unwrap(), row.s_t.unwrap())
            );
        }
        assert_eq!(out.missing_forecasts, 0);
    }

    #[test]
    fn state_series_not_evaluated() {
        let ys: Vec<_> = (0..10).map(|i| Some(i as f64)).collect();
        let mut state = series("Pennsylvania", &ys);
        state.county = CountyId::state("Pennsylvania");
        let panel = Panel::new(vec![series("Adams County", &ys), state]).unwrap();
        let out = rolling_origin(&panel, ModelId::Lag1, &cfg(&[], 1), None).unwrap();
        assert!(out.records.iter().all(|r| r.county == "Adams County"));
    }

    #[test]
    fn jsonl_round_trip() {
        let ys: Vec<_> = (0..12).map(|i| Some(1.5 * i as f64)).collect();
        let panel = Arc::new(Panel::new(vec![series("Adams County", &ys)]).unwrap());
        let backend = stub_backend(StubKind::Oracle(panel.clone()));
        let mut out = rolling_origin(&panel, ModelId::Ar1, &cfg(&[], 1), None).unwrap();
        out.merge(rolling_origin(&panel, ModelId::HybridLinReg, &cfg(&[], 1), Some(&backend)).unwrap());
        let mut buf = Vec::new();
        write_records_jsonl(&out.records, &mut buf).unwrap();
        let back = read_records_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, out.records);
    }

    #[test]
    fn config_validation() {
        let mut c = EvalConfig::default();
        assert!(c.validate().is_ok());
        c.window_len = 1;
        assert!(c.validate().is_err());
        c = EvalConfig {
            lag_max: 0,
            ..EvalConfig::default()
        };
        assert!(c.validate().is_err());
        c = EvalConfig {
            n_runs: 0,
            ..EvalConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
