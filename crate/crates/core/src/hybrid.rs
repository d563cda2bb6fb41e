//! Two-stage context-augmented forecasting.
//!
//! Stage 1 asks a context forecaster for next week's `(X_B, X_V, s_t)`
//! given the last `L` weeks of `(y, X_B, X_V, s_t)`. Stage 2 feeds those
//! three numbers, and nothing else from the future, into ARX or a
//! contemporaneous linear regression fitted on the historical window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{
    forecast_context, CompletionBackend, ContextError, PromptMode, PromptSpec, RecentEntry, RetryPolicy,
    CONTEXT_LABELS, LABEL_Y,
};
use crate::models::{
    fit_forecast_arx, fit_forecast_linreg, ExogNext, ExogWindow, FitDiagnostics, Forecast, History, ModelError, ModelId,
};

#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Downstream {
    Arx,
    LinReg,
}

impl Downstream {
    pub fn model_id(self) -> ModelId {
        match self {
            Downstream::Arx => ModelId::HybridArx,
            Downstream::LinReg => ModelId::HybridLinReg,
        }
    }
}

pub struct HybridConfig<'a> {
    pub downstream: Downstream,
    pub context_backend: &'a dyn CompletionBackend,
    pub run_id: u32,
    /// Discard the whole stage-1 triple when any label is missing.
    pub strict: bool,
    pub retry: RetryPolicy,
}

impl<'a> HybridConfig<'a> {
    pub fn new(downstream: Downstream, context_backend: &'a dyn CompletionBackend, run_id: u32) -> Self {
        HybridConfig {
            downstream,
            context_backend,
            run_id,
            strict: true,
            retry: RetryPolicy::default(),
        }
    }
}

/// Which stage-1 components were replaced by their last observed value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Flags {
    pub x_b_fallback: bool,
    pub x_v_fallback: bool,
    pub s_t_fallback: bool,
    pub retried: bool,
}

impl Stage1Flags {
    pub fn any_fallback(&self) -> bool {
        self.x_b_fallback || self.x_v_fallback || self.s_t_fallback
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub forecast: Forecast,
    pub exog_next: ExogNext,
    pub flags: Stage1Flags,
    pub diagnostics: FitDiagnostics,
}

/// Stage-1 prompt: the window's `y` alongside the three indicators.
pub fn context_prompt_spec(geography: &str, h: &History, w: &ExogWindow) -> Result<PromptSpec, HybridError> {
    w.check_aligned(h)?;
    let prediction_date = h.target_week().ok_or(ModelError::EmptyHistory)?;
    let recent_block = h
        .weeks()
        .iter()
        .zip(h.values())
        .zip(&w.rows)
        .map(|((week, y), row)| RecentEntry {
            date: *week,
            values: vec![
                (LABEL_Y.to_string(), Some(*y)),
                (CONTEXT_LABELS[0].to_string(), row.x_b),
                (CONTEXT_LABELS[1].to_string(), row.x_v),
                (CONTEXT_LABELS[2].to_string(), row.s_t),
            ],
        })
        .collect();
    Ok(PromptSpec {
        geography: geography.to_string(),
        prediction_date,
        recent_block,
        mode: PromptMode::ContextTriple,
    })
}

/// Run both stages for one county-week.
pub fn hybrid_forecast(
    geography: &str,
    h: &History,
    w: &ExogWindow,
    cfg: &HybridConfig<'_>,
) -> Result<HybridOutput, HybridError> {
    let spec = context_prompt_spec(geography, h, w)?;
    let parsed = forecast_context(cfg.context_backend, &spec, h.len(), cfg.run_id, cfg.retry)?;

    let persistence = w.last_observed().map(|v| v.unwrap_or(0.0));
    let predicted = if cfg.strict && !parsed.complete {
        [None; 3]
    } else {
        parsed.values()
    };
    let mut used = [0.0; 3];
    let mut fell_back = [false; 3];
    for k in 0..3 {
        match predicted[k] {
            Some(v) => used[k] = v,
            None => {
                used[k] = persistence[k];
                fell_back[k] = true;
            }
        }
    }
    let exog_next = ExogNext::new(used[0], used[1], used[2])?;
    let (mut forecast, diagnostics) = match cfg.downstream {
        Downstream::Arx => fit_forecast_arx(h, w, &exog_next)?,
        Downstream::LinReg => fit_forecast_linreg(h, w, &exog_next)?,
    };
    forecast.model = cfg.downstream.model_id();
    Ok(HybridOutput {
        forecast,
        exog_next,
        flags: Stage1Flags {
            x_b_fallback: fell_back[0],
            x_v_fallback: fell_back[1],
            s_t_fallback: fell_back[2],
            retried: parsed.retried,
        },
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::context::{stub_backend, StubKind};
    use crate::models::ExogRow;
    use crate::panel::{CountyId, CountySeries, Panel, PanelRow, WeekStamp};

    fn start() -> WeekStamp {
        WeekStamp::parse("2021-01-03").unwrap()
    }

    const YS: [f64; 9] = [12.0, 14.0, 13.0, 17.0, 19.0, 18.0, 22.0, 25.0, 24.0];
    const XB: [f64; 9] = [30.0, 31.0, 33.0, 32.0, 36.0, 38.0, 37.0, 41.0, 44.0];
    const XV: [f64; 9] = [3.0, 4.0, 4.0, 5.0, 7.0, 6.0, 8.0, 9.0, 9.5];
    const ST: [f64; 9] = [100.0, 120.0, 90.0, 140.0, 160.0, 150.0, 170.0, 200.0, 210.0];

    fn window() -> (History, ExogWindow) {
        let h = History::from_values(start(), &YS[..8]).unwrap();
        let w = ExogWindow::new(
            (0..8)
                .map(|i| ExogRow {
                    week: start().plus_weeks(i as i64),
                    x_b: Some(XB[i]),
                    x_v: Some(XV[i]),
                    s_t: Some(ST[i]),
                })
                .collect(),
        )
        .unwrap();
        (h, w)
    }

    fn panel() -> Arc<Panel> {
        let rows = (0..9)
            .map(|i| {
                let mut r = PanelRow::empty(start().plus_weeks(i as i64));
                r.y = Some(YS[i]);
                r.x_b = Some(XB[i]);
                r.x_v = Some(XV[i]);
                r.s_t = Some(ST[i]);
                r
            })
            .collect();
        Arc::new(
            Panel::new(vec![CountySeries {
                county: CountyId::county("Adams County"),
                rows,
            }])
            .unwrap(),
        )
    }

    #[test]
    fn oracle_backend_equals_arx_with_truth() {
        let (h, w) = window();
        let backend = stub_backend(StubKind::Oracle(panel()));
        let cfg = HybridConfig::new(Downstream::Arx, &backend, 1);
        let out = hybrid_forecast("Adams County", &h, &w, &cfg).unwrap();
        let truth = ExogNext::new(XB[8], XV[8], ST[8]).unwrap();
        let (direct, _) = fit_forecast_arx(&h, &w, &truth).unwrap();
        assert!((out.forecast.value - direct.value).abs() < 1e-9);
        assert_eq!(out.exog_next, truth);
        assert!(!out.flags.any_fallback());
        assert_eq!(out.forecast.model, ModelId::HybridArx);
    }

    #[test]
    fn persistence_backend_on_constant_exog() {
        let h = History::from_values(start(), &YS[..8]).unwrap();
        let w = ExogWindow::new(
            (0..8)
                .map(|i| ExogRow {
                    week: start().plus_weeks(i),
                    x_b: Some(5.0),
                    x_v: Some(1.0),
                    s_t: Some(70.0),
                })
                .collect(),
        )
        .unwrap();
        let backend = stub_backend(StubKind::Persistence);
        let cfg = HybridConfig::new(Downstream::Arx, &backend, 1);
        let out = hybrid_forecast("Adams County", &h, &w, &cfg).unwrap();
        let (direct, _) = fit_forecast_arx(&h, &w, &ExogNext::new(5.0, 1.0, 70.0).unwrap()).unwrap();
        assert_eq!(out.forecast.value, direct.value);
    }

    #[test]
    fn garbage_twice_falls_back_to_persistence() {
        let (h, w) = window();
        let backend = stub_backend(StubKind::Scripted(vec!["??".into(), "still ??".into()]));
        let mut cfg = HybridConfig::new(Downstream::LinReg, &backend, 1);
        cfg.retry = RetryPolicy::no_backoff();
        let out = hybrid_forecast("Adams County", &h, &w, &cfg).unwrap();
        assert_eq!(out.exog_next.as_array(), [XB[7], XV[7], ST[7]]);
        assert!(out.flags.x_b_fallback && out.flags.x_v_fallback && out.flags.s_t_fallback);
        assert!(out.flags.retried);
        assert_eq!(out.forecast.model, ModelId::HybridLinReg);
    }

    #[test]
    fn strict_mode_discards_partial_triple() {
        let (h, w) = window();
        let partial = vec!["X_B: 50\ns_t: 300".to_string(), "X_B: 50\ns_t: 300".to_string()];
        let strict_backend = stub_backend(StubKind::Scripted(partial.clone()));
        let mut cfg = HybridConfig::new(Downstream::Arx, &strict_backend, 1);
        cfg.retry = RetryPolicy::no_backoff();
        let strict = hybrid_forecast("Adams County", &h, &w, &cfg).unwrap();
        assert_eq!(strict.exog_next.as_array(), [XB[7], XV[7], ST[7]]);

        let lenient_backend = stub_backend(StubKind::Scripted(partial));
        let mut cfg = HybridConfig::new(Downstream::Arx, &lenient_backend, 1);
        cfg.retry = RetryPolicy::no_backoff();
        cfg.strict = false;
        let lenient = hybrid_forecast("Adams County", &h, &w, &cfg).unwrap();
        assert_eq!(lenient.exog_next.as_array(), [50.0, XV[7], 300.0]);
        assert!(!lenient.flags.x_b_fallback && lenient.flags.x_v_fallback && !lenient.flags.s_t_fallback);
    }

    #[test]
    fn prompt_carries_y_and_indicators() {
        let (h, w) = window();
        let spec = context_prompt_spec("Adams County", &h, &w).unwrap();
        let text = crate::context::build_prompt(&spec, 8).unwrap();
        assert!(text.contains("2021-01-03: y=12, X_B=30, X_V=3, s_t=100"));
        assert!(text.contains("week ending 2021-02-28"));
    }
}
