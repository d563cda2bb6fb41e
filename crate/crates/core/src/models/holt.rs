//! Holt's additive linear-trend smoothing, no seasonality.
//!
//! Level `ℓ_t = α·y_t + (1−α)(ℓ_{t−1} + b_{t−1})`, trend
//! `b_t = β(ℓ_t − ℓ_{t−1}) + (1−β)b_{t−1}`, one-step forecast `ℓ_T + b_T`.
//! The state starts at `ℓ_1 = y_1` and `b_1` = mean first difference of the
//! window; `(α, β)` minimise the in-window one-step SSE over a coarse grid
//! followed by a finer grid around the best coarse point.

use super::{clip, forecast_lag1, Forecast, History, ModelError, ModelId};

const HOLT_MIN: usize = 4;
const PARAM_LO: f64 = 0.01;
const PARAM_HI: f64 = 0.99;
const COARSE_STEP: f64 = 0.02;
const FINE_STEP: f64 = 0.002;
const FINE_HALF_WIDTH: i32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoltFit {
    pub alpha: f64,
    pub beta: f64,
    pub level: f64,
    pub trend: f64,
    pub sse: f64,
}

impl HoltFit {
    pub fn forecast(&self) -> f64 {
        self.level + self.trend
    }
}

fn run(y: &[f64], alpha: f64, beta: f64) -> HoltFit {
    let n = y.len();
    let mut level = y[0];
    let mut trend = (y[n - 1] - y[0]) / (n - 1) as f64;
    let mut sse = 0.0;
    for &obs in &y[1..] {
        let pred = level + trend;
        sse += (obs - pred) * (obs - pred);
        let new_level = alpha * obs + (1.0 - alpha) * pred;
        trend = beta * (new_level - level) + (1.0 - beta) * trend;
        level = new_level;
    }
    HoltFit {
        alpha,
        beta,
        level,
        trend,
        sse,
    }
}

fn search(y: &[f64], alphas: &[f64], betas: &[f64], mut best: Option<HoltFit>) -> Option<HoltFit> {
    for &a in alphas {
        for &b in betas {
            let fit = run(y, a, b);
            if best.is_none_or(|cur| fit.sse < cur.sse) {
                best = Some(fit);
            }
        }
    }
    best
}

fn coarse_grid() -> Vec<f64> {
    let n = ((PARAM_HI - PARAM_LO) / COARSE_STEP).round() as usize;
    (0..=n).map(|i| PARAM_LO + COARSE_STEP * i as f64).collect()
}

fn fine_grid(center: f64) -> Vec<f64> {
    (-FINE_HALF_WIDTH..=FINE_HALF_WIDTH)
        .map(|k| center + FINE_STEP * k as f64)
        .filter(|v| (PARAM_LO - 1e-12..=PARAM_HI + 1e-12).contains(v))
        .collect()
}

/// Fit `(α, β)` by grid search. Needs at least two observations.
pub fn fit_holt(y: &[f64]) -> Option<HoltFit> {
    if y.len() < 2 {
        return None;
    }
    let coarse = coarse_grid();
    let best = search(y, &coarse, &coarse, None)?;
    search(y, &fine_grid(best.alpha), &fine_grid(best.beta), Some(best))
}

/// Holt forecast; windows shorter than four weeks fall back to Lag-1.
pub fn fit_forecast_holt(h: &History) -> Result<Forecast, ModelError> {
    if h.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    let fallback = || -> Result<Forecast, ModelError> {
        let mut f = forecast_lag1(h)?;
        f.model = ModelId::Holt;
        f.fallback_used = true;
        Ok(f)
    };
    if h.len() < HOLT_MIN {
        return fallback();
    }
    match fit_holt(h.values()) {
        Some(fit) if fit.forecast().is_finite() => Ok(Forecast {
            value: clip(fit.forecast()),
            model: ModelId::Holt,
            fallback_used: false,
        }),
        _ => fallback(),
    }
}
