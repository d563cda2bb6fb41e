#![allow(clippy::needless_range_loop)]
use super::ols::{least_squares, LeastSquares};
use super::{clip, ExogNext, ExogRow, ExogWindow, FitDiagnostics, Forecast, History, ModelError, ModelId};

const AR1_MIN: usize = 3;
const ARX_MIN: usize = 6;
const LINREG_MIN: usize = 5;

impl From<LeastSquares> for FitDiagnostics {
    fn from(fit: LeastSquares) -> Self {
        FitDiagnostics {
            coefficients: fit.coefficients,
            residual_sse: fit.residual_sse,
            rank_deficient: fit.rank_deficient,
        }
    }
}

/// Persistence: next week equals this week.
pub fn forecast_lag1(h: &History) -> Result<Forecast, ModelError> {
    let last = h.last().ok_or(ModelError::EmptyHistory)?;
    Ok(Forecast {
        value: clip(last),
        model: ModelId::Lag1,
        fallback_used: false,
    })
}

fn lag1_as(h: &History, model: ModelId) -> Result<Forecast, ModelError> {
    let mut f = forecast_lag1(h)?;
    f.model = model;
    f.fallback_used = true;
    Ok(f)
}

fn require(h: &History, model: ModelId, needed: usize) -> Result<(), ModelError> {
    if h.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    if h.len() < needed {
        return Err(ModelError::TooShort {
            model,
            needed,
            got: h.len(),
        });
    }
    Ok(())
}

fn fit_ar1(y: &[f64]) -> LeastSquares {
    let design: Vec<Vec<f64>> = y[..y.len() - 1].iter().map(|&lag| vec![1.0, lag]).collect();
    least_squares(&design, &y[1..])
}

/// AR(1) with intercept, fitted by OLS on the window's lagged pairs.
///
/// A rank-deficient design (constant lagged values) falls back to Lag-1.
pub fn fit_forecast_ar1(h: &History) -> Result<(Forecast, FitDiagnostics), ModelError> {
    require(h, ModelId::Ar1, AR1_MIN)?;
    let y = h.values();
    let fit = fit_ar1(y);
    let raw = fit.predict(&[1.0, y[y.len() - 1]]);
    if fit.rank_deficient || !fit.is_finite() || !raw.is_finite() {
        return Ok((lag1_as(h, ModelId::Ar1)?, fit.into()));
    }
    let forecast = Forecast {
        value: clip(raw),
        model: ModelId::Ar1,
        fallback_used: false,
    };
    Ok((forecast, fit.into()))
}

/// Column-wise mean imputation; columns with no observation become zero.
pub fn impute_window(w: &ExogWindow) -> ExogWindow {
    let mut means = [0.0; 3];
    for (k, mean) in means.iter_mut().enumerate() {
        let observed: Vec<f64> = w.rows.iter().filter_map(|r| r.values()[k]).collect();
        if !observed.is_empty() {
            *mean = observed.iter().sum::<f64>() / observed.len() as f64;
        }
    }
    let rows = w
        .rows
        .iter()
        .map(|r| ExogRow {
            week: r.week,
            x_b: Some(r.x_b.unwrap_or(means[0])),
            x_v: Some(r.x_v.unwrap_or(means[1])),
            s_t: Some(r.s_t.unwrap_or(means[2])),
        })
        .collect();
    ExogWindow { rows }
}

fn exog_values(row: &ExogRow) -> [f64; 3] {
    // only called on imputed windows
    [row.x_b.unwrap_or(0.0), row.x_v.unwrap_or(0.0), row.s_t.unwrap_or(0.0)]
}

/// Walk the degeneracy ladder below a regression model: AR(1), then Lag-1.
fn ladder(h: &History, model: ModelId) -> Result<Forecast, ModelError> {
    if h.len() >= AR1_MIN {
        let (f, _) = fit_forecast_ar1(h)?;
        if f.value.is_finite() {
            return Ok(Forecast {
                value: f.value,
                model,
                fallback_used: true,
            });
        }
    }
    lag1_as(h, model)
}

/// ARX(1): `y_t ~ 1 + y_{t-1} + x_b,t + x_v,t + s_t,t` on the imputed
/// window, evaluated at the last `y` and the supplied next-week exogenous values.
pub fn fit_forecast_arx(
    h: &History,
    w: &ExogWindow,
    next: &ExogNext,
) -> Result<(Forecast, FitDiagnostics), ModelError> {
    require(h, ModelId::Arx, ARX_MIN)?;
    w.check_aligned(h)?;
    let imputed = impute_window(w);
    let y = h.values();
    let design: Vec<Vec<f64>> = (1..y.len())
        .map(|t| {
            let [xb, xv, st] = exog_values(&imputed.rows[t]);
            vec![1.0, y[t - 1], xb, xv, st]
        })
        .collect();
    let fit = least_squares(&design, &y[1..]);
    let [nb, nv, ns] = next.as_array();
    let raw = fit.predict(&[1.0, y[y.len() - 1], nb, nv, ns]);
    if !fit.is_finite() || !raw.is_finite() {
        return Ok((ladder(h, ModelId::Arx)?, fit.into()));
    }
    let forecast = Forecast {
        value: clip(raw),
        model: ModelId::Arx,
        fallback_used: false,
    };
    Ok((forecast, fit.into()))
}

/// Contemporaneous regression `y_t ~ 1 + x_b,t + x_v,t + s_t,t` over every
/// window week, with no lag term.
pub fn fit_forecast_linreg(
    h: &History,
    w: &ExogWindow,
    next: &ExogNext,
) -> Result<(Forecast, FitDiagnostics), ModelError> {
    require(h, ModelId::LinReg, LINREG_MIN)?;
    w.check_aligned(h)?;
    let imputed = impute_window(w);
    let design: Vec<Vec<f64>> = imputed
        .rows
        .iter()
        .map(|r| {
            let [xb, xv, st] = exog_values(r);
            vec![1.0, xb, xv, st]
        })
        .collect();
    let fit = least_squares(&design, h.values());
    let [nb, nv, ns] = next.as_array();
    let raw = fit.predict(&[1.0, nb, nv, ns]);
    if !fit.is_finite() || !raw.is_finite() {
        return Ok((ladder(h, ModelId::LinReg)?, fit.into()));
    }
    let forecast = Forecast {
        value: clip(raw),
        model: ModelId::LinReg,
        fallback_used: false,
    };
    Ok((forecast, fit.into()))
}
