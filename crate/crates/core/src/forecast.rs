//! Lagged linear forecasting of the next state and pseudo-measurements for
//! missing channels.
//!
//! Every state component is regressed on its own recent history:
//! `x[t+1] = a0 + b0 x[t] + b1 x[t-1] + ... + bh x[t-h]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ordered_least_squares;
use crate::measurement::{evaluate_h, MeasurementPlan, MeasurementVector};
use crate::parallel;
use crate::powerflow::StateVector;
use crate::ybus::AdmittanceMatrix;

pub const DEFAULT_LAGS: usize = 24;

/// Lag columns whose residual norm after projection falls below this
/// fraction of their own norm are left out of the fit.
const DEPENDENCE_TOL: f64 = 1e-9;

const FORMAT: &str = "gridstate-forecast";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateForecast {
    /// `[a0, b0, ..., bh]`.
    pub coefficients: Vec<f64>,
    /// Lags that entered the fit (0 is the most recent).
    pub active_lags: Vec<usize>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    format: String,
    version: u32,
    lags: usize,
    n_buses: usize,
    /// One entry per state component, magnitudes then angles.
    states: Vec<StateForecast>,
}

impl ForecastModel {
    pub fn lags(&self) -> usize {
        self.lags
    }

    /// States needed to forecast one step.
    pub fn window(&self) -> usize {
        self.lags + 1
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn states(&self) -> &[StateForecast] {
        &self.states
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forecast model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ForecastModel = serde_json::from_str(text)?;
        if model.format != FORMAT || model.version != VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported forecast format {} v{}",
                model.format, model.version
            )));
        }
        if model.states.len() != 2 * model.n_buses
            || model.states.iter().any(|s| s.coefficients.len() != model.lags + 2)
        {
            return Err(Error::Dimension("forecast coefficients do not match lags".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One-step forecast from the last `lags + 1` states, oldest first.
    pub fn forecast_next(&self, window: &[StateVector]) -> Result<StateVector> {
        if window.len() != self.window() {
            return Err(Error::InvalidInput(format!(
                "forecast window of {} states, {} required",
                window.len(),
                self.window()
            )));
        }
        if window.iter().any(|s| s.n() != self.n_buses) {
            return Err(Error::Dimension("window state width does not match model".into()));
        }
        let n = self.n_buses;
        let component = |s: &StateVector, k: usize| if k < n { s.v[k] } else { s.theta[k - n] };
        let next: Vec<f64> = self
            .states
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let lagged = window.iter().rev().map(|s| component(s, k));
                f.coefficients[0]
                    + f.coefficients[1..]
                        .iter()
                        .zip(lagged)
                        .map(|(b, x)| b * x)
                        .sum::<f64>()
            })
            .collect();
        Ok(StateVector {
            v: next[..n].to_vec(),
            theta: next[n..].to_vec(),
        })
    }
}

/// Fit one lagged regression per state component over sliding windows of
/// a time-ordered state history.
pub fn fit_forecaster(history: &[StateVector], lags: usize) -> Result<ForecastModel> {
    if history.len() <= lags + 1 {
        return Err(Error::InsufficientData(format!(
            "{} states in history, more than {} needed",
            history.len(),
            lags + 1
        )));
    }
    let n = history[0].n();
    if history.iter().any(|s| s.n() != n) {
        return Err(Error::Dimension("history states differ in width".into()));
    }
    let series = |k: usize| -> Vec<f64> {
        history
            .iter()
            .map(|s| if k < n { s.v[k] } else { s.theta[k - n] })
            .collect()
    };
    let states = parallel::map_range(2 * n, |k| fit_series(&series(k), lags));
    for (k, s) in states.iter().enumerate() {
        if s.active_lags.is_empty() {
            log::info!("state {k} has a constant history; intercept-only forecast");
        }
    }
    Ok(ForecastModel {
        format: FORMAT.into(),
        version: VERSION,
        lags,
        n_buses: n,
        states,
    })
}

fn fit_series(x: &[f64], lags: usize) -> StateForecast {
    if x.iter().all(|&v| v == x[0]) {
        let mut coefficients = vec![0.0; lags + 2];
        coefficients[0] = x[0];
        return StateForecast {
            coefficients,
            active_lags: Vec::new(),
            rmse: 0.0,
        };
    }
    let rows = x.len() - lags - 1;
    let design = DMatrix::from_fn(rows, lags + 2, |r, c| {
        let t = r + lags;
        if c == 0 {
            1.0
        } else {
            x[t - (c - 1)]
        }
    });
    let target = DVector::from_fn(rows, |r, _| x[r + lags + 1]);
    let fit = ordered_least_squares(&design, &target, DEPENDENCE_TOL);
    let residual = &design * DVector::from_column_slice(&fit.coefficients) - &target;
    StateForecast {
        active_lags: fit.kept.iter().filter(|&&c| c > 0).map(|c| c - 1).collect(),
        coefficients: fit.coefficients,
        rmse: (residual.norm_squared() / rows as f64).sqrt(),
    }
}

/// Fill the masked channels of `real` with `h(forecast)`. Available
/// channels are returned unchanged and the result is fully unmasked.
pub fn pseudo_measurements(
    forecast: &StateVector,
    plan: &MeasurementPlan,
    ybus: &AdmittanceMatrix,
    real: &MeasurementVector,
) -> Result<MeasurementVector> {
    if real.len() != plan.m() || forecast.n() != plan.n_buses() {
        return Err(Error::Dimension("forecast, plan and measurements disagree".into()));
    }
    if real.is_complete() {
        return Ok(real.clone());
    }
    let h = evaluate_h(forecast, plan, ybus);
    let values = real
        .values
        .iter()
        .zip(&real.mask)
        .zip(h)
        .map(|((&z, &available), hz)| if available { z } else { hz })
        .collect();
    Ok(MeasurementVector::full(real.timestamp, values))
}
