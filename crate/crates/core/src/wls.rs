//! Weighted-least-squares state estimation by Gauss-Newton iteration.
//!
//! Each iteration solves the normal equations
//! `(H^T W H) dx = H^T W (z - h(x))` by Cholesky factorization. A step that
//! would increase the objective is halved, at most six times, before it is
//! taken.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::measurement::{evaluate_h, evaluate_jacobian, MeasurementPlan, MeasurementVector};
use crate::powerflow::StateVector;
use crate::ybus::{build_ybus, AdmittanceMatrix};

const MAX_HALVINGS: usize = 6;
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Diagonal weights `1 / sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Vec<f64>);

impl WeightMatrix {
    pub fn from_plan(plan: &MeasurementPlan) -> Self {
        WeightMatrix(plan.specs().iter().map(|s| 1.0 / (s.sigma * s.sigma)).collect())
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.0
    }

    /// `0.5 r^T W r`.
    pub fn half_quadratic(&self, residual: &[f64]) -> f64 {
        0.5 * residual
            .iter()
            .zip(&self.0)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tolerance: 1e-6,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub state: StateVector,
    pub iterations: usize,
    pub converged: bool,
    /// `J(x) = 0.5 (z - h(x))^T W (z - h(x))` at the returned state.
    pub objective: f64,
    /// `sqrt(2 J)`.
    pub residual_norm: f64,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
}

/// `J(x)` for a measurement vector.
pub fn objective(
    z: &[f64],
    state: &StateVector,
    plan: &MeasurementPlan,
    ybus: &AdmittanceMatrix,
    weights: &WeightMatrix,
) -> f64 {
    let h = evaluate_h(state, plan, ybus);
    let r: Vec<f64> = z.iter().zip(&h).map(|(z, h)| z - h).collect();
    weights.half_quadratic(&r)
}

/// Estimator bound to one case and plan.
#[derive(Debug, Clone)]
pub struct WlsEstimator<'a> {
    case: &'a NetworkCase,
    plan: &'a MeasurementPlan,
    ybus: AdmittanceMatrix,
    weights: WeightMatrix,
}

impl<'a> WlsEstimator<'a> {
    pub fn new(case: &'a NetworkCase, plan: &'a MeasurementPlan) -> Result<Self> {
        if plan.n_buses() != case.n_buses() {
            return Err(Error::Dimension("plan was built for another case".into()));
        }
        Ok(WlsEstimator {
            case,
            plan,
            ybus: build_ybus(case)?,
            weights: WeightMatrix::from_plan(plan),
        })
    }

    pub fn ybus(&self) -> &AdmittanceMatrix {
        &self.ybus
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn estimate(&self, z: &MeasurementVector, options: &WlsOptions) -> Result<EstimationResult> {
        if z.len() != self.plan.m() {
            return Err(Error::Dimension(format!(
                "{} measurements for a plan of {}",
                z.len(),
                self.plan.m()
            )));
        }
        if !z.is_complete() {
            return Err(Error::MaskedMeasurements { missing: z.missing() });
        }
        let n = self.case.n_buses();
        let slack = self.case.slack();
        let w = self.weights.diagonal();
        let mut state = StateVector {
            v: vec![1.0; n],
            theta: vec![0.0; n],
        };
        let objective_at = |s: &StateVector| objective(&z.values, s, self.plan, &self.ybus, &self.weights);
        let mut current = objective_at(&state);
        let mut history = vec![current];
        let mut converged = false;
        let mut iterations = 0;

        while iterations < options.max_iterations {
            let h = evaluate_h(&state, self.plan, &self.ybus);
            let jac = evaluate_jacobian(&state, self.plan, &self.ybus);
            let weighted_residual =
                DVector::from_iterator(h.len(), z.values.iter().zip(&h).zip(w).map(|((z, h), w)| w * (z - h)));
            let mut wjac = jac.clone();
            for (mut row, &wk) in wjac.row_iter_mut().zip(w) {
                row *= wk;
            }
            let gain = jac.transpose() * &wjac;
            let rhs = jac.transpose() * weighted_residual;
            let dx = spd_solve(&gain, &rhs, PIVOT_TOLERANCE).ok_or(Error::Unobservable)?;

            let apply = |scale: f64| {
                let mut next = state.clone();
                for bus in 0..n {
                    if let Some(c) = self.plan.angle_column(bus) {
                        next.theta[bus] += scale * dx[c];
                    }
                    next.v[bus] += scale * dx[self.plan.magnitude_column(bus)];
                }
                next
            };
            let mut step = 1.0;
            let mut candidate = apply(step);
            let mut value = objective_at(&candidate);
            for _ in 0..MAX_HALVINGS {
                if value <= current {
                    break;
                }
                step *= 0.5;
                candidate = apply(step);
                value = objective_at(&candidate);
            }
            state = candidate;
            current = value;
            history.push(current);
            iterations += 1;
            if dx.amax() < options.tolerance {
                converged = true;
                break;
            }
        }
        state.theta[slack] = 0.0;

        Ok(EstimationResult {
            state,
            iterations,
            converged,
            objective: current,
            residual_norm: (2.0 * current).sqrt(),
            objective_history: history,
        })
    }
}

pub fn estimate_wls(
    z: &MeasurementVector,
    plan: &MeasurementPlan,
    case: &NetworkCase,
    options: &WlsOptions,
) -> Result<EstimationResult> {
    WlsEstimator::new(case, plan)?.estimate(z, options)
}
