//! Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::{BusKind, NetworkCase};
use crate::error::{Error, Result};
use crate::ybus::{build_ybus, AdmittanceMatrix};

/// Bus voltage magnitudes (pu) and angles (rad) in the case's dense bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl StateVector {
    pub fn new(v: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if v.len() != theta.len() {
            return Err(Error::Dimension(format!(
                "{} magnitudes vs {} angles",
                v.len(),
                theta.len()
            )));
        }
        Ok(StateVector { v, theta })
    }

    /// All magnitudes 1 pu except PV/slack setpoints, all angles 0.
    pub fn flat(case: &NetworkCase) -> Self {
        let v = case
            .buses()
            .iter()
            .map(|b| match b.kind {
                BusKind::PQ => 1.0,
                _ => b.v_setpoint.unwrap_or(1.0),
            })
            .collect();
        StateVector {
            v,
            theta: vec![0.0; case.n_buses()],
        }
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        self.v
            .iter()
            .zip(&self.theta)
            .map(|(&v, &t)| Complex64::from_polar(v, t))
            .collect()
    }

    /// `[v_1..v_n, theta_1..theta_n]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.v.iter().chain(&self.theta).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::Dimension(format!("odd state length {}", x.len())));
        }
        let n = x.len() / 2;
        Ok(StateVector {
            v: x[..n].to_vec(),
            theta: x[n..].to_vec(),
        })
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> (f64, f64) {
        let dv = self
            .v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dt = self
            .theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (dv, dt)
    }
}

/// Per-bus multipliers applied to the nominal net demand at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    pub timestamp: usize,
    pub scale: Vec<f64>,
}

impl LoadScenario {
    pub fn uniform(timestamp: usize, scale: f64, n: usize) -> Self {
        LoadScenario {
            timestamp,
            scale: vec![scale; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub converged: bool,
}

/// Complex bus injections `S_i = V_i conj(sum_j Y_ij V_j)` in pu.
pub fn complex_injections(state: &StateVector, ybus: &AdmittanceMatrix) -> Vec<Complex64> {
    let volts = state.phasors();
    (0..ybus.n())
        .map(|i| {
            let current: Complex64 = ybus.row(i).iter().map(|&(j, y)| y * volts[j]).sum();
            volts[i] * current.conj()
        })
        .collect()
}

/// Active and reactive bus injections (pu).
pub fn injected_power(state: &StateVector, ybus: &AdmittanceMatrix) -> (Vec<f64>, Vec<f64>) {
    complex_injections(state, ybus)
        .into_iter()
        .map(|s| (s.re, s.im))
        .unzip()
}

/// Partial derivatives of the complex injections with respect to every
/// angle and every magnitude, as dense `n x n` matrices (`[bus, state]`).
pub fn injection_sensitivities(
    state: &StateVector,
    ybus: &AdmittanceMatrix,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = ybus.n();
    let volts = state.phasors();
    let j = Complex64::i();
    let mut d_theta = DMatrix::zeros(n, n);
    let mut d_v = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut s_i = Complex64::default();
        let mut self_term = Complex64::default();
        for &(k, y) in ybus.row(i) {
            let term = volts[i] * (y * volts[k]).conj();
            s_i += term;
            if k == i {
                self_term = term;
            } else {
                d_theta[(i, k)] = -j * term;
                d_v[(i, k)] = term / state.v[k];
            }
        }
        d_theta[(i, i)] = j * (s_i - self_term);
        d_v[(i, i)] = (s_i + self_term) / state.v[i];
    }
    (d_theta, d_v)
}

/// Reusable solver for one network; scenarios are solved independently.
#[derive(Debug, Clone)]
pub struct PowerFlow<'a> {
    case: &'a NetworkCase,
    ybus: AdmittanceMatrix,
    pvpq: Vec<usize>,
    pq: Vec<usize>,
}

impl<'a> PowerFlow<'a> {
    pub fn new(case: &'a NetworkCase) -> Result<Self> {
        let ybus = build_ybus(case)?;
        let pvpq = (0..case.n_buses()).filter(|&i| i != case.slack()).collect();
        let pq = case
            .buses()
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::PQ)
            .map(|(i, _)| i)
            .collect();
        Ok(PowerFlow {
            case,
            ybus,
            pvpq,
            pq,
        })
    }

    pub fn ybus(&self) -> &AdmittanceMatrix {
        &self.ybus
    }

    /// Scheduled net injections (pu) for a scenario.
    pub fn scheduled(&self, scenario: &LoadScenario) -> Result<Vec<Complex64>> {
        if scenario.scale.len() != self.case.n_buses() {
            return Err(Error::Dimension(format!(
                "scenario has {} scale entries for {} buses",
                scenario.scale.len(),
                self.case.n_buses()
            )));
        }
        let base = self.case.base_mva();
        Ok(self
            .case
            .buses()
            .iter()
            .zip(&scenario.scale)
            .map(|(b, &s)| Complex64::new(-s * b.p_load, -s * b.q_load) / base)
            .collect())
    }

    fn mismatch(&self, state: &StateVector, sched: &[Complex64]) -> DVector<f64> {
        let s = complex_injections(state, &self.ybus);
        let p = self.pvpq.iter().map(|&i| s[i].re - sched[i].re);
        let q = self.pq.iter().map(|&i| s[i].im - sched[i].im);
        DVector::from_iterator(self.pvpq.len() + self.pq.len(), p.chain(q))
    }

    fn jacobian(&self, state: &StateVector) -> DMatrix<f64> {
        let (d_theta, d_v) = injection_sensitivities(state, &self.ybus);
        let (npvpq, npq) = (self.pvpq.len(), self.pq.len());
        let dim = npvpq + npq;
        DMatrix::from_fn(dim, dim, |r, c| {
            let (bus, reactive) = if r < npvpq {
                (self.pvpq[r], false)
            } else {
                (self.pq[r - npvpq], true)
            };
            let d = if c < npvpq {
                d_theta[(bus, self.pvpq[c])]
            } else {
                d_v[(bus, self.pq[c - npvpq])]
            };
            if reactive {
                d.im
            } else {
                d.re
            }
        })
    }

    pub fn solve(&self, scenario: &LoadScenario, options: &PowerFlowOptions) -> Result<PowerFlowSolution> {
        self.solve_from(StateVector::flat(self.case), scenario, options)
    }

    pub fn solve_from(
        &self,
        mut state: StateVector,
        scenario: &LoadScenario,
        options: &PowerFlowOptions,
    ) -> Result<PowerFlowSolution> {
        let sched = self.scheduled(scenario)?;
        let npvpq = self.pvpq.len();
        let mut best: Option<PowerFlowSolution> = None;

        for iteration in 0..=options.max_iterations {
            let f = self.mismatch(&state, &sched);
            let norm = f.amax();
            if !norm.is_finite() {
                break;
            }
            if best.as_ref().map_or(true, |b| norm < b.max_mismatch) {
                best = Some(PowerFlowSolution {
                    state: state.clone(),
                    iterations: iteration,
                    max_mismatch: norm,
                    converged: false,
                });
            }
            if norm < options.tolerance {
                return Ok(PowerFlowSolution {
                    state,
                    iterations: iteration,
                    max_mismatch: norm,
                    converged: true,
                });
            }
            if iteration == options.max_iterations {
                break;
            }
            let dx = self
                .jacobian(&state)
                .lu()
                .solve(&(-f))
                .filter(|dx| dx.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularJacobian { iteration })?;
            for (k, &i) in self.pvpq.iter().enumerate() {
                state.theta[i] += dx[k];
            }
            for (k, &i) in self.pq.iter().enumerate() {
                state.v[i] += dx[npvpq + k];
            }
            if state.v.iter().any(|&v| !(v > 0.0)) {
                break;
            }
        }

        let mut best = best.unwrap_or_else(|| PowerFlowSolution {
            state: StateVector::flat(self.case),
            iterations: 0,
            max_mismatch: f64::INFINITY,
            converged: false,
        });
        best.iterations = best.iterations.max(1);
        log::debug!(
            "power flow t={} did not converge (best mismatch {:e})",
            scenario.timestamp,
            best.max_mismatch
        );
        Ok(best)
    }
}

pub fn solve_power_flow(
    case: &NetworkCase,
    scenario: &LoadScenario,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    PowerFlow::new(case)?.solve(scenario, options)
}
