//! Measurement plans, the measurement function `h(x)` and its Jacobian.
//!
//! State columns of the Jacobian are ordered as the angles of every
//! non-slack bus (bus order), followed by the magnitudes of every bus. The
//! slack angle is the reference and is not a state.

mod noise;
mod presets;

pub use noise::{add_bounded_percent_noise, add_gaussian_noise, empirical_snr_db};
pub use presets::{default_plan, Preset};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::powerflow::{complex_injections, injection_sensitivities, StateVector};
use crate::ybus::AdmittanceMatrix;

pub const SIGMA_VMAG: f64 = 0.01;
pub const SIGMA_VANG: f64 = 0.01414;
pub const SIGMA_FLOW: f64 = 0.01414;
pub const SIGMA_INJECTION: f64 = 0.0122;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    Vmag,
    Vang,
    Pinj,
    Qinj,
    Pflow,
    Qflow,
}

impl MeasurementKind {
    pub fn is_flow(self) -> bool {
        matches!(self, MeasurementKind::Pflow | MeasurementKind::Qflow)
    }

    pub fn default_sigma(self) -> f64 {
        match self {
            MeasurementKind::Vmag => SIGMA_VMAG,
            MeasurementKind::Vang => SIGMA_VANG,
            MeasurementKind::Pflow | MeasurementKind::Qflow => SIGMA_FLOW,
            MeasurementKind::Pinj | MeasurementKind::Qinj => SIGMA_INJECTION,
        }
    }
}

/// Where a measurement is taken. Flows are metered at the `from` end of the
/// stated direction, which may be either end of the branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Bus(u32),
    Branch { from: u32, to: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub kind: MeasurementKind,
    pub location: Location,
    pub sigma: f64,
}

impl MeasurementSpec {
    pub fn bus(kind: MeasurementKind, id: u32) -> Self {
        MeasurementSpec {
            kind,
            location: Location::Bus(id),
            sigma: kind.default_sigma(),
        }
    }

    pub fn flow(kind: MeasurementKind, from: u32, to: u32) -> Self {
        MeasurementSpec {
            kind,
            location: Location::Branch { from, to },
            sigma: kind.default_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Site {
    Bus(usize),
    /// Case branch position and whether the metered end is the branch's `from` end.
    Flow { branch: usize, at_from: bool },
}

/// An ordered list of measurements resolved against one case.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlan {
    specs: Vec<MeasurementSpec>,
    sites: Vec<Site>,
    n_buses: usize,
    slack: usize,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    specs: Vec<MeasurementSpec>,
}

impl MeasurementPlan {
    /// Resolve specs against a case. Observability is checked separately by
    /// [`MeasurementPlan::check_observable`].
    pub fn new(case: &NetworkCase, specs: Vec<MeasurementSpec>) -> Result<Self> {
        let mut sites = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            if !(spec.sigma > 0.0) {
                return Err(Error::InvalidPlan(format!("entry {k} has sigma {}", spec.sigma)));
            }
            let site = match (spec.kind.is_flow(), spec.location) {
                (false, Location::Bus(id)) => Site::Bus(
                    case.index_of(id)
                        .ok_or_else(|| Error::InvalidPlan(format!("entry {k}: no bus {id}")))?,
                ),
                (true, Location::Branch { from, to }) => {
                    let (branch, at_from) = case.find_branch(from, to).ok_or_else(|| {
                        Error::InvalidPlan(format!("entry {k}: no in-service branch {from}-{to}"))
                    })?;
                    Site::Flow { branch, at_from }
                }
                _ => {
                    return Err(Error::InvalidPlan(format!(
                        "entry {k}: {:?} cannot be located at {:?}",
                        spec.kind, spec.location
                    )))
                }
            };
            sites.push(site);
        }
        Ok(MeasurementPlan {
            specs,
            sites,
            n_buses: case.n_buses(),
            slack: case.slack(),
        })
    }

    pub fn from_json(case: &NetworkCase, text: &str) -> Result<Self> {
        let file: PlanFile = serde_json::from_str(text)?;
        Self::new(case, file.specs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PlanFile {
            specs: self.specs.clone(),
        })
        .expect("plan serializes")
    }

    pub fn specs(&self) -> &[MeasurementSpec] {
        &self.specs
    }

    pub fn m(&self) -> usize {
        self.specs.len()
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// Number of estimated states, `2n - 1`.
    pub fn n_states(&self) -> usize {
        2 * self.n_buses - 1
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.sigma).collect()
    }

    /// Copy with every sigma multiplied by `factor`.
    pub fn scaled_sigmas(&self, factor: f64) -> Self {
        let mut plan = self.clone();
        for spec in &mut plan.specs {
            spec.sigma *= factor;
        }
        plan
    }

    /// Jacobian column of a bus angle, `None` for the slack reference.
    pub fn angle_column(&self, bus: usize) -> Option<usize> {
        match bus.cmp(&self.slack) {
            std::cmp::Ordering::Less => Some(bus),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(bus - 1),
        }
    }

    pub fn magnitude_column(&self, bus: usize) -> usize {
        self.n_buses - 1 + bus
    }

    /// Numerical rank of `H` at flat start.
    pub fn flat_start_rank(&self, case: &NetworkCase, ybus: &AdmittanceMatrix) -> usize {
        let h = evaluate_jacobian(&StateVector::flat(case), self, ybus);
        let dim = h.nrows().max(h.ncols()) as f64;
        let svd = h.svd(false, false);
        let max = svd.singular_values.max();
        let tol = max * dim * f64::EPSILON;
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }

    /// Require `m >= 2n` and a full-rank Jacobian at flat start.
    pub fn check_observable(&self, case: &NetworkCase, ybus: &AdmittanceMatrix) -> Result<()> {
        if self.m() < 2 * self.n_buses {
            return Err(Error::InvalidPlan(format!(
                "{} measurements for {} buses; at least {} needed",
                self.m(),
                self.n_buses,
                2 * self.n_buses
            )));
        }
        let rank = self.flat_start_rank(case, ybus);
        if rank < self.n_states() {
            return Err(Error::InvalidPlan(format!(
                "Jacobian rank {rank} at flat start, {} states",
                self.n_states()
            )));
        }
        Ok(())
    }
}

/// Measurement values at one instant, aligned with plan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub timestamp: usize,
    pub values: Vec<f64>,
    /// `true` where the channel is available.
    pub mask: Vec<bool>,
}

impl MeasurementVector {
    pub fn full(timestamp: usize, values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        MeasurementVector {
            timestamp,
            values,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing(&self) -> usize {
        self.mask.iter().filter(|&&a| !a).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing() == 0
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "mask of {} for {} values",
                mask.len(),
                self.values.len()
            )));
        }
        self.mask = mask;
        Ok(self)
    }
}

fn flow_power(state: &StateVector, ybus: &AdmittanceMatrix, branch: usize, at_from: bool) -> (Complex64, Complex64, usize, usize) {
    let br = ybus.branch(branch).expect("plan flows reference in-service branches");
    let (a, b, y_aa, y_ab) = if at_from {
        (br.from, br.to, br.y_ff, br.y_ft)
    } else {
        (br.to, br.from, br.y_tt, br.y_tf)
    };
    let va = Complex64::from_polar(state.v[a], state.theta[a]);
    let vb = Complex64::from_polar(state.v[b], state.theta[b]);
    // metered end self term and transfer term
    let self_term = y_aa.conj() * state.v[a] * state.v[a];
    let transfer = va * (y_ab * vb).conj();
    (self_term, transfer, a, b)
}

fn check_dims(state: &StateVector, plan: &MeasurementPlan, ybus: &AdmittanceMatrix) {
    assert_eq!(state.n(), plan.n_buses, "state size does not match plan");
    assert_eq!(ybus.n(), plan.n_buses, "admittance matrix does not match plan");
}

/// Noiseless measurement vector `h(x)`.
pub fn evaluate_h(state: &StateVector, plan: &MeasurementPlan, ybus: &AdmittanceMatrix) -> Vec<f64> {
    check_dims(state, plan, ybus);
    let needs_injections = plan
        .specs
        .iter()
        .any(|s| matches!(s.kind, MeasurementKind::Pinj | MeasurementKind::Qinj));
    let injections = if needs_injections {
        complex_injections(state, ybus)
    } else {
        Vec::new()
    };
    plan.specs
        .iter()
        .zip(&plan.sites)
        .map(|(spec, site)| match (spec.kind, *site) {
            (MeasurementKind::Vmag, Site::Bus(i)) => state.v[i],
            (MeasurementKind::Vang, Site::Bus(i)) => state.theta[i],
            (MeasurementKind::Pinj, Site::Bus(i)) => injections[i].re,
            (MeasurementKind::Qinj, Site::Bus(i)) => injections[i].im,
            (kind, Site::Flow { branch, at_from }) => {
                let (s, t, _, _) = flow_power(state, ybus, branch, at_from);
                let flow = s + t;
                if kind == MeasurementKind::Pflow {
                    flow.re
                } else {
                    flow.im
                }
            }
            _ => unreachable!("sites are validated against kinds"),
        })
        .collect()
}

/// Analytic Jacobian `H = dh/dx`, `m x (2n - 1)`.
pub fn evaluate_jacobian(
    state: &StateVector,
    plan: &MeasurementPlan,
    ybus: &AdmittanceMatrix,
) -> DMatrix<f64> {
    check_dims(state, plan, ybus);
    let n = plan.n_buses;
    let mut h = DMatrix::zeros(plan.m(), 2 * n - 1);
    let needs_injections = plan
        .specs
        .iter()
        .any(|s| matches!(s.kind, MeasurementKind::Pinj | MeasurementKind::Qinj));
    let sens = needs_injections.then(|| injection_sensitivities(state, ybus));
    let part = |z: Complex64, reactive: bool| if reactive { z.im } else { z.re };

    for (row, (spec, site)) in plan.specs.iter().zip(&plan.sites).enumerate() {
        match (spec.kind, *site) {
            (MeasurementKind::Vmag, Site::Bus(i)) => h[(row, plan.magnitude_column(i))] = 1.0,
            (MeasurementKind::Vang, Site::Bus(i)) => {
                if let Some(c) = plan.angle_column(i) {
                    h[(row, c)] = 1.0;
                }
            }
            (kind @ (MeasurementKind::Pinj | MeasurementKind::Qinj), Site::Bus(i)) => {
                let (d_theta, d_v) = sens.as_ref().expect("computed when injections present");
                let reactive = kind == MeasurementKind::Qinj;
                for &(k, _) in ybus.row(i) {
                    if let Some(c) = plan.angle_column(k) {
                        h[(row, c)] = part(d_theta[(i, k)], reactive);
                    }
                    h[(row, plan.magnitude_column(k))] = part(d_v[(i, k)], reactive);
                }
            }
            (kind, Site::Flow { branch, at_from }) => {
                let reactive = kind == MeasurementKind::Qflow;
                let (self_term, t, a, b) = flow_power(state, ybus, branch, at_from);
                let j = Complex64::i();
                if let Some(c) = plan.angle_column(a) {
                    h[(row, c)] = part(j * t, reactive);
                }
                if let Some(c) = plan.angle_column(b) {
                    h[(row, c)] = part(-j * t, reactive);
                }
                let (va, vb) = (state.v[a], state.v[b]);
                h[(row, plan.magnitude_column(a))] = part(2.0 * self_term / va + t / va, reactive);
                h[(row, plan.magnitude_column(b))] = part(t / vb, reactive);
            }
            _ => unreachable!("sites are validated against kinds"),
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;
    use crate::powerflow::{solve_power_flow, LoadScenario};
    use crate::ybus::build_ybus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus() -> NetworkCase {
        parse_case(
            r#"{"base_mva": 100,
            "buses": [
              {"id": 1, "kind": "Slack", "p_load_mw": 0, "q_load_mvar": 0, "gs_mw": 0, "bs_mvar": 0, "v_setpoint": 1.0, "base_kv": 138},
              {"id": 2, "kind": "PQ", "p_load_mw": 50, "q_load_mvar": 10, "gs_mw": 0, "bs_mvar": 0, "v_setpoint": null, "base_kv": 138}],
            "branches": [{"from": 1, "to": 2, "r_pu": 0, "x_pu": 0.1, "b_pu": 0, "tap": 1, "shift_rad": 0, "status": "In"}]}"#,
        )
        .unwrap()
    }

    fn every_kind_plan(case: &NetworkCase) -> MeasurementPlan {
        use MeasurementKind::*;
        let mut specs = Vec::new();
        for bus in case.buses() {
            for kind in [Vmag, Vang, Pinj, Qinj] {
                specs.push(MeasurementSpec::bus(kind, bus.id));
            }
        }
        for br in case.branches() {
            for kind in [Pflow, Qflow] {
                specs.push(MeasurementSpec::flow(kind, br.from_bus, br.to_bus));
                specs.push(MeasurementSpec::flow(kind, br.to_bus, br.from_bus));
            }
        }
        MeasurementPlan::new(case, specs).unwrap()
    }

    #[test]
    fn flat_state_on_lossless_network() {
        let case = two_bus();
        let ybus = build_ybus(&case).unwrap();
        let plan = every_kind_plan(&case);
        let z = evaluate_h(&StateVector::flat(&case), &plan, &ybus);
        for (spec, value) in plan.specs().iter().zip(&z) {
            let expected = if spec.kind == MeasurementKind::Vmag { 1.0 } else { 0.0 };
            assert!((value - expected).abs() < 1e-15, "{spec:?}");
        }
    }

    #[test]
    fn two_bus_flow_matches_scalar_formula() {
        let case = two_bus();
        let ybus = build_ybus(&case).unwrap();
        let plan = MeasurementPlan::new(&case, vec![MeasurementSpec::flow(MeasurementKind::Pflow, 1, 2)]).unwrap();
        let state = StateVector::new(vec![1.0, 1.0], vec![0.0, -0.05]).unwrap();
        let z = evaluate_h(&state, &plan, &ybus);
        assert!((z[0] - 10.0 * 0.05f64.sin()).abs() < 1e-14);
        assert!((z[0] - 0.49979).abs() < 1e-5);
    }

    #[test]
    fn branch_losses_are_non_negative() {
        let case = NetworkCase::builtin("ieee14").unwrap();
        let ybus = build_ybus(&case).unwrap();
        let state = solve_power_flow(&case, &LoadScenario::uniform(0, 1.0, 14), &Default::default())
            .unwrap()
            .state;
        for br in case.branches() {
            let plan = MeasurementPlan::new(
                &case,
                vec![
                    MeasurementSpec::flow(MeasurementKind::Pflow, br.from_bus, br.to_bus),
                    MeasurementSpec::flow(MeasurementKind::Pflow, br.to_bus, br.from_bus),
                ],
            )
            .unwrap();
            let z = evaluate_h(&state, &plan, &ybus);
            assert!(z[0] + z[1] >= -1e-12, "branch {}-{}", br.from_bus, br.to_bus);
        }
    }

    #[test]
    fn voltage_rows_are_unit_vectors() {
        let case = NetworkCase::builtin("ieee14").unwrap();
        let ybus = build_ybus(&case).unwrap();
        let plan = MeasurementPlan::new(
            &case,
            vec![
                MeasurementSpec::bus(MeasurementKind::Vmag, 5),
                MeasurementSpec::bus(MeasurementKind::Vang, 5),
            ],
        )
        .unwrap();
        let h = evaluate_jacobian(&StateVector::flat(&case), &plan, &ybus);
        assert_eq!(h.ncols(), 27);
        assert_eq!(h.row(0).iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(h[(0, plan.magnitude_column(4))], 1.0);
        assert_eq!(h.row(1).iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(h[(1, plan.angle_column(4).unwrap())], 1.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for name in ["ieee14", "ieee30"] {
            let case = NetworkCase::builtin(name).unwrap();
            let ybus = build_ybus(&case).unwrap();
            let plan = every_kind_plan(&case);
            let n = case.n_buses();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let state = StateVector::new(
                (0..n).map(|_| rng.random_range(0.92..1.08)).collect(),
                (0..n).map(|i| if i == case.slack() { 0.0 } else { rng.random_range(-0.4..0.4) }).collect(),
            )
            .unwrap();
            let h = evaluate_jacobian(&state, &plan, &ybus);
            let step = 1e-6;
            for bus in 0..n {
                let mut cols = vec![(plan.magnitude_column(bus), false)];
                if let Some(c) = plan.angle_column(bus) {
                    cols.push((c, true));
                }
                for (col, angle) in cols {
                    let bump = |d: f64| {
                        let mut s = state.clone();
                        if angle { s.theta[bus] += d } else { s.v[bus] += d }
                        evaluate_h(&s, &plan, &ybus)
                    };
                    let (p, m) = (bump(step), bump(-step));
                    for row in 0..plan.m() {
                        let fd = (p[row] - m[row]) / (2.0 * step);
                        let an = h[(row, col)];
                        let err = (fd - an).abs() / an.abs().max(1.0);
                        assert!(err < 1e-6, "{name} row {row} col {col}: {fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn plan_json_round_trip_and_validation() {
        let case = NetworkCase::builtin("ieee14").unwrap();
        let plan = default_plan(&case, Preset::Minimal14).unwrap();
        assert_eq!(MeasurementPlan::from_json(&case, &plan.to_json()).unwrap(), plan);

        let bad = vec![MeasurementSpec::flow(MeasurementKind::Pflow, 1, 14)];
        assert!(matches!(MeasurementPlan::new(&case, bad), Err(Error::InvalidPlan(_))));
        let mut spec = MeasurementSpec::bus(MeasurementKind::Vmag, 1);
        spec.sigma = 0.0;
        assert!(MeasurementPlan::new(&case, vec![spec]).is_err());
        let wrong = MeasurementSpec {
            kind: MeasurementKind::Pinj,
            location: Location::Branch { from: 1, to: 2 },
            sigma: 0.1,
        };
        assert!(MeasurementPlan::new(&case, vec![wrong]).is_err());
    }
}
