//! Shipped measurement placements.
//!
//! `minimal14` is a 32-channel IEEE 14-bus placement. `full14`
//! extends it to 64 channels. The `bench*` presets are deterministic
//! stand-ins sized to the usual channel counts for each system: the slack
//! bus gets magnitude and angle, every other non-slack bus gets a P/Q
//! injection pair, then P/Q flow pairs are placed on a breadth-first
//! spanning tree from the slack bus, then on the remaining branches, then
//! injections at the remaining buses, then magnitudes, until the target
//! count is reached.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MeasurementKind, MeasurementPlan, MeasurementSpec};
use crate::case::NetworkCase;
use crate::error::{Error, Result};

use MeasurementKind::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Minimal14,
    Full14,
    Bench30,
    Bench57,
    Bench69,
    Bench118,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Minimal14 => "minimal14",
            Preset::Full14 => "full14",
            Preset::Bench30 => "bench30",
            Preset::Bench57 => "bench57",
            Preset::Bench69 => "bench69",
            Preset::Bench118 => "bench118",
        }
    }

    /// Bus count of the system the preset is laid out for.
    pub fn buses(self) -> usize {
        match self {
            Preset::Minimal14 | Preset::Full14 => 14,
            Preset::Bench30 => 30,
            Preset::Bench57 => 57,
            Preset::Bench69 => 69,
            Preset::Bench118 => 118,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Preset::Minimal14 => 32,
            Preset::Full14 => 64,
            Preset::Bench30 => 110,
            Preset::Bench57 => 216,
            Preset::Bench69 => 210,
            Preset::Bench118 => 562,
        }
    }

    pub const ALL: [Preset; 6] = [
        Preset::Minimal14,
        Preset::Full14,
        Preset::Bench30,
        Preset::Bench57,
        Preset::Bench69,
        Preset::Bench118,
    ];
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown plan preset {s}")))
    }
}

const MINIMAL14_INJECTIONS: [u32; 7] = [2, 4, 8, 10, 11, 12, 14];
const MINIMAL14_FLOWS: [(u32, u32); 8] = [
    (1, 2),
    (2, 3),
    (2, 5),
    // meters the transformer joining bus 6; there is no 4-6 branch
    (5, 6),
    (4, 7),
    (6, 11),
    (6, 13),
    (12, 13),
];
const FULL14_EXTRA_INJECTIONS: [u32; 7] = [1, 3, 5, 6, 7, 9, 13];
const FULL14_EXTRA_FLOWS: [(u32, u32); 9] = [
    (1, 5),
    (3, 4),
    (4, 5),
    (4, 9),
    (2, 4),
    (6, 12),
    (7, 8),
    (7, 9),
    (9, 10),
];

fn push_injection(specs: &mut Vec<MeasurementSpec>, bus: u32) {
    specs.push(MeasurementSpec::bus(Pinj, bus));
    specs.push(MeasurementSpec::bus(Qinj, bus));
}

fn push_flow(specs: &mut Vec<MeasurementSpec>, from: u32, to: u32) {
    specs.push(MeasurementSpec::flow(Pflow, from, to));
    specs.push(MeasurementSpec::flow(Qflow, from, to));
}

fn minimal14() -> Vec<MeasurementSpec> {
    let mut specs = Vec::with_capacity(32);
    for bus in MINIMAL14_INJECTIONS {
        push_injection(&mut specs, bus);
    }
    specs.push(MeasurementSpec::bus(Vmag, 1));
    specs.push(MeasurementSpec::bus(Vang, 1));
    for (f, t) in MINIMAL14_FLOWS {
        push_flow(&mut specs, f, t);
    }
    specs
}

fn full14() -> Vec<MeasurementSpec> {
    let mut specs = minimal14();
    for bus in FULL14_EXTRA_INJECTIONS {
        push_injection(&mut specs, bus);
    }
    for (f, t) in FULL14_EXTRA_FLOWS {
        push_flow(&mut specs, f, t);
    }
    specs
}

fn bench(case: &NetworkCase, target: usize) -> Vec<MeasurementSpec> {
    let slack = case.slack();
    let buses = case.buses();
    let mut specs = vec![
        MeasurementSpec::bus(Vmag, buses[slack].id),
        MeasurementSpec::bus(Vang, buses[slack].id),
    ];

    let others: Vec<usize> = (0..buses.len()).filter(|&i| i != slack).collect();
    for &i in others.iter().step_by(2) {
        push_injection(&mut specs, buses[i].id);
    }

    // breadth-first spanning tree over in-service branches
    let n = buses.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, br) in case.branches().iter().enumerate().filter(|(_, b)| b.in_service()) {
        let f = case.index_of(br.from_bus).expect("validated");
        let t = case.index_of(br.to_bus).expect("validated");
        adj[f].push((t, k));
        adj[t].push((f, k));
    }
    let mut in_tree = vec![false; case.branches().len()];
    let mut seen = vec![false; n];
    seen[slack] = true;
    let mut queue = VecDeque::from([slack]);
    while let Some(i) = queue.pop_front() {
        for &(j, k) in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                in_tree[k] = true;
                let br = &case.branches()[k];
                push_flow(&mut specs, br.from_bus, br.to_bus);
                queue.push_back(j);
            }
        }
    }
    for (k, br) in case.branches().iter().enumerate() {
        if br.in_service() && !in_tree[k] {
            push_flow(&mut specs, br.from_bus, br.to_bus);
        }
    }
    for &i in others.iter().skip(1).step_by(2) {
        push_injection(&mut specs, buses[i].id);
    }
    for &i in &others {
        specs.push(MeasurementSpec::bus(Vmag, buses[i].id));
    }
    specs.truncate(target);
    specs
}

/// Build a preset plan for a matching case.
pub fn default_plan(case: &NetworkCase, preset: Preset) -> Result<MeasurementPlan> {
    if case.n_buses() != preset.buses() {
        return Err(Error::InvalidPlan(format!(
            "preset {} is laid out for {} buses, case has {}",
            preset.name(),
            preset.buses(),
            case.n_buses()
        )));
    }
    let specs = match preset {
        Preset::Minimal14 => minimal14(),
        Preset::Full14 => full14(),
        _ => bench(case, preset.channels()),
    };
    if specs.len() != preset.channels() {
        return Err(Error::InvalidPlan(format!(
            "case only supports {} of the {} channels of {}",
            specs.len(),
            preset.channels(),
            preset.name()
        )));
    }
    MeasurementPlan::new(case, specs)
}
