//! Network cases: buses, branches and the JSON case format.
//!
//! The JSON layout mirrors the MATPOWER `mpc` tables. Generation is folded
//! into the bus demand, so a generator bus carries a negative `p_load_mw`.
//! Quantities are stored in engineering units (MW, MVAr) and converted to
//! per-unit on demand through [`NetworkCase::base_mva`].

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    #[serde(rename = "p_load_mw")]
    pub p_load: f64,
    #[serde(rename = "q_load_mvar")]
    pub q_load: f64,
    #[serde(rename = "gs_mw")]
    pub gs: f64,
    #[serde(rename = "bs_mvar")]
    pub bs: f64,
    pub v_setpoint: Option<f64>,
    pub base_kv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchStatus {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    #[serde(rename = "from")]
    pub from_bus: u32,
    #[serde(rename = "to")]
    pub to_bus: u32,
    #[serde(rename = "r_pu")]
    pub r: f64,
    #[serde(rename = "x_pu")]
    pub x: f64,
    #[serde(rename = "b_pu")]
    pub b_charging: f64,
    pub tap: f64,
    #[serde(rename = "shift_rad")]
    pub shift: f64,
    pub status: BranchStatus,
}

impl Branch {
    pub fn in_service(&self) -> bool {
        self.status == BranchStatus::In
    }
}

#[derive(Serialize, Deserialize)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
}

/// A validated network model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    index: HashMap<u32, usize>,
    slack: usize,
}

/// Fixtures shipped with the toolkit, addressable as `builtin:<name>`.
pub const BUILTIN_CASES: &[(&str, &str)] = &[
    ("ieee14", include_str!("../../../cases/ieee14.json")),
    ("ieee30", include_str!("../../../cases/ieee30.json")),
    ("ieee57", include_str!("../../../cases/ieee57.json")),
    ("ieee69", include_str!("../../../cases/ieee69.json")),
    ("ieee118", include_str!("../../../cases/ieee118.json")),
];

/// Parse and validate JSON case text.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::CaseSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    NetworkCase::new(file.base_mva, file.buses, file.branches)
}

impl NetworkCase {
    /// Validate and index a case. Buses keep their file order as dense indices.
    pub fn new(base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidCase(msg));
        if !(base_mva > 0.0) {
            return invalid(format!("base_mva must be positive, got {base_mva}"));
        }
        if buses.is_empty() {
            return invalid("case has no buses".into());
        }

        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            match (bus.kind, bus.v_setpoint) {
                (BusKind::PQ, _) => {}
                (_, None) => return invalid(format!("bus {} needs a v_setpoint", bus.id)),
                (_, Some(v)) if !(v > 0.0) => {
                    return invalid(format!("bus {} has non-positive v_setpoint {v}", bus.id))
                }
                _ => {}
            }
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [] => return invalid("missing slack bus".into()),
            [s] => *s,
            _ => return invalid("multiple slack buses".into()),
        };

        for (k, br) in branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !index.contains_key(&end) {
                    return invalid(format!("branch {k} references unknown bus {end}"));
                }
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {k} connects bus {} to itself", br.from_bus));
            }
            if br.r < 0.0 {
                return invalid(format!("branch {k} has negative resistance"));
            }
            if br.r.abs() + br.x.abs() == 0.0 {
                return Err(Error::ZeroImpedance {
                    from: br.from_bus,
                    to: br.to_bus,
                });
            }
            if !(br.tap > 0.0) {
                return invalid(format!("branch {k} has non-positive tap {}", br.tap));
            }
        }

        let case = NetworkCase {
            base_mva,
            buses,
            branches,
            index,
            slack,
        };
        if let Some(bus) = case.first_unreachable_bus() {
            return invalid(format!(
                "disconnected network: bus {bus} is unreachable from the slack bus"
            ));
        }
        Ok(case)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_case(&text)
    }

    /// Load `builtin:<name>` fixtures or a path on disk.
    pub fn load(spec: &str) -> Result<Self> {
        match spec.strip_prefix("builtin:") {
            Some(name) => Self::builtin(name),
            None => Self::from_path(spec),
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN_CASES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| parse_case(text))
            .unwrap_or_else(|| Err(Error::InvalidInput(format!("no builtin case named {name}"))))
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serializes")
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Dense index of the slack bus.
    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Dense index of an external bus id.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Locate an in-service branch by its endpoints, in either orientation.
    /// Returns the branch position and whether the given orientation matches it.
    pub fn find_branch(&self, from: u32, to: u32) -> Option<(usize, bool)> {
        self.branches.iter().enumerate().find_map(|(k, br)| {
            if !br.in_service() {
                None
            } else if br.from_bus == from && br.to_bus == to {
                Some((k, true))
            } else if br.from_bus == to && br.to_bus == from {
                Some((k, false))
            } else {
                None
            }
        })
    }

    /// Copy of the case with one branch's status replaced.
    pub fn with_branch_status(&self, branch: usize, status: BranchStatus) -> Result<Self> {
        let mut branches = self.branches.clone();
        branches
            .get_mut(branch)
            .ok_or_else(|| Error::InvalidInput(format!("no branch {branch}")))?
            .status = status;
        Self::new(self.base_mva, self.buses.clone(), branches)
    }

    fn first_unreachable_bus(&self) -> Option<u32> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service()) {
            let (f, t) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter()
            .position(|s| !s)
            .map(|i| self.buses[i].id)
    }
}
