//! Measurement/state datasets generated from a load profile.
//!
//! On disk a dataset is three files sharing a stem:
//!
//! - `<stem>.csv`: `t,z_1..z_m,v_1..v_n,theta_1..theta_n` with the noisy
//!   measurements and the WLS state labels
//! - `<stem>.truth.csv`: same header with the clean measurements and the
//!   power-flow states
//! - `<stem>.manifest.json`: the [`GenerationManifest`]

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::profile::LoadProfile;
use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::measurement::{
    add_bounded_percent_noise, add_gaussian_noise, evaluate_h, MeasurementPlan, MeasurementVector,
};
use crate::parallel;
use crate::powerflow::{LoadScenario, PowerFlow, PowerFlowOptions, StateVector};
use crate::seed;
use crate::wls::{WlsEstimator, WlsOptions};

/// Largest fraction of hours that may fail to converge.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Gaussian { snr_db: f64 },
    BoundedPercent { max_pct: f64 },
}

impl NoiseModel {
    pub fn apply(&self, clean: &MeasurementVector, seed: u64) -> Result<MeasurementVector> {
        match *self {
            NoiseModel::None => Ok(clean.clone()),
            NoiseModel::Gaussian { snr_db } => Ok(add_gaussian_noise(clean, snr_db, seed)),
            NoiseModel::BoundedPercent { max_pct } => add_bounded_percent_noise(clean, max_pct, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub seed: u64,
    pub noise: NoiseModel,
    pub hours: usize,
    pub measurements: usize,
    pub buses: usize,
    /// Timestamps whose power flow or WLS estimate did not converge.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub timestamp: usize,
    pub z_clean: Vec<f64>,
    pub z_noisy: Vec<f64>,
    pub x_true: StateVector,
    pub x_wls: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub manifest: GenerationManifest,
}

/// Which state set to use as the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Wls,
    True,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn m(&self) -> usize {
        self.manifest.measurements
    }

    pub fn n_buses(&self) -> usize {
        self.manifest.buses
    }

    /// Noisy measurements of the given rows as `m x N` columns.
    pub fn inputs(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), rows.len(), |r, c| self.rows[rows[c]].z_noisy[r])
    }

    /// States of the given rows as `2n x N` columns.
    pub fn states(&self, rows: &[usize], label: Label) -> DMatrix<f64> {
        let n = self.n_buses();
        DMatrix::from_fn(2 * n, rows.len(), |r, c| {
            let row = &self.rows[rows[c]];
            let x = match label {
                Label::Wls => &row.x_wls,
                Label::True => &row.x_true,
            };
            if r < n {
                x.v[r]
            } else {
                x.theta[r - n]
            }
        })
    }

    /// Row position of a timestamp.
    pub fn position(&self, timestamp: usize) -> Option<usize> {
        self.rows.binary_search_by_key(&timestamp, |r| r.timestamp).ok()
    }

    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let paths = DatasetPaths::new(stem.as_ref());
        if let Some(dir) = paths.main.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let n = self.n_buses();
        let m = self.m();
        write_table(&paths.main, m, n, self.rows.iter().map(|r| (r.timestamp, &r.z_noisy, &r.x_wls)))?;
        write_table(&paths.truth, m, n, self.rows.iter().map(|r| (r.timestamp, &r.z_clean, &r.x_true)))?;
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&paths.manifest, text).map_err(|e| Error::io(&paths.manifest, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let paths = DatasetPaths::new(stem.as_ref());
        let text = std::fs::read_to_string(&paths.manifest).map_err(|e| Error::io(&paths.manifest, e))?;
        let manifest: GenerationManifest = serde_json::from_str(&text)?;
        let (m, n) = (manifest.measurements, manifest.buses);
        let main = read_table(&paths.main, m, n)?;
        let truth = read_table(&paths.truth, m, n)?;
        if main.len() != truth.len() {
            return Err(Error::InvalidInput("dataset and truth files differ in length".into()));
        }
        let rows = main
            .into_iter()
            .zip(truth)
            .map(|((t, z_noisy, x_wls), (t2, z_clean, x_true))| {
                if t != t2 {
                    return Err(Error::InvalidInput(format!("timestamp {t} paired with {t2}")));
                }
                Ok(DatasetRow {
                    timestamp: t,
                    z_clean,
                    z_noisy,
                    x_true,
                    x_wls,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { rows, manifest })
    }
}

/// File names for a dataset stem; a trailing `.csv` on the stem is ignored.
pub struct DatasetPaths {
    pub main: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn new(stem: &Path) -> Self {
        let base = match stem.extension() {
            Some(ext) if ext == "csv" => stem.with_extension(""),
            _ => stem.to_path_buf(),
        };
        let with = |suffix: &str| {
            let mut s = base.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        DatasetPaths {
            main: with(".csv"),
            truth: with(".truth.csv"),
            manifest: with(".manifest.json"),
        }
    }
}

pub fn header(m: usize, n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("z_{i}")))
        .chain((1..=n).map(|i| format!("v_{i}")))
        .chain((1..=n).map(|i| format!("theta_{i}")))
        .collect()
}

fn write_table<'a>(
    path: &Path,
    m: usize,
    n: usize,
    rows: impl Iterator<Item = (usize, &'a Vec<f64>, &'a StateVector)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(m, n))?;
    for (t, z, x) in rows {
        let record = std::iter::once(t.to_string())
            .chain(z.iter().chain(&x.v).chain(&x.theta).map(|v| v.to_string()));
        w.write_record(record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

type TableRow = (usize, Vec<f64>, StateVector);

fn read_table(path: &Path, m: usize, n: usize) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = header(m, n);
    if r.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::InvalidInput(format!(
            "{}: header does not match {m} measurements and {n} buses",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (k, record) in r.records().enumerate() {
        let record = record?;
        let bad = |field: &str| Error::InvalidInput(format!("{}: row {}: bad value {field:?}", path.display(), k + 1));
        let t: usize = record[0].parse().map_err(|_| bad(&record[0]))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            t,
            values[..m].to_vec(),
            StateVector {
                v: values[m..m + n].to_vec(),
                theta: values[m + n..].to_vec(),
            },
        ));
    }
    Ok(rows)
}

/// Per hour: scale the demand, solve the power flow, evaluate `h`, add
/// noise and label with the WLS estimate. Hours that fail to converge are
/// skipped; more than 5% skipped is an error.
pub fn generate_dataset(
    case: &NetworkCase,
    plan: &MeasurementPlan,
    profile: &LoadProfile,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Dataset> {
    let pf = PowerFlow::new(case)?;
    let estimator = WlsEstimator::new(case, plan)?;
    plan.check_observable(case, estimator.ybus())?;
    let pf_options = PowerFlowOptions::default();
    let wls_options = WlsOptions::default();
    let n = case.n_buses();

    let outcomes = parallel::map_range(profile.len(), |t| -> Result<Option<DatasetRow>> {
        let scenario = LoadScenario::uniform(t, profile.values[t], n);
        let flow = match pf.solve(&scenario, &pf_options) {
            Ok(s) if s.converged => s,
            Ok(_) | Err(Error::SingularJacobian { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let clean = MeasurementVector::full(t, evaluate_h(&flow.state, plan, pf.ybus()));
        let noisy = noise.apply(&clean, seed::derive(seed, "measurement_noise", t as u64))?;
        let est = match estimator.estimate(&noisy, &wls_options) {
            Ok(e) if e.converged => e,
            Ok(_) | Err(Error::Unobservable) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some(DatasetRow {
            timestamp: t,
            z_clean: clean.values,
            z_noisy: noisy.values,
            x_true: flow.state,
            x_wls: est.state,
        }))
    });

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    for (t, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Some(row) => rows.push(row),
            None => skipped.push(t),
        }
    }
    if !skipped.is_empty() {
        log::warn!("skipped {} of {} hours: {:?}", skipped.len(), profile.len(), skipped);
    }
    if skipped.len() as f64 > MAX_SKIPPED_FRACTION * profile.len() as f64 {
        return Err(Error::TooManySkipped {
            skipped: skipped.len(),
            total: profile.len(),
        });
    }
    Ok(Dataset {
        rows,
        manifest: GenerationManifest {
            seed,
            noise: *noise,
            hours: profile.len(),
            measurements: plan.m(),
            buses: n,
            skipped,
        },
    })
}
