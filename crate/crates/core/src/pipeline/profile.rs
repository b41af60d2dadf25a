//! Hourly load multipliers normalized by their peak.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_SYNTH_HOURS: usize = 48;
const FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub base: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    /// Standard deviation of the hourly Gaussian perturbation.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            base: 1.0,
            daily_amplitude: 0.25,
            weekly_amplitude: 0.1,
            noise: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, params: SynthParams },
    Imported { sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl LoadProfile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One value per line, the format [`import_profile`] reads.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 20);
        for v in &self.values {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn peak_normalize(values: &mut [f64]) {
    let peak = values.iter().copied().fold(f64::MIN, f64::max);
    for v in values.iter_mut() {
        *v /= peak;
    }
}

/// Daily and weekly sinusoids plus seeded noise, floored at 0.2 and divided
/// by the peak.
pub fn synth_profile(hours: usize, seed: u64, params: &SynthParams) -> Result<LoadProfile> {
    if hours < MIN_SYNTH_HOURS {
        return Err(Error::InvalidInput(format!(
            "profile needs at least {MIN_SYNTH_HOURS} hours, got {hours}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 2.0 * std::f64::consts::PI;
    let mut values: Vec<f64> = (0..hours)
        .map(|t| {
            let h = t as f64;
            // daily peak in the early evening, weekly trough at the weekend
            let daily = params.daily_amplitude * (tau * (h - 12.0) / 24.0).sin();
            let weekly = params.weekly_amplitude * (tau * h / 168.0).cos();
            let e: f64 = StandardNormal.sample(&mut rng);
            (params.base + daily + weekly + params.noise * e).max(FLOOR)
        })
        .collect();
    peak_normalize(&mut values);
    Ok(LoadProfile {
        values,
        provenance: Provenance::Synthetic {
            seed,
            params: *params,
        },
    })
}

/// Parse one positive number per line (blank lines ignored) and normalize
/// by the peak.
pub fn parse_profile(text: &str) -> Result<LoadProfile> {
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::InvalidInput(format!("profile line {}: {line:?} is not a number", k + 1)))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("profile line {}: {v} is not positive", k + 1)));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("profile file is empty".into()));
    }
    peak_normalize(&mut values);
    Ok(LoadProfile {
        values,
        provenance: Provenance::Imported {
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        },
    })
}

pub fn import_profile(path: impl AsRef<Path>) -> Result<LoadProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profile(&text)
}
