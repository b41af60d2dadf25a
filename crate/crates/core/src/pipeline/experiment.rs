//! Config-driven end-to-end runs.
//!
//! A run writes into its output directory:
//!
//! - `metrics.csv`: one row per (model, reference, condition); deterministic
//! - `manifest.json`: seeds, config hash, version, artifact digests, timings
//! - `model/`: the ensemble
//! - `forecast.json`: the state forecaster
//! - `dataset*.csv`, `dataset.manifest.json`: the generated dataset

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{generate_dataset, Dataset, Label, NoiseModel};
use super::profile::{import_profile, synth_profile, LoadProfile, SynthParams};
use crate::case::NetworkCase;
use crate::ensemble::{EnsembleConfig, EnsembleModel, Metrics, SplitSpec};
use crate::error::{Error, Result};
use crate::forecast::{fit_forecaster, pseudo_measurements, ForecastModel, DEFAULT_LAGS};
use crate::measurement::{default_plan, MeasurementPlan, MeasurementVector, Preset};
use crate::powerflow::StateVector;
use crate::seed;
use crate::ybus::build_ybus;

/// Chronological share of the state history used to fit the forecaster.
pub const FORECAST_TRAIN_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ProfileSource {
    Synthetic {
        #[serde(default)]
        params: SynthParams,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    pub train: NoiseModel,
    pub test: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingSettings {
    /// Fraction of channels masked on every test row.
    pub fraction: f64,
    pub lags: usize,
}

impl Default for MissingSettings {
    fn default() -> Self {
        MissingSettings {
            fraction: 0.1,
            lags: DEFAULT_LAGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// `builtin:<name>` or a path to a case JSON file.
    pub case: String,
    /// A preset name or a path to a plan JSON file.
    pub plan: String,
    pub hours: usize,
    pub profile: ProfileSource,
    pub noise: NoiseSettings,
    /// State set the learners are trained on.
    #[serde(default)]
    pub label: Label,
    #[serde(default)]
    pub missing: MissingSettings,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Seeds of every random stream in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub profile: u64,
    pub dataset: u64,
    pub split: u64,
    pub training: u64,
    pub learners: Vec<u64>,
    pub test_noise: u64,
    pub mask: u64,
}

impl RunSeeds {
    pub fn new(master: u64, learners: usize) -> Self {
        let training = seed::derive(master, "training", 0);
        RunSeeds {
            master,
            profile: seed::derive(master, "profile", 0),
            dataset: seed::derive(master, "dataset", 0),
            split: seed::derive(master, "split", 0),
            training,
            learners: (0..learners as u64).map(|k| seed::derive(training, "learner", k)).collect(),
            test_noise: seed::derive(master, "test_noise", 0),
            mask: seed::derive(master, "mask", 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hash of the config, seeds and version; the reproducible identity of a run.
    pub hash: String,
    pub config_hash: String,
    pub version: String,
    pub seeds: RunSeeds,
    pub parallel: bool,
    /// SHA-256 of every deterministic artifact, by relative path.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub latency: LatencySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_durations(mut d: Vec<Duration>) -> Self {
        if d.is_empty() {
            return Self::default();
        }
        d.sort_unstable();
        let ms = |x: Duration| x.as_secs_f64() * 1e3;
        let at = |q: f64| ms(d[((d.len() - 1) as f64 * q).round() as usize]);
        LatencySummary {
            samples: d.len(),
            median_ms: at(0.5),
            p99_ms: at(0.99),
            max_ms: ms(d[d.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub reference: String,
    pub condition: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub manifest: RunManifest,
    pub rows: Vec<MetricsRow>,
    /// Meta-learner and uniform-average RMSE over the meta-train split, natural units.
    pub meta_in_sample_rmse: f64,
    pub uniform_in_sample_rmse: f64,
    pub missing_rows_skipped: usize,
}

impl ExperimentReport {
    pub fn find(&self, model: &str, reference: &str, condition: &str) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.reference == reference && r.condition == condition)
            .map(|r| &r.metrics)
    }

    pub fn learner_rows(&self, reference: &str, condition: &str) -> Vec<&Metrics> {
        self.rows
            .iter()
            .filter(|r| r.model.starts_with("learner_") && r.reference == reference && r.condition == condition)
            .map(|r| &r.metrics)
            .collect()
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn load_case(spec: &str, base: &Path) -> Result<NetworkCase> {
    if spec.starts_with("builtin:") {
        NetworkCase::load(spec)
    } else {
        NetworkCase::from_path(resolve(base, Path::new(spec)))
    }
}

pub fn load_plan(spec: &str, case: &NetworkCase, base: &Path) -> Result<MeasurementPlan> {
    match spec.parse::<Preset>() {
        Ok(preset) => default_plan(case, preset),
        Err(_) => {
            let path = resolve(base, Path::new(spec));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            MeasurementPlan::from_json(case, &text)
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Test measurements re-drawn from the clean values with the test noise.
pub fn test_inputs(data: &Dataset, rows: &[usize], noise: &NoiseModel, seed: u64) -> Result<DMatrix<f64>> {
    let columns = rows
        .iter()
        .map(|&i| {
            let row = &data.rows[i];
            let clean = MeasurementVector::full(row.timestamp, row.z_clean.clone());
            noise.apply(&clean, seed::derive(seed, "row", row.timestamp as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(data.m(), rows.len(), |r, c| columns[c].values[r]))
}

/// Masked channel indices for one row.
pub fn mask_for(m: usize, fraction: f64, seed: u64, timestamp: usize) -> Vec<bool> {
    let k = ((fraction * m as f64).round() as usize).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, "row", timestamp as u64)));
    let mut mask = vec![true; m];
    for &i in &order[..k] {
        mask[i] = false;
    }
    mask
}

/// Fit the forecaster on the WLS states of the first share of timestamps.
pub fn fit_history_forecaster(data: &Dataset, lags: usize) -> Result<ForecastModel> {
    let cutoff = (FORECAST_TRAIN_FRACTION * data.manifest.hours as f64).ceil() as usize;
    let history: Vec<StateVector> = data
        .rows
        .iter()
        .take_while(|r| r.timestamp < cutoff)
        .map(|r| r.x_wls.clone())
        .collect();
    fit_forecaster(&history, lags)
}

/// The stored states of the `lags + 1` hours before `timestamp`, if all exist.
pub fn history_window(data: &Dataset, timestamp: usize, window: usize) -> Option<Vec<StateVector>> {
    if timestamp < window {
        return None;
    }
    (timestamp - window..timestamp)
        .map(|t| data.position(t).map(|p| data.rows[p].x_wls.clone()))
        .collect()
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
    Ok(out)
}

/// Run generate -> train -> evaluate for a config. Relative paths in the
/// config resolve against `base_dir`. The master seed honours
/// `GRIDSTATE_SEED`.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path, output_dir: &Path) -> Result<ExperimentReport> {
    let master = seed::master_seed(config.seed);
    let config = ExperimentConfig {
        seed: master,
        ..config.clone()
    };
    let seeds = RunSeeds::new(master, config.ensemble.learners);
    let config_hash = config.hash();
    let run_hash = {
        let identity = serde_json::json!({
            "config_hash": config_hash,
            "seeds": seeds,
            "version": crate::VERSION,
        });
        hex::encode(Sha256::digest(identity.to_string().as_bytes()))
    };
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e).in_stage("output"))?;
    let mut timings = BTreeMap::new();

    let case = timed(&mut timings, "case", || load_case(&config.case, base_dir))?;
    let plan = timed(&mut timings, "plan", || load_plan(&config.plan, &case, base_dir))?;
    let profile: LoadProfile = timed(&mut timings, "profile", || match &config.profile {
        ProfileSource::Synthetic { params } => synth_profile(config.hours, seeds.profile, params),
        ProfileSource::Csv { path } => {
            let mut p = import_profile(resolve(base_dir, path))?;
            if p.len() < config.hours {
                return Err(Error::InsufficientData(format!(
                    "profile has {} hours, config asks for {}",
                    p.len(),
                    config.hours
                )));
            }
            p.values.truncate(config.hours);
            Ok(p)
        }
    })?;
    let data = timed(&mut timings, "dataset", || {
        let data = generate_dataset(&case, &plan, &profile, &config.noise.train, seeds.dataset)?;
        data.save(output_dir.join("dataset.csv"))?;
        Ok(data)
    })?;

    let split = SplitSpec::new(data.len(), seeds.split);
    let ensemble_config = EnsembleConfig {
        training: crate::neural::TrainingConfig {
            seed: seeds.training,
            ..config.ensemble.training
        },
        ..config.ensemble
    };
    let model = timed(&mut timings, "train", || {
        let model = EnsembleModel::fit(
            &data.inputs(&split.base_train),
            &data.states(&split.base_train, config.label),
            &data.inputs(&split.meta_train),
            &data.states(&split.meta_train, config.label),
            &ensemble_config,
        )?
        .with_split(split.clone());
        model.save(output_dir.join("model"))?;
        Ok(model)
    })?;

    let zm = data.inputs(&split.meta_train);
    let xm = data.states(&split.meta_train, config.label);
    let meta_in_sample_rmse = crate::ensemble::rmse(&model.predict_batch(&zm)?, &xm);
    let uniform_in_sample_rmse = crate::ensemble::rmse(&model.uniform_average(&zm)?, &xm);

    let forecaster = timed(&mut timings, "forecast", || {
        let f = fit_history_forecaster(&data, config.missing.lags)?;
        f.save(output_dir.join("forecast.json"))?;
        Ok(f)
    })?;

    let mut rows = Vec::new();
    let mut latencies = Vec::new();
    let mut missing_rows_skipped = 0;
    timed(&mut timings, "evaluate", || {
        let z_test = test_inputs(&data, &split.test, &config.noise.test, seeds.test_noise)?;
        let references = [("wls", Label::Wls), ("true", Label::True)];
        let mut push = |model: &str, reference: &str, condition: &str, metrics: Metrics| {
            rows.push(MetricsRow {
                model: model.into(),
                reference: reference.into(),
                condition: condition.into(),
                metrics,
            })
        };
        let ensemble_pred = model.predict_batch(&z_test)?;
        let uniform_pred = model.uniform_average(&z_test)?;
        let learner_preds = model.base_predictions(&z_test)?;
        for (name, label) in references {
            let x = data.states(&split.test, label);
            push("ensemble", name, "full", Metrics::compute(&ensemble_pred, &x)?);
            push("uniform_average", name, "full", Metrics::compute(&uniform_pred, &x)?);
            for (k, p) in learner_preds.iter().enumerate() {
                push(&format!("learner_{k}"), name, "full", Metrics::compute(p, &x)?);
            }
        }

        // missing-channel path on test rows that have a full forecast window
        let ybus = build_ybus(&case)?;
        let mut kept = Vec::new();
        let mut merged = Vec::new();
        for (c, &i) in split.test.iter().enumerate() {
            let t = data.rows[i].timestamp;
            let Some(window) = history_window(&data, t, forecaster.window()) else {
                missing_rows_skipped += 1;
                continue;
            };
            let forecast = forecaster.forecast_next(&window)?;
            let real = MeasurementVector::full(t, z_test.column(c).iter().copied().collect())
                .with_mask(mask_for(data.m(), config.missing.fraction, seeds.mask, t))?;
            merged.push(pseudo_measurements(&forecast, &plan, &ybus, &real)?);
            kept.push(c);
        }
        if !kept.is_empty() {
            let full_subset = z_test.select_columns(&kept);
            let merged_inputs = DMatrix::from_fn(data.m(), merged.len(), |r, c| merged[c].values[r]);
            let subset_rows: Vec<usize> = kept.iter().map(|&c| split.test[c]).collect();
            for (name, label) in references {
                let x = data.states(&subset_rows, label);
                push("ensemble", name, "full_subset", model.evaluate(&full_subset, &x)?);
                push("ensemble", name, "missing", model.evaluate(&merged_inputs, &x)?);
            }
        }

        for c in 0..z_test.ncols() {
            let z = MeasurementVector::full(0, z_test.column(c).iter().copied().collect());
            latencies.push(model.estimate_timed(&z)?.1);
        }
        Ok(())
    })?;

    timed(&mut timings, "report", || write_metrics(&output_dir.join("metrics.csv"), &run_hash, &rows))?;

    let mut artifacts = BTreeMap::new();
    for rel in [
        "metrics.csv",
        "forecast.json",
        "dataset.csv",
        "dataset.truth.csv",
        "dataset.manifest.json",
        "model/meta.json",
        "model/split.json",
    ] {
        artifacts.insert(rel.to_string(), sha256_file(&output_dir.join(rel))?);
    }
    for k in 0..model.learners().len() {
        let rel = format!("model/learner_{k}.json");
        artifacts.insert(rel.clone(), sha256_file(&output_dir.join(&rel))?);
    }
    let manifest = RunManifest {
        hash: run_hash,
        config_hash,
        version: crate::VERSION.to_string(),
        seeds,
        parallel: crate::parallel::is_parallel(),
        artifacts,
        timings,
        latency: LatencySummary::from_durations(latencies),
    };
    let manifest_path = output_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e).in_stage("report"))?;

    Ok(ExperimentReport {
        output_dir: output_dir.to_path_buf(),
        manifest,
        rows,
        meta_in_sample_rmse,
        uniform_in_sample_rmse,
        missing_rows_skipped,
    })
}

pub fn write_metrics(path: &Path, run_hash: &str, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "manifest_hash",
        "model",
        "reference",
        "condition",
        "voltage_rmse_pct",
        "voltage_mae_pct",
        "angle_rmse_deg",
        "angle_mae_deg",
        "samples",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            run_hash.to_string(),
            r.model.clone(),
            r.reference.clone(),
            r.condition.clone(),
            m.voltage_rmse_pct.to_string(),
            m.voltage_mae_pct.to_string(),
            m.angle_rmse_deg.to_string(),
            m.angle_mae_deg.to_string(),
            m.samples.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
