//! Stacked ResNetD ensemble: independently seeded base-learners feeding a
//! multivariate linear meta-learner.
//!
//! State matrices are column-sample: `2n x N` with voltage magnitudes in the
//! first `n` rows and angles (radians) in the last `n`.
//!
//! A saved model is a directory holding `learner_<k>.json` per base-learner,
//! `meta.json` with the meta coefficients and `split.json` with the
//! partition the model was trained on.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::measurement::MeasurementVector;
use crate::neural::{BaseLearner, TrainingConfig};
use crate::parallel;
use crate::powerflow::StateVector;
use crate::seed;

pub const BASE_LEARNERS: usize = 6;
pub const RIDGE_LAMBDA: f64 = 1e-8;

const META_FORMAT: &str = "gridstate-meta";
const META_VERSION: u32 = 1;

/// Seeded 40/36/24 partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub rows: usize,
    pub base_train: Vec<usize>,
    pub meta_train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn new(rows: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "split", 0));
        order.shuffle(&mut rng);
        let base = rows * 40 / 100;
        let meta = rows * 36 / 100;
        let sorted = |part: &[usize]| {
            let mut v = part.to_vec();
            v.sort_unstable();
            v
        };
        SplitSpec {
            seed,
            rows,
            base_train: sorted(&order[..base]),
            meta_train: sorted(&order[base..base + meta]),
            test: sorted(&order[base + meta..]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub learners: usize,
    pub training: TrainingConfig,
    pub ridge_lambda: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            learners: BASE_LEARNERS,
            training: TrainingConfig::default(),
            ridge_lambda: RIDGE_LAMBDA,
        }
    }
}

/// Error metrics with voltages in percent and angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub voltage_rmse_pct: f64,
    pub voltage_mae_pct: f64,
    pub angle_rmse_deg: f64,
    pub angle_mae_deg: f64,
    pub samples: usize,
}

impl Metrics {
    /// Metrics of `2n x N` predictions against `2n x N` reference states.
    pub fn compute(predicted: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Self> {
        if predicted.shape() != reference.shape() || predicted.nrows() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "predictions {:?} against reference {:?}",
                predicted.shape(),
                reference.shape()
            )));
        }
        if predicted.ncols() == 0 || predicted.nrows() == 0 {
            return Err(Error::InsufficientData("empty evaluation set".into()));
        }
        let n = predicted.nrows() / 2;
        let group = |start: usize, unit: f64| {
            let err = (predicted.rows(start, n) - reference.rows(start, n)) * unit;
            let count = err.len() as f64;
            let rmse = (err.iter().map(|e| e * e).sum::<f64>() / count).sqrt();
            let mae = err.iter().map(|e| e.abs()).sum::<f64>() / count;
            (rmse, mae)
        };
        let (voltage_rmse_pct, voltage_mae_pct) = group(0, 100.0);
        let (angle_rmse_deg, angle_mae_deg) = group(n, 180.0 / std::f64::consts::PI);
        Ok(Metrics {
            voltage_rmse_pct,
            voltage_mae_pct,
            angle_rmse_deg,
            angle_mae_deg,
            samples: predicted.ncols(),
        })
    }
}

/// Root mean square over every entry of `a - b`.
pub fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = a - b;
    (d.norm_squared() / d.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    learners: Vec<BaseLearner>,
    /// `2n x (L * 2n + 1)`; column 0 is the intercept.
    meta: DMatrix<f64>,
    meta_ridge: bool,
    split: Option<SplitSpec>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format: String,
    version: u32,
    outputs: usize,
    features: usize,
    ridge: bool,
    /// Row-major `outputs x features`.
    coefficients: Vec<f64>,
}

impl EnsembleModel {
    /// Train base-learners on the base split, then the meta-learner on
    /// their predictions over the disjoint meta split.
    pub fn fit(
        base_inputs: &DMatrix<f64>,
        base_states: &DMatrix<f64>,
        meta_inputs: &DMatrix<f64>,
        meta_states: &DMatrix<f64>,
        config: &EnsembleConfig,
    ) -> Result<Self> {
        if config.learners == 0 {
            return Err(Error::InvalidInput("ensemble needs at least one base-learner".into()));
        }
        let outputs = base_states.nrows();
        let features = config.learners * outputs + 1;
        if meta_inputs.ncols() < features {
            return Err(Error::InsufficientData(format!(
                "{} meta-train rows, at least {features} needed",
                meta_inputs.ncols()
            )));
        }
        if meta_states.nrows() != outputs || meta_inputs.nrows() != base_inputs.nrows() {
            return Err(Error::Dimension("base and meta splits disagree in width".into()));
        }
        let learners = parallel::map_range(config.learners, |k| {
            let training = TrainingConfig {
                seed: seed::derive(config.training.seed, "learner", k as u64),
                ..config.training
            };
            BaseLearner::fit(base_inputs, base_states, &training)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let design = meta_design(&learners, meta_inputs)?;
        let fit = least_squares(&design, &meta_states.transpose(), config.ridge_lambda);
        if fit.ridge {
            log::warn!(
                "meta design {}x{} is rank-deficient; using ridge lambda {}",
                design.nrows(),
                design.ncols(),
                config.ridge_lambda
            );
        }
        Ok(EnsembleModel {
            learners,
            meta: fit.coefficients.transpose(),
            meta_ridge: fit.ridge,
            split: None,
        })
    }

    pub fn from_parts(learners: Vec<BaseLearner>, meta: DMatrix<f64>) -> Result<Self> {
        let first = learners
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble needs at least one base-learner".into()))?;
        let (m, outputs) = (first.input_width(), 2 * first.n_buses());
        if learners.iter().any(|l| l.input_width() != m || 2 * l.n_buses() != outputs) {
            return Err(Error::Dimension("base-learners disagree in width".into()));
        }
        if meta.shape() != (outputs, learners.len() * outputs + 1) {
            return Err(Error::Dimension(format!(
                "meta coefficients {:?} for {} learners of {outputs} outputs",
                meta.shape(),
                learners.len()
            )));
        }
        Ok(EnsembleModel {
            learners,
            meta,
            meta_ridge: false,
            split: None,
        })
    }

    pub fn with_split(mut self, split: SplitSpec) -> Self {
        self.split = Some(split);
        self
    }

    pub fn split(&self) -> Option<&SplitSpec> {
        self.split.as_ref()
    }

    pub fn learners(&self) -> &[BaseLearner] {
        &self.learners
    }

    pub fn meta_coefficients(&self) -> &DMatrix<f64> {
        &self.meta
    }

    pub fn meta_used_ridge(&self) -> bool {
        self.meta_ridge
    }

    pub fn input_width(&self) -> usize {
        self.learners[0].input_width()
    }

    pub fn n_buses(&self) -> usize {
        self.learners[0].n_buses()
    }

    /// Predictions of every base-learner, `2n x N` each.
    pub fn base_predictions(&self, inputs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        parallel::map_slice(&self.learners, |l| l.predict_batch(inputs))
            .into_iter()
            .collect()
    }

    /// Meta-learner output on `m x N` measurement columns.
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let design = meta_design(&self.learners, inputs)?;
        Ok(&self.meta * design.transpose())
    }

    /// Element-wise mean of the base-learner predictions.
    pub fn uniform_average(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let preds = self.base_predictions(inputs)?;
        let mut sum = preds[0].clone();
        for p in &preds[1..] {
            sum += p;
        }
        Ok(sum / preds.len() as f64)
    }

    /// State estimate for one complete measurement vector.
    pub fn estimate(&self, z: &MeasurementVector) -> Result<StateVector> {
        if !z.is_complete() {
            return Err(Error::MaskedMeasurements { missing: z.missing() });
        }
        if z.len() != self.input_width() {
            return Err(Error::Dimension(format!(
                "{} measurements for a model expecting {}",
                z.len(),
                self.input_width()
            )));
        }
        let out = self.predict_batch(&DMatrix::from_column_slice(z.len(), 1, &z.values))?;
        let n = self.n_buses();
        Ok(StateVector {
            v: out.column(0).rows(0, n).iter().copied().collect(),
            theta: out.column(0).rows(n, n).iter().copied().collect(),
        })
    }

    /// [`EnsembleModel::estimate`] with its wall-clock latency.
    pub fn estimate_timed(&self, z: &MeasurementVector) -> Result<(StateVector, Duration)> {
        let start = Instant::now();
        let state = self.estimate(z)?;
        Ok((state, start.elapsed()))
    }

    pub fn evaluate(&self, inputs: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Metrics> {
        Metrics::compute(&self.predict_batch(inputs)?, reference)
    }

    /// Metrics of each base-learner on its own.
    pub fn evaluate_learners(&self, inputs: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Vec<Metrics>> {
        self.base_predictions(inputs)?
            .iter()
            .map(|p| Metrics::compute(p, reference))
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, learner) in self.learners.iter().enumerate() {
            learner.save(dir.join(format!("learner_{k}.json")))?;
        }
        let meta = MetaFile {
            format: META_FORMAT.into(),
            version: META_VERSION,
            outputs: self.meta.nrows(),
            features: self.meta.ncols(),
            ridge: self.meta_ridge,
            coefficients: self.meta.transpose().as_slice().to_vec(),
        };
        write_json(&dir.join("meta.json"), &meta)?;
        if let Some(split) = &self.split {
            write_json(&dir.join("split.json"), split)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MetaFile = serde_json::from_str(&text)?;
        if meta.format != META_FORMAT || meta.version != META_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported meta format {} v{}",
                meta.format, meta.version
            )));
        }
        if meta.outputs == 0 || meta.coefficients.len() != meta.outputs * meta.features {
            return Err(Error::Dimension("meta coefficient count does not match its shape".into()));
        }
        let count = (meta.features - 1) / meta.outputs;
        let learners = (0..count)
            .map(|k| BaseLearner::load(dir.join(format!("learner_{k}.json"))))
            .collect::<Result<Vec<_>>>()?;
        let coefficients = DMatrix::from_row_slice(meta.outputs, meta.features, &meta.coefficients);
        let mut model = Self::from_parts(learners, coefficients)?;
        model.meta_ridge = meta.ridge;
        let split_path = dir.join("split.json");
        if split_path.exists() {
            let text = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
            model.split = Some(serde_json::from_str(&text)?);
        }
        Ok(model)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `N x (L * 2n + 1)` design: intercept, then every learner's outputs.
fn meta_design(learners: &[BaseLearner], inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let preds = parallel::map_slice(learners, |l| l.predict_batch(inputs))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let outputs = preds[0].nrows();
    let mut design = DMatrix::zeros(inputs.ncols(), learners.len() * outputs + 1);
    design.column_mut(0).fill(1.0);
    for (k, p) in preds.iter().enumerate() {
        design
            .columns_mut(1 + k * outputs, outputs)
            .copy_from(&p.transpose());
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Architecture, ResNetD, Standardizer};

    fn toy(samples: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        // 6 measurements, 2 buses; states are smooth functions of the inputs
        let z = DMatrix::from_fn(6, samples, |r, c| {
            let s = c as f64 / samples as f64;
            (s * (r + 1) as f64 * 2.3).sin() + 0.1 * r as f64
        });
        let x = DMatrix::from_fn(4, samples, |r, c| {
            let a = z[(0, c)];
            let b = z[(1, c)];
            match r {
                0 => 1.0,
                1 => 1.0 - 0.02 * a,
                2 => 0.0,
                _ => -0.05 + 0.03 * b,
            }
        });
        (z, x)
    }

    #[test]
    fn split_is_a_40_36_24_partition() {
        let split = SplitSpec::new(1000, 3);
        assert_eq!(
            (split.base_train.len(), split.meta_train.len(), split.test.len()),
            (400, 360, 240)
        );
        let mut all: Vec<usize> = [&split.base_train[..], &split.meta_train, &split.test].concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(split, SplitSpec::new(1000, 3));
        assert_ne!(split, SplitSpec::new(1000, 4));
    }

    #[test]
    fn metric_examples() {
        let truth = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let m = Metrics::compute(&truth, &truth).unwrap();
        assert_eq!((m.voltage_rmse_pct, m.voltage_mae_pct, m.angle_rmse_deg, m.angle_mae_deg), (0.0, 0.0, 0.0, 0.0));

        let pred = DMatrix::from_row_slice(2, 1, &[1.005, 0.5f64.to_radians()]);
        let m = Metrics::compute(&pred, &truth).unwrap();
        assert!((m.voltage_rmse_pct - 0.5).abs() < 1e-12 && (m.voltage_mae_pct - 0.5).abs() < 1e-12);
        assert!((m.angle_rmse_deg - 0.5).abs() < 1e-12 && (m.angle_mae_deg - 0.5).abs() < 1e-12);

        let truth = DMatrix::from_fn(4, 7, |r, c| (r * c) as f64 * 0.01);
        let biased = truth.add_scalar(-0.002);
        let m = Metrics::compute(&biased, &truth).unwrap();
        assert!((m.voltage_rmse_pct - 0.2).abs() < 1e-10 && (m.voltage_mae_pct - 0.2).abs() < 1e-10);
        assert!(Metrics::compute(&DMatrix::zeros(4, 0), &DMatrix::zeros(4, 0)).is_err());
    }

    /// A learner whose network outputs exactly the first `2n` inputs.
    fn passthrough(m: usize, outputs: usize) -> BaseLearner {
        let mut net = ResNetD::zeros(Architecture::resnetd(m, outputs)).unwrap();
        for i in 0..outputs {
            net.head.weights[(i, i)] = 1.0;
        }
        // zero blocks output only the skip path, so the head sees the raw input
        let norm = Standardizer {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        };
        BaseLearner::from_parts(net, norm, 0.0).unwrap()
    }

    #[test]
    fn exact_base_learners_give_exact_ensemble() {
        // inputs carry the states themselves (non-negative so the ReLU head passes them)
        let samples = 60;
        let x = DMatrix::from_fn(4, samples, |r, c| 1.0 + 0.01 * ((r * 7 + c * 3) % 11) as f64);
        let z = DMatrix::from_fn(6, samples, |r, c| if r < 4 { x[(r, c)] } else { c as f64 });
        let learners = vec![passthrough(6, 4); BASE_LEARNERS];
        assert_eq!(learners[0].predict_batch(&z).unwrap(), x);

        let design = meta_design(&learners, &z).unwrap();
        let fit = least_squares(&design, &x.transpose(), RIDGE_LAMBDA);
        let model = EnsembleModel::from_parts(learners, fit.coefficients.transpose()).unwrap();
        // identical learners make the design rank-deficient, so this also exercises the ridge path
        assert!(fit.ridge);
        assert!(rmse(&model.predict_batch(&z).unwrap(), &x) < 1e-6);
    }

    #[test]
    fn meta_fit_beats_uniform_average_in_sample() {
        let (z, x) = toy(300);
        let split = SplitSpec::new(300, 11);
        let cols = |idx: &[usize], m: &DMatrix<f64>| m.select_columns(idx);
        let config = EnsembleConfig {
            training: TrainingConfig {
                epochs: 5,
                batch_size: 16,
                seed: 9,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = EnsembleModel::fit(
            &cols(&split.base_train, &z),
            &cols(&split.base_train, &x),
            &cols(&split.meta_train, &z),
            &cols(&split.meta_train, &x),
            &config,
        )
        .unwrap();
        let zm = cols(&split.meta_train, &z);
        let xm = cols(&split.meta_train, &x);
        let meta = rmse(&model.predict_batch(&zm).unwrap(), &xm);
        let uniform = rmse(&model.uniform_average(&zm).unwrap(), &xm);
        assert!(meta <= uniform, "{meta} > {uniform}");
    }

    #[test]
    fn too_few_meta_rows_is_an_error() {
        let (z, x) = toy(40);
        let config = EnsembleConfig {
            training: TrainingConfig {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let short = z.columns(0, 10).into_owned();
        let err = EnsembleModel::fit(&z, &x, &short, &x.columns(0, 10).into_owned(), &config).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn estimate_rejects_masks_and_round_trips_on_disk() {
        let (z, x) = toy(120);
        let config = EnsembleConfig {
            learners: 2,
            training: TrainingConfig {
                epochs: 2,
                batch_size: 16,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = EnsembleModel::fit(&z, &x, &z, &x, &config)
            .unwrap()
            .with_split(SplitSpec::new(120, 1));
        let mv = MeasurementVector::full(0, z.column(3).iter().copied().collect());
        let a = model.estimate(&mv).unwrap();
        assert_eq!(a, model.estimate(&mv).unwrap());

        let mut mask = vec![true; 6];
        mask[2] = false;
        let masked = mv.clone().with_mask(mask).unwrap();
        assert!(matches!(model.estimate(&masked), Err(Error::MaskedMeasurements { .. })));

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = EnsembleModel::load(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.estimate(&mv).unwrap(), a);
    }
}
