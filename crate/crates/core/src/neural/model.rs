//! A trained ResNetD together with the input scaling and target shift it
//! was trained with, and its JSON model format.
//!
//! Model file layout (`format = "gridstate-resnetd"`, `version = 1`):
//!
//! - `architecture`: widths, block count, hidden layers per block
//! - `normalization`: per-input `mean` and `std` of the training inputs
//! - `angle_offset`: added to angle targets before training (the output
//!   head is a ReLU, so angles are shifted to be non-negative)
//! - `parameters`: flat array in layer order (block hidden layers, block
//!   projection, ..., head), each layer's weights row-major then biases
//! - `loss_history`: mean training loss per epoch

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{Architecture, ResNetD};
use super::train::{train, TrainingConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "gridstate-resnetd";
const VERSION: u32 = 1;


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Per-row statistics of a `features x samples` matrix. Rows whose
    /// spread is below `floor_fraction` of the RMS level of the whole matrix
    /// are scaled by that floor instead.
    pub fn fit(data: &DMatrix<f64>, floor_fraction: f64) -> Self {
        let n = data.ncols().max(1) as f64;
        let rms = (data.norm_squared() / data.len().max(1) as f64).sqrt();
        let floor = (floor_fraction * rms).max(1e-12);
        let mut mean = Vec::with_capacity(data.nrows());
        let mut std = Vec::with_capacity(data.nrows());
        for row in data.row_iter() {
            let mu = row.sum() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean.push(mu);
            std.push(var.sqrt().max(floor));
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |r, c| {
            (data[(r, c)] - self.mean[r]) / self.std[r]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLearner {
    network: ResNetD,
    normalization: Standardizer,
    angle_offset: f64,
    n_buses: usize,
    loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    architecture: Architecture,
    n_buses: usize,
    normalization: Standardizer,
    angle_offset: f64,
    parameters: Vec<f64>,
    loss_history: Vec<f64>,
}

impl BaseLearner {
    /// Train on `m x N` measurement columns and `2n x N` state columns
    /// (`[v; theta]` per column).
    pub fn fit(inputs: &DMatrix<f64>, states: &DMatrix<f64>, config: &TrainingConfig) -> Result<Self> {
        if states.nrows() % 2 != 0 || states.ncols() != inputs.ncols() {
            return Err(Error::Dimension(format!(
                "states {}x{} for inputs {}x{}",
                states.nrows(),
                states.ncols(),
                inputs.nrows(),
                inputs.ncols()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(Error::InsufficientData("no training samples".into()));
        }
        let n_buses = states.nrows() / 2;
        let normalization = Standardizer::fit(inputs, config.std_floor);
        let min_angle = states.rows(n_buses, n_buses).min();
        let angle_offset = -(min_angle.floor().min(0.0));

        let x = normalization.apply(inputs);
        let mut y = states.clone();
        y.rows_mut(n_buses, n_buses).add_scalar_mut(angle_offset);

        let arch = Architecture::resnetd(inputs.nrows(), states.nrows());
        let mut network = ResNetD::new(arch, config.seed)?;
        // start every head unit alive at the mean target
        network.head.weights.fill(0.0);
        network.head.biases = DVector::from_iterator(y.nrows(), y.row_iter().map(|r| r.mean()));
        let loss_history = train(&mut network, &x, &y, config)?;
        Ok(BaseLearner {
            network,
            normalization,
            angle_offset,
            n_buses,
            loss_history,
        })
    }

    /// Untrained learner with explicit parts, mainly for tests and tools.
    pub fn from_parts(network: ResNetD, normalization: Standardizer, angle_offset: f64) -> Result<Self> {
        let arch = network.architecture();
        if normalization.mean.len() != arch.input_width
            || normalization.std.len() != arch.input_width
            || arch.output_width % 2 != 0
        {
            return Err(Error::Dimension("normalization does not match network".into()));
        }
        Ok(BaseLearner {
            n_buses: arch.output_width / 2,
            network,
            normalization,
            angle_offset,
            loss_history: Vec::new(),
        })
    }

    pub fn network(&self) -> &ResNetD {
        &self.network
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn input_width(&self) -> usize {
        self.network.architecture().input_width
    }

    pub fn angle_offset(&self) -> f64 {
        self.angle_offset
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// States (`2n x N`, natural units) for raw measurement columns.
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() != self.input_width() {
            return Err(Error::Dimension(format!(
                "{} measurements for a model expecting {}",
                inputs.nrows(),
                self.input_width()
            )));
        }
        let mut out = self.network.forward_batch(&self.normalization.apply(inputs))?;
        out.rows_mut(self.n_buses, self.n_buses)
            .add_scalar_mut(-self.angle_offset);
        Ok(out)
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        let out = self.predict_batch(&DMatrix::from_column_slice(z.len(), 1, z))?;
        Ok(out.column(0).iter().copied().collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            architecture: self.network.architecture(),
            n_buses: self.n_buses,
            normalization: self.normalization.clone(),
            angle_offset: self.angle_offset,
            parameters: self.network.flat_parameters(),
            loss_history: self.loss_history.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let mut network = ResNetD::zeros(file.architecture)?;
        network.set_flat_parameters(&file.parameters)?;
        let mut learner = Self::from_parts(network, file.normalization, file.angle_offset)?;
        if learner.n_buses != file.n_buses {
            return Err(Error::Dimension("n_buses does not match architecture".into()));
        }
        learner.loss_history = file.loss_history;
        Ok(learner)
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
}
