use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::network::ResNetD;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub huber_delta: f64,
    /// Input spread floor as a fraction of each input's RMS level.
    pub std_floor: f64,
    pub seed: u64,
}

pub const STD_FLOOR_FRACTION: f64 = 1e-2;

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            huber_delta: 1.0,
            std_floor: STD_FLOOR_FRACTION,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.huber_delta > 0.0) || !(self.learning_rate > 0.0) || !(self.std_floor >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Mini-batch Adam training on column-sample matrices. Returns the mean
/// training loss of every epoch. Deterministic for a fixed seed.
pub fn train(
    net: &mut ResNetD,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    config: &TrainingConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let samples = inputs.ncols();
    if samples == 0 || targets.ncols() != samples {
        return Err(Error::InsufficientData(format!(
            "{samples} inputs and {} targets",
            targets.ncols()
        )));
    }
    let mut adam = Adam::new(net, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut order: Vec<usize> = (0..samples).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = inputs.select_columns(batch);
            let y = targets.select_columns(batch);
            let (loss, grads) = net.loss_and_gradients(&x, &y, config.huber_delta)?;
            total += loss * batch.len() as f64;
            adam.update(net, &grads);
        }
        let mean = total / samples as f64;
        if !mean.is_finite() || net.flat_parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(history)
}
