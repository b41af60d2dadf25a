//! Dense-network engine: layers, Huber loss, Adam and the ResNetD
//! base-learner.

mod adam;
mod layer;
mod loss;
mod model;
mod network;
mod train;

pub use adam::Adam;
pub use layer::{Activation, DenseLayer, LayerGrad};
pub use loss::huber;
pub use model::{BaseLearner, Standardizer};
pub use network::{Architecture, ResBlock, ResNetD};
pub use train::{train, TrainingConfig, STD_FLOOR_FRACTION};
