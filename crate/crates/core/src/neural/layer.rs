use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Identity,
}

impl Activation {
    pub fn apply(self, pre: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::ReLU => pre.map(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        }
    }

    /// Multiply an upstream gradient by the activation derivative at `pre`.
    pub fn backprop(self, upstream: &DMatrix<f64>, pre: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::ReLU => upstream.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 }),
            Activation::Identity => upstream.clone(),
        }
    }
}

/// Fully connected layer acting on column batches (`width x batch`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weights: DMatrix::zeros(layer.weights.nrows(), layer.weights.ncols()),
            biases: DVector::zeros(layer.biases.len()),
        }
    }
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: DMatrix::zeros(outputs, inputs),
            biases: DVector::zeros(outputs),
            activation,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn he_uniform<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        DenseLayer {
            weights: DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit)),
            biases: DVector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn preactivation(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = &self.weights * input;
        for mut col in pre.column_iter_mut() {
            col += &self.biases;
        }
        pre
    }

    /// Returns `(preactivation, output)`.
    pub fn forward(&self, input: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let pre = self.preactivation(input);
        let out = self.activation.apply(&pre);
        (pre, out)
    }

    /// Backpropagate `upstream` (gradient w.r.t. the output). Returns the
    /// parameter gradient and, if requested, the gradient w.r.t. the input.
    pub fn backward(
        &self,
        upstream: &DMatrix<f64>,
        input: &DMatrix<f64>,
        pre: &DMatrix<f64>,
        want_input_grad: bool,
    ) -> (LayerGrad, Option<DMatrix<f64>>) {
        let delta = self.activation.backprop(upstream, pre);
        let grad = LayerGrad {
            weights: &delta * input.transpose(),
            biases: delta.column_sum(),
        };
        let input_grad = want_input_grad.then(|| self.weights.transpose() * &delta);
        (grad, input_grad)
    }
}
