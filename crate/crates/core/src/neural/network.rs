//! The ResNetD regressor.
//!
//! Each block takes the previous block's output `prev` (the raw input for
//! the first block) and the raw input `z`:
//!
//! ```text
//! a    = relu(W_K ... relu(W_1 prev + b_1) ... + b_K)   regular path, K layers
//! p    = relu(W_p z + b_p)                              input projection
//! out  = a + prev + p
//! ```
//!
//! A ReLU dense head maps the last block output to the targets. All hidden
//! widths equal the input width so the three merge operands line up.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer, LayerGrad};
use super::loss::huber;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub output_width: usize,
    pub blocks: usize,
    /// Dense layers on the regular path of each block.
    pub hidden_per_block: usize,
}

impl Architecture {
    /// Three blocks of two hidden layers.
    pub fn resnetd(input_width: usize, output_width: usize) -> Self {
        Architecture {
            input_width,
            output_width,
            blocks: 3,
            hidden_per_block: 2,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let m = self.input_width;
        let square = m * m + m;
        self.blocks * (self.hidden_per_block + 1) * square + self.output_width * m + self.output_width
    }

    fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 || self.blocks == 0 {
            return Err(Error::InvalidInput(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub hidden: Vec<DenseLayer>,
    pub projection: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResNetD {
    architecture: Architecture,
    pub blocks: Vec<ResBlock>,
    pub head: DenseLayer,
}

/// Intermediate values kept for the backward pass.
struct Trace {
    input: DMatrix<f64>,
    /// Per block: inputs and preactivations of each hidden layer, and the
    /// projection preactivation.
    blocks: Vec<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DMatrix<f64>)>,
    head_input: DMatrix<f64>,
    head_pre: DMatrix<f64>,
    output: DMatrix<f64>,
}

impl ResNetD {
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = architecture.input_width;
        let blocks = (0..architecture.blocks)
            .map(|_| ResBlock {
                hidden: (0..architecture.hidden_per_block)
                    .map(|_| DenseLayer::he_uniform(m, m, Activation::ReLU, &mut rng))
                    .collect(),
                projection: DenseLayer::he_uniform(m, m, Activation::ReLU, &mut rng),
            })
            .collect();
        let head = DenseLayer::he_uniform(m, architecture.output_width, Activation::ReLU, &mut rng);
        Ok(ResNetD {
            architecture,
            blocks,
            head,
        })
    }

    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.validate()?;
        let m = architecture.input_width;
        let blocks = (0..architecture.blocks)
            .map(|_| ResBlock {
                hidden: (0..architecture.hidden_per_block)
                    .map(|_| DenseLayer::zeros(m, m, Activation::ReLU))
                    .collect(),
                projection: DenseLayer::zeros(m, m, Activation::ReLU),
            })
            .collect();
        Ok(ResNetD {
            architecture,
            blocks,
            head: DenseLayer::zeros(m, architecture.output_width, Activation::ReLU),
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    /// Layers in parameter order: for each block its hidden layers then its
    /// projection, then the head.
    pub fn layers(&self) -> Vec<&DenseLayer> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend(block.hidden.iter());
            out.push(&block.projection);
        }
        out.push(&self.head);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.extend(block.hidden.iter_mut());
            out.push(&mut block.projection);
        }
        out.push(&mut self.head);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    /// All parameters, layer by layer, weights row-major then biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in self.layers() {
            for r in 0..layer.weights.nrows() {
                out.extend(layer.weights.row(r).iter());
            }
            out.extend(layer.biases.iter());
        }
        out
    }

    pub fn set_flat_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "{} parameters for a network of {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut it = params.iter().copied();
        for layer in self.layers_mut() {
            let (rows, cols) = layer.weights.shape();
            for r in 0..rows {
                for c in 0..cols {
                    layer.weights[(r, c)] = it.next().expect("length checked");
                }
            }
            for b in layer.biases.iter_mut() {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &DMatrix<f64>) -> Result<()> {
        if input.nrows() != self.architecture.input_width {
            return Err(Error::Dimension(format!(
                "input width {} for a network expecting {}",
                input.nrows(),
                self.architecture.input_width
            )));
        }
        Ok(())
    }

    fn trace(&self, input: &DMatrix<f64>) -> Trace {
        let mut prev = input.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut inputs = Vec::with_capacity(block.hidden.len());
            let mut pres = Vec::with_capacity(block.hidden.len());
            let mut a = prev.clone();
            for layer in &block.hidden {
                let (pre, out) = layer.forward(&a);
                inputs.push(a);
                pres.push(pre);
                a = out;
            }
            let (proj_pre, proj) = block.projection.forward(input);
            prev = a + prev + proj;
            blocks.push((inputs, pres, proj_pre));
        }
        let (head_pre, output) = self.head.forward(&prev);
        Trace {
            input: input.clone(),
            blocks,
            head_input: prev,
            head_pre,
            output,
        }
    }

    /// Forward pass on a `width x batch` matrix.
    pub fn forward_batch(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(input)?;
        Ok(self.trace(input).output)
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network input".into()));
        }
        let input = DMatrix::from_column_slice(z.len(), 1, z);
        Ok(self.forward_batch(&input)?.column(0).iter().copied().collect())
    }

    /// Every preactivation of the forward pass, in layer order.
    pub fn preactivations(&self, input: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_input(input)?;
        let trace = self.trace(input);
        let mut out = Vec::new();
        for (_, pres, proj_pre) in trace.blocks {
            out.extend(pres);
            out.push(proj_pre);
        }
        out.push(trace.head_pre);
        Ok(out)
    }

    /// Batch Huber loss and its gradient for every parameter (layer order).
    pub fn loss_and_gradients(
        &self,
        input: &DMatrix<f64>,
        target: &DMatrix<f64>,
        delta: f64,
    ) -> Result<(f64, Vec<LayerGrad>)> {
        self.check_input(input)?;
        if target.nrows() != self.architecture.output_width || target.ncols() != input.ncols() {
            return Err(Error::Dimension("target shape does not match output".into()));
        }
        let trace = self.trace(input);
        let (loss, d_output) = huber(&trace.output, target, delta);
        Ok((loss, self.backward(&trace, &d_output)))
    }

    fn backward(&self, trace: &Trace, d_output: &DMatrix<f64>) -> Vec<LayerGrad> {
        let (head_grad, d_last) =
            self.head
                .backward(d_output, &trace.head_input, &trace.head_pre, true);
        let mut d_out = d_last.expect("requested");
        let mut per_block = Vec::with_capacity(self.blocks.len());

        for (block, (inputs, pres, proj_pre)) in self.blocks.iter().zip(&trace.blocks).rev() {
            let (proj_grad, _) = block.projection.backward(&d_out, &trace.input, proj_pre, false);
            let mut hidden_grads = Vec::with_capacity(block.hidden.len());
            let mut d_a = d_out.clone();
            for (layer, (inp, pre)) in block.hidden.iter().zip(inputs.iter().zip(pres)).rev() {
                let (g, d_in) = layer.backward(&d_a, inp, pre, true);
                hidden_grads.push(g);
                d_a = d_in.expect("requested");
            }
            hidden_grads.reverse();
            // skip connection carries the block-output gradient straight to prev
            d_out += d_a;
            per_block.push((hidden_grads, proj_grad));
        }

        let mut grads = Vec::new();
        for (hidden, proj) in per_block.into_iter().rev() {
            grads.extend(hidden);
            grads.push(proj);
        }
        grads.push(head_grad);
        grads
    }
}
