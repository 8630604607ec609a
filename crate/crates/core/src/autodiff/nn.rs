//! Dense layers built from tape primitives.

use rand::Rng;

use crate::autodiff::{Activation, ParamStore, Tape, Var};
use crate::error::Result;
use crate::linalg::Matrix;

/// Stack of dense layers stored as `{prefix}.w{i}` (in×out) and `{prefix}.b{i}`
/// (1×out). Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` runs from input dimension to output dimension inclusive.
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>, activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            widths,
            activation,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    /// Glorot-uniform weights and zero biases. With `zero_output` the last
    /// layer starts at exactly zero, making the whole network the zero map.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R, zero_output: bool) {
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = if zero_output && l + 1 == self.layers() {
                Matrix::zeros(fan_in, fan_out)
            } else {
                glorot(rng, fan_in, fan_out)
            };
            store.insert(self.weight_name(l), w);
            store.insert(self.bias_name(l), Matrix::zeros(1, fan_out));
        }
    }

    /// Applies the network row-wise to `x` (rows × in).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            let z = tape.matmul(h, w)?;
            h = tape.add_row_bias(z, b)?;
            if l + 1 < self.layers() {
                h = tape.activation(h, self.activation)?;
            }
        }
        Ok(h)
    }
}

pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}
