//! Time-dependent softmax gate over the three experts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{uniform, Activation, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CONSTANT_LOGITS: &str = "gate.logits";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// `β(t) = softmax(MLP(t/T))`.
    Temporal,
    /// `β = softmax(b)`, one learned weight per expert for all times.
    Constant,
    /// `β ≡ [1, 0, 0]`; neural experts are switched off.
    Mechanistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mode: GateMode,
    pub hidden: usize,
    pub init_bias: [f64; 3],
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mode: GateMode::Temporal,
            hidden: 16,
            init_bias: [2.0, 0.0, 0.0],
        }
    }
}

/// Learned gate parameters plus the layout needed to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub config: GateConfig,
    mlp: Mlp,
}

impl GateParams {
    pub fn new(config: GateConfig) -> Result<Self> {
        if config.mode == GateMode::Temporal && config.hidden == 0 {
            return Err(Error::InvalidConfig(
                "gate hidden width must be positive".into(),
            ));
        }
        if config.init_bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("gate init_bias must be finite".into()));
        }
        let mlp = Mlp::new("gate", vec![1, config.hidden.max(1), 3], Activation::Tanh);
        Ok(Self { config, mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Hidden units get transition points spread over the normalized time
    /// window; the output layer starts at zero so `β` starts at
    /// `softmax(init_bias)` for every `t`.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bias = Matrix::row_vector(&self.config.init_bias);
        match self.config.mode {
            GateMode::Temporal => {
                let h = self.config.hidden;
                let slopes = uniform(rng, 1, h, 6.0);
                let mut offsets = Matrix::zeros(1, h);
                for j in 0..h {
                    let centre: f64 = rng.random_range(0.0..1.0);
                    offsets[(0, j)] = -slopes[(0, j)] * centre;
                }
                store.insert(self.mlp.weight_name(0), slopes);
                store.insert(self.mlp.bias_name(0), offsets);
                store.insert(self.mlp.weight_name(1), Matrix::zeros(h, 3));
                store.insert(self.mlp.bias_name(1), bias);
            }
            GateMode::Constant => store.insert(CONSTANT_LOGITS, bias),
            GateMode::Mechanistic => {}
        }
    }

    /// Records `β(tau)` as a 1×3 row.
    pub fn forward_on_tape(&self, tape: &mut Tape, store: &ParamStore, tau: f64) -> Result<Var> {
        match self.config.mode {
            GateMode::Temporal => {
                let x = tape.constant(Matrix::scalar(tau))?;
                let logits = self.mlp.forward(tape, store, x)?;
                tape.softmax(logits)
            }
            GateMode::Constant => {
                let logits = tape.param(store, CONSTANT_LOGITS)?;
                tape.softmax(logits)
            }
            GateMode::Mechanistic => tape.constant(Matrix::row_vector(&[1.0, 0.0, 0.0])),
        }
    }

    /// `β` at normalized time `tau`.
    pub fn eval(&self, store: &ParamStore, tau: f64) -> Result<[f64; 3]> {
        let mut tape = Tape::new();
        let b = self.forward_on_tape(&mut tape, store, tau)?;
        let v = tape.value(b);
        Ok([v[(0, 0)], v[(0, 1)], v[(0, 2)]])
    }
}
