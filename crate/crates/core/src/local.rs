//! Localized neural reaction expert: one small MLP applied independently to
//! every region's concentration, with weights shared across regions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::ignd::check_input;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalActivation {
    Tanh,
    Softplus,
}

impl From<LocalActivation> for Activation {
    fn from(a: LocalActivation) -> Self {
        match a {
            LocalActivation::Tanh => Activation::Tanh,
            LocalActivation::Softplus => Activation::Softplus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExpertConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: LocalActivation,
    /// Feed normalized time as a second input.
    pub time_input: bool,
}

impl Default for LocalExpertConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![32, 32],
            activation: LocalActivation::Tanh,
            time_input: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalExpert {
    pub config: LocalExpertConfig,
    mlp: Mlp,
}

impl LocalExpert {
    pub fn new(config: LocalExpertConfig) -> Result<Self> {
        if config.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "local expert widths must be positive".into(),
            ));
        }
        let mut widths = vec![1 + usize::from(config.time_input)];
        widths.extend(&config.hidden_widths);
        widths.push(1);
        let mlp = Mlp::new("local", widths, config.activation.into());
        Ok(Self { config, mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Random hidden layers, zero output layer.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.mlp.init(store, rng, true);
    }

    /// Each row of `c` (n×1) is one region; the MLP sees only that row.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        c: Var,
        tau: f64,
    ) -> Result<Var> {
        let input = if self.config.time_input {
            let n = tape.value(c).rows();
            let tcol = tape.constant(Matrix::filled(n, 1, tau))?;
            tape.concat_cols(&[c, tcol])?
        } else {
            c
        };
        self.mlp.forward(tape, store, input)
    }

    pub fn eval(&self, store: &ParamStore, c: &[f64], tau: f64) -> Result<Vec<f64>> {
        check_input(c.len(), c)?;
        let mut tape = Tape::new();
        let cv = tape.input(Matrix::column(c))?;
        let out = self.forward_on_tape(&mut tape, store, cv, tau)?;
        Ok(tape.value(out).as_slice().to_vec())
    }
}
