//! Inhomogeneous graph neural diffusion expert.
//!
//! A graph auto-encoder stands in for the state- and time-dependent edge
//! diffusivity. The encoder aggregates learned pairwise messages over the
//! anatomical edges into a rank-`latent_dim` node embedding `h`; the decoder
//! builds a refined adjacency `Â = rownorm(sigmoid(h·hᵀ))`, propagates `h` once
//! over `Â`, and reads out one derivative per node.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEncoding {
    None,
    ScalarAppend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgndConfig {
    /// Rank `e'` of the latent factorization.
    pub latent_dim: usize,
    /// Hidden widths of the node encoder.
    pub encoder_layers: Vec<usize>,
    pub prop_hidden: usize,
    pub message_dim: usize,
    pub readout_hidden: usize,
    pub time_encoding: TimeEncoding,
    /// Restrict `Â` to the anatomical support (plus self-loops).
    pub mask_to_support: bool,
}

impl Default for IgndConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            encoder_layers: vec![16],
            prop_hidden: 16,
            message_dim: 8,
            readout_hidden: 16,
            time_encoding: TimeEncoding::None,
            mask_to_support: false,
        }
    }
}

impl IgndConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim > n {
            return Err(Error::InvalidConfig(format!(
                "latent_dim must be in [1, {n}], got {}",
                self.latent_dim
            )));
        }
        if self.prop_hidden == 0 || self.message_dim == 0 || self.readout_hidden == 0 {
            return Err(Error::InvalidConfig(
                "IGND layer widths must be positive".into(),
            ));
        }
        if self.encoder_layers.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder layer widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Latent node embedding and the refined adjacency it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub h: Matrix,
    pub a_hat: Matrix,
}

/// Handles to the IGND intermediates recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct IgndVars {
    pub h: Var,
    pub a_hat: Var,
    pub dcdt: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgndExpert {
    pub config: IgndConfig,
    prop: Mlp,
    enc: Mlp,
    readout: Mlp,
}

impl IgndExpert {
    pub fn new(config: IgndConfig, n: usize) -> Result<Self> {
        config.validate(n)?;
        let time_cols = usize::from(config.time_encoding == TimeEncoding::ScalarAppend);
        let prop = Mlp::new(
            "ignd.prop",
            vec![2, config.prop_hidden, config.message_dim],
            Activation::Tanh,
        );
        let mut enc_widths = vec![1 + config.message_dim + time_cols];
        enc_widths.extend(&config.encoder_layers);
        enc_widths.push(config.latent_dim);
        let enc = Mlp::new("ignd.enc", enc_widths, Activation::Tanh);
        let readout = Mlp::new(
            "ignd.readout",
            vec![2 * config.latent_dim, config.readout_hidden, 1],
            Activation::Tanh,
        );
        Ok(Self {
            config,
            prop,
            enc,
            readout,
        })
    }

    /// Random weights with a zero readout layer, so the expert starts as the
    /// zero vector field.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.prop.init(store, rng, false);
        self.enc.init(store, rng, false);
        self.readout.init(store, rng, true);
    }

    pub fn encoder(&self) -> &Mlp {
        &self.enc
    }

    pub fn readout(&self) -> &Mlp {
        &self.readout
    }

    pub fn propagation(&self) -> &Mlp {
        &self.prop
    }

    /// Records encoder and decoder for state `c` (n×1) at normalized time `tau`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ops: &GraphOperators,
        c: Var,
        tau: f64,
    ) -> Result<IgndVars> {
        let n = ops.n();
        let pairs = tape.gather_arcs(c, &ops.arcs)?;
        let messages = self.prop.forward(tape, store, pairs)?;
        let aggregated = tape.scatter_arcs(messages, &ops.arcs, n)?;
        let enc_in = match self.config.time_encoding {
            TimeEncoding::None => tape.concat_cols(&[c, aggregated])?,
            TimeEncoding::ScalarAppend => {
                let tcol = tape.constant(Matrix::filled(n, 1, tau))?;
                tape.concat_cols(&[c, aggregated, tcol])?
            }
        };
        let h = self.enc.forward(tape, store, enc_in)?;

        let gram = tape.matmul_nt(h, h)?;
        let mut scores = tape.sigmoid(gram)?;
        if self.config.mask_to_support {
            let mask = tape.constant_cached("support_mask", || support_mask(ops))?;
            scores = tape.hadamard(scores, mask)?;
        }
        let a_hat = tape.row_normalize(scores)?;
        let propagated = tape.matmul(a_hat, h)?;
        let readout_in = tape.concat_cols(&[h, propagated])?;
        let dcdt = self.readout.forward(tape, store, readout_in)?;
        Ok(IgndVars { h, a_hat, dcdt })
    }

    pub fn encode(
        &self,
        store: &ParamStore,
        ops: &GraphOperators,
        c: &[f64],
        tau: f64,
    ) -> Result<LatentState> {
        let mut tape = Tape::new();
        let vars = self.run(&mut tape, store, ops, c, tau)?;
        Ok(LatentState {
            h: tape.value(vars.h).clone(),
            a_hat: tape.value(vars.a_hat).clone(),
        })
    }

    pub fn eval(
        &self,
        store: &ParamStore,
        ops: &GraphOperators,
        c: &[f64],
        tau: f64,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.run(&mut tape, store, ops, c, tau)?;
        Ok(tape.value(vars.dcdt).as_slice().to_vec())
    }

    fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ops: &GraphOperators,
        c: &[f64],
        tau: f64,
    ) -> Result<IgndVars> {
        check_input(ops.n(), c)?;
        let cv = tape.input(Matrix::column(c))?;
        self.forward_on_tape(tape, store, ops, cv, tau)
    }
}

fn support_mask(ops: &GraphOperators) -> Matrix {
    let n = ops.n();
    let mut m = Matrix::identity(n);
    for arc in ops.arcs.iter() {
        m[(arc.target, arc.source)] = 1.0;
    }
    m
}

pub(crate) fn check_input(n: usize, c: &[f64]) -> Result<()> {
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}
