//! Minimal reverse-mode differentiation over dense float64 matrices.
//!
//! The kernel is deliberately small: matrix products, element-wise
//! activations, softmax, Hadamard products, reductions, and the two graph
//! gather/scatter primitives the message-passing expert needs. Gradients
//! through the ODE solver are obtained by replaying one integrator step per
//! tape (see [`crate::moe::integrate`]).

mod nn;
mod params;
mod tape;

pub use nn::{glorot, uniform, Mlp};
pub use params::ParamStore;
pub use tape::{Activation, Adjoints, Tape, Var};
