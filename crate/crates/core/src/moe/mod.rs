//! Gated mixture of the three experts and its ODE solver.

pub mod gate;
pub mod integrate;
pub mod model;

pub use gate::{GateConfig, GateMode, GateParams};
pub use integrate::{
    gate_curve, integrate, read_gate_csv, rk4, rk4_step, write_gate_csv, ModelField, Trajectory,
    VectorField,
};
pub use model::{ModelConfig, MoeModel, RhsVars, EXPERT_NAMES};
