//! Stage-aware mixture-of-experts ODE models of regional protein spread on a
//! brain connectome.

pub mod alignment;
pub mod autodiff;
pub mod checkpoint;
pub mod cohort;
pub mod error;
pub mod graph;
pub mod ignd;
pub mod kvfile;
pub mod linalg;
pub mod local;
pub mod mechanistic;
pub mod metrics;
pub mod moe;
pub mod table;
pub mod training;

pub use error::{Error, Result};
