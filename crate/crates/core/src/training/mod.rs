//! Objective, optimizer, and the alternating fit loop.

pub mod config;
pub mod fit;
pub mod losses;
pub mod optim;

pub use config::{FitConfig, OrthoPoints, TrainConfig};
pub use fit::{fit, prior_trajectory, FitOutcome, FitReport};
pub use losses::{
    compute_loss, loss_and_grad, loss_norm, loss_ortho, loss_traj, LossBreakdown, LossWeights,
};
pub use optim::Adam;
