//! Model and training settings, stored as flat `key = value` files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kvfile;
use crate::moe::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthoPoints {
    /// Observation times of the placed training subjects.
    Observations,
    /// Every integrator grid point.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub inner_epochs: usize,
    pub max_outer_iters: usize,
    /// Relative change in validation loss counted as "no progress".
    pub convergence_tol: f64,
    /// Consecutive outer iterations below `convergence_tol` needed to stop.
    pub patience: usize,
    pub seed: u64,
    pub val_size: usize,
    pub test_size: usize,
    /// Keep `k`, `α` (and `v`) at their initial values.
    pub freeze_mechanistic: bool,
    pub ortho_points: OrthoPoints,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub error_map_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 1e-3,
            learning_rate: 1e-3,
            inner_epochs: 20,
            max_outer_iters: 50,
            convergence_tol: 1e-3,
            patience: 5,
            seed: 0,
            val_size: 35,
            test_size: 35,
            freeze_mechanistic: false,
            ortho_points: OrthoPoints::Observations,
            grad_clip: 0.0,
            error_map_bins: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0)
            || !self.lambda1.is_finite()
            || !self.lambda2.is_finite()
        {
            return bad("lambda1 and lambda2 must be finite and nonnegative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.inner_epochs == 0 || self.max_outer_iters == 0 {
            return bad("inner_epochs and max_outer_iters must be positive");
        }
        if !(self.convergence_tol >= 0.0) || self.patience == 0 {
            return bad("convergence_tol must be nonnegative and patience positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative");
        }
        if self.error_map_bins == 0 {
            return bad("error_map_bins must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }

    /// Every key with its value, sorted by key.
    pub fn dump(&self) -> String {
        kvfile::dump(self)
    }

    /// Parses a key-value file on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = kvfile::parse(text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// SHA-256 of the canonical dump.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.dump().as_bytes()))
    }
}
