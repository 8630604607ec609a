//! Versioned JSON checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "version": 1,
//!   "config": { "model": {..}, "train": {..} },
//!   "config_hash": "<sha256 of the flat config dump>",
//!   "region_names": [..],
//!   "adjacency": { "rows": n, "cols": n, "data": [row-major f64] },
//!   "params": { "<name>": { "rows": r, "cols": c, "data": [row-major f64] }, .. },
//!   "seed": u64,
//!   "rng_word_pos": "<decimal u128>"
//! }
//! ```
//!
//! Parameter names are namespaced by expert (`mech.`, `ignd.`, `local.`,
//! `gate.`) plus `c0_raw`. Loading rejects any layout that differs from a
//! freshly built model with the same config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::graph::Connectome;
use crate::linalg::Matrix;
use crate::moe::MoeModel;
use crate::training::{FitConfig, FitOutcome};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: FitConfig,
    pub config_hash: String,
    pub region_names: Vec<String>,
    pub adjacency: Matrix,
    pub params: ParamStore,
    pub seed: u64,
    /// ChaCha word position after training; a string because JSON numbers
    /// cannot hold a u128 exactly.
    pub rng_word_pos: String,
}

/// A checkpoint after validation, ready to use.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: FitConfig,
    pub connectome: Connectome,
    pub model: MoeModel,
    pub seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn from_fit(outcome: &FitOutcome, config: &FitConfig, connectome: &Connectome) -> Self {
        Self {
            version: VERSION,
            config: config.clone(),
            config_hash: config.hash(),
            region_names: connectome.region_names().to_vec(),
            adjacency: connectome.adjacency().clone(),
            params: outcome.model.params.clone(),
            seed: config.train.seed,
            rng_word_pos: outcome.rng_word_pos.to_string(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Checks version, config hash, connectome and parameter layout.
    pub fn validate(self) -> Result<Loaded> {
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                self.version
            )));
        }
        if self.config.hash() != self.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match the stored config".into(),
            ));
        }
        self.config.validate()?;
        let connectome = Connectome::new(self.region_names, self.adjacency)?;
        if !self.params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        let model = MoeModel::from_params(self.config.model.clone(), connectome.n(), self.params)?;
        let rng_word_pos = self
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad rng_word_pos: {e}")))?;
        Ok(Loaded {
            config: self.config,
            connectome,
            model,
            seed: self.seed,
            rng_word_pos,
        })
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    Checkpoint::read(path)?.validate()
}
