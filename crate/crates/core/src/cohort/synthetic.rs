//! Synthetic cohorts sampled from a known model.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::Subject;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{build_operators, Connectome};
use crate::ignd::IgndConfig;
use crate::kvfile;
use crate::linalg::Matrix;
use crate::local::LocalExpertConfig;
use crate::moe::{integrate, GateConfig, GateMode, ModelConfig, MoeModel, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Diffusion plus logistic growth only.
    Mechanistic,
    /// Mechanistic diffusion early, local reaction late, switched by a steep gate.
    TwoRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Ring,
    Path,
}

/// Settings of the two-regime ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRegimeSpec {
    /// Diffusion rate of the early mechanistic phase (no growth).
    pub k: f64,
    /// Switch point as a fraction of the horizon.
    pub switch: f64,
    /// Slope of the gate's single hidden unit in normalized time.
    pub steepness: f64,
    /// `±logit_scale` on the mechanistic and local logits.
    pub logit_scale: f64,
    /// Constant logit of the graph-diffusion expert.
    pub ignd_logit: f64,
    /// Late reaction `local_scale · tanh(local_gain · (plateau − c))`, which
    /// settles below the logistic carrying capacity.
    pub local_scale: f64,
    pub local_gain: f64,
    pub plateau: f64,
}

impl Default for TwoRegimeSpec {
    fn default() -> Self {
        Self {
            k: 0.6,
            switch: 0.5,
            steepness: 40.0,
            logit_scale: 2.0,
            ignd_logit: -3.0,
            local_scale: 0.5,
            local_gain: 4.0,
            plateau: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub preset: Preset,
    pub graph: GraphKind,
    pub regions: usize,
    pub subjects: usize,
    /// Standard deviation of additive Gaussian noise before clipping to [0, 1].
    pub noise: f64,
    pub time_horizon: f64,
    pub step: f64,
    pub k: f64,
    pub alpha: f64,
    pub c0_base: f64,
    pub c0_seed_boost: f64,
    pub seed_regions: Vec<usize>,
    /// Scans per subject are uniform on `1..=max_scans`.
    pub max_scans: usize,
    /// Each follow-up gap is uniform on `[gap_min, gap_max]`.
    pub gap_min: f64,
    pub gap_max: f64,
    /// Snap baselines and gaps to integrator grid points.
    pub t0_on_grid: bool,
    pub two_regime: TwoRegimeSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            preset: Preset::Mechanistic,
            graph: GraphKind::Ring,
            regions: 8,
            subjects: 60,
            noise: 0.01,
            time_horizon: 12.0,
            step: 0.1,
            k: 0.2,
            alpha: 0.8,
            c0_base: 0.05,
            c0_seed_boost: 0.2,
            seed_regions: vec![0],
            max_scans: 2,
            gap_min: 0.5,
            gap_max: 2.0,
            t0_on_grid: false,
            two_regime: TwoRegimeSpec::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.regions < 2 || self.subjects == 0 || self.max_scans == 0 {
            return bad("regions >= 2, subjects >= 1 and max_scans >= 1 are required".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be nonnegative, got {}", self.noise));
        }
        if !(self.gap_min > 0.0 && self.gap_max >= self.gap_min) {
            return bad("need 0 < gap_min <= gap_max".into());
        }
        if self.max_span() >= self.time_horizon {
            return bad(format!(
                "longest possible follow-up {} does not fit in the horizon {}",
                self.max_span(),
                self.time_horizon
            ));
        }
        if !(self.k >= 0.0 && self.alpha >= 0.0 && self.two_regime.k >= 0.0) {
            return bad("rates must be nonnegative".into());
        }
        Ok(())
    }

    pub fn max_span(&self) -> f64 {
        (self.max_scans - 1) as f64 * self.gap_max
    }

    pub fn dump(&self) -> String {
        kvfile::dump(self)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let spec: Self = kvfile::parse(text, path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn connectome(&self) -> Result<Connectome> {
        match self.graph {
            GraphKind::Ring => Connectome::ring(self.regions),
            GraphKind::Path => Connectome::path(self.regions),
        }
    }

    fn model_config(&self) -> ModelConfig {
        let base = ModelConfig {
            time_horizon: self.time_horizon,
            step: self.step,
            init_k: self.k,
            init_alpha: self.alpha,
            c0_base: self.c0_base,
            c0_seed_boost: self.c0_seed_boost,
            seed_regions: self.seed_regions.clone(),
            ..ModelConfig::default()
        };
        match self.preset {
            Preset::Mechanistic => ModelConfig {
                gate: GateConfig {
                    mode: GateMode::Mechanistic,
                    ..GateConfig::default()
                },
                ..base
            },
            Preset::TwoRegime => ModelConfig {
                init_k: self.two_regime.k,
                init_alpha: 0.0,
                gate: GateConfig {
                    mode: GateMode::Temporal,
                    hidden: 1,
                    init_bias: [0.0; 3],
                },
                ignd: IgndConfig {
                    latent_dim: 1,
                    encoder_layers: vec![1],
                    prop_hidden: 1,
                    message_dim: 1,
                    readout_hidden: 1,
                    ..IgndConfig::default()
                },
                local: LocalExpertConfig {
                    hidden_widths: vec![1],
                    ..LocalExpertConfig::default()
                },
                ..base
            },
        }
    }

    /// The data-generating model.
    pub fn true_model(&self) -> Result<MoeModel> {
        self.validate()?;
        let mut model = MoeModel::new(
            self.model_config(),
            self.regions,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        if self.preset == Preset::TwoRegime {
            let tr = &self.two_regime;
            let p = &mut model.params;
            // Hidden unit h = tanh(s·(τ − switch)) flips from −1 to +1.
            p.insert("gate.w0", Matrix::scalar(tr.steepness));
            p.insert("gate.b0", Matrix::scalar(-tr.steepness * tr.switch));
            p.insert(
                "gate.w1",
                Matrix::row_vector(&[-tr.logit_scale, 0.0, tr.logit_scale]),
            );
            p.insert("gate.b1", Matrix::row_vector(&[0.0, tr.ignd_logit, 0.0]));
            p.insert("local.w0", Matrix::scalar(-tr.local_gain));
            p.insert("local.b0", Matrix::scalar(tr.local_gain * tr.plateau));
            p.insert("local.w1", Matrix::scalar(tr.local_scale));
            p.insert("local.b1", Matrix::scalar(0.0));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePlacement {
    pub id: String,
    pub t0: f64,
}

/// Everything needed to score recovery against the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub params: ParamStore,
    pub k: f64,
    pub alpha: f64,
    pub placements: Vec<TruePlacement>,
    /// Rows `(t, β₁, β₂, β₃)` on the integration grid.
    pub gate_curve: Vec<[f64; 4]>,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub struct SyntheticCohort {
    pub subjects: Vec<Subject>,
    pub truth: GroundTruth,
    pub connectome: Connectome,
    pub trajectory: Trajectory,
}

/// Integrates the true model and samples noisy subjects from it.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCohort> {
    let model = spec.true_model()?;
    let connectome = spec.connectome()?;
    let ops = build_operators(&connectome);
    let traj = integrate(&model, &ops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let h = spec.step;
    let snap = |t: f64| {
        if spec.t0_on_grid {
            (t / h).round() * h
        } else {
            t
        }
    };
    let window = spec.time_horizon - spec.max_span();
    let width = (spec.subjects.max(1) - 1).to_string().len();

    let mut subjects = Vec::with_capacity(spec.subjects);
    let mut placements = Vec::with_capacity(spec.subjects);
    for i in 0..spec.subjects {
        let id = format!("sub{i:0width$}");
        let scans = rng.random_range(1..=spec.max_scans);
        let mut gaps = vec![0.0];
        for _ in 1..scans {
            let g = snap(rng.random_range(spec.gap_min..=spec.gap_max)).max(h);
            gaps.push(gaps.last().unwrap() + g);
        }
        let t0 = snap(rng.random_range(0.0..=window)).min(spec.time_horizon - gaps.last().unwrap());
        let mut obs = Vec::with_capacity(scans);
        for g in &gaps {
            let mut row = traj.predict_at(t0 + g)?;
            if spec.noise > 0.0 {
                for x in &mut row {
                    *x += noise.sample(&mut rng);
                }
            }
            obs.push(row.into_iter().map(|x| x.clamp(0.0, 1.0)).collect());
        }
        placements.push(TruePlacement { id: id.clone(), t0 });
        subjects.push(Subject { id, gaps, obs });
    }

    let gate_curve = traj
        .times
        .iter()
        .map(|&t| model.eval_gate(t).map(|b| [t, b[0], b[1], b[2]]))
        .collect::<Result<Vec<_>>>()?;
    let mech = model.mechanistic();
    Ok(SyntheticCohort {
        subjects,
        truth: GroundTruth {
            spec: spec.clone(),
            seed,
            model_config: model.config.clone(),
            params: model.params.clone(),
            k: mech.k(),
            alpha: mech.alpha(),
            placements,
            gate_curve,
        },
        connectome,
        trajectory: traj,
    })
}
