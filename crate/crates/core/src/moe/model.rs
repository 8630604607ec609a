use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::ignd::{check_input, IgndConfig, IgndExpert};
use crate::linalg::{logit, sigmoid, softplus_inv, Matrix};
use crate::local::{LocalExpert, LocalExpertConfig};
use crate::mechanistic::{self, MechanisticParams};
use crate::moe::gate::{GateConfig, GateMode, GateParams};

pub const C0_RAW: &str = "c0_raw";

/// Expert order used throughout: mechanistic, graph diffusion, local reaction.
pub const EXPERT_NAMES: [&str; 3] = ["mechanistic", "ignd", "local"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub time_horizon: f64,
    pub step: f64,
    pub ignd: IgndConfig,
    pub local: LocalExpertConfig,
    pub gate: GateConfig,
    pub init_k: f64,
    pub init_alpha: f64,
    /// Learn per-region carrying capacities; otherwise `v = 1`.
    pub learn_v: bool,
    pub c0_base: f64,
    pub c0_seed_boost: f64,
    pub seed_regions: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            time_horizon: 12.0,
            step: 0.1,
            ignd: IgndConfig::default(),
            local: LocalExpertConfig::default(),
            gate: GateConfig::default(),
            init_k: 0.1,
            init_alpha: 0.5,
            learn_v: false,
            c0_base: 0.05,
            c0_seed_boost: 0.2,
            seed_regions: vec![0],
        }
    }
}

impl ModelConfig {
    /// Number of integrator steps `T / h`.
    pub fn steps(&self) -> Result<usize> {
        let (t, h) = (self.time_horizon, self.step);
        if !(t > 0.0 && t.is_finite()) || !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "time_horizon and step must be positive, got T={t}, h={h}"
            )));
        }
        let ratio = t / h;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "time_horizon {t} is not an integer multiple of step {h}"
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.steps()?;
        if !(self.init_k >= 0.0 && self.init_alpha >= 0.0) {
            return Err(Error::InvalidConfig(
                "initial k and alpha must be nonnegative".into(),
            ));
        }
        let c0_max = self.c0_base + self.c0_seed_boost;
        if !(self.c0_base > 0.0 && c0_max < 1.0) {
            return Err(Error::InvalidConfig(
                "initial concentrations must lie strictly inside (0, 1)".into(),
            ));
        }
        if let Some(&bad) = self.seed_regions.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidConfig(format!(
                "seed region {bad} out of range for {n} regions"
            )));
        }
        Ok(())
    }

    pub fn neural_experts_enabled(&self) -> bool {
        self.gate.mode != GateMode::Mechanistic
    }
}

/// Outputs of the combined right-hand side recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RhsVars {
    pub beta: Var,
    pub dcdt: Var,
    /// Unweighted expert outputs; `None` for switched-off experts.
    pub experts: [Option<Var>; 3],
}

/// All learnable state of the mixture-of-experts ODE.
#[derive(Debug, Clone)]
pub struct MoeModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    n: usize,
    gate: GateParams,
    ignd: Option<IgndExpert>,
    local: Option<LocalExpert>,
}

impl MoeModel {
    /// Fresh model with initial values from `config`.
    pub fn new<R: Rng>(config: ModelConfig, n: usize, rng: &mut R) -> Result<Self> {
        if config.neural_experts_enabled() && config.ignd.latent_dim > n {
            log::warn!("latent_dim {} exceeds region count {n}; using {n}", config.ignd.latent_dim);
        }
        let mut model = Self::skeleton(config, n)?;
        let cfg = &model.config;
        let v = cfg.learn_v.then(|| vec![0.99; n]);
        MechanisticParams::from_values(cfg.init_k, cfg.init_alpha, v.as_deref())
            .write_to(&mut model.params);
        let mut c0 = vec![cfg.c0_base; n];
        for &r in &cfg.seed_regions {
            c0[r] = cfg.c0_base + cfg.c0_seed_boost;
        }
        model.set_c0(&c0)?;
        model.gate.init(&mut model.params, rng);
        if let Some(e) = &model.ignd {
            e.init(&mut model.params, rng);
        }
        if let Some(e) = &model.local {
            e.init(&mut model.params, rng);
        }
        Ok(model)
    }

    /// Model structure without parameters; used when restoring checkpoints.
    /// An IGND latent size above `n` is clamped to `n`.
    pub fn skeleton(mut config: ModelConfig, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("need at least 2 regions".into()));
        }
        if config.neural_experts_enabled() && config.ignd.latent_dim > n {
            config.ignd.latent_dim = n;
        }
        config.validate(n)?;
        let gate = GateParams::new(config.gate.clone())?;
        let (ignd, local) = if config.neural_experts_enabled() {
            (
                Some(IgndExpert::new(config.ignd.clone(), n)?),
                Some(LocalExpert::new(config.local.clone())?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            params: ParamStore::new(),
            n,
            gate,
            ignd,
            local,
        })
    }

    /// Rebuilds a model from a config and a saved parameter map, checking that
    /// every expected parameter is present with the right shape.
    pub fn from_params(config: ModelConfig, n: usize, params: ParamStore) -> Result<Self> {
        let mut model = Self::skeleton(config, n)?;
        let reference = Self::new(model.config.clone(), n, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = reference.params.layout();
        if params.layout() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter layout mismatch: expected {:?}",
                expected.iter().map(|(k, _)| k).collect::<Vec<_>>()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.config.steps().expect("validated at construction")
    }

    pub fn horizon(&self) -> f64 {
        self.config.time_horizon
    }

    pub fn step_size(&self) -> f64 {
        self.config.step
    }

    pub fn gate(&self) -> &GateParams {
        &self.gate
    }

    pub fn ignd(&self) -> Option<&IgndExpert> {
        self.ignd.as_ref()
    }

    pub fn local(&self) -> Option<&LocalExpert> {
        self.local.as_ref()
    }

    pub fn tau(&self, t: f64) -> f64 {
        t / self.config.time_horizon
    }

    pub fn c0(&self) -> Vec<f64> {
        self.params
            .get(C0_RAW)
            .expect("c0 is always present")
            .as_slice()
            .iter()
            .map(|&x| sigmoid(x))
            .collect()
    }

    pub fn set_c0(&mut self, c0: &[f64]) -> Result<()> {
        if c0.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: c0.len(),
            });
        }
        if c0.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidConfig("c0 entries must lie in (0, 1)".into()));
        }
        let raw: Vec<f64> = c0.iter().map(|&x| logit(x)).collect();
        self.params.insert(C0_RAW, Matrix::column(&raw));
        Ok(())
    }

    pub fn mechanistic(&self) -> MechanisticParams {
        MechanisticParams::from_store(&self.params).expect("mechanistic params are always present")
    }

    pub fn set_mechanistic(&mut self, k: f64, alpha: f64) {
        self.params
            .insert(mechanistic::K_RAW, Matrix::scalar(softplus_inv(k)));
        self.params
            .insert(mechanistic::ALPHA_RAW, Matrix::scalar(softplus_inv(alpha)));
    }

    /// Gate weights `β(t)`.
    pub fn eval_gate(&self, t: f64) -> Result<[f64; 3]> {
        self.gate.eval(&self.params, self.tau(t))
    }

    /// Records the three unweighted expert outputs for state `c` at time `t`.
    pub fn experts_on_tape(
        &self,
        tape: &mut Tape,
        ops: &GraphOperators,
        c: Var,
        t: f64,
    ) -> Result<[Option<Var>; 3]> {
        let tau = self.tau(t);
        let fm = mechanistic::f_m_on_tape(tape, &self.params, ops, c)?;
        let fs = match &self.ignd {
            Some(e) => Some(e.forward_on_tape(tape, &self.params, ops, c, tau)?.dcdt),
            None => None,
        };
        let fl = match &self.local {
            Some(e) => Some(e.forward_on_tape(tape, &self.params, c, tau)?),
            None => None,
        };
        Ok([Some(fm), fs, fl])
    }

    /// Records `Σ_j β_j(t)·f_j(c, t)`.
    pub fn rhs_on_tape(
        &self,
        tape: &mut Tape,
        ops: &GraphOperators,
        c: Var,
        t: f64,
    ) -> Result<RhsVars> {
        let beta = self.gate.forward_on_tape(tape, &self.params, self.tau(t))?;
        let experts = self.experts_on_tape(tape, ops, c, t)?;
        let mut dcdt: Option<Var> = None;
        for (j, f) in experts.iter().enumerate() {
            let Some(f) = *f else { continue };
            let b = tape.element(beta, 0, j)?;
            let term = tape.scale_by(f, b)?;
            dcdt = Some(match dcdt {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        Ok(RhsVars {
            beta,
            dcdt: dcdt.expect("mechanistic expert is always active"),
            experts,
        })
    }

    /// Combined derivative and the three weighted contributions `β_j·f_j`
    /// (rows of the returned 3×n matrix; zero for switched-off experts).
    pub fn eval_rhs(&self, ops: &GraphOperators, c: &[f64], t: f64) -> Result<(Vec<f64>, Matrix)> {
        check_input(self.n, c)?;
        let mut tape = Tape::new();
        let cv = tape.input(Matrix::column(c))?;
        let rhs = self.rhs_on_tape(&mut tape, ops, cv, t)?;
        let beta = tape.value(rhs.beta).clone();
        let mut per_expert = Matrix::zeros(3, self.n);
        for (j, f) in rhs.experts.iter().enumerate() {
            if let Some(f) = f {
                let b = beta[(0, j)];
                for (dst, src) in per_expert
                    .row_mut(j)
                    .iter_mut()
                    .zip(tape.value(*f).as_slice())
                {
                    *dst = b * src;
                }
            }
        }
        Ok((tape.value(rhs.dcdt).as_slice().to_vec(), per_expert))
    }

    /// Unweighted expert outputs at `(c, t)`; zeros for switched-off experts.
    pub fn eval_experts(&self, ops: &GraphOperators, c: &[f64], t: f64) -> Result<[Vec<f64>; 3]> {
        check_input(self.n, c)?;
        let mut tape = Tape::new();
        let cv = tape.input(Matrix::column(c))?;
        let experts = self.experts_on_tape(&mut tape, ops, cv, t)?;
        Ok(experts.map(|f| match f {
            Some(f) => tape.value(f).as_slice().to_vec(),
            None => vec![0.0; self.n],
        }))
    }

    /// Records one classic RK4 step of size `h` from `(c, t)`.
    pub fn rk4_step_on_tape(
        &self,
        tape: &mut Tape,
        ops: &GraphOperators,
        c: Var,
        t: f64,
        h: f64,
    ) -> Result<Var> {
        let k1 = self.rhs_on_tape(tape, ops, c, t)?.dcdt;
        let d1 = tape.scale(k1, 0.5 * h)?;
        let c2 = tape.add(c, d1)?;
        let k2 = self.rhs_on_tape(tape, ops, c2, t + 0.5 * h)?.dcdt;
        let d2 = tape.scale(k2, 0.5 * h)?;
        let c3 = tape.add(c, d2)?;
        let k3 = self.rhs_on_tape(tape, ops, c3, t + 0.5 * h)?.dcdt;
        let d3 = tape.scale(k3, h)?;
        let c4 = tape.add(c, d3)?;
        let k4 = self.rhs_on_tape(tape, ops, c4, t + h)?.dcdt;
        let k2x2 = tape.scale(k2, 2.0)?;
        let k3x2 = tape.scale(k3, 2.0)?;
        let s1 = tape.add(k1, k2x2)?;
        let s2 = tape.add(s1, k3x2)?;
        let s3 = tape.add(s2, k4)?;
        let incr = tape.scale(s3, h / 6.0)?;
        tape.add(c, incr)
    }
}
