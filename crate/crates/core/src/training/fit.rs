//! Alternating optimization of the trajectory model and subject placements.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{try_align_cohort, Placement, Subject};
use crate::error::{Error, Result};
use crate::graph::{build_operators, Connectome, GraphOperators};
use crate::mechanistic;
use crate::metrics::{evaluate, flat_baseline_sse, regional_error_map, ErrorMap, Evaluation};
use crate::moe::{gate_curve, integrate, GateMode, MoeModel, Trajectory};
use crate::training::config::FitConfig;
use crate::training::losses::{compute_loss, loss_and_grad, LossBreakdown, LossWeights};
use crate::training::optim::{clip_global_norm, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub outer: usize,
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iter: usize,
    /// Objective at the start of this iteration's first epoch.
    pub first_epoch_loss: f64,
    /// Objective after the last update and re-alignment of the training set.
    pub aligned_loss: LossBreakdown,
    pub val_loss: f64,
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub outer: usize,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanisticSummary {
    pub k: f64,
    pub alpha: f64,
    pub v: Option<Vec<f64>>,
    /// Mean of `β₁` over the integration grid.
    pub mean_beta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePoint {
    pub t: f64,
    pub beta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSets {
    pub train: Vec<Placement>,
    pub val: Vec<Placement>,
    pub test: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config_hash: String,
    pub seed: u64,
    pub regions: usize,
    pub split: Split,
    pub converged: bool,
    pub stop_reason: String,
    pub best: BestSnapshot,
    pub outer: Vec<OuterRecord>,
    pub epochs: Vec<EpochRecord>,
    pub mechanistic: MechanisticSummary,
    pub train_metrics: Evaluation,
    pub val_metrics: Option<Evaluation>,
    pub test_metrics: Option<Evaluation>,
    /// Held-out SSE of predicting the training-set regional means.
    pub flat_baseline_test_sse: Option<f64>,
    pub gate_curve: Vec<GatePoint>,
    pub placements: PlacementSets,
    pub error_map: ErrorMap,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: MoeModel,
    pub report: FitReport,
    pub trajectory: Trajectory,
    /// ChaCha8 word position after all random draws, for checkpointing.
    pub rng_word_pos: u128,
}

fn as_divergence(e: Error) -> Error {
    if e.is_divergence() && !matches!(e, Error::Diverged(_)) {
        Error::Diverged(e.to_string())
    } else {
        e
    }
}

fn pick(cohort: &[Subject], idx: &[usize]) -> Vec<Subject> {
    idx.iter().map(|&i| cohort[i].clone()).collect()
}

fn ids(subjects: &[Subject]) -> Vec<String> {
    subjects.iter().map(|s| s.id.clone()).collect()
}

fn total_sse(placements: &[Placement]) -> f64 {
    placements.iter().map(|p| p.sse).sum()
}

/// Mechanistic-only trajectory from the configured initial values; the
/// starting point for subject placement.
pub fn prior_trajectory(config: &FitConfig, ops: &GraphOperators) -> Result<Trajectory> {
    let mut model_cfg = config.model.clone();
    model_cfg.gate.mode = GateMode::Mechanistic;
    let prior = MoeModel::new(model_cfg, ops.n(), &mut ChaCha8Rng::seed_from_u64(0))?;
    integrate(&prior, ops)
}

/// Fits a model to `cohort`.
///
/// Subjects are split into train/validation/test sets at random. Training
/// alternates `inner_epochs` optimizer steps on the trajectory objective with
/// re-placement of the training subjects, and returns the parameters with the
/// lowest validation error seen after any epoch.
pub fn fit(cohort: &[Subject], connectome: &Connectome, config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    let tc = &config.train;
    let n = connectome.n();
    if cohort.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 subjects, got {}",
            cohort.len()
        )));
    }
    if tc.val_size + tc.test_size >= cohort.len() {
        return Err(Error::InvalidConfig(format!(
            "val_size {} + test_size {} leaves no training subjects out of {}",
            tc.val_size,
            tc.test_size,
            cohort.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in cohort {
        s.validate(n)?;
        if !seen.insert(&s.id) {
            return Err(Error::InvalidSubject {
                id: s.id.clone(),
                reason: "duplicate subject id".into(),
            });
        }
    }

    let ops = build_operators(connectome);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.shuffle(&mut rng);
    let val = pick(cohort, &order[..tc.val_size]);
    let test = pick(cohort, &order[tc.val_size..tc.val_size + tc.test_size]);
    let train = pick(cohort, &order[tc.val_size + tc.test_size..]);

    let prior = prior_trajectory(config, &ops)?;
    let mut placements = try_align_cohort(&prior, &train)?;

    let mut model = MoeModel::new(config.model.clone(), n, &mut rng)?;
    let weights = LossWeights::from(tc);
    let mut adam = Adam::new(tc.learning_rate, &model.params);
    let frozen = |name: &str| tc.freeze_mechanistic && name.starts_with(mechanistic::PREFIX);

    let mut epochs = Vec::new();
    let mut outer = Vec::new();
    let mut best: Option<(BestSnapshot, MoeModel)> = None;
    let mut prev_val: Option<f64> = None;
    let mut calm = 0usize;
    let mut converged = false;
    let mut stop_reason = format!("reached max_outer_iters = {}", tc.max_outer_iters);

    for it in 0..tc.max_outer_iters {
        let mut first_epoch_loss = f64::NAN;
        let mut val_loss = f64::NAN;
        for epoch in 0..tc.inner_epochs {
            let (loss, mut grads, _) = loss_and_grad(&model, &ops, &train, &placements, &weights)
                .map_err(as_divergence)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at outer {it}, epoch {epoch}"
                )));
            }
            if epoch == 0 {
                first_epoch_loss = loss.total;
            }
            clip_global_norm(&mut grads, tc.grad_clip);
            adam.step(&mut model.params, &grads, frozen)?;
            if !model.params.all_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite parameters at outer {it}, epoch {epoch}"
                )));
            }
            let traj = integrate(&model, &ops).map_err(as_divergence)?;
            val_loss = if val.is_empty() {
                compute_loss(&model, &ops, &train, &placements, &weights)
                    .map_err(as_divergence)?
                    .traj
            } else {
                total_sse(&try_align_cohort(&traj, &val)?)
            };
            if !val_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite validation loss at outer {it}, epoch {epoch}"
                )));
            }
            if best.as_ref().is_none_or(|(b, _)| val_loss < b.val_loss) {
                best = Some((
                    BestSnapshot {
                        outer: it,
                        epoch,
                        val_loss,
                    },
                    model.clone(),
                ));
            }
            epochs.push(EpochRecord {
                outer: it,
                epoch,
                train: loss,
                val_loss,
            });
        }

        let traj = integrate(&model, &ops).map_err(as_divergence)?;
        placements = try_align_cohort(&traj, &train)?;
        let aligned_loss =
            compute_loss(&model, &ops, &train, &placements, &weights).map_err(as_divergence)?;
        let relative_change = prev_val.map(|p| (val_loss - p).abs() / p.abs().max(1e-12));
        log::info!(
            "outer {it}: train {:.6e} (aligned {:.6e}), val {:.6e}",
            first_epoch_loss,
            aligned_loss.total,
            val_loss
        );
        outer.push(OuterRecord {
            iter: it,
            first_epoch_loss,
            aligned_loss,
            val_loss,
            relative_change,
        });
        prev_val = Some(val_loss);
        match relative_change {
            Some(r) if r < tc.convergence_tol => calm += 1,
            _ => calm = 0,
        }
        if calm >= tc.patience {
            converged = true;
            stop_reason = format!(
                "validation loss changed by less than {} for {} consecutive iterations",
                tc.convergence_tol, tc.patience
            );
            break;
        }
    }
    if !converged {
        log::warn!("fit did not converge: {stop_reason}");
    }

    let (best_info, model) = best.expect("at least one epoch ran");
    let traj = integrate(&model, &ops).map_err(as_divergence)?;
    let train_placements = try_align_cohort(&traj, &train)?;
    let val_placements = try_align_cohort(&traj, &val)?;
    let test_placements = try_align_cohort(&traj, &test)?;

    let curve = gate_curve(&model, &traj.times)?;
    let mean_beta1 = curve.iter().map(|b| b[0]).sum::<f64>() / curve.len() as f64;
    let mech = model.mechanistic();
    let (map_placements, map_subjects) = if test.is_empty() {
        (&train_placements, &train)
    } else {
        (&test_placements, &test)
    };
    let report = FitReport {
        config_hash: config.hash(),
        seed: tc.seed,
        regions: n,
        split: Split {
            train: ids(&train),
            val: ids(&val),
            test: ids(&test),
        },
        converged,
        stop_reason,
        best: best_info,
        outer,
        epochs,
        mechanistic: MechanisticSummary {
            k: mech.k(),
            alpha: mech.alpha(),
            v: config.model.learn_v.then(|| mech.v(n)),
            mean_beta1,
        },
        train_metrics: evaluate(&traj, &train_placements, &train)?,
        val_metrics: (!val.is_empty())
            .then(|| evaluate(&traj, &val_placements, &val))
            .transpose()?,
        test_metrics: (!test.is_empty())
            .then(|| evaluate(&traj, &test_placements, &test))
            .transpose()?,
        flat_baseline_test_sse: (!test.is_empty())
            .then(|| flat_baseline_sse(&train, &test))
            .transpose()?,
        gate_curve: traj
            .times
            .iter()
            .zip(&curve)
            .map(|(&t, &beta)| GatePoint { t, beta })
            .collect(),
        error_map: regional_error_map(&traj, map_placements, map_subjects, tc.error_map_bins)?,
        placements: PlacementSets {
            train: train_placements,
            val: val_placements,
            test: test_placements,
        },
    };
    Ok(FitOutcome {
        model,
        report,
        trajectory: traj,
        rng_word_pos: rng.get_word_pos(),
    })
}
