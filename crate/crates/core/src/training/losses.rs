//! Training objective and its exact gradient.
//!
//! The objective is `L_traj + λ₁·L_norm + λ₂·L_ortho`. Gradients are
//! computed discretize-then-optimize: the forward solve keeps every grid
//! state, and the backward pass replays one RK4 step per tape from the last
//! step to the first, carrying the state adjoint between steps.

use serde::{Deserialize, Serialize};

use crate::alignment::{placement_sse, Placement, Subject};
use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::linalg::Matrix;
use crate::moe::model::C0_RAW;
use crate::moe::{integrate, MoeModel, Trajectory};
use crate::training::config::{OrthoPoints, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub ortho_points: OrthoPoints,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            ortho_points: c.ortho_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub traj: f64,
    pub norm: f64,
    pub ortho: f64,
    pub total: f64,
}

/// Unweighted outputs of the three experts at one point.
pub type ExpertOutputs = [Vec<f64>; 3];

fn check_placements(placements: &[Placement], cohort: &[Subject]) -> Result<()> {
    if placements.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            found: placements.len(),
        });
    }
    for (p, s) in placements.iter().zip(cohort) {
        if p.subject_id != s.id {
            return Err(Error::InvalidSubject {
                id: s.id.clone(),
                reason: format!("placement belongs to {:?}", p.subject_id),
            });
        }
    }
    Ok(())
}

/// Squared prediction error summed over every scan of every subject.
pub fn loss_traj(traj: &Trajectory, placements: &[Placement], cohort: &[Subject]) -> Result<f64> {
    check_placements(placements, cohort)?;
    let mut total = 0.0;
    for (p, s) in placements.iter().zip(cohort) {
        total += placement_sse(traj, s, p.t0)?;
    }
    Ok(total)
}

/// Frobenius norms of the stacked graph-diffusion and local-reaction outputs.
pub fn norm_value(outputs: &[ExpertOutputs]) -> f64 {
    (1..3)
        .map(|j| {
            outputs
                .iter()
                .flat_map(|o| &o[j])
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

fn centered(outputs: &[ExpertOutputs]) -> Vec<ExpertOutputs> {
    if outputs.is_empty() {
        return Vec::new();
    }
    let n = outputs[0][0].len();
    let k = outputs.len() as f64;
    let means: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let mut m = vec![0.0; n];
            for o in outputs {
                for (a, x) in m.iter_mut().zip(&o[j]) {
                    *a += x;
                }
            }
            m.iter().map(|a| a / k).collect()
        })
        .collect();
    outputs
        .iter()
        .map(|o| std::array::from_fn(|j| o[j].iter().zip(&means[j]).map(|(x, m)| x - m).collect()))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_k Σ_{p≠q} (f̃_p(k)·f̃_q(k))²` with outputs centred over the points `k`.
pub fn ortho_value(outputs: &[ExpertOutputs]) -> f64 {
    let mut total = 0.0;
    for f in centered(outputs) {
        for p in 0..3 {
            for q in 0..3 {
                if p != q {
                    let d = dot(&f[p], &f[q]);
                    total += d * d;
                }
            }
        }
    }
    total
}

/// Gradient of [`ortho_value`] with respect to the raw outputs.
pub fn ortho_grad(outputs: &[ExpertOutputs]) -> Vec<ExpertOutputs> {
    let f = centered(outputs);
    let mut g: Vec<ExpertOutputs> = f
        .iter()
        .map(|fk| {
            std::array::from_fn(|p| {
                let mut gp = vec![0.0; fk[p].len()];
                for q in (0..3).filter(|&q| q != p) {
                    let d = 4.0 * dot(&fk[p], &fk[q]);
                    for (a, x) in gp.iter_mut().zip(&fk[q]) {
                        *a += d * x;
                    }
                }
                gp
            })
        })
        .collect();
    if g.is_empty() {
        return g;
    }
    // Centring is linear: subtract the mean gradient over points.
    let k = g.len() as f64;
    for p in 0..3 {
        let n = g[0][p].len();
        let mean: Vec<f64> = (0..n)
            .map(|u| g.iter().map(|gk| gk[p][u]).sum::<f64>() / k)
            .collect();
        for gk in &mut g {
            for (a, m) in gk[p].iter_mut().zip(&mean) {
                *a -= m;
            }
        }
    }
    g
}

/// Pseudo-times of every scan of every placed subject, in cohort order.
pub fn observation_times(placements: &[Placement], cohort: &[Subject]) -> Vec<f64> {
    placements
        .iter()
        .zip(cohort)
        .flat_map(|(p, s)| s.gaps.iter().map(move |g| p.t0 + g))
        .collect()
}

fn grid_outputs(
    model: &MoeModel,
    ops: &GraphOperators,
    traj: &Trajectory,
) -> Result<Vec<ExpertOutputs>> {
    (0..traj.len())
        .map(|i| model.eval_experts(ops, traj.state(i), traj.times[i]))
        .collect()
}

pub fn loss_norm(model: &MoeModel, ops: &GraphOperators, traj: &Trajectory) -> Result<f64> {
    Ok(norm_value(&grid_outputs(model, ops, traj)?))
}

/// Orthogonality penalty with expert outputs evaluated on the trajectory at
/// `times`.
pub fn loss_ortho(
    model: &MoeModel,
    ops: &GraphOperators,
    traj: &Trajectory,
    times: &[f64],
) -> Result<f64> {
    let outputs = times
        .iter()
        .map(|&t| model.eval_experts(ops, &traj.predict_at(t)?, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ortho_value(&outputs))
}

struct OrthoPoint {
    t: f64,
    bracket: (usize, f64),
    state: Vec<f64>,
}

struct Forward {
    traj: Trajectory,
    breakdown: LossBreakdown,
    grid: Option<Vec<ExpertOutputs>>,
    ortho_points: Vec<OrthoPoint>,
    ortho_outputs: Vec<ExpertOutputs>,
}

fn forward(
    model: &MoeModel,
    ops: &GraphOperators,
    cohort: &[Subject],
    placements: &[Placement],
    weights: &LossWeights,
) -> Result<Forward> {
    let traj = integrate(model, ops)?;
    let traj_loss = loss_traj(&traj, placements, cohort)?;
    let need_grid = weights.lambda1 > 0.0
        || (weights.lambda2 > 0.0 && weights.ortho_points == OrthoPoints::Grid);
    let grid = if need_grid {
        Some(grid_outputs(model, ops, &traj)?)
    } else {
        None
    };
    // Reported even when unweighted, so runs with different weights compare.
    let norm = match &grid {
        Some(g) => norm_value(g),
        None => loss_norm(model, ops, &traj)?,
    };
    let mut ortho_points = Vec::new();
    let mut ortho_outputs = Vec::new();
    let mut ortho = 0.0;
    if weights.lambda2 > 0.0 {
        match weights.ortho_points {
            OrthoPoints::Grid => ortho = ortho_value(grid.as_ref().expect("grid outputs computed")),
            OrthoPoints::Observations => {
                for t in observation_times(placements, cohort) {
                    let state = traj.predict_at(t)?;
                    ortho_outputs.push(model.eval_experts(ops, &state, t)?);
                    ortho_points.push(OrthoPoint {
                        t,
                        bracket: traj.locate(t)?,
                        state,
                    });
                }
                ortho = ortho_value(&ortho_outputs);
            }
        }
    }
    let total = traj_loss + weights.lambda1 * norm + weights.lambda2 * ortho;
    Ok(Forward {
        traj,
        breakdown: LossBreakdown {
            traj: traj_loss,
            norm,
            ortho,
            total,
        },
        grid,
        ortho_points,
        ortho_outputs,
    })
}

/// Objective value for the model's current trajectory.
pub fn compute_loss(
    model: &MoeModel,
    ops: &GraphOperators,
    cohort: &[Subject],
    placements: &[Placement],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(forward(model, ops, cohort, placements, weights)?.breakdown)
}

/// Back-propagates seeds on the unweighted expert outputs at `(c, t)` into
/// `grads`; returns the adjoint of `c`.
fn backprop_experts(
    model: &MoeModel,
    ops: &GraphOperators,
    c: &[f64],
    t: f64,
    seeds: &[Option<Vec<f64>>; 3],
    grads: &mut ParamStore,
) -> Result<Option<Vec<f64>>> {
    let mut tape = Tape::new();
    let cv = tape.input(Matrix::column(c))?;
    let experts = model.experts_on_tape(&mut tape, ops, cv, t)?;
    let seed_mats: Vec<_> = experts
        .iter()
        .zip(seeds)
        .filter_map(|(v, s)| match (v, s) {
            (Some(v), Some(s)) if s.iter().any(|&x| x != 0.0) => Some((*v, Matrix::column(s))),
            _ => None,
        })
        .collect();
    if seed_mats.is_empty() {
        return Ok(None);
    }
    let refs: Vec<_> = seed_mats.iter().map(|(v, m)| (*v, m)).collect();
    let adj = tape.backward(&refs, grads)?;
    Ok(adj.wrt(cv).map(|m| m.as_slice().to_vec()))
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Objective value, its gradient with respect to every model parameter, and
/// the trajectory it was evaluated on.
pub fn loss_and_grad(
    model: &MoeModel,
    ops: &GraphOperators,
    cohort: &[Subject],
    placements: &[Placement],
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamStore, Trajectory)> {
    let fwd = forward(model, ops, cohort, placements, weights)?;
    let traj = &fwd.traj;
    let n = model.n();
    let mut grads = model.params.zeros_like();
    let mut adj: Vec<Vec<f64>> = vec![vec![0.0; n]; traj.len()];

    for (p, s) in placements.iter().zip(cohort) {
        for (gap, obs) in s.gaps.iter().zip(&s.obs) {
            let t = p.t0 + gap;
            let (i, w) = traj.locate(t)?;
            let pred = traj.predict_at(t)?;
            for u in 0..n {
                let r2 = 2.0 * (pred[u] - obs[u]);
                adj[i][u] += r2 * (1.0 - w);
                adj[i + 1][u] += r2 * w;
            }
        }
    }

    if let Some(grid) = &fwd.grid {
        let norms: [f64; 3] = std::array::from_fn(|j| {
            grid.iter()
                .flat_map(|o| &o[j])
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        });
        let ortho_g = (weights.lambda2 > 0.0 && weights.ortho_points == OrthoPoints::Grid)
            .then(|| ortho_grad(grid));
        for (i, out) in grid.iter().enumerate() {
            let seeds: [Option<Vec<f64>>; 3] = std::array::from_fn(|j| {
                let mut s = vec![0.0; n];
                if j > 0 && weights.lambda1 > 0.0 && norms[j] > 0.0 {
                    add_into(&mut s, &out[j], weights.lambda1 / norms[j]);
                }
                if let Some(g) = &ortho_g {
                    add_into(&mut s, &g[i][j], weights.lambda2);
                }
                Some(s)
            });
            if let Some(a) =
                backprop_experts(model, ops, traj.state(i), traj.times[i], &seeds, &mut grads)?
            {
                add_into(&mut adj[i], &a, 1.0);
            }
        }
    }

    if !fwd.ortho_points.is_empty() {
        let g = ortho_grad(&fwd.ortho_outputs);
        for (pt, gk) in fwd.ortho_points.iter().zip(&g) {
            let seeds: [Option<Vec<f64>>; 3] =
                std::array::from_fn(|j| Some(scaled(&gk[j], weights.lambda2)));
            if let Some(a) = backprop_experts(model, ops, &pt.state, pt.t, &seeds, &mut grads)? {
                let (i, w) = pt.bracket;
                add_into(&mut adj[i], &a, 1.0 - w);
                add_into(&mut adj[i + 1], &a, w);
            }
        }
    }

    let h = model.step_size();
    for i in (0..traj.len() - 1).rev() {
        if adj[i + 1].iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut tape = Tape::new();
        let cv = tape.input(Matrix::column(traj.state(i)))?;
        let next = model.rk4_step_on_tape(&mut tape, ops, cv, traj.times[i], h)?;
        let seed = Matrix::column(&adj[i + 1]);
        let back = tape.backward(&[(next, &seed)], &mut grads)?;
        if let Some(a) = back.wrt(cv) {
            let a = a.as_slice().to_vec();
            add_into(&mut adj[i], &a, 1.0);
        }
    }

    let c0 = model.c0();
    let d_raw: Vec<f64> = adj[0]
        .iter()
        .zip(&c0)
        .map(|(a, c)| a * c * (1.0 - c))
        .collect();
    grads.accumulate(C0_RAW, &Matrix::column(&d_raw))?;
    Ok((fwd.breakdown, grads, fwd.traj))
}
