#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagemoe::alignment::{Placement, Subject};
use stagemoe::graph::{build_operators, Connectome, GraphOperators};
use stagemoe::ignd::IgndConfig;
use stagemoe::local::LocalExpertConfig;
use stagemoe::moe::{GateMode, ModelConfig, MoeModel};
use stagemoe::training::{compute_loss, loss_and_grad, LossWeights};

pub fn setup(
    mode: GateMode,
    seed: u64,
) -> (MoeModel, GraphOperators, Vec<Subject>, Vec<Placement>) {
    let n = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(0.6) || v == u + 1 {
                let w = rng.random_range(0.2..1.0);
                adj[u][v] = w;
                adj[v][u] = w;
            }
        }
    }
    let g = Connectome::from_adjacency(stagemoe::linalg::Matrix::from_rows(&adj).unwrap()).unwrap();
    let ops = build_operators(&g);
    let cfg = ModelConfig {
        time_horizon: 5.0,
        step: 0.1,
        ignd: IgndConfig {
            latent_dim: 2,
            encoder_layers: vec![4],
            prop_hidden: 4,
            message_dim: 3,
            readout_hidden: 4,
            ..IgndConfig::default()
        },
        local: LocalExpertConfig {
            hidden_widths: vec![5, 4],
            time_input: true,
            ..LocalExpertConfig::default()
        },
        gate: stagemoe::moe::GateConfig {
            mode,
            hidden: 6,
            ..Default::default()
        },
        learn_v: true,
        ..ModelConfig::default()
    };
    let mut model = MoeModel::new(cfg, n, &mut rng).unwrap();
    for (name, m) in model.params.iter_mut() {
        let scale = if name.starts_with("mech.") || name == "c0_raw" {
            0.2
        } else {
            0.4
        };
        for v in m.as_mut_slice() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
    let mut cohort = Vec::new();
    let mut placements = Vec::new();
    for i in 0..6 {
        let scans = 1 + i % 3;
        let gaps: Vec<f64> = (0..scans).map(|s| s as f64 * 0.73).collect();
        let obs = (0..scans)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let t0 = rng.random_range(0.0..(5.0 - gaps[scans - 1]));
        cohort.push(Subject {
            id: format!("s{i}"),
            gaps,
            obs,
        });
        placements.push(Placement {
            subject_id: format!("s{i}"),
            t0,
            sse: 0.0,
        });
    }
    (model, ops, cohort, placements)
}

/// Worst relative error between the analytic gradient and central
/// differences over every parameter, with the parameter count.
pub fn worst_gradient_error(mode: GateMode, weights: &LossWeights, seed: u64) -> (usize, f64) {
    let (model, ops, cohort, placements) = setup(mode, seed);
    let (loss, grads, _) = loss_and_grad(&model, &ops, &cohort, &placements, weights).unwrap();
    assert!(loss.total.is_finite());
    let base = model.params.flatten();
    let analytic = grads.flatten();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let eval = |x: f64| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] = x;
            m.params.unflatten(&p).unwrap();
            compute_loss(&m, &ops, &cohort, &placements, weights)
                .unwrap()
                .total
        };
        let fd = (eval(base[i] + h) - eval(base[i] - h)) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (base.len(), worst)
}
