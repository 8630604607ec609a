mod common;

use common::worst_gradient_error;
use stagemoe::moe::GateMode;
use stagemoe::training::{LossWeights, OrthoPoints};

fn check(mode: GateMode, weights: LossWeights, seed: u64) {
    let (count, worst) = worst_gradient_error(mode, &weights, seed);
    eprintln!("{mode:?}: {count} params, worst rel {worst:e}");
    assert!(worst <= 1e-4, "{mode:?}: worst relative error {worst:e}");
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let w = LossWeights {
        lambda1: 0.3,
        lambda2: 0.7,
        ortho_points: OrthoPoints::Observations,
    };
    check(GateMode::Temporal, w, 1);
}

#[test]
fn grid_ortho_points_gradient() {
    let w = LossWeights {
        lambda1: 0.1,
        lambda2: 0.5,
        ortho_points: OrthoPoints::Grid,
    };
    check(GateMode::Constant, w, 2);
}

#[test]
fn mechanistic_only_gradient() {
    let w = LossWeights {
        lambda1: 0.1,
        lambda2: 0.1,
        ortho_points: OrthoPoints::Observations,
    };
    check(GateMode::Mechanistic, w, 3);
}
