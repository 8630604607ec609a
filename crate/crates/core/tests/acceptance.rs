//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p stagemoe --test acceptance -- 1 2 9`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stagemoe::alignment::{align_subject, placement_sse, shifted_mean_abs_error};
use stagemoe::cohort::{
    fit_gmm_cutoff, generate_synthetic, Preset, SyntheticCohort, SyntheticSpec,
};
use stagemoe::graph::{build_operators, Connectome};
use stagemoe::linalg::{logit, Matrix};
use stagemoe::mechanistic::V_RAW;
use stagemoe::moe::{integrate, rk4, GateConfig, GateMode, ModelConfig, MoeModel};
use stagemoe::training::{fit, FitConfig, FitOutcome, LossWeights, OrthoPoints};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "operator correctness",
            budget: Duration::from_secs(1),
            run: operators,
        },
        Criterion {
            id: 2,
            name: "integrator order",
            budget: Duration::from_secs(1),
            run: integrator_order,
        },
        Criterion {
            id: 3,
            name: "gradient fidelity",
            budget: Duration::from_secs(30),
            run: gradient_fidelity,
        },
        Criterion {
            id: 4,
            name: "conservation and bounds",
            budget: Duration::from_secs(5),
            run: conservation,
        },
        Criterion {
            id: 5,
            name: "alignment recovery",
            budget: Duration::from_secs(60),
            run: alignment_recovery,
        },
        Criterion {
            id: 6,
            name: "mechanistic parameter recovery",
            budget: Duration::from_secs(600),
            run: mechanistic_recovery,
        },
        Criterion {
            id: 7,
            name: "stage-regime recovery",
            budget: Duration::from_secs(1200),
            run: stage_regime,
        },
        Criterion {
            id: 8,
            name: "ablation direction",
            budget: Duration::from_secs(1200),
            run: ablation,
        },
        Criterion {
            id: 9,
            name: "GMM cutoff",
            budget: Duration::from_secs(5),
            run: gmm_cutoff,
        },
        Criterion {
            id: 10,
            name: "determinism",
            budget: Duration::from_secs(600),
            run: determinism,
        },
    ];
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| wanted.is_empty() || wanted.contains(&c.id))
    {
        let start = Instant::now();
        let v = (c.run)();
        let took = start.elapsed();
        let in_time = took <= c.budget;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let timing = if in_time {
            String::new()
        } else {
            format!(" over budget {:?}", c.budget)
        };
        println!(
            "{} [{:>2}] {}: {} ({:.2?}{timing})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            v.detail,
            took
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn random_connectome(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Connectome {
    let mut adj = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(density) {
                let w = rng.random_range(0.01..3.0);
                adj[u][v] = w;
                adj[v][u] = w;
            }
        }
    }
    Connectome::from_adjacency(Matrix::from_rows(&adj).unwrap()).unwrap()
}

fn operators() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut row_sum, mut min_eig, mut factor) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let density = rng.random_range(0.1..1.0);
        let ops = build_operators(&random_connectome(&mut rng, n, density));
        let l = &ops.laplacian;
        for u in 0..n {
            row_sum = row_sum.max(l.row(u).iter().sum::<f64>().abs());
        }
        let lm = DMatrix::from_row_slice(n, n, l.as_slice());
        min_eig = min_eig.min(lm.symmetric_eigenvalues().min());
        let k = &ops.incidence;
        let mut kw = k.clone();
        for u in 0..n {
            for (e, w) in ops.edge_weights.iter().enumerate() {
                kw[(u, e)] *= w;
            }
        }
        factor = factor.max(kw.matmul_nt(k).max_abs_diff(l));
    }
    verdict(
        row_sum <= 1e-12 && min_eig >= -1e-10 && factor <= 1e-12,
        format!("max |row sum| {row_sum:.1e}, min eigenvalue {min_eig:.1e}, max |KWKᵀ − L| {factor:.1e}"),
    )
}

fn decay_error(h: f64) -> f64 {
    let traj = rk4(
        &|c: &[f64], _t: f64| c.iter().map(|x| -x).collect::<Vec<f64>>(),
        &[1.0],
        1.0,
        h,
    )
    .unwrap();
    traj.times
        .iter()
        .enumerate()
        .map(|(i, t)| (traj.state(i)[0] - (-t).exp()).abs())
        .fold(0.0, f64::max)
}

fn integrator_order() -> Verdict {
    let errors: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&h| decay_error(h))
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let fine = decay_error(0.01);
    let ok = ratios.iter().all(|r| (12.0..=20.0).contains(r)) && fine <= 1e-9;
    verdict(
        ok,
        format!("halving ratios {ratios:.2?}, error at h=0.01 {fine:.1e}"),
    )
}

fn gradient_fidelity() -> Verdict {
    let cases = [
        (GateMode::Temporal, OrthoPoints::Observations, 1),
        (GateMode::Constant, OrthoPoints::Grid, 2),
        (GateMode::Mechanistic, OrthoPoints::Observations, 3),
    ];
    let mut worst = 0.0f64;
    let mut params = 0;
    for (mode, ortho_points, seed) in cases {
        let weights = LossWeights {
            lambda1: 0.3,
            lambda2: 0.7,
            ortho_points,
        };
        let (count, w) = common::worst_gradient_error(mode, &weights, seed);
        worst = worst.max(w);
        params += count;
    }
    verdict(
        worst <= 1e-4,
        format!("{params} parameters over 3 gate modes, worst relative error {worst:.1e}"),
    )
}

fn mechanistic_model(n: usize, k: f64, alpha: f64, learn_v: bool, step: f64) -> MoeModel {
    let config = ModelConfig {
        time_horizon: 12.0,
        step,
        gate: GateConfig {
            mode: GateMode::Mechanistic,
            ..GateConfig::default()
        },
        learn_v,
        ..ModelConfig::default()
    };
    let mut model = MoeModel::new(config, n, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    model.set_mechanistic(k, alpha);
    model
}

fn conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let g = random_connectome(&mut rng, 10, 0.4);
    let ops = build_operators(&g);
    let mut model = mechanistic_model(10, 0.7, 0.0, false, 0.1);
    let c0: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..0.99)).collect();
    model.set_c0(&c0).unwrap();
    let traj = integrate(&model, &ops).unwrap();
    let mass0: f64 = traj.state(0).iter().sum();
    let drift = (0..traj.len())
        .map(|i| (traj.state(i).iter().sum::<f64>() - mass0).abs())
        .fold(0.0, f64::max);

    let mut escape = 0.0f64;
    for trial in 0..5 {
        let g = random_connectome(&mut rng, 8, 0.5);
        let ops = build_operators(&g);
        let mut model = mechanistic_model(8, 0.0, rng.random_range(0.5..3.0), true, 0.1);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.3..0.99)).collect();
        model.params.insert(
            V_RAW,
            Matrix::column(&v.iter().map(|&x| logit(x)).collect::<Vec<_>>()),
        );
        let c0: Vec<f64> = v
            .iter()
            .map(|&x| {
                if trial % 2 == 0 {
                    rng.random_range(0.01..x)
                } else {
                    x * 0.999
                }
            })
            .collect();
        model.set_c0(&c0).unwrap();
        let traj = integrate(&model, &ops).unwrap();
        for i in 0..traj.len() {
            for (c, vu) in traj.state(i).iter().zip(&v) {
                escape = escape.max(-c).max(c - vu);
            }
        }
    }

    // RK4 truncation at h = 0.1 is about 5e-8 here, so the closed-form check
    // runs at h = 0.05.
    let ops = build_operators(&Connectome::ring(4).unwrap());
    let mut model = mechanistic_model(4, 0.0, 1.0, false, 0.05);
    model.set_c0(&[0.5; 4]).unwrap();
    let traj = integrate(&model, &ops).unwrap();
    let closed = traj
        .times
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            traj.state(i)
                .iter()
                .map(move |c| (c - 1.0 / (1.0 + (-t).exp())).abs())
        })
        .fold(0.0, f64::max);

    verdict(
        drift <= 1e-6 && escape <= 1e-6 && closed <= 1e-8,
        format!("mass drift {drift:.1e}, bound excursion {escape:.1e}, closed-form error {closed:.1e} (h=0.05)"),
    )
}

fn alignment_recovery() -> Verdict {
    // With the generator's default logistic rate every region is within 1e-3
    // of saturation by t = 8, where placements are unidentifiable. A slower
    // rate keeps the whole window informative.
    let base = SyntheticSpec {
        alpha: 0.5,
        ..SyntheticSpec::default()
    };
    let spec = SyntheticSpec {
        noise: 0.0,
        ..base.clone()
    };
    let clean = generate_synthetic(&spec, 21).unwrap();
    let mut missed = 0;
    let mut ties = 0;
    let mut worst = 0.0f64;
    for (s, truth) in clean.subjects.iter().zip(&clean.truth.placements) {
        let p = align_subject(&clean.trajectory, s).unwrap();
        let err = (p.t0 - truth.t0).abs();
        if err <= 1e-3 {
            worst = worst.max(err);
        } else if p.sse <= placement_sse(&clean.trajectory, s, truth.t0).unwrap() + 1e-12 {
            // The found start fits as well as the true one: a flat stretch of
            // the trajectory, not an alignment failure.
            ties += 1;
        } else {
            missed += 1;
        }
    }

    let spec = SyntheticSpec {
        noise: 0.02,
        ..base
    };
    let noisy = generate_synthetic(&spec, 22).unwrap();
    let est: Vec<f64> = noisy
        .subjects
        .iter()
        .map(|s| align_subject(&noisy.trajectory, s).unwrap().t0)
        .collect();
    let truth: Vec<f64> = noisy.truth.placements.iter().map(|p| p.t0).collect();
    let mae = shifted_mean_abs_error(&est, &truth);
    let bound = 2.0 * spec.step;

    verdict(
        missed == 0 && mae <= bound,
        format!(
            "noiseless: worst error {worst:.1e}, {missed} misses, {ties} ties of {}; σ=0.02: mean |Δt0| {mae:.3} (bound {bound})",
            clean.subjects.len()
        ),
    )
}

fn fit_config(lr: f64, outer: usize, mode: GateMode) -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.model.gate.mode = mode;
    cfg.train.learning_rate = lr;
    cfg.train.inner_epochs = 10;
    cfg.train.max_outer_iters = outer;
    cfg.train.val_size = 10;
    cfg.train.test_size = 10;
    cfg
}

fn run_fit(cohort: &SyntheticCohort, cfg: &FitConfig) -> FitOutcome {
    fit(&cohort.subjects, &cohort.connectome, cfg).unwrap()
}

fn mechanistic_recovery() -> Verdict {
    let spec = SyntheticSpec {
        preset: Preset::Mechanistic,
        noise: 0.01,
        ..SyntheticSpec::default()
    };
    let cohort = generate_synthetic(&spec, 1).unwrap();
    let out = run_fit(&cohort, &fit_config(3e-2, 60, GateMode::Temporal));
    let m = &out.report.mechanistic;
    let (k_true, a_true) = (cohort.truth.k, cohort.truth.alpha);
    // A common time scale s multiplies both rates; choose it to balance the
    // log errors.
    let s = ((k_true / m.k).ln() * 0.5 + (a_true / m.alpha).ln() * 0.5).exp();
    let k_err = (s * m.k - k_true).abs() / k_true;
    let a_err = (s * m.alpha - a_true).abs() / a_true;
    verdict(
        k_err <= 0.15 && a_err <= 0.15 && m.mean_beta1 >= 0.6,
        format!(
            "k̂={:.3}, α̂={:.3}, time scale {s:.3}: k error {:.1}%, α error {:.1}%, mean β₁ {:.3}",
            m.k,
            m.alpha,
            100.0 * k_err,
            100.0 * a_err,
            m.mean_beta1
        ),
    )
}

const REGIME_SEEDS: [u64; 3] = [1, 2, 3];

fn two_regime_cohort(seed: u64) -> SyntheticCohort {
    let spec = SyntheticSpec {
        preset: Preset::TwoRegime,
        noise: 0.01,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

fn two_regime_fit(cohort: &SyntheticCohort, mode: GateMode) -> FitOutcome {
    run_fit(cohort, &fit_config(1e-2, 60, mode))
}

fn graph_weight_margin(out: &FitOutcome, horizon: f64) -> f64 {
    let mid = 0.5 * horizon;
    let mean = |early: bool| {
        let pts: Vec<f64> = out
            .report
            .gate_curve
            .iter()
            .filter(|p| if early { p.t < mid } else { p.t > mid })
            .map(|p| p.beta[0] + p.beta[1])
            .collect();
        pts.iter().sum::<f64>() / pts.len() as f64
    };
    mean(true) - mean(false)
}

fn stage_regime() -> Verdict {
    let margins: Vec<f64> = REGIME_SEEDS
        .iter()
        .map(|&seed| {
            let cohort = two_regime_cohort(seed);
            let out = two_regime_fit(&cohort, GateMode::Temporal);
            graph_weight_margin(&out, cohort.truth.spec.time_horizon)
        })
        .collect();
    let wins = margins.iter().filter(|m| **m >= 0.1).count();
    verdict(
        wins >= 2,
        format!("early−late β₁+β₂ margins {margins:.3?}, {wins}/3 ≥ 0.1"),
    )
}

fn ablation() -> Verdict {
    let pairs: Vec<(f64, f64)> = REGIME_SEEDS
        .iter()
        .map(|&seed| {
            let cohort = two_regime_cohort(seed);
            let sse = |mode| {
                two_regime_fit(&cohort, mode)
                    .report
                    .test_metrics
                    .expect("test split is non-empty")
                    .sse
            };
            (sse(GateMode::Temporal), sse(GateMode::Constant))
        })
        .collect();
    let wins = pairs.iter().filter(|(t, c)| t <= c).count();
    verdict(
        wins >= 2,
        format!("held-out SSE (temporal, constant) {pairs:.4?}, {wins}/3 temporal ≤ constant"),
    )
}

fn gmm_cutoff() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let neg = Normal::new(0.2, 0.05).unwrap();
    let pos = Normal::new(0.7, 0.1).unwrap();
    let x: Vec<f64> = (0..5000)
        .map(|_| {
            if rng.random_bool(0.6) {
                neg.sample(&mut rng)
            } else {
                pos.sample(&mut rng)
            }
        })
        .collect();
    let fit = fit_gmm_cutoff(&x, 0).unwrap();
    verdict(
        (0.23..=0.27).contains(&fit.cutoff) && !fit.degenerate,
        format!(
            "cutoff {:.4} (μ₋={:.4}, σ₋={:.4})",
            fit.cutoff, fit.mu_neg, fit.sigma_neg
        ),
    )
}

fn determinism() -> Verdict {
    let spec = SyntheticSpec {
        preset: Preset::Mechanistic,
        noise: 0.01,
        ..SyntheticSpec::default()
    };
    let cohort = generate_synthetic(&spec, 5).unwrap();
    let cfg = fit_config(1e-2, 4, GateMode::Temporal);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let report =
        || pool.install(|| serde_json::to_vec_pretty(&run_fit(&cohort, &cfg).report).unwrap());
    let (a, b) = (report(), report());
    verdict(
        a == b,
        format!(
            "two reports of {} bytes {}",
            a.len(),
            if a == b { "identical" } else { "differ" }
        ),
    )
}
