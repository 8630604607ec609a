//! Two-component 1-D Gaussian mixture for regional positivity cutoffs.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::Subject;
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 20;
const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-8;
const VAR_FLOOR: f64 = 1e-6;
const MIN_WEIGHT: f64 = 1e-6;

/// Mixture fit for one region. The negative component has the smaller mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmCutoff {
    pub mu_neg: f64,
    pub sigma_neg: f64,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub weight_neg: f64,
    /// `mu_neg + sigma_neg`, or `mu + sigma` of a single Gaussian when the
    /// mixture collapsed.
    pub cutoff: f64,
    /// True when the fit fell back to a single Gaussian.
    pub degenerate: bool,
    pub iterations: usize,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / x.len() as f64;
    (m, v.max(VAR_FLOOR))
}

fn single(x: &[f64]) -> GmmCutoff {
    let (m, v) = mean_var(x);
    let s = v.sqrt();
    GmmCutoff {
        mu_neg: m,
        sigma_neg: s,
        mu_pos: m,
        sigma_pos: s,
        weight_neg: 1.0,
        cutoff: m + s,
        degenerate: true,
        iterations: 0,
    }
}

fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu) * (x - mu) / var + var.ln() + std::f64::consts::TAU.ln())
}

/// k-means++ seeding followed by Lloyd iterations; returns the two centres.
fn kmeans_init(x: &[f64], rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
    let first = x[rng.random_range(0..x.len())];
    let d2: Vec<f64> = x.iter().map(|a| (a - first) * (a - first)).collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.random_range(0.0..total);
    let mut second = x[x.len() - 1];
    for (a, d) in x.iter().zip(&d2) {
        if target < *d {
            second = *a;
            break;
        }
        target -= d;
    }
    let (mut c0, mut c1) = (first.min(second), first.max(second));
    for _ in 0..100 {
        let mid = 0.5 * (c0 + c1);
        let (lo, hi): (Vec<f64>, Vec<f64>) = x.iter().partition(|&&a| a <= mid);
        if lo.is_empty() || hi.is_empty() {
            return None;
        }
        let n0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let n1 = hi.iter().sum::<f64>() / hi.len() as f64;
        if n0 == c0 && n1 == c1 {
            break;
        }
        (c0, c1) = (n0, n1);
    }
    Some((c0, c1))
}

/// Fits the mixture by EM and returns `mu_neg + sigma_neg`.
///
/// Samples are sorted first, so the result does not depend on their order.
/// `seed` drives the k-means++ initialization.
pub fn fit_gmm_cutoff(values: &[f64], seed: u64) -> Result<GmmCutoff> {
    if values.len() < MIN_SAMPLES || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "mixture fit needs at least {MIN_SAMPLES} finite samples, got {}",
            values.len()
        )));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some((c0, c1)) = kmeans_init(&x, &mut rng) else {
        log::warn!("mixture fit collapsed; using single-Gaussian cutoff");
        return Ok(single(&x));
    };
    let mid = 0.5 * (c0 + c1);
    let (lo, hi): (Vec<f64>, Vec<f64>) = x.iter().partition(|&&a| a <= mid);
    let (mut mu, mut var, mut w) = {
        let (m0, v0) = mean_var(&lo);
        let (m1, v1) = mean_var(&hi);
        let w0 = lo.len() as f64 / x.len() as f64;
        ([m0, m1], [v0, v1], [w0, 1.0 - w0])
    };

    let m = x.len();
    let mut resp = vec![0.0; m];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for it in 1..=MAX_ITERS {
        iterations = it;
        let mut ll = 0.0;
        for (r, &a) in resp.iter_mut().zip(&x) {
            let l0 = w[0].ln() + log_normal_pdf(a, mu[0], var[0]);
            let l1 = w[1].ln() + log_normal_pdf(a, mu[1], var[1]);
            let top = l0.max(l1);
            let lse = top + ((l0 - top).exp() + (l1 - top).exp()).ln();
            *r = (l0 - lse).exp();
            ll += lse;
        }
        ll /= m as f64;
        let n0: f64 = resp.iter().sum();
        let n1 = m as f64 - n0;
        if n0 / (m as f64) < MIN_WEIGHT || n1 / (m as f64) < MIN_WEIGHT {
            log::warn!("mixture component collapsed; using single-Gaussian cutoff");
            return Ok(single(&x));
        }
        let s0: f64 = resp.iter().zip(&x).map(|(r, a)| r * a).sum();
        let s1: f64 = resp.iter().zip(&x).map(|(r, a)| (1.0 - r) * a).sum();
        mu = [s0 / n0, s1 / n1];
        let q0: f64 = resp
            .iter()
            .zip(&x)
            .map(|(r, a)| r * (a - mu[0]) * (a - mu[0]))
            .sum();
        let q1: f64 = resp
            .iter()
            .zip(&x)
            .map(|(r, a)| (1.0 - r) * (a - mu[1]) * (a - mu[1]))
            .sum();
        var = [(q0 / n0).max(VAR_FLOOR), (q1 / n1).max(VAR_FLOOR)];
        w = [n0 / m as f64, n1 / m as f64];
        if (ll - prev_ll).abs() < TOL {
            break;
        }
        prev_ll = ll;
    }
    let (neg, pos) = if mu[0] <= mu[1] { (0, 1) } else { (1, 0) };
    if mu[neg] == mu[pos] {
        log::warn!("mixture components coincide; using single-Gaussian cutoff");
        return Ok(single(&x));
    }
    let sigma_neg = var[neg].sqrt();
    Ok(GmmCutoff {
        mu_neg: mu[neg],
        sigma_neg,
        mu_pos: mu[pos],
        sigma_pos: var[pos].sqrt(),
        weight_neg: w[neg],
        cutoff: mu[neg] + sigma_neg,
        degenerate: false,
        iterations,
    })
}

/// One fit per region over every scan of every subject.
pub fn regional_cutoffs(cohort: &[Subject], seed: u64) -> Result<Vec<GmmCutoff>> {
    let n = cohort
        .first()
        .and_then(|s| s.obs.first())
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidConfig("empty cohort".into()))?;
    (0..n)
        .map(|u| {
            let values: Vec<f64> = cohort
                .iter()
                .flat_map(|s| s.obs.iter().map(move |r| r[u]))
                .collect();
            fit_gmm_cutoff(&values, seed)
        })
        .collect()
}

/// Number of regions above their cutoff, per scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub id: String,
    pub positive_regions: Vec<usize>,
}

pub fn positivity_summary(cohort: &[Subject], cutoffs: &[GmmCutoff]) -> Vec<Positivity> {
    cohort
        .iter()
        .map(|s| Positivity {
            id: s.id.clone(),
            positive_regions: s
                .obs
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(cutoffs)
                        .filter(|(x, c)| **x > c.cutoff)
                        .count()
                })
                .collect(),
        })
        .collect()
}

/// CSV with columns `region, mu_neg, sigma_neg, mu_pos, sigma_pos, cutoff, degenerate`.
pub fn write_cutoffs_csv(
    cutoffs: &[GmmCutoff],
    region_names: &[String],
    path: &Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "region,mu_neg,sigma_neg,mu_pos,sigma_pos,cutoff,degenerate"
    )?;
    for (c, name) in cutoffs.iter().zip(region_names) {
        writeln!(
            out,
            "{name},{},{},{},{},{},{}",
            c.mu_neg, c.sigma_neg, c.mu_pos, c.sigma_pos, c.cutoff, c.degenerate
        )?;
    }
    out.flush()?;
    Ok(())
}
