//! Prediction error summaries for placed subjects.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{Placement, Subject};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::moe::Trajectory;
use crate::table::Table;

/// Sum of squared differences over all entries.
pub fn sse(pred: &Matrix, obs: &Matrix) -> Result<f64> {
    if pred.shape() != obs.shape() {
        return Err(Error::ShapeMismatch {
            op: "sse",
            lhs: pred.shape(),
            rhs: obs.shape(),
        });
    }
    Ok(pred
        .as_slice()
        .iter()
        .zip(obs.as_slice())
        .map(|(p, o)| (p - o) * (p - o))
        .sum())
}

/// Pearson correlation of two equal-length vectors; `None` if either has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonSummary {
    /// Mean over observations with nonzero variance; `None` if there are none.
    pub mean: Option<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Per-row correlation across regions, averaged over rows.
pub fn mean_pearson(pred: &Matrix, obs: &Matrix) -> Result<PearsonSummary> {
    if pred.shape() != obs.shape() {
        return Err(Error::ShapeMismatch {
            op: "mean_pearson",
            lhs: pred.shape(),
            rhs: obs.shape(),
        });
    }
    let (mut total, mut used, mut skipped) = (0.0, 0, 0);
    for i in 0..pred.rows() {
        match pearson(pred.row(i), obs.row(i)) {
            Some(r) => {
                total += r;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(PearsonSummary {
        mean: (used > 0).then(|| total / used as f64),
        used,
        skipped,
    })
}

/// Predicted and observed matrices for every placed scan, plus the scan's
/// pseudo-time. Rows follow the cohort order, then scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObservations {
    pub times: Vec<f64>,
    pub pred: Matrix,
    pub obs: Matrix,
}

pub fn placed_observations(
    traj: &Trajectory,
    placements: &[Placement],
    cohort: &[Subject],
) -> Result<PlacedObservations> {
    if placements.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            found: placements.len(),
        });
    }
    let n = traj.n();
    let (mut times, mut pred, mut obs) = (Vec::new(), Vec::new(), Vec::new());
    for (p, s) in placements.iter().zip(cohort) {
        if p.subject_id != s.id {
            return Err(Error::InvalidSubject {
                id: s.id.clone(),
                reason: format!("placement belongs to {:?}", p.subject_id),
            });
        }
        for (gap, row) in s.gaps.iter().zip(&s.obs) {
            let t = p.t0 + gap;
            times.push(t);
            pred.extend(traj.predict_at(t)?);
            obs.extend_from_slice(row);
        }
    }
    let rows = times.len();
    Ok(PlacedObservations {
        times,
        pred: Matrix::from_vec(rows, n, pred)?,
        obs: Matrix::from_vec(rows, n, obs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sse: f64,
    pub mean_pearson: Option<f64>,
    pub pearson_skipped: usize,
    pub observations: usize,
}

pub fn evaluate(
    traj: &Trajectory,
    placements: &[Placement],
    cohort: &[Subject],
) -> Result<Evaluation> {
    let placed = placed_observations(traj, placements, cohort)?;
    let r = mean_pearson(&placed.pred, &placed.obs)?;
    Ok(Evaluation {
        sse: sse(&placed.pred, &placed.obs)?,
        mean_pearson: r.mean,
        pearson_skipped: r.skipped,
        observations: placed.times.len(),
    })
}

/// Per-region mean squared residuals grouped by pseudo-time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    pub bins: Vec<(f64, f64)>,
    /// `None` for bins without observations.
    pub mse: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl ErrorMap {
    /// CSV with columns `bin_lo, bin_hi, region, mse, count`; empty bins leave
    /// `mse` blank.
    pub fn write_csv(&self, path: &Path, region_names: &[String]) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "bin_lo,bin_hi,region,mse,count")?;
        for ((&(lo, hi), mse), count) in self.bins.iter().zip(&self.mse).zip(&self.counts) {
            for (u, name) in region_names.iter().enumerate() {
                match mse {
                    Some(v) => writeln!(out, "{lo},{hi},{name},{},{count}", v[u])?,
                    None => writeln!(out, "{lo},{hi},{name},,{count}")?,
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads what [`ErrorMap::write_csv`] wrote, returning the region names.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<String>)> {
        let table = Table::read(path)?;
        table.expect_columns(&["bin_lo", "bin_hi", "region", "mse", "count"])?;
        let mut names: Vec<String> = Vec::new();
        for (_, f) in &table.rows {
            if names.contains(&f[2]) {
                break;
            }
            names.push(f[2].clone());
        }
        let n = names.len();
        if n == 0 || table.rows.len() % n != 0 {
            return Err(table.error_at(1, "rows do not form whole bins"));
        }
        let mut map = ErrorMap {
            bins: Vec::new(),
            mse: Vec::new(),
            counts: Vec::new(),
        };
        for chunk in table.rows.chunks(n) {
            let (line, first) = &chunk[0];
            let lo = table.number(*line, &first[0])?;
            let hi = table.number(*line, &first[1])?;
            let count: usize = first[4]
                .parse()
                .map_err(|_| table.error_at(*line, format!("bad count {:?}", first[4])))?;
            let empty = first[3].is_empty();
            let mut values = Vec::with_capacity(n);
            for ((line, f), name) in chunk.iter().zip(&names) {
                if &f[2] != name
                    || f[0] != first[0]
                    || f[1] != first[1]
                    || f[4] != first[4]
                    || f[3].is_empty() != empty
                {
                    return Err(table.error_at(*line, "inconsistent bin rows"));
                }
                if !empty {
                    values.push(table.number(*line, &f[3])?);
                }
            }
            map.bins.push((lo, hi));
            map.mse.push((!empty).then_some(values));
            map.counts.push(count);
        }
        Ok((map, names))
    }
}

pub fn regional_error_map(
    traj: &Trajectory,
    placements: &[Placement],
    cohort: &[Subject],
    bins: usize,
) -> Result<ErrorMap> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "error map needs at least one bin".into(),
        ));
    }
    let placed = placed_observations(traj, placements, cohort)?;
    let horizon = traj.horizon();
    let n = traj.n();
    let width = horizon / bins as f64;
    let mut sums = vec![vec![0.0; n]; bins];
    let mut counts = vec![0usize; bins];
    for (i, &t) in placed.times.iter().enumerate() {
        let b = ((t / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
        for u in 0..n {
            let r = placed.pred[(i, u)] - placed.obs[(i, u)];
            sums[b][u] += r * r;
        }
    }
    let mse = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|x| x / c as f64).collect()))
        .collect();
    let bins = (0..bins)
        .map(|b| {
            let hi = if b + 1 == bins {
                horizon
            } else {
                (b + 1) as f64 * width
            };
            (b as f64 * width, hi)
        })
        .collect();
    Ok(ErrorMap { bins, mse, counts })
}

/// SSE of predicting every held-out scan by the per-region mean of the
/// reference scans, ignoring time.
pub fn flat_baseline_sse(reference: &[Subject], held_out: &[Subject]) -> Result<f64> {
    let rows: Vec<&Vec<f64>> = reference.iter().flat_map(|s| &s.obs).collect();
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty reference cohort".into()))?;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for r in &rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    let mut total = 0.0;
    for s in held_out {
        for r in &s.obs {
            total += r
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>();
        }
    }
    Ok(total)
}
