//! Placement of each subject's baseline scan on the shared disease-time axis.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::Trajectory;
use crate::table::Table;

/// Longitudinal scans of one subject. `gaps[s]` is the time from baseline to
/// scan `s`; `obs[s]` holds the regional values of that scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub gaps: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
}

impl Subject {
    pub fn scans(&self) -> usize {
        self.gaps.len()
    }

    pub fn span(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidSubject {
            id: self.id.clone(),
            reason,
        };
        if self.gaps.is_empty() {
            return Err(bad("no scans".into()));
        }
        if self.gaps[0] != 0.0 {
            return Err(bad(format!("first gap must be 0, got {}", self.gaps[0])));
        }
        if self.gaps.windows(2).any(|w| !(w[1] > w[0])) || self.gaps.iter().any(|g| !g.is_finite())
        {
            return Err(bad("gaps must be finite and strictly increasing".into()));
        }
        if self.obs.len() != self.gaps.len() {
            return Err(bad(format!(
                "{} gaps but {} scans",
                self.gaps.len(),
                self.obs.len()
            )));
        }
        for (s, row) in self.obs.iter().enumerate() {
            if row.len() != n {
                return Err(bad(format!(
                    "scan {s} has {} regions, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(bad(format!("scan {s} has values outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub subject_id: String,
    pub t0: f64,
    pub sse: f64,
}

/// Squared error of `subject` placed with baseline at `t0`.
pub fn placement_sse(traj: &Trajectory, subject: &Subject, t0: f64) -> Result<f64> {
    let mut sse = 0.0;
    for (gap, obs) in subject.gaps.iter().zip(&subject.obs) {
        let pred = traj.predict_at(t0 + gap)?;
        sse += pred
            .iter()
            .zip(obs)
            .map(|(p, o)| (o - p) * (o - p))
            .sum::<f64>();
    }
    Ok(sse)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;
const REFINE_TOL: f64 = 1e-4;

/// Minimizes the placement error by a scan at half the trajectory step over
/// `[0, T − span]` followed by golden-section refinement around the best scan
/// point. Ties resolve to the smallest `t0`.
pub fn align_subject(traj: &Trajectory, subject: &Subject) -> Result<Placement> {
    subject.validate(traj.n())?;
    let horizon = traj.horizon();
    let span = subject.span();
    if span > horizon {
        return Err(Error::InfeasibleWindow {
            subject: subject.id.clone(),
            span,
            horizon,
        });
    }
    let hi = horizon - span;
    let res = 0.5 * traj.step();
    let points = (hi / res + 1e-9).floor() as usize;
    let mut candidates: Vec<f64> = (0..=points).map(|k| k as f64 * res).collect();
    if hi - candidates[points] > 1e-12 {
        candidates.push(hi);
    }

    let mut best_t0 = 0.0;
    let mut best_sse = f64::INFINITY;
    for &t0 in &candidates {
        let sse = placement_sse(traj, subject, t0)?;
        if sse < best_sse {
            best_sse = sse;
            best_t0 = t0;
        }
    }

    let lo = (best_t0 - res).max(0.0);
    let up = (best_t0 + res).min(hi);
    if up - lo > REFINE_TOL {
        let (t, sse) = golden_section(lo, up, |t0| placement_sse(traj, subject, t0))?;
        if sse < best_sse {
            best_sse = sse;
            best_t0 = t;
        }
    }
    Ok(Placement {
        subject_id: subject.id.clone(),
        t0: best_t0,
        sse: best_sse,
    })
}

fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > REFINE_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, f(t)?))
}

/// Aligns every subject independently. Results keep the input order; one
/// subject's failure does not affect the others.
pub fn align_cohort(traj: &Trajectory, cohort: &[Subject]) -> Vec<Result<Placement>> {
    cohort.par_iter().map(|s| align_subject(traj, s)).collect()
}

/// Like [`align_cohort`] but fails on the first subject error.
pub fn try_align_cohort(traj: &Trajectory, cohort: &[Subject]) -> Result<Vec<Placement>> {
    align_cohort(traj, cohort).into_iter().collect()
}

/// CSV with columns `id, t0, sse`.
pub fn write_placements_csv(placements: &[Placement], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "id,t0,sse")?;
    for p in placements {
        writeln!(out, "{},{},{}", p.subject_id, p.t0, p.sse)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_placements_csv(path: &Path) -> Result<Vec<Placement>> {
    let table = Table::read(path)?;
    table.expect_columns(&["id", "t0", "sse"])?;
    table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok(Placement {
                subject_id: f[0].clone(),
                t0: table.number(*line, &f[1])?,
                sse: table.number(*line, &f[2])?,
            })
        })
        .collect()
}

/// Mean absolute placement error after removing the best constant offset.
/// The median of the differences is the L1-optimal shift.
pub fn shifted_mean_abs_error(estimated: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimated.len(), truth.len());
    if estimated.is_empty() {
        return 0.0;
    }
    let mut diffs: Vec<f64> = estimated.iter().zip(truth).map(|(e, t)| e - t).collect();
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len();
    let shift = if m % 2 == 1 {
        diffs[m / 2]
    } else {
        0.5 * (diffs[m / 2 - 1] + diffs[m / 2])
    };
    diffs.iter().map(|d| (d - shift).abs()).sum::<f64>() / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::moe::rk4;

    fn logistic_traj() -> Trajectory {
        let f = |c: &[f64], _t: f64| vec![0.8 * c[0] * (1.0 - c[0]), 0.5 * c[1] * (1.0 - c[1])];
        rk4(&f, &[0.02, 0.05], 12.0, 0.1).unwrap()
    }

    fn sampled(traj: &Trajectory, id: &str, t0: f64, gaps: &[f64]) -> Subject {
        Subject {
            id: id.into(),
            gaps: gaps.to_vec(),
            obs: gaps
                .iter()
                .map(|g| traj.predict_at(t0 + g).unwrap())
                .collect(),
        }
    }

    #[test]
    fn recovers_noiseless_placement() {
        let traj = logistic_traj();
        let s = sampled(&traj, "a", 5.0, &[0.0, 1.3]);
        let p = align_subject(&traj, &s).unwrap();
        assert!((p.t0 - 5.0).abs() < 1e-3, "t0 = {}", p.t0);
        let off_grid = sampled(&traj, "b", 3.337, &[0.0]);
        let p = align_subject(&traj, &off_grid).unwrap();
        assert!((p.t0 - 3.337).abs() < 1e-3, "t0 = {}", p.t0);
    }

    #[test]
    fn flat_trajectory_ties_to_zero() {
        let traj = Trajectory::new(0.1, Matrix::filled(121, 2, 0.3), None);
        let s = Subject {
            id: "flat".into(),
            gaps: vec![0.0, 2.0],
            obs: vec![vec![0.1, 0.9], vec![0.5, 0.5]],
        };
        assert_eq!(align_subject(&traj, &s).unwrap().t0, 0.0);
    }

    #[test]
    fn infeasible_span() {
        let traj = logistic_traj();
        let s = Subject {
            id: "long".into(),
            gaps: vec![0.0, 12.5],
            obs: vec![vec![0.1, 0.1]; 2],
        };
        assert!(matches!(
            align_subject(&traj, &s),
            Err(Error::InfeasibleWindow { .. })
        ));
    }

    #[test]
    fn sse_not_worse_than_any_scan_point() {
        let traj = logistic_traj();
        let s = Subject {
            id: "x".into(),
            gaps: vec![0.0, 0.7],
            obs: vec![vec![0.4, 0.2], vec![0.35, 0.3]],
        };
        let p = align_subject(&traj, &s).unwrap();
        let mut t0 = 0.0;
        while t0 <= 12.0 - 0.7 {
            assert!(p.sse <= placement_sse(&traj, &s, t0).unwrap());
            t0 += 0.05;
        }
    }

    #[test]
    fn cohort_preserves_order_and_reports_errors() {
        let traj = logistic_traj();
        let good = sampled(&traj, "g", 2.0, &[0.0]);
        let bad = Subject {
            id: "b".into(),
            gaps: vec![0.0, 20.0],
            obs: vec![vec![0.0, 0.0]; 2],
        };
        let out = align_cohort(&traj, &[good.clone(), bad, good.clone()]);
        assert_eq!(out.len(), 3);
        assert!(out[1].is_err());
        assert_eq!(out[0].as_ref().unwrap(), out[2].as_ref().unwrap());
        assert_eq!(
            out[0].as_ref().unwrap(),
            &align_subject(&traj, &good).unwrap()
        );
    }

    #[test]
    fn invalid_subjects_are_rejected() {
        let traj = logistic_traj();
        let mut s = sampled(&traj, "s", 1.0, &[0.0, 1.0]);
        s.gaps = vec![0.0, 0.0];
        assert!(matches!(
            align_subject(&traj, &s),
            Err(Error::InvalidSubject { .. })
        ));
        let mut s = sampled(&traj, "s", 1.0, &[0.0]);
        s.obs[0][0] = 1.5;
        assert!(align_subject(&traj, &s).is_err());
    }

    #[test]
    fn shift_removal() {
        let est = [1.5, 2.5, 3.5];
        let truth = [1.0, 2.0, 3.0];
        assert_eq!(shifted_mean_abs_error(&est, &truth), 0.0);
    }
}
