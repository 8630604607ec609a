use serde::{Deserialize, Serialize};

use crate::alignment::Subject;
use crate::cohort::io::RawCohort;
use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Global min-max constants shared by all subjects and regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit(raw: &RawCohort) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for x in raw.subjects.iter().flat_map(|s| s.values.iter().flatten()) {
            min = min.min(*x);
            max = max.max(*x);
        }
        if !min.is_finite() {
            return Err(Error::InvalidConfig("raw cohort has no values".into()));
        }
        if !(max > min) {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Scales every value into `[0, 1]` and converts scan dates to gaps in years
/// since each subject's first scan.
pub fn normalize(raw: &RawCohort) -> Result<(Vec<Subject>, Normalization)> {
    let norm = Normalization::fit(raw)?;
    Ok((apply(raw, &norm)?, norm))
}

/// Like [`normalize`] with previously fitted constants. Values outside the
/// fitted range are clamped.
pub fn apply(raw: &RawCohort, norm: &Normalization) -> Result<Vec<Subject>> {
    let n = raw.region_names.len();
    raw.subjects
        .iter()
        .map(|s| {
            if s.dates.is_empty()
                || s.dates.len() != s.values.len()
                || s.values.iter().any(|r| r.len() != n)
            {
                return Err(Error::InvalidSubject {
                    id: s.id.clone(),
                    reason: "scan dates and values do not line up".into(),
                });
            }
            let base = s.dates[0];
            Ok(Subject {
                id: s.id.clone(),
                gaps: s
                    .dates
                    .iter()
                    .map(|d| (*d - base).num_days() as f64 / DAYS_PER_YEAR)
                    .collect(),
                obs: s
                    .values
                    .iter()
                    .map(|r| r.iter().map(|&x| norm.apply(x).clamp(0.0, 1.0)).collect())
                    .collect(),
            })
        })
        .collect()
}

/// Maps normalized observations back to the raw scale.
pub fn denormalize(subjects: &[Subject], norm: &Normalization) -> Vec<Vec<Vec<f64>>> {
    subjects
        .iter()
        .map(|s| {
            s.obs
                .iter()
                .map(|r| r.iter().map(|&y| norm.invert(y)).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::io::RawSubject;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw(values: Vec<Vec<Vec<f64>>>) -> RawCohort {
        let n = values[0][0].len();
        RawCohort {
            region_names: (0..n).map(|i| format!("r{i}")).collect(),
            subjects: values
                .into_iter()
                .enumerate()
                .map(|(i, v)| RawSubject {
                    id: format!("s{i}"),
                    dates: (0..v.len())
                        .map(|k| NaiveDate::from_ymd_opt(2010 + k as i32 * 2, 3, 1).unwrap())
                        .collect(),
                    values: v,
                })
                .collect(),
        }
    }

    #[test]
    fn two_values_map_to_unit_interval() {
        let (s, _) = normalize(&raw(vec![vec![vec![2.0, 4.0]]])).unwrap();
        assert_eq!(s[0].obs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn unit_data_is_unchanged() {
        let data = vec![vec![vec![0.0, 0.3]], vec![vec![1.0, 0.7]]];
        let (s, _) = normalize(&raw(data.clone())).unwrap();
        for (si, d) in s.iter().zip(&data) {
            for (a, b) in si.obs[0].iter().zip(&d[0]) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_range() {
        assert!(matches!(
            normalize(&raw(vec![vec![vec![3.0, 3.0]]])),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<Vec<f64>>> = (0..10)
            .map(|_| {
                (0..2)
                    .map(|_| (0..6).map(|_| rng.random_range(0.8..3.5)).collect())
                    .collect()
            })
            .collect();
        let (s, norm) = normalize(&raw(data.clone())).unwrap();
        let back = denormalize(&s, &norm);
        for (a, b) in back
            .iter()
            .flatten()
            .flatten()
            .zip(data.iter().flatten().flatten())
        {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn gaps_in_years() {
        let (s, _) = normalize(&raw(vec![vec![vec![0.0], vec![1.0]]])).unwrap();
        let days = (NaiveDate::from_ymd_opt(2012, 3, 1).unwrap()
            - NaiveDate::from_ymd_opt(2010, 3, 1).unwrap())
        .num_days();
        assert_eq!(s[0].gaps, vec![0.0, days as f64 / 365.25]);
    }
}
