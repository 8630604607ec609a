//! Cohort files: one JSON subject per line, and raw dated scans as CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::alignment::Subject;
use crate::error::{Error, Result};

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Subject>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Subject =
            serde_json::from_str(line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Subject>> {
    parse_jsonl(&std::fs::read_to_string(path)?, path)
}

pub fn write_jsonl(subjects: &[Subject], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in subjects {
        serde_json::to_writer(&mut out, s)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSubject {
    pub id: String,
    pub dates: Vec<NaiveDate>,
    /// One row of regional values per scan.
    pub values: Vec<Vec<f64>>,
}

/// Unnormalized scans with calendar dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCohort {
    pub region_names: Vec<String>,
    pub subjects: Vec<RawSubject>,
}

/// Reads `subject_id, scan_date, region_1..region_n` rows. Subjects appear in
/// order of first occurrence; each subject's scans are sorted by date and
/// duplicate dates are rejected.
pub fn parse_raw_csv(text: &str, path: &Path) -> Result<RawCohort> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 {
        return Err(Error::parse(
            path,
            1,
            "need subject_id, scan_date and at least one region column",
        ));
    }
    let region_names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut order: Vec<String> = Vec::new();
    let mut scans: BTreeMap<String, Vec<(NaiveDate, Vec<f64>)>> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(fields[1], "%Y-%m-%d")
            .map_err(|e| Error::parse(path, lineno, format!("bad date {:?}: {e}", fields[1])))?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let id = fields[0].to_string();
        if !scans.contains_key(&id) {
            order.push(id.clone());
        }
        scans.entry(id).or_default().push((date, values));
    }
    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = scans.remove(&id).expect("id recorded on first sight");
        rows.sort_by_key(|(d, _)| *d);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSubject {
                id,
                reason: "two scans share a date".into(),
            });
        }
        let (dates, values) = rows.into_iter().unzip();
        subjects.push(RawSubject { id, dates, values });
    }
    Ok(RawCohort {
        region_names,
        subjects,
    })
}

pub fn read_raw_csv(path: &Path) -> Result<RawCohort> {
    parse_raw_csv(&std::fs::read_to_string(path)?, path)
}
