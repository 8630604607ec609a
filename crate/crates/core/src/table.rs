//! Reader for the plain comma-separated tables this crate writes. Fields are
//! never quoted, so a header row plus split-on-comma rows is the whole format.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    path: PathBuf,
    pub header: Vec<String>,
    /// `(line number, fields)`; every row has as many fields as the header.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty table"))?;
        let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected {} fields, found {}", header.len(), fields.len()),
                ));
            }
            rows.push((idx + 1, fields));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Fails unless the header starts with `expected`.
    pub fn expect_columns(&self, expected: &[&str]) -> Result<()> {
        let ok = self.header.len() >= expected.len()
            && self.header.iter().zip(expected).all(|(a, b)| a == b);
        if ok {
            Ok(())
        } else {
            Err(Error::parse(
                &self.path,
                1,
                format!(
                    "expected columns starting with {expected:?}, found {:?}",
                    self.header
                ),
            ))
        }
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(&self.path, 1, format!("missing column {name:?}")))
    }

    pub fn number(&self, line: usize, field: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::parse(&self.path, line, format!("bad number {field:?}")))
    }

    /// Every field parsed as a finite number, row by row.
    pub fn numeric_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .map(|(line, fields)| fields.iter().map(|f| self.number(*line, f)).collect())
            .collect()
    }

    pub fn error_at(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }
}
