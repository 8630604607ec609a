//! Connectome graphs and their discrete differential operators.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const ASYMMETRY_TOLERANCE: f64 = 1e-6;

/// Weighted undirected graph over brain regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connectome {
    region_names: Vec<String>,
    adjacency: Matrix,
}

impl Connectome {
    /// Validates and symmetrizes `adjacency`. Self-loops are dropped since they
    /// cancel out of `D - A` anyway.
    pub fn new(region_names: Vec<String>, adjacency: Matrix) -> Result<Self> {
        let n = region_names.len();
        if n < 2 {
            return Err(Error::InvalidConnectome(format!(
                "need at least 2 regions, got {n}"
            )));
        }
        if adjacency.rows() != n {
            return Err(Error::NonSquare {
                rows: adjacency.rows(),
                row: 0,
                cols: n,
            });
        }
        if adjacency.cols() != n {
            return Err(Error::NonSquare {
                rows: n,
                row: 0,
                cols: adjacency.cols(),
            });
        }
        let mut seen = HashSet::new();
        for name in &region_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateRegionName(name.clone()));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !w.is_finite() {
                    return Err(Error::NonFiniteInput);
                }
                if w < 0.0 {
                    return Err(Error::NegativeWeight {
                        row: i,
                        col: j,
                        value: w,
                    });
                }
            }
        }
        let mut sym = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (adjacency[(i, j)], adjacency[(j, i)]);
                let diff = (a - b).abs();
                if diff > ASYMMETRY_TOLERANCE {
                    return Err(Error::AsymmetryTooLarge {
                        row: i,
                        col: j,
                        diff,
                    });
                }
                let w = 0.5 * (a + b);
                sym[(i, j)] = w;
                sym[(j, i)] = w;
            }
            if adjacency[(i, i)] != 0.0 {
                log::warn!("dropping self-loop on region {}", region_names[i]);
            }
        }
        Ok(Self {
            region_names,
            adjacency: sym,
        })
    }

    /// Unnamed graph; regions are labelled `r0, r1, ...`.
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        let names = (0..adjacency.rows()).map(|i| format!("r{i}")).collect();
        Self::new(names, adjacency)
    }

    /// Cycle graph with unit weights.
    pub fn ring(n: usize) -> Result<Self> {
        let mut a = Matrix::zeros(n, n);
        for u in 0..n {
            let v = (u + 1) % n;
            if u != v {
                a[(u, v)] = 1.0;
                a[(v, u)] = 1.0;
            }
        }
        Self::from_adjacency(a)
    }

    /// Path graph `0 - 1 - ... - (n-1)` with unit weights.
    pub fn path(n: usize) -> Result<Self> {
        let mut a = Matrix::zeros(n, n);
        for u in 1..n {
            a[(u - 1, u)] = 1.0;
            a[(u, u - 1)] = 1.0;
        }
        Self::from_adjacency(a)
    }

    pub fn n(&self) -> usize {
        self.region_names.len()
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// Number of undirected edges (nonzero upper-triangular entries).
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| self.adjacency[(u, v)] != 0.0)
            .count()
    }

    /// Relabels regions so that new region `i` is old region `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.adjacency[(perm[i], perm[j])];
            }
        }
        let names = perm.iter().map(|&p| self.region_names[p].clone()).collect();
        Self::new(names, a)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.region_names.join(","));
        out.push('\n');
        for i in 0..self.n() {
            let row: Vec<String> = self
                .adjacency
                .row(i)
                .iter()
                .map(|x| x.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Reads a connectome CSV: a header row of region names followed by `n` rows of
/// `n` comma-separated weights.
pub fn load_connectome(path: &Path) -> Result<Connectome> {
    let text = fs::read_to_string(path)?;
    parse_connectome(&text, path)
}

pub fn parse_connectome(text: &str, path: &Path) -> Result<Connectome> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty connectome file"))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = names.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (lineno, line) in lines {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != n {
            return Err(Error::NonSquare {
                rows: n,
                row: rows,
                cols: vals.len(),
            });
        }
        for v in vals {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("bad number {v:?}")))?;
            data.push(x);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::NonSquare {
            rows,
            row: rows,
            cols: n,
        });
    }
    Connectome::new(names, Matrix::from_vec(n, n, data)?)
}

/// One direction of an undirected edge, used for message passing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedEdge {
    /// Receiving node.
    pub target: usize,
    /// Sending node.
    pub source: usize,
    pub weight: f64,
}

/// Laplacian, degree and incidence operators derived from a [`Connectome`].
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub adjacency: Matrix,
    pub laplacian: Matrix,
    pub degree: Matrix,
    /// Signed n×e incidence matrix: +1 at `u`, -1 at `v` for edge `(u, v)`, `u < v`.
    pub incidence: Matrix,
    /// Undirected edges in sorted upper-triangular order, matching incidence columns.
    pub edges: Vec<(usize, usize)>,
    pub edge_weights: Vec<f64>,
    /// Both directions of every edge, grouped by target node.
    pub arcs: std::sync::Arc<[DirectedEdge]>,
}

impl GraphOperators {
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn laplacian_apply(&self, c: &[f64]) -> Vec<f64> {
        self.laplacian.matvec(c)
    }
}

pub fn build_operators(g: &Connectome) -> GraphOperators {
    let n = g.n();
    let a = g.adjacency().clone();
    let mut degree = Matrix::zeros(n, n);
    let mut laplacian = Matrix::zeros(n, n);
    for u in 0..n {
        let d: f64 = a.row(u).iter().sum();
        degree[(u, u)] = d;
        for v in 0..n {
            laplacian[(u, v)] = if u == v { d } else { -a[(u, v)] };
        }
    }
    let mut edges = Vec::new();
    let mut edge_weights = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if a[(u, v)] != 0.0 {
                edges.push((u, v));
                edge_weights.push(a[(u, v)]);
            }
        }
    }
    let mut incidence = Matrix::zeros(n, edges.len());
    for (e, &(u, v)) in edges.iter().enumerate() {
        incidence[(u, e)] = 1.0;
        incidence[(v, e)] = -1.0;
    }
    let mut arcs = Vec::with_capacity(2 * edges.len());
    for u in 0..n {
        for v in 0..n {
            if u != v && a[(u, v)] != 0.0 {
                arcs.push(DirectedEdge {
                    target: u,
                    source: v,
                    weight: a[(u, v)],
                });
            }
        }
    }
    GraphOperators {
        adjacency: a,
        laplacian,
        degree,
        incidence,
        edges,
        edge_weights,
        arcs: arcs.into(),
    }
}
