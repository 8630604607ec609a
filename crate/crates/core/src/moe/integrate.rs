//! Fixed-step classic Runge-Kutta integration and trajectory lookup.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::linalg::Matrix;
use crate::moe::model::MoeModel;
use crate::table::Table;

/// Right-hand side of an autonomous or time-dependent ODE `dc/dt = f(c, t)`.
pub trait VectorField {
    fn eval(&self, c: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    fn eval(&self, c: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self(c, t))
    }
}

/// Wraps a model and its graph as a plain vector field.
pub struct ModelField<'a> {
    pub model: &'a MoeModel,
    pub ops: &'a GraphOperators,
}

impl VectorField for ModelField<'_> {
    fn eval(&self, c: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.model.eval_rhs(self.ops, c, t)?.0)
    }
}

fn axpy(c: &[f64], k: &[f64], s: f64) -> Vec<f64> {
    c.iter().zip(k).map(|(a, b)| a + b * s).collect()
}

/// One RK4 step given the first stage. The summation order matches the taped
/// step in [`MoeModel::rk4_step_on_tape`] so both routes agree bit for bit.
fn rk4_finish<F: VectorField + ?Sized>(
    f: &F,
    c: &[f64],
    t: f64,
    h: f64,
    k1: &[f64],
) -> Result<Vec<f64>> {
    // A stage that leaves the finite range is divergence of this step, not bad input.
    let stage = |k: &[f64], s: f64| {
        let x = axpy(c, k, s);
        ensure_finite(&x, (t / h).round() as usize + 1, t + h)?;
        Ok::<_, Error>(x)
    };
    let k2 = f.eval(&stage(k1, 0.5 * h)?, t + 0.5 * h)?;
    let k3 = f.eval(&stage(&k2, 0.5 * h)?, t + 0.5 * h)?;
    let k4 = f.eval(&stage(&k3, h)?, t + h)?;
    let scale = h / 6.0;
    Ok((0..c.len())
        .map(|u| {
            let s1 = k1[u] + k2[u] * 2.0;
            let s2 = s1 + k3[u] * 2.0;
            let s3 = s2 + k4[u];
            c[u] + s3 * scale
        })
        .collect())
}

pub fn rk4_step<F: VectorField + ?Sized>(f: &F, c: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    let k1 = f.eval(c, t)?;
    rk4_finish(f, c, t, h, &k1)
}

fn check_grid(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && t_end > 0.0 && h.is_finite() && t_end.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "bad integration window T={t_end}, h={h}"
        )));
    }
    let ratio = t_end / h;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "T={t_end} is not a multiple of h={h}"
        )));
    }
    Ok(steps as usize)
}

fn ensure_finite(state: &[f64], step: usize, t: f64) -> Result<()> {
    if state.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step, t })
    }
}

/// Integrates `f` from `c0` at `t = 0` to `t_end` with `t_end / h` steps.
pub fn rk4<F: VectorField + ?Sized>(f: &F, c0: &[f64], t_end: f64, h: f64) -> Result<Trajectory> {
    let steps = check_grid(t_end, h)?;
    let n = c0.len();
    let mut states = Matrix::zeros(steps + 1, n);
    states.row_mut(0).copy_from_slice(c0);
    let mut c = c0.to_vec();
    for i in 0..steps {
        c = rk4_step(f, &c, i as f64 * h, h)?;
        ensure_finite(&c, i + 1, (i + 1) as f64 * h)?;
        states.row_mut(i + 1).copy_from_slice(&c);
    }
    Ok(Trajectory::new(h, states, None))
}

/// Solves the model ODE on its grid from its learned initial state, recording
/// the weighted expert contributions at every grid point.
pub fn integrate(model: &MoeModel, ops: &GraphOperators) -> Result<Trajectory> {
    let h = model.step_size();
    let steps = model.steps();
    let n = model.n();
    let field = ModelField { model, ops };
    let mut states = Matrix::zeros(steps + 1, n);
    let mut contributions = Vec::with_capacity(steps + 1);
    let mut c = model.c0();
    states.row_mut(0).copy_from_slice(&c);
    for i in 0..=steps {
        let t = i as f64 * h;
        let (k1, per_expert) = model.eval_rhs(ops, &c, t)?;
        contributions.push(per_expert);
        if i == steps {
            break;
        }
        c = rk4_finish(&field, &c, t, h, &k1)?;
        ensure_finite(&c, i + 1, (i + 1) as f64 * h)?;
        states.row_mut(i + 1).copy_from_slice(&c);
    }
    Ok(Trajectory::new(h, states, Some(contributions)))
}

/// Grid states of one solve. Row `i` of `states` is `c(i·h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Matrix,
    /// Per grid point, the 3×n matrix of weighted expert terms.
    pub contributions: Option<Vec<Matrix>>,
    step: f64,
}

impl Trajectory {
    pub fn new(step: f64, states: Matrix, contributions: Option<Vec<Matrix>>) -> Self {
        let times = (0..states.rows()).map(|i| i as f64 * step).collect();
        Self {
            times,
            states,
            contributions,
            step,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one point")
    }

    pub fn n(&self) -> usize {
        self.states.cols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    /// Interpolation bracket `(i, w)` with `c(t) = (1−w)·c_i + w·c_{i+1}`.
    /// Grid times (up to 1e-9 relative jitter) map to `w ∈ {0, 1}` exactly.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let hi = self.horizon();
        let slack = 1e-12 * hi.max(1.0);
        if !(t >= -slack && t <= hi + slack) {
            return Err(Error::OutOfWindow { t, lo: 0.0, hi });
        }
        let last = self.len() - 1;
        if last == 0 {
            return Ok((0, 0.0));
        }
        let r = (t / self.step).max(0.0);
        let nearest = r.round();
        let (i, w) = if (r - nearest).abs() <= 1e-9 * r.max(1.0) {
            (nearest as usize, 0.0)
        } else {
            let i = r.floor() as usize;
            (
                i,
                ((t - self.times[i.min(last)]) / self.step).clamp(0.0, 1.0),
            )
        };
        if i >= last {
            Ok((last - 1, 1.0))
        } else {
            Ok((i, w))
        }
    }

    /// Linear interpolation between the bracketing grid states.
    pub fn predict_at(&self, t: f64) -> Result<Vec<f64>> {
        let (i, w) = self.locate(t)?;
        if self.len() == 1 {
            return Ok(self.state(0).to_vec());
        }
        let (a, b) = (self.state(i), self.state(i + 1));
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect())
    }

    /// CSV with columns `t, <region names>`.
    pub fn write_csv(&self, path: &Path, region_names: &[String]) -> Result<()> {
        if region_names.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: region_names.len(),
            });
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,{}", region_names.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for x in self.state(i) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads what [`Trajectory::write_csv`] wrote, returning the region names.
    /// Times must start at 0 and follow a uniform grid.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<String>)> {
        let table = Table::read(path)?;
        table.expect_columns(&["t"])?;
        let names = table.header[1..].to_vec();
        if names.is_empty() {
            return Err(table.error_at(1, "no region columns"));
        }
        let rows = table.numeric_rows()?;
        if rows.len() < 2 {
            return Err(table.error_at(1, "a trajectory needs at least two grid points"));
        }
        let step = rows[1][0] - rows[0][0];
        for (i, (row, (line, _))) in rows.iter().zip(&table.rows).enumerate() {
            let expected = i as f64 * step;
            if !(step > 0.0) || (row[0] - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(
                    table.error_at(*line, format!("time {} is off the uniform grid", row[0]))
                );
            }
        }
        let data = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
        let states = Matrix::from_vec(rows.len(), names.len(), data)?;
        Ok((Self::new(step, states, None), names))
    }
}

/// `β(t)` sampled on `times`.
pub fn gate_curve(model: &MoeModel, times: &[f64]) -> Result<Vec<[f64; 3]>> {
    times.iter().map(|&t| model.eval_gate(t)).collect()
}

/// CSV with columns `t, beta1, beta2, beta3`.
pub fn write_gate_csv(model: &MoeModel, times: &[f64], path: &Path) -> Result<()> {
    let curve = gate_curve(model, times)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,beta1,beta2,beta3")?;
    for (t, b) in times.iter().zip(curve) {
        writeln!(out, "{t},{},{},{}", b[0], b[1], b[2])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads what [`write_gate_csv`] wrote as `(t, β)` rows.
pub fn read_gate_csv(path: &Path) -> Result<Vec<(f64, [f64; 3])>> {
    let table = Table::read(path)?;
    table.expect_columns(&["t", "beta1", "beta2", "beta3"])?;
    if table.header.len() != 4 {
        return Err(table.error_at(1, "expected exactly four columns"));
    }
    Ok(table
        .numeric_rows()?
        .into_iter()
        .map(|r| (r[0], [r[1], r[2], r[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_operators, Connectome};
    use crate::moe::gate::GateMode;
    use crate::moe::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn decay(c: &[f64], _t: f64) -> Vec<f64> {
        c.iter().map(|x| -x).collect()
    }

    #[test]
    fn exponential_decay_matches_analytic_solution() {
        let traj = rk4(&decay, &[1.0], 1.0, 0.01).unwrap();
        assert_eq!(traj.len(), 101);
        let end = traj.state(100)[0];
        assert!((end - (-1f64).exp()).abs() <= 1e-9);
    }

    #[test]
    fn error_shrinks_at_fourth_order() {
        let err = |h: f64| {
            (rk4(&decay, &[1.0], 1.0, h)
                .unwrap()
                .state((1.0 / h).round() as usize)[0]
                - (-1f64).exp())
            .abs()
        };
        let hs = [0.2, 0.1, 0.05, 0.025];
        for w in hs.windows(2) {
            let ratio = err(w[0]) / err(w[1]);
            assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn logistic_matches_closed_form() {
        // At h = 0.1 the worst grid error is about 5e-8; h = 0.05 brings it to 3e-9.
        let ops = build_operators(&Connectome::ring(4).unwrap());
        let cfg = ModelConfig {
            step: 0.05,
            gate: crate::moe::gate::GateConfig {
                mode: GateMode::Mechanistic,
                ..Default::default()
            },
            ..ModelConfig::default()
        };
        let mut model = MoeModel::new(cfg, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        model.set_mechanistic(0.0, 1.0);
        model.set_c0(&[0.5; 4]).unwrap();
        let traj = integrate(&model, &ops).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let exact = 1.0 / (1.0 + (-t).exp());
            for &x in traj.state(i) {
                assert!((x - exact).abs() <= 1e-8, "t={t}: {x} vs {exact}");
            }
        }
    }

    #[test]
    fn forward_and_taped_steps_agree_exactly() {
        let ops = build_operators(&Connectome::ring(5).unwrap());
        let model =
            MoeModel::new(ModelConfig::default(), 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = model.c0();
        let plain = rk4_step(
            &ModelField {
                model: &model,
                ops: &ops,
            },
            &c,
            0.3,
            0.1,
        )
        .unwrap();
        let mut tape = crate::autodiff::Tape::new();
        let cv = tape.input(Matrix::column(&c)).unwrap();
        let next = model
            .rk4_step_on_tape(&mut tape, &ops, cv, 0.3, 0.1)
            .unwrap();
        assert_eq!(tape.value(next).as_slice(), &plain[..]);
    }

    #[test]
    fn grid_lookup_and_interpolation() {
        let states = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 7.0]]).unwrap();
        let traj = Trajectory::new(0.1, states, None);
        assert_eq!(traj.predict_at(0.1).unwrap(), vec![2.0, 3.0]);
        assert_eq!(traj.predict_at(0.2).unwrap(), vec![4.0, 7.0]);
        assert_eq!(traj.predict_at(0.0).unwrap(), vec![0.0, 1.0]);
        let mid = traj.predict_at(0.15).unwrap();
        assert!((mid[0] - 3.0).abs() < 1e-12 && (mid[1] - 5.0).abs() < 1e-12);
        assert!(matches!(
            traj.predict_at(0.3),
            Err(Error::OutOfWindow { .. })
        ));
        assert!(matches!(
            traj.predict_at(-0.01),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let blowup = |c: &[f64], _t: f64| c.iter().map(|x| x * x * 1e30).collect::<Vec<_>>();
        let err = rk4(&blowup, &[1.0], 1.0, 0.1).unwrap_err();
        assert!(
            matches!(err, Error::NonFiniteState { step: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn contributions_sum_to_state_derivative() {
        let ops = build_operators(&Connectome::ring(5).unwrap());
        let model =
            MoeModel::new(ModelConfig::default(), 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let traj = integrate(&model, &ops).unwrap();
        let contrib = traj.contributions.as_ref().unwrap();
        assert_eq!(contrib.len(), traj.len());
        assert_eq!(traj.state(0), &model.c0()[..]);
        let (dcdt, _) = model.eval_rhs(&ops, traj.state(7), traj.times[7]).unwrap();
        for u in 0..5 {
            let s: f64 = (0..3).map(|j| contrib[7][(j, u)]).sum();
            assert!((s - dcdt[u]).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = rk4(&decay, &[1.0, 0.5], 0.2, 0.1).unwrap();
        traj.write_csv(&path, &["a".into(), "b".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,a,b");
        assert_eq!(lines.len(), 4);
    }
}
