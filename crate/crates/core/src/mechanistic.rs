//! Network diffusion with logistic local reaction:
//! `dc/dt = -k·L·c + α·c ⊙ (v - c)`.
//!
//! `k` and `α` are stored through softplus and `v` through a sigmoid, so the
//! optimizer works on unconstrained values while the rates stay nonnegative and
//! the carrying capacities stay in (0, 1].

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::linalg::{logit, sigmoid, softplus, softplus_inv, Matrix};

/// Name prefix shared by every mechanistic parameter.
pub const PREFIX: &str = "mech.";
pub const K_RAW: &str = "mech.k_raw";
pub const ALPHA_RAW: &str = "mech.alpha_raw";
pub const V_RAW: &str = "mech.v_raw";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanisticParams {
    pub k_raw: f64,
    pub alpha_raw: f64,
    /// `None` pins the carrying capacity to exactly 1 in every region.
    pub v_raw: Option<Vec<f64>>,
}

impl MechanisticParams {
    pub fn from_values(k: f64, alpha: f64, v: Option<&[f64]>) -> Self {
        Self {
            k_raw: softplus_inv(k),
            alpha_raw: softplus_inv(alpha),
            v_raw: v.map(|v| v.iter().map(|&x| logit(x)).collect()),
        }
    }

    pub fn k(&self) -> f64 {
        softplus(self.k_raw)
    }

    pub fn alpha(&self) -> f64 {
        softplus(self.alpha_raw)
    }

    pub fn v(&self, n: usize) -> Vec<f64> {
        match &self.v_raw {
            Some(raw) => raw.iter().map(|&x| sigmoid(x)).collect(),
            None => vec![1.0; n],
        }
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            k_raw: store.get(K_RAW)?[(0, 0)],
            alpha_raw: store.get(ALPHA_RAW)?[(0, 0)],
            v_raw: store
                .contains(V_RAW)
                .then(|| store.get(V_RAW).map(|m| m.as_slice().to_vec()))
                .transpose()?,
        })
    }

    pub fn write_to(&self, store: &mut ParamStore) {
        store.insert(K_RAW, Matrix::scalar(self.k_raw));
        store.insert(ALPHA_RAW, Matrix::scalar(self.alpha_raw));
        if let Some(v) = &self.v_raw {
            store.insert(V_RAW, Matrix::column(v));
        }
    }
}

/// Gradients with respect to the unconstrained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanisticGrad {
    pub k_raw: f64,
    pub alpha_raw: f64,
    pub v_raw: Option<Vec<f64>>,
}

fn check_state(ops: &GraphOperators, c: &[f64]) -> Result<()> {
    if c.len() != ops.n() {
        return Err(Error::DimensionMismatch {
            expected: ops.n(),
            found: c.len(),
        });
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Evaluates the mechanistic right-hand side. The system is autonomous, so `_t`
/// is unused.
pub fn eval_f_m(
    params: &MechanisticParams,
    ops: &GraphOperators,
    c: &[f64],
    _t: f64,
) -> Result<Vec<f64>> {
    check_state(ops, c)?;
    let (k, alpha) = (params.k(), params.alpha());
    let v = params.v(c.len());
    let lc = ops.laplacian_apply(c);
    Ok((0..c.len())
        .map(|u| -k * lc[u] + alpha * c[u] * (v[u] - c[u]))
        .collect())
}

/// Vector-Jacobian product of [`eval_f_m`] with `upstream`, returning the
/// parameter gradient and the state gradient.
pub fn grad_f_m(
    params: &MechanisticParams,
    ops: &GraphOperators,
    c: &[f64],
    _t: f64,
    upstream: &[f64],
) -> Result<(MechanisticGrad, Vec<f64>)> {
    check_state(ops, c)?;
    if upstream.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: upstream.len(),
        });
    }
    let n = c.len();
    let (k, alpha) = (params.k(), params.alpha());
    let v = params.v(n);
    let lc = ops.laplacian_apply(c);
    // L is symmetric, so Lᵀ·g == L·g.
    let lg = ops.laplacian_apply(upstream);

    let dk: f64 = -(0..n).map(|u| upstream[u] * lc[u]).sum::<f64>();
    let dalpha: f64 = (0..n).map(|u| upstream[u] * c[u] * (v[u] - c[u])).sum();
    let grad_c = (0..n)
        .map(|u| -k * lg[u] + alpha * upstream[u] * (v[u] - 2.0 * c[u]))
        .collect();
    let v_raw = params.v_raw.as_ref().map(|_| {
        (0..n)
            .map(|u| alpha * upstream[u] * c[u] * v[u] * (1.0 - v[u]))
            .collect()
    });
    let grad = MechanisticGrad {
        k_raw: dk * sigmoid(params.k_raw),
        alpha_raw: dalpha * sigmoid(params.alpha_raw),
        v_raw,
    };
    Ok((grad, grad_c))
}

/// Records the mechanistic right-hand side for state `c` (n×1) on `tape`,
/// reading parameters from `store`.
pub fn f_m_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    ops: &GraphOperators,
    c: Var,
) -> Result<Var> {
    let n = ops.n();
    let lap = tape.constant_cached("laplacian", || ops.laplacian.clone())?;
    let k_raw = tape.param(store, K_RAW)?;
    let k = tape.softplus(k_raw)?;
    let alpha_raw = tape.param(store, ALPHA_RAW)?;
    let alpha = tape.softplus(alpha_raw)?;
    let v = if store.contains(V_RAW) {
        let raw = tape.param(store, V_RAW)?;
        tape.sigmoid(raw)?
    } else {
        tape.constant_cached("ones", || Matrix::filled(n, 1, 1.0))?
    };
    let lc = tape.matmul(lap, c)?;
    let diffusion = tape.scale_by(lc, k)?;
    let headroom = tape.sub(v, c)?;
    let growth = tape.hadamard(c, headroom)?;
    let reaction = tape.scale_by(growth, alpha)?;
    tape.sub(reaction, diffusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_operators, Connectome};

    fn two_node() -> GraphOperators {
        build_operators(&Connectome::path(2).unwrap())
    }

    fn path3() -> GraphOperators {
        build_operators(&Connectome::path(3).unwrap())
    }

    #[test]
    fn logistic_midpoint() {
        let ops = path3();
        let p = MechanisticParams::from_values(0.0, 1.0, None);
        let d = eval_f_m(&p, &ops, &[0.5; 3], 0.0).unwrap();
        assert_eq!(d, vec![0.25; 3]);
    }

    #[test]
    fn two_node_diffusion() {
        let ops = two_node();
        let p = MechanisticParams::from_values(1.0, 0.0, None);
        let d = eval_f_m(&p, &ops, &[1.0, 0.0], 0.0).unwrap();
        assert!((d[0] + 1.0).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_straight_line_formula() {
        let ops = path3();
        let (k, alpha) = (0.3, 0.7);
        let p = MechanisticParams::from_values(k, alpha, None);
        let c = [0.9, 0.1, 0.0];
        let got = eval_f_m(&p, &ops, &c, 0.0).unwrap();
        // Path graph Laplacian written out by hand.
        let expected = [
            -k * (c[0] - c[1]) + alpha * c[0] * (1.0 - c[0]),
            -k * (2.0 * c[1] - c[0] - c[2]) + alpha * c[1] * (1.0 - c[1]),
            -k * (c[2] - c[1]) + alpha * c[2] * (1.0 - c[2]),
        ];
        for u in 0..3 {
            assert!((got[u] - expected[u]).abs() <= 1e-12);
        }
    }

    #[test]
    fn fixed_points_without_diffusion() {
        let ops = path3();
        let v = [0.4, 0.8, 1.0];
        let p = MechanisticParams::from_values(0.0, 2.0, Some(&v));
        let vv = p.v(3);
        assert_eq!(eval_f_m(&p, &ops, &[0.0; 3], 0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(eval_f_m(&p, &ops, &vv, 0.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_jacobian_rows() {
        let ops = path3();
        let p = MechanisticParams::from_values(0.4, 0.0, None);
        for u in 0..3 {
            let mut e = vec![0.0; 3];
            e[u] = 1.0;
            let (_, gc) = grad_f_m(&p, &ops, &[0.2, 0.5, 0.1], 0.0, &e).unwrap();
            for v in 0..3 {
                assert!((gc[v] + 0.4 * ops.laplacian[(u, v)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let ops = path3();
        let p = MechanisticParams::from_values(0.4, 0.3, Some(&[0.5, 0.6, 0.7]));
        let (g, gc) = grad_f_m(&p, &ops, &[0.2, 0.5, 0.1], 0.0, &[0.0; 3]).unwrap();
        assert_eq!(g.k_raw, 0.0);
        assert_eq!(g.alpha_raw, 0.0);
        assert!(g.v_raw.unwrap().iter().all(|&x| x == 0.0));
        assert!(gc.iter().all(|&x| x == 0.0));
    }

    fn fd_check(p: &MechanisticParams, ops: &GraphOperators, c: &[f64], up: &[f64]) {
        let (g, gc) = grad_f_m(p, ops, c, 0.0, up).unwrap();
        let objective = |p: &MechanisticParams, c: &[f64]| -> f64 {
            let f = eval_f_m(p, ops, c, 0.0).unwrap();
            f.iter().zip(up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        let mut pp = p.clone();
        pp.k_raw += h;
        let mut pm = p.clone();
        pm.k_raw -= h;
        let fd = (objective(&pp, c) - objective(&pm, c)) / (2.0 * h);
        assert!(rel(fd, g.k_raw) <= 1e-5, "k: {fd} vs {}", g.k_raw);
        let mut pp = p.clone();
        pp.alpha_raw += h;
        let mut pm = p.clone();
        pm.alpha_raw -= h;
        let fd = (objective(&pp, c) - objective(&pm, c)) / (2.0 * h);
        assert!(
            rel(fd, g.alpha_raw) <= 1e-5,
            "alpha: {fd} vs {}",
            g.alpha_raw
        );
        if let Some(gv) = &g.v_raw {
            for u in 0..c.len() {
                let mut pp = p.clone();
                pp.v_raw.as_mut().unwrap()[u] += h;
                let mut pm = p.clone();
                pm.v_raw.as_mut().unwrap()[u] -= h;
                let fd = (objective(&pp, c) - objective(&pm, c)) / (2.0 * h);
                assert!(rel(fd, gv[u]) <= 1e-5);
            }
        }
        for u in 0..c.len() {
            let mut cp = c.to_vec();
            cp[u] += h;
            let mut cm = c.to_vec();
            cm[u] -= h;
            let fd = (objective(p, &cp) - objective(p, &cm)) / (2.0 * h);
            assert!(rel(fd, gc[u]) <= 1e-5, "c[{u}]: {fd} vs {}", gc[u]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ops = build_operators(&Connectome::ring(5).unwrap());
        let c = [0.9, 0.1, 0.3, 0.55, 0.05];
        let up = [0.3, -1.2, 0.7, 0.2, -0.4];
        fd_check(
            &MechanisticParams::from_values(0.3, 0.7, None),
            &ops,
            &c,
            &up,
        );
        fd_check(
            &MechanisticParams::from_values(0.3, 0.7, Some(&[0.9, 0.6, 0.99, 0.8, 0.7])),
            &ops,
            &c,
            &up,
        );
    }

    #[test]
    fn k_gradient_near_zero_rate() {
        let ops = path3();
        let p = MechanisticParams::from_values(1e-4, 0.5, None);
        let c = [0.9, 0.2, 0.1];
        let up = [1.0, -0.5, 2.0];
        let (g, _) = grad_f_m(&p, &ops, &c, 0.0, &up).unwrap();
        let lc = ops.laplacian_apply(&c);
        let closed = sigmoid(p.k_raw) * -(0..3).map(|u| up[u] * lc[u]).sum::<f64>();
        assert!((g.k_raw - closed).abs() < 1e-15);
        fd_check(&p, &ops, &c, &up);
    }

    #[test]
    fn tape_route_matches_closed_form() {
        let ops = build_operators(&Connectome::ring(4).unwrap());
        let p = MechanisticParams::from_values(0.2, 0.9, Some(&[0.7, 0.8, 0.9, 0.95]));
        let mut store = ParamStore::new();
        p.write_to(&mut store);
        let c = [0.1, 0.4, 0.6, 0.2];
        let up = [0.5, -1.0, 0.25, 2.0];
        let mut tape = Tape::new();
        let cv = tape.input(Matrix::column(&c)).unwrap();
        let out = f_m_on_tape(&mut tape, &store, &ops, cv).unwrap();
        let direct = eval_f_m(&p, &ops, &c, 0.0).unwrap();
        for u in 0..4 {
            assert!((tape.value(out)[(u, 0)] - direct[u]).abs() < 1e-15);
        }
        let mut grads = store.zeros_like();
        let adj = tape
            .backward(&[(out, &Matrix::column(&up))], &mut grads)
            .unwrap();
        let (g, gc) = grad_f_m(&p, &ops, &c, 0.0, &up).unwrap();
        assert!((grads.get(K_RAW).unwrap()[(0, 0)] - g.k_raw).abs() < 1e-14);
        assert!((grads.get(ALPHA_RAW).unwrap()[(0, 0)] - g.alpha_raw).abs() < 1e-14);
        let gv = g.v_raw.unwrap();
        for u in 0..4 {
            assert!((grads.get(V_RAW).unwrap()[(u, 0)] - gv[u]).abs() < 1e-14);
            assert!((adj.wrt(cv).unwrap()[(u, 0)] - gc[u]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_state() {
        let ops = path3();
        let p = MechanisticParams::from_values(0.1, 0.1, None);
        assert!(matches!(
            eval_f_m(&p, &ops, &[0.1, 0.2], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            eval_f_m(&p, &ops, &[0.1, f64::NAN, 0.0], 0.0),
            Err(Error::NonFiniteInput)
        ));
    }
}
