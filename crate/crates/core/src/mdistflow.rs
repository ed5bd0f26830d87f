//! Closed-form modified DistFlow.
//!
//! State variables are the injections and branch flows divided by the
//! voltage magnitude (`P̂ = P·W`) together with `W = 2 − V`. For fixed
//! injections the voltage equations are linear in `W` and are solved in
//! O(N) by two tree sweeps.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Injections, Network, PathIncidence};

/// Tolerance on the voltage-equation residual of solver output, p.u.
pub const STATE_TOLERANCE: f64 = 1e-6;

/// Modified-DistFlow state. Every vector is indexed by incidence position;
/// the slack is described by `w0`/`v0` and has angle zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdfState {
    pub w0: f64,
    pub v0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub p_br_hat: Vec<f64>,
    pub q_br_hat: Vec<f64>,
    pub delta: Vec<f64>,
}

impl MdfState {
    /// Physical net injections `P = P̂ / W`.
    pub fn injections(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.p_hat.iter().zip(&self.w).map(|(a, w)| a / w).collect();
        let q = self.q_hat.iter().zip(&self.w).map(|(a, w)| a / w).collect();
        (p, q)
    }

    /// Voltage magnitudes and angles indexed like [`Network::buses`].
    pub fn by_bus(&self, net: &Network, ti: &PathIncidence) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![self.v0; net.bus_count()];
        let mut d = vec![0.0; net.bus_count()];
        for (pos, &b) in ti.order().iter().enumerate() {
            v[b] = self.v[pos];
            d[b] = self.delta[pos];
        }
        (v, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub pl: f64,
    pub ql: f64,
    pub pl_p: f64,
    pub pl_q: f64,
    pub ql_p: f64,
    pub ql_q: f64,
}

/// Net injections of `inj` reordered to incidence positions.
pub fn positional(ti: &PathIncidence, values: &[f64]) -> Vec<f64> {
    ti.order().iter().map(|&b| values[b]).collect()
}

/// Solves the voltage equations `(I + TᵀRT·P + TᵀXT·Q) W = W0·1` by a
/// leaf-to-root sweep of subtree gains followed by a root-to-leaf sweep.
pub fn solve_fixed_load(net: &Network, ti: &PathIncidence, inj: &Injections) -> Result<MdfState> {
    let p = positional(ti, &inj.p);
    let q = positional(ti, &inj.q);
    let w = sweep_voltages(ti, 2.0 - net.slack_voltage(), &p, &q)?;
    finish(ti, net.slack_voltage(), w, &p, &q)
}

pub(crate) fn sweep_voltages(ti: &PathIncidence, w0: f64, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let n = ti.len();
    let (r, x) = (ti.r(), ti.x());
    let mut ap = p.to_vec();
    let mut aq = q.to_vec();
    let mut kappa = vec![0.0; n];
    for pos in (0..n).rev() {
        let d = 1.0 + r[pos] * ap[pos] + x[pos] * aq[pos];
        if !d.is_finite() || d.abs() < 1e-12 {
            return Err(Error::Singular { context: "modified DistFlow voltage equations", pivot: d });
        }
        kappa[pos] = 1.0 / d;
        if let Some(par) = ti.parent(pos) {
            ap[par] += ap[pos] * kappa[pos];
            aq[par] += aq[pos] * kappa[pos];
        }
    }
    let mut w = vec![0.0; n];
    for pos in 0..n {
        let up = ti.parent(pos).map_or(w0, |par| w[par]);
        w[pos] = kappa[pos] * up;
    }
    Ok(w)
}

fn finish(ti: &PathIncidence, v0: f64, w: Vec<f64>, p: &[f64], q: &[f64]) -> Result<MdfState> {
    let p_hat: Vec<f64> = p.iter().zip(&w).map(|(a, w)| a * w).collect();
    let q_hat: Vec<f64> = q.iter().zip(&w).map(|(a, w)| a * w).collect();
    assemble(ti, v0, w, p_hat, q_hat)
}

fn assemble(ti: &PathIncidence, v0: f64, w: Vec<f64>, p_hat: Vec<f64>, q_hat: Vec<f64>) -> Result<MdfState> {
    let p_br_hat: Vec<f64> = ti.t_mul(&p_hat).into_iter().map(|a| -a).collect();
    let q_br_hat: Vec<f64> = ti.t_mul(&q_hat).into_iter().map(|a| -a).collect();
    let v = w.iter().map(|w| 2.0 - w).collect();
    let mut state = MdfState { w0: 2.0 - v0, v0, w, v, p_hat, q_hat, p_br_hat, q_br_hat, delta: Vec::new() };
    state.delta = recover_angles(ti, &state)?;
    Ok(state)
}

/// Dense reference solution of the same equations by LU factorisation.
pub fn solve_fixed_load_dense(net: &Network, ti: &PathIncidence, inj: &Injections) -> Result<MdfState> {
    let p = positional(ti, &inj.p);
    let q = positional(ti, &inj.q);
    let n = ti.len();
    let t = ti.dense();
    let rn = DMatrix::from_diagonal(&DVector::from_column_slice(ti.r()));
    let xn = DMatrix::from_diagonal(&DVector::from_column_slice(ti.x()));
    let pn = DMatrix::from_diagonal(&DVector::from_column_slice(&p));
    let qn = DMatrix::from_diagonal(&DVector::from_column_slice(&q));
    let a = DMatrix::identity(n, n) + t.transpose() * rn * &t * pn + t.transpose() * xn * &t * qn;
    let w0 = 2.0 - net.slack_voltage();
    let w = a
        .lu()
        .solve(&DVector::from_element(n, w0))
        .ok_or(Error::Singular { context: "modified DistFlow voltage equations", pivot: 0.0 })?;
    finish(ti, net.slack_voltage(), w.as_slice().to_vec(), &p, &q)
}

/// `W0·1 − TᵀR T P̂ − TᵀX T Q̂`.
pub fn voltage_map(ti: &PathIncidence, w0: f64, p_hat: &[f64], q_hat: &[f64]) -> Vec<f64> {
    let a = ti.t_mul(p_hat);
    let b = ti.t_mul(q_hat);
    let drop: Vec<f64> = (0..ti.len()).map(|k| ti.r()[k] * a[k] + ti.x()[k] * b[k]).collect();
    ti.t_transpose_mul(&drop).into_iter().map(|d| w0 - d).collect()
}

/// Assembles a full state from solver variables after checking them against
/// the voltage equations.
pub fn state_from_solution(
    net: &Network,
    ti: &PathIncidence,
    p_hat: &[f64],
    q_hat: &[f64],
    w: &[f64],
) -> Result<MdfState> {
    let w0 = 2.0 - net.slack_voltage();
    let expect = voltage_map(ti, w0, p_hat, q_hat);
    let max_residual = expect.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if !(max_residual <= STATE_TOLERANCE) {
        return Err(Error::Inconsistent { max_residual });
    }
    assemble(ti, net.slack_voltage(), w.to_vec(), p_hat.to_vec(), q_hat.to_vec())
}

/// Angles accumulated root to leaf, `δ_c = δ_p − asin((X P̂ − R Q̂) / V_c)`.
pub fn recover_angles(ti: &PathIncidence, state: &MdfState) -> Result<Vec<f64>> {
    let mut delta = vec![0.0; ti.len()];
    for pos in 0..ti.len() {
        let s = (ti.x()[pos] * state.p_br_hat[pos] - ti.r()[pos] * state.q_br_hat[pos]) / state.v[pos];
        if !(s.abs() <= 1.0) {
            return Err(Error::AngleRecovery { bus: ti.order()[pos], value: s.abs() });
        }
        let up = ti.parent(pos).map_or(0.0, |par| delta[par]);
        delta[pos] = up - s.asin();
    }
    Ok(delta)
}

/// Total losses with their split into contributions of the active and
/// reactive modified flows.
pub fn losses(ti: &PathIncidence, state: &MdfState) -> LossReport {
    let (r, x) = (ti.r(), ti.x());
    let mut out = LossReport { pl: 0.0, ql: 0.0, pl_p: 0.0, pl_q: 0.0, ql_p: 0.0, ql_q: 0.0 };
    for k in 0..ti.len() {
        let a2 = state.p_br_hat[k] * state.p_br_hat[k];
        let b2 = state.q_br_hat[k] * state.q_br_hat[k];
        out.pl_p += r[k] * a2;
        out.pl_q += r[k] * b2;
        out.ql_p += x[k] * a2;
        out.ql_q += x[k] * b2;
    }
    out.pl = out.pl_p + out.pl_q;
    out.ql = out.ql_p + out.ql_q;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::two_bus;
    use crate::network::{build_path_incidence, Injections};
    use approx::assert_relative_eq;

    #[test]
    fn no_load_network() {
        let net = two_bus(0.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = solve_fixed_load(&net, &ti, &Injections::from_loads(&net)).unwrap();
        assert_eq!(s.v, vec![1.0]);
        assert_eq!(s.p_br_hat, vec![0.0]);
        assert_eq!(s.delta, vec![0.0]);
        assert_eq!(losses(&ti, &s).pl, 0.0);
    }

    #[test]
    fn two_bus_hand_values() {
        let net = two_bus(1.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = solve_fixed_load(&net, &ti, &Injections::from_loads(&net)).unwrap();
        assert_relative_eq!(s.w[0], 1.0 / 0.99, epsilon = 1e-14);
        assert_relative_eq!(s.v[0], 2.0 - 1.0 / 0.99, epsilon = 1e-14);
        let expect = -((0.02f64 * (1.0 / 0.99)) / (2.0 - 1.0 / 0.99)).asin();
        assert_relative_eq!(s.delta[0], expect, epsilon = 1e-14);
        let l = losses(&ti, &s);
        assert_relative_eq!(l.pl, 0.01 / (0.99 * 0.99), epsilon = 1e-14);
        assert_relative_eq!(l.ql, 0.02 / (0.99 * 0.99), epsilon = 1e-14);
        assert_eq!((l.pl_q, l.ql_q), (0.0, 0.0));
    }

    #[test]
    fn singular_system_is_reported() {
        let net = two_bus(100.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let err = solve_fixed_load(&net, &ti, &Injections::from_loads(&net)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn inconsistent_solution_is_reported() {
        let net = two_bus(0.5, 0.1, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = solve_fixed_load(&net, &ti, &Injections::from_loads(&net)).unwrap();
        let ok = state_from_solution(&net, &ti, &s.p_hat, &s.q_hat, &s.w).unwrap();
        assert_eq!(ok.v, s.v);
        match state_from_solution(&net, &ti, &s.p_hat, &s.q_hat, &[s.w[0] + 1e-3]) {
            Err(Error::Inconsistent { max_residual }) => assert_relative_eq!(max_residual, 1e-3, epsilon = 1e-9),
            other => panic!("{other:?}"),
        }
    }
}
