//! Exact AC power flow by Newton-Raphson in polar coordinates.
//!
//! Every slack-child subtree is an independent block once the slack voltage
//! is fixed, so Newton runs per feeder (in parallel with the `parallel`
//! feature) with a dense LU of each feeder Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdistflow::positional;
use crate::network::{Injections, Network, PathIncidence};
use crate::par::{self, Execution};

/// Default mismatch tolerance, p.u.
pub const PF_TOLERANCE: f64 = 1e-10;
/// Default perturbation of the finite-difference price oracle, p.u.
pub const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub exec: Execution,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { max_iter: 30, tol: PF_TOLERANCE, exec: Execution::default() }
    }
}

/// Converged AC state. `v` and `delta` are indexed by incidence position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcState {
    pub v0: f64,
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    pub pl_exact: f64,
    pub ql_exact: f64,
    pub iterations: usize,
}

impl AcState {
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

/// Jacobian blocks of one feeder over its positions (in feeder order).
#[derive(Debug, Clone, PartialEq)]
pub struct FeederJacobian {
    pub positions: Vec<usize>,
    pub dp_ddelta: DMatrix<f64>,
    pub dp_dv: DMatrix<f64>,
    pub dq_ddelta: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
}

/// Polar power-flow Jacobian over the non-slack buses. Buses of different
/// feeders do not interact, so only the diagonal feeder blocks are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub n: usize,
    pub feeders: Vec<FeederJacobian>,
}

impl JacobianBlocks {
    /// Dense blocks over all positions (for small networks).
    pub fn dense(&self) -> [DMatrix<f64>; 4] {
        let mut out = [(); 4].map(|_| DMatrix::zeros(self.n, self.n));
        for f in &self.feeders {
            for (a, &i) in f.positions.iter().enumerate() {
                for (b, &j) in f.positions.iter().enumerate() {
                    out[0][(i, j)] = f.dp_ddelta[(a, b)];
                    out[1][(i, j)] = f.dp_dv[(a, b)];
                    out[2][(i, j)] = f.dq_ddelta[(a, b)];
                    out[3][(i, j)] = f.dq_dv[(a, b)];
                }
            }
        }
        out
    }
}

/// `∂V/∂P` and `∂V/∂Q` of one feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederSensitivity {
    pub positions: Vec<usize>,
    pub dv_dp: DMatrix<f64>,
    pub dv_dq: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSensitivities {
    pub n: usize,
    pub feeders: Vec<FeederSensitivity>,
}

impl VoltageSensitivities {
    pub fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut p = DMatrix::zeros(self.n, self.n);
        let mut q = DMatrix::zeros(self.n, self.n);
        for f in &self.feeders {
            for (a, &i) in f.positions.iter().enumerate() {
                for (b, &j) in f.positions.iter().enumerate() {
                    p[(i, j)] = f.dv_dp[(a, b)];
                    q[(i, j)] = f.dv_dq[(a, b)];
                }
            }
        }
        (p, q)
    }
}

/// Admittance data of one feeder; local indices follow the feeder's
/// position list.
struct FeederModel {
    positions: Vec<usize>,
    /// Per local bus: neighbours `(local index or None for slack, g, b)`.
    adj: Vec<Vec<(Option<usize>, f64, f64)>>,
    gii: Vec<f64>,
    bii: Vec<f64>,
    /// Series admittance of the branch joining the feeder to the slack.
    root: (usize, f64, f64),
}

fn admittance(r: f64, x: f64) -> (f64, f64) {
    let z2 = r * r + x * x;
    (r / z2, -x / z2)
}

fn feeder_models(ti: &PathIncidence) -> Vec<FeederModel> {
    ti.feeders()
        .iter()
        .map(|positions| {
            let m = positions.len();
            let local: std::collections::HashMap<usize, usize> =
                positions.iter().enumerate().map(|(a, &p)| (p, a)).collect();
            let mut adj = vec![Vec::new(); m];
            let mut gii = vec![0.0; m];
            let mut bii = vec![0.0; m];
            let mut root = (0, 0.0, 0.0);
            for (a, &pos) in positions.iter().enumerate() {
                let (g, b) = admittance(ti.r()[pos], ti.x()[pos]);
                gii[a] += g;
                bii[a] += b;
                match ti.parent(pos) {
                    Some(par) => {
                        let pa = local[&par];
                        gii[pa] += g;
                        bii[pa] += b;
                        adj[a].push((Some(pa), -g, -b));
                        adj[pa].push((Some(a), -g, -b));
                    }
                    None => {
                        adj[a].push((None, -g, -b));
                        root = (a, g, b);
                    }
                }
            }
            FeederModel { positions: positions.clone(), adj, gii, bii, root }
        })
        .collect()
}

impl FeederModel {
    /// Net injections computed from the state.
    fn injections(&self, v0: f64, v: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = v.len();
        let mut p = vec![0.0; m];
        let mut q = vec![0.0; m];
        for i in 0..m {
            let mut sp = self.gii[i] * v[i];
            let mut sq = -self.bii[i] * v[i];
            for &(j, g, b) in &self.adj[i] {
                let (vj, dj) = j.map_or((v0, 0.0), |j| (v[j], d[j]));
                let (s, c) = (d[i] - dj).sin_cos();
                sp += vj * (g * c + b * s);
                sq += vj * (g * s - b * c);
            }
            p[i] = v[i] * sp;
            q[i] = v[i] * sq;
        }
        (p, q)
    }

    fn jacobian(&self, v0: f64, v: &[f64], d: &[f64]) -> [DMatrix<f64>; 4] {
        let m = v.len();
        let (p, q) = self.injections(v0, v, d);
        let mut j = [(); 4].map(|_| DMatrix::zeros(m, m));
        for i in 0..m {
            for &(k, g, b) in &self.adj[i] {
                let Some(k) = k else { continue };
                let (s, c) = (d[i] - d[k]).sin_cos();
                j[0][(i, k)] = v[i] * v[k] * (g * s - b * c);
                j[1][(i, k)] = v[i] * (g * c + b * s);
                j[2][(i, k)] = -v[i] * v[k] * (g * c + b * s);
                j[3][(i, k)] = v[i] * (g * s - b * c);
            }
            j[0][(i, i)] = -q[i] - self.bii[i] * v[i] * v[i];
            j[1][(i, i)] = p[i] / v[i] + self.gii[i] * v[i];
            j[2][(i, i)] = p[i] - self.gii[i] * v[i] * v[i];
            j[3][(i, i)] = q[i] / v[i] - self.bii[i] * v[i];
        }
        j
    }

    fn full_jacobian(&self, v0: f64, v: &[f64], d: &[f64]) -> DMatrix<f64> {
        let m = v.len();
        let [a, b, c, e] = self.jacobian(v0, v, d);
        let mut full = DMatrix::zeros(2 * m, 2 * m);
        full.view_mut((0, 0), (m, m)).copy_from(&a);
        full.view_mut((0, m), (m, m)).copy_from(&b);
        full.view_mut((m, 0), (m, m)).copy_from(&c);
        full.view_mut((m, m), (m, m)).copy_from(&e);
        full
    }

    /// Newton iterations from `(v, d)`; returns the iteration count.
    fn newton(&self, v0: f64, ps: &[f64], qs: &[f64], v: &mut [f64], d: &mut [f64], opts: &PfOptions) -> Result<usize> {
        let m = v.len();
        let mut mismatch = f64::INFINITY;
        // Mismatches cannot be resolved below the rounding error of the
        // largest admittance terms.
        let ymax = self.gii.iter().zip(&self.bii).fold(0.0f64, |a, (g, b)| a.max(g.abs() + b.abs()));
        let tol = opts.tol.max(16.0 * f64::EPSILON * ymax);
        for it in 0..=opts.max_iter {
            let (p, q) = self.injections(v0, v, d);
            let mut f = DVector::zeros(2 * m);
            for i in 0..m {
                f[i] = ps[i] - p[i];
                f[m + i] = qs[i] - q[i];
            }
            mismatch = f.amax();
            if !mismatch.is_finite() {
                break;
            }
            if mismatch <= tol {
                return Ok(it);
            }
            if it == opts.max_iter {
                break;
            }
            let jac = self.full_jacobian(v0, v, d);
            let step = jac.lu().solve(&f).ok_or(Error::SingularJacobian)?;
            if step.iter().any(|s| !s.is_finite()) {
                return Err(Error::SingularJacobian);
            }
            for i in 0..m {
                d[i] += step[i];
                v[i] += step[m + i];
            }
        }
        Err(Error::Divergence { iterations: opts.max_iter, mismatch })
    }

    /// Power drawn from the slack by this feeder.
    fn slack_share(&self, v0: f64, v: &[f64], d: &[f64]) -> (f64, f64) {
        let (a, g, b) = self.root;
        let (s, c) = (0.0 - d[a]).sin_cos();
        let p = v0 * v0 * g - v0 * v[a] * (g * c + b * s);
        let q = -v0 * v0 * b - v0 * v[a] * (g * s - b * c);
        (p, q)
    }

    fn losses(&self, ti: &PathIncidence, v0: f64, v: &[f64], d: &[f64]) -> (f64, f64) {
        let local: std::collections::HashMap<usize, usize> =
            self.positions.iter().enumerate().map(|(a, &p)| (p, a)).collect();
        let (mut pl, mut ql) = (0.0, 0.0);
        for (a, &pos) in self.positions.iter().enumerate() {
            let (vu, du) = ti.parent(pos).map_or((v0, 0.0), |par| (v[local[&par]], d[local[&par]]));
            let (r, x) = (ti.r()[pos], ti.x()[pos]);
            let dv2 = vu * vu + v[a] * v[a] - 2.0 * vu * v[a] * (du - d[a]).cos();
            let z2 = r * r + x * x;
            pl += r * dv2 / z2;
            ql += x * dv2 / z2;
        }
        (pl, ql)
    }
}

struct FeederResult {
    v: Vec<f64>,
    d: Vec<f64>,
    share: (f64, f64),
    loss: (f64, f64),
    iterations: usize,
}

fn solve_feeder(
    model: &FeederModel,
    ti: &PathIncidence,
    v0: f64,
    p: &[f64],
    q: &[f64],
    warm: Option<(&[f64], &[f64])>,
    opts: &PfOptions,
) -> Result<FeederResult> {
    let ps: Vec<f64> = model.positions.iter().map(|&k| p[k]).collect();
    let qs: Vec<f64> = model.positions.iter().map(|&k| q[k]).collect();
    let (mut v, mut d): (Vec<f64>, Vec<f64>) = match warm {
        Some((wv, wd)) => (model.positions.iter().map(|&k| wv[k]).collect(), model.positions.iter().map(|&k| wd[k]).collect()),
        None => (vec![v0; ps.len()], vec![0.0; ps.len()]),
    };
    let iterations = model.newton(v0, &ps, &qs, &mut v, &mut d, opts)?;
    let share = model.slack_share(v0, &v, &d);
    let loss = model.losses(ti, v0, &v, &d);
    Ok(FeederResult { v, d, share, loss, iterations })
}

/// Solves the AC power flow for net injections `inj` (indexed like the
/// network buses). `warm` gives positional starting voltages and angles;
/// otherwise a flat start is used.
pub fn newton_pf(
    net: &Network,
    ti: &PathIncidence,
    inj: &Injections,
    warm: Option<(&[f64], &[f64])>,
    opts: &PfOptions,
) -> Result<AcState> {
    let models = feeder_models(ti);
    let p = positional(ti, &inj.p);
    let q = positional(ti, &inj.q);
    let v0 = net.slack_voltage();
    let results = par::try_map(opts.exec, &models, |m| solve_feeder(m, ti, v0, &p, &q, warm, opts))?;
    let mut state = AcState {
        v0,
        v: vec![0.0; ti.len()],
        delta: vec![0.0; ti.len()],
        slack_p: -inj.p[net.slack_index()],
        slack_q: -inj.q[net.slack_index()],
        pl_exact: 0.0,
        ql_exact: 0.0,
        iterations: 0,
    };
    // Slack output covers the feeders' draw plus any load at the slack bus.
    for (m, r) in models.iter().zip(&results) {
        for (a, &pos) in m.positions.iter().enumerate() {
            state.v[pos] = r.v[a];
            state.delta[pos] = r.d[a];
        }
        state.slack_p += r.share.0;
        state.slack_q += r.share.1;
        state.pl_exact += r.loss.0;
        state.ql_exact += r.loss.1;
        state.iterations = state.iterations.max(r.iterations);
    }
    Ok(state)
}

/// Polar Jacobian at any operating point (positional `v`, `delta`).
pub fn jacobian_at(net: &Network, ti: &PathIncidence, v: &[f64], delta: &[f64]) -> JacobianBlocks {
    let v0 = net.slack_voltage();
    let feeders = feeder_models(ti)
        .into_iter()
        .map(|m| {
            let lv: Vec<f64> = m.positions.iter().map(|&k| v[k]).collect();
            let ld: Vec<f64> = m.positions.iter().map(|&k| delta[k]).collect();
            let [a, b, c, d] = m.jacobian(v0, &lv, &ld);
            FeederJacobian { positions: m.positions, dp_ddelta: a, dp_dv: b, dq_ddelta: c, dq_dv: d }
        })
        .collect();
    JacobianBlocks { n: ti.len(), feeders }
}

/// `∂V/∂P` and `∂V/∂Q` as the voltage rows of the inverse Jacobian.
pub fn voltage_sensitivities(jb: &JacobianBlocks, exec: Execution) -> Result<VoltageSensitivities> {
    let feeders = par::try_map(exec, &jb.feeders, |f| {
        let m = f.positions.len();
        let mut full = DMatrix::zeros(2 * m, 2 * m);
        full.view_mut((0, 0), (m, m)).copy_from(&f.dp_ddelta);
        full.view_mut((0, m), (m, m)).copy_from(&f.dp_dv);
        full.view_mut((m, 0), (m, m)).copy_from(&f.dq_ddelta);
        full.view_mut((m, m), (m, m)).copy_from(&f.dq_dv);
        let inv = full.try_inverse().ok_or(Error::SingularJacobian)?;
        if inv.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(FeederSensitivity {
            positions: f.positions.clone(),
            dv_dp: inv.view((m, 0), (m, m)).into_owned(),
            dv_dq: inv.view((m, m), (m, m)).into_owned(),
        })
    })?;
    Ok(VoltageSensitivities { n: jb.n, feeders })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    P,
    Q,
}

/// Consumer price at one bus: central difference of the slack cost
/// `C0p·P0 + C0q·Q0` with respect to the load at position `pos`.
pub fn fd_price_oracle(
    net: &Network,
    ti: &PathIncidence,
    inj: &Injections,
    base: &AcState,
    pos: usize,
    axis: Axis,
    eps: f64,
) -> Result<f64> {
    let (c0p, c0q) = net.psp_costs().unwrap_or((0.0, 0.0));
    let models = feeder_models(ti);
    let f = ti.feeder(pos);
    let model = &models[f];
    let p = positional(ti, &inj.p);
    let q = positional(ti, &inj.q);
    let opts = PfOptions { exec: Execution::Sequential, ..PfOptions::default() };
    let warm = Some((base.v.as_slice(), base.delta.as_slice()));
    let mut cost = [0.0; 2];
    for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
        let (mut pp, mut qq) = (p.clone(), q.clone());
        match axis {
            Axis::P => pp[pos] -= sign * eps,
            Axis::Q => qq[pos] -= sign * eps,
        }
        let r = solve_feeder(model, ti, net.slack_voltage(), &pp, &qq, warm, &opts)?;
        cost[k] = c0p * r.share.0 + c0q * r.share.1;
    }
    Ok((cost[0] - cost[1]) / (2.0 * eps))
}

/// Oracle prices `(P, Q)` at every non-slack position, in parallel.
pub fn fd_price_sweep(
    net: &Network,
    ti: &PathIncidence,
    inj: &Injections,
    base: &AcState,
    eps: f64,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    let positions: Vec<usize> = (0..ti.len()).collect();
    par::try_map(exec, &positions, |&pos| {
        Ok((
            fd_price_oracle(net, ti, inj, base, pos, Axis::P, eps)?,
            fd_price_oracle(net, ti, inj, base, pos, Axis::Q, eps)?,
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_path_incidence;
    use crate::network::tests::two_bus;
    use approx::assert_relative_eq;

    #[test]
    fn zero_load_converges_immediately() {
        let net = two_bus(0.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = newton_pf(&net, &ti, &Injections::from_loads(&net), None, &PfOptions::default()).unwrap();
        assert!(s.iterations <= 1);
        assert_eq!(s.v, vec![1.0]);
        assert_eq!(s.pl_exact, 0.0);
    }

    #[test]
    fn two_bus_closed_form() {
        // V1⁴ + (2(rP + xQ) − V0²) V1² + (r² + x²)(P² + Q²) = 0
        let (r, x, p, q) = (0.01, 0.02, 1.0, 0.3);
        let net = two_bus(p, q, r, x);
        let ti = build_path_incidence(&net);
        let s = newton_pf(&net, &ti, &Injections::from_loads(&net), None, &PfOptions::default()).unwrap();
        let bq = 2.0 * (r * p + x * q) - 1.0;
        let cq = (r * r + x * x) * (p * p + q * q);
        let v2 = (-bq + (bq * bq - 4.0 * cq).sqrt()) / 2.0;
        assert_relative_eq!(s.v[0], v2.sqrt(), epsilon = 1e-10);
        assert!((s.v[0] - 0.989899).abs() < 0.01);
        assert_relative_eq!(s.slack_p - p, s.pl_exact, epsilon = 1e-10);
        assert_relative_eq!(s.slack_q - q, s.ql_exact, epsilon = 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = two_bus(0.7, 0.2, 0.02, 0.03);
        let ti = build_path_incidence(&net);
        let models = feeder_models(&ti);
        let (v, d) = (vec![0.97], vec![-0.02]);
        let [a, b, c, e] = models[0].jacobian(1.0, &v, &d);
        let h = 1e-6;
        let (pp, qp) = models[0].injections(1.0, &v, &[d[0] + h]);
        let (pm, qm) = models[0].injections(1.0, &v, &[d[0] - h]);
        assert_relative_eq!(a[(0, 0)], (pp[0] - pm[0]) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(c[(0, 0)], (qp[0] - qm[0]) / (2.0 * h), max_relative = 1e-6);
        let (pp, qp) = models[0].injections(1.0, &[v[0] + h], &d);
        let (pm, qm) = models[0].injections(1.0, &[v[0] - h], &d);
        assert_relative_eq!(b[(0, 0)], (pp[0] - pm[0]) / (2.0 * h), max_relative = 1e-6);
        assert_relative_eq!(e[(0, 0)], (qp[0] - qm[0]) / (2.0 * h), max_relative = 1e-6);
    }

    #[test]
    fn zero_load_price_is_energy_cost() {
        let net = two_bus(0.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let inj = Injections::from_loads(&net);
        let s = newton_pf(&net, &ti, &inj, None, &PfOptions::default()).unwrap();
        let price = fd_price_oracle(&net, &ti, &inj, &s, 0, Axis::P, FD_EPS).unwrap();
        assert_relative_eq!(price, 30.0, epsilon = 1e-6);
    }

    #[test]
    fn loaded_price_exceeds_energy_cost() {
        let net = two_bus(1.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let inj = Injections::from_loads(&net);
        let s = newton_pf(&net, &ti, &inj, None, &PfOptions::default()).unwrap();
        assert!(fd_price_oracle(&net, &ti, &inj, &s, 0, Axis::P, FD_EPS).unwrap() > 30.0);
    }
}
