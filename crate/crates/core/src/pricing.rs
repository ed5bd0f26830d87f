//! Locational prices: marginal-loss DLMP, loss-allocation DLP and the
//! settlement of either against supply-point purchases.
//!
//! Loss factors are derivatives with respect to net injection. Consumer
//! prices therefore subtract them from the supply-point price, so a load that
//! raises losses pays more than `C₀`.

use std::io::Write;

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::acpf::{self, fd_price_sweep, jacobian_at, newton_pf, voltage_sensitivities, AcState, PfOptions, VoltageSensitivities};
use crate::error::{Error, Result};
use crate::mdistflow::{losses, MdfState};
use crate::mdopf::{dispatch_injections, Dispatch, OpfOutcome};
use crate::network::{BusId, Network, PathIncidence};
use crate::par::Execution;

/// Thermal multipliers above this value count as congestion, $/h per pu².
pub const CONGESTION_TOL: f64 = 1e-6;

/// `∂P̂/∂P`, `∂P̂/∂Q`, `∂Q̂/∂P`, `∂Q̂/∂Q` of one feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederInjectionSensitivity {
    pub positions: Vec<usize>,
    pub dp_dp: DMatrix<f64>,
    pub dp_dq: DMatrix<f64>,
    pub dq_dp: DMatrix<f64>,
    pub dq_dq: DMatrix<f64>,
}

/// Block-diagonal sensitivities of the modified injections; buses on
/// different feeders do not interact.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSensitivities {
    pub n: usize,
    pub feeders: Vec<FeederInjectionSensitivity>,
}

impl InjectionSensitivities {
    pub fn dense(&self) -> [DMatrix<f64>; 4] {
        let mut out = [(); 4].map(|_| DMatrix::zeros(self.n, self.n));
        for f in &self.feeders {
            for (a, &i) in f.positions.iter().enumerate() {
                for (b, &j) in f.positions.iter().enumerate() {
                    out[0][(i, j)] = f.dp_dp[(a, b)];
                    out[1][(i, j)] = f.dp_dq[(a, b)];
                    out[2][(i, j)] = f.dq_dp[(a, b)];
                    out[3][(i, j)] = f.dq_dq[(a, b)];
                }
            }
        }
        out
    }
}

/// Chain rule through `P̂ᵢ ≈ Pᵢ / Vᵢ`:
/// `∂P̂ᵢ/∂Pⱼ = δᵢⱼ/Vᵢ − (Pᵢ/Vᵢ²)·∂Vᵢ/∂Pⱼ` and its three analogues.
pub fn modified_injection_sensitivities(state: &MdfState, vs: &VoltageSensitivities) -> InjectionSensitivities {
    let (p, q) = state.injections();
    let feeders = vs
        .feeders
        .iter()
        .map(|f| {
            let m = f.positions.len();
            let mut out = FeederInjectionSensitivity {
                positions: f.positions.clone(),
                dp_dp: DMatrix::zeros(m, m),
                dp_dq: DMatrix::zeros(m, m),
                dq_dp: DMatrix::zeros(m, m),
                dq_dq: DMatrix::zeros(m, m),
            };
            for (a, &i) in f.positions.iter().enumerate() {
                let v = state.v[i];
                let (cp, cq) = (p[i] / (v * v), q[i] / (v * v));
                for b in 0..m {
                    let diag = if a == b { 1.0 / v } else { 0.0 };
                    out.dp_dp[(a, b)] = diag - cp * f.dv_dp[(a, b)];
                    out.dp_dq[(a, b)] = -cp * f.dv_dq[(a, b)];
                    out.dq_dp[(a, b)] = -cq * f.dv_dp[(a, b)];
                    out.dq_dq[(a, b)] = diag - cq * f.dv_dq[(a, b)];
                }
            }
            out
        })
        .collect();
    InjectionSensitivities { n: state.v.len(), feeders }
}

/// Path sums `Tᵀ(R∘a)`, `Tᵀ(X∘a)`, `Tᵀ(R∘b)`, `Tᵀ(X∘b)` with `a = T P̂` and
/// `b = T Q̂`. Entry `k` is the drop-weighted flow summed along the path of
/// bus `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSums {
    pub r_a: Vec<f64>,
    pub x_a: Vec<f64>,
    pub r_b: Vec<f64>,
    pub x_b: Vec<f64>,
}

pub fn path_sums(ti: &PathIncidence, state: &MdfState) -> PathSums {
    let a = ti.t_mul(&state.p_hat);
    let b = ti.t_mul(&state.q_hat);
    let weigh = |w: &[f64], f: &[f64]| ti.t_transpose_mul(&w.iter().zip(f).map(|(w, f)| w * f).collect::<Vec<_>>());
    PathSums { r_a: weigh(ti.r(), &a), x_a: weigh(ti.x(), &a), r_b: weigh(ti.r(), &b), x_b: weigh(ti.x(), &b) }
}

/// Loss factors by incidence position, dimensionless.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossFactors {
    pub dpl_dp: Vec<f64>,
    pub dpl_dq: Vec<f64>,
    pub dql_dp: Vec<f64>,
    pub dql_dq: Vec<f64>,
}

/// Derivatives of the model losses `Σ R(a² + b²)` and `Σ X(a² + b²)` with
/// respect to each net injection.
pub fn loss_factors(ti: &PathIncidence, state: &MdfState, sens: &InjectionSensitivities) -> LossFactors {
    let ps = path_sums(ti, state);
    let n = ti.len();
    let mut out = LossFactors { dpl_dp: vec![0.0; n], dpl_dq: vec![0.0; n], dql_dp: vec![0.0; n], dql_dq: vec![0.0; n] };
    for f in &sens.feeders {
        for (b, &j) in f.positions.iter().enumerate() {
            let mut acc = [0.0; 4];
            for (a, &i) in f.positions.iter().enumerate() {
                let (pp, pq, qp, qq) = (f.dp_dp[(a, b)], f.dp_dq[(a, b)], f.dq_dp[(a, b)], f.dq_dq[(a, b)]);
                acc[0] += ps.r_a[i] * pp + ps.r_b[i] * qp;
                acc[1] += ps.r_a[i] * pq + ps.r_b[i] * qq;
                acc[2] += ps.x_a[i] * pp + ps.x_b[i] * qp;
                acc[3] += ps.x_a[i] * pq + ps.x_b[i] * qq;
            }
            out.dpl_dp[j] = 2.0 * acc[0];
            out.dpl_dq[j] = 2.0 * acc[1];
            out.dql_dp[j] = 2.0 * acc[2];
            out.dql_dq[j] = 2.0 * acc[3];
        }
    }
    out
}

/// Central differences of the model losses under the same linearised
/// voltage response the analytic factors assume: for a unit change of `Pⱼ`
/// every `P̂ᵢ` moves with `Pᵢ / (Vᵢ + ε·∂Vᵢ/∂Pⱼ)`.
pub fn loss_factors_fd(ti: &PathIncidence, state: &MdfState, vs: &VoltageSensitivities, eps: f64) -> LossFactors {
    let (p, q) = state.injections();
    let n = ti.len();
    let mut out = LossFactors { dpl_dp: vec![0.0; n], dpl_dq: vec![0.0; n], dql_dp: vec![0.0; n], dql_dq: vec![0.0; n] };
    let eval = |ph: &[f64], qh: &[f64]| {
        let a = ti.t_mul(ph);
        let b = ti.t_mul(qh);
        (0..n).fold((0.0, 0.0), |(pl, ql), k| {
            let s = a[k] * a[k] + b[k] * b[k];
            (pl + ti.r()[k] * s, ql + ti.x()[k] * s)
        })
    };
    for f in &vs.feeders {
        for (b, &j) in f.positions.iter().enumerate() {
            for axis in 0..2 {
                let mut val = [(0.0, 0.0); 2];
                for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let e = sign * eps;
                    let mut ph = state.p_hat.clone();
                    let mut qh = state.q_hat.clone();
                    for (a, &i) in f.positions.iter().enumerate() {
                        let v = state.v[i];
                        let dv = if axis == 0 { f.dv_dp[(a, b)] } else { f.dv_dq[(a, b)] };
                        let vn = v + e * dv;
                        let (dp, dq) = match (axis, i == j) {
                            (0, true) => (e, 0.0),
                            (1, true) => (0.0, e),
                            _ => (0.0, 0.0),
                        };
                        ph[i] += (p[i] + dp) / vn - p[i] / v;
                        qh[i] += (q[i] + dq) / vn - q[i] / v;
                    }
                    val[k] = eval(&ph, &qh);
                }
                let dpl = (val[0].0 - val[1].0) / (2.0 * eps);
                let dql = (val[0].1 - val[1].1) / (2.0 * eps);
                if axis == 0 {
                    out.dpl_dp[j] = dpl;
                    out.dql_dp[j] = dql;
                } else {
                    out.dpl_dq[j] = dpl;
                    out.dql_dq[j] = dql;
                }
            }
        }
    }
    out
}

/// Active and reactive prices by incidence position, $/MWh and $/MVArh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusPrices {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// `DLMPᴾ = C₀ᴾ − C₀ᴾ·∂Pl/∂P − C₀ᵠ·∂Ql/∂P` and the reactive analogue.
pub fn prices_from_factors(net: &Network, lf: &LossFactors) -> BusPrices {
    let (c0p, c0q) = net.psp_costs().unwrap_or((0.0, 0.0));
    BusPrices {
        p: lf.dpl_dp.iter().zip(&lf.dql_dp).map(|(a, b)| c0p - c0p * a - c0q * b).collect(),
        q: lf.dpl_dq.iter().zip(&lf.dql_dq).map(|(a, b)| c0q - c0p * a - c0q * b).collect(),
    }
}

/// Marginal-loss prices at a model state: Jacobian at the state's voltages
/// and angles, voltage sensitivities, injection sensitivities, loss factors.
pub fn marginal_loss_prices(
    net: &Network,
    ti: &PathIncidence,
    state: &MdfState,
    exec: Execution,
) -> Result<(LossFactors, BusPrices)> {
    let jb = jacobian_at(net, ti, &state.v, &state.delta);
    let vs = voltage_sensitivities(&jb, exec)?;
    let sens = modified_injection_sensitivities(state, &vs);
    let lf = loss_factors(ti, state, &sens);
    let prices = prices_from_factors(net, &lf);
    Ok((lf, prices))
}

/// DLMP for an optimal dispatch. Refuses when a thermal limit binds; warns
/// when the supply point is not importing.
pub fn dlmp(net: &Network, ti: &PathIncidence, opf: &OpfOutcome, exec: Execution) -> Result<(LossFactors, BusPrices)> {
    let congested = opf.thermal_multipliers.iter().filter(|(_, z)| *z > CONGESTION_TOL).count();
    if congested > 0 {
        return Err(Error::Congestion { branches: congested });
    }
    if opf.dispatch[0].p <= 0.0 {
        warn!("supply-point active output is {:.6} pu; marginal-loss prices assume it is positive", opf.dispatch[0].p);
    }
    marginal_loss_prices(net, ti, &opf.state, exec)
}

/// Per-bus loss shares by incidence position, pu.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossAllocation {
    pub pl_p: Vec<f64>,
    pub ql_p: Vec<f64>,
    pub pl_q: Vec<f64>,
    pub ql_q: Vec<f64>,
}

/// Each bus is charged, on every branch of its path, the branch loss in
/// proportion to its own share of the flow: `Pl_kᴾ = P̂_k Σ_{l ∈ path(k)} R_l a_l`.
pub fn allocate_losses(ti: &PathIncidence, state: &MdfState) -> LossAllocation {
    let ps = path_sums(ti, state);
    let mul = |s: &[f64], v: &[f64]| s.iter().zip(v).map(|(a, b)| a * b).collect();
    LossAllocation {
        pl_p: mul(&ps.r_a, &state.p_hat),
        ql_p: mul(&ps.x_a, &state.p_hat),
        pl_q: mul(&ps.r_b, &state.q_hat),
        ql_q: mul(&ps.x_b, &state.q_hat),
    }
}

/// Loss-allocation prices
/// `DLPᴾ_k = C₀ᴾ − W_k(C₀ᴾ Σ_path R a + C₀ᵠ Σ_path X a)` and the reactive
/// analogue with `b`. The factor `W_k` converts a modified injection back to
/// a physical one, which makes the loss charge collected from all buses
/// equal the loss cost exactly.
pub fn dlp(net: &Network, ti: &PathIncidence, state: &MdfState) -> Result<BusPrices> {
    if let Some(pos) = state.v.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Nonphysical { bus: net.buses()[ti.order()[pos]].id, w: state.w[pos] });
    }
    let (c0p, c0q) = net.psp_costs().unwrap_or((0.0, 0.0));
    let ps = path_sums(ti, state);
    let n = ti.len();
    Ok(BusPrices {
        p: (0..n).map(|k| c0p - state.w[k] * (c0p * ps.r_a[k] + c0q * ps.x_a[k])).collect(),
        q: (0..n).map(|k| c0q - state.w[k] * (c0p * ps.r_b[k] + c0q * ps.x_b[k])).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mlm,
    Lam,
}

/// Losses the supply point is assumed to cover in a settlement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossBasis {
    /// Modified-DistFlow losses of the priced state.
    Model,
    /// Losses from an exact power flow, pu.
    Exact { pl: f64, ql: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettlementReport {
    pub mechanism: Mechanism,
    pub basis: LossBasis,
    /// $/h
    pub revenue: f64,
    /// $/h
    pub payment: f64,
    /// $/h
    pub ocl: f64,
    /// Supply-point cost of the losses, $/h.
    pub loss_cost: f64,
}

/// Loads pay their bus price, generators are paid theirs and the supply
/// point is paid `C₀` for everything not generated locally plus losses.
pub fn settle(
    net: &Network,
    ti: &PathIncidence,
    state: &MdfState,
    prices: &BusPrices,
    mechanism: Mechanism,
    basis: LossBasis,
) -> SettlementReport {
    let (c0p, c0q) = net.psp_costs().unwrap_or((0.0, 0.0));
    let (p, q) = state.injections();
    let slack = net.slack_bus();
    let mut revenue = c0p * slack.p_load + c0q * slack.q_load;
    let mut payment = 0.0;
    let (mut load_p, mut load_q) = (slack.p_load, slack.q_load);
    let (mut gen_p, mut gen_q) = (0.0, 0.0);
    for (k, &b) in ti.order().iter().enumerate() {
        let bus = &net.buses()[b];
        let (gp, gq) = (p[k] + bus.p_load, q[k] + bus.q_load);
        revenue += prices.p[k] * bus.p_load + prices.q[k] * bus.q_load;
        payment += prices.p[k] * gp + prices.q[k] * gq;
        load_p += bus.p_load;
        load_q += bus.q_load;
        gen_p += gp;
        gen_q += gq;
    }
    let (pl, ql) = match basis {
        LossBasis::Model => {
            let l = losses(ti, state);
            (l.pl, l.ql)
        }
        LossBasis::Exact { pl, ql } => (pl, ql),
    };
    payment += c0p * (load_p - gen_p + pl) + c0q * (load_q - gen_q + ql);
    let base = net.base_mva();
    let (revenue, payment) = (revenue * base, payment * base);
    SettlementReport {
        mechanism,
        basis,
        revenue,
        payment,
        ocl: revenue - payment,
        loss_cost: (c0p * pl + c0q * ql) * base,
    }
}

/// Finite-difference consumer prices of the exact power flow at `dispatch`.
pub fn oracle_prices(
    net: &Network,
    ti: &PathIncidence,
    dispatch: &[Dispatch],
    exec: Execution,
) -> Result<(AcState, BusPrices)> {
    let inj = dispatch_injections(net, dispatch);
    let ac = newton_pf(net, ti, &inj, None, &PfOptions { exec, ..PfOptions::default() })?;
    let sweep = fd_price_sweep(net, ti, &inj, &ac, acpf::FD_EPS, exec)?;
    let (p, q) = sweep.into_iter().unzip();
    Ok((ac, BusPrices { p, q }))
}

/// Mean of `|a − b| / |b|` over all entries.
pub fn mean_relative_error(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(a, b)| ((a - b) / b).abs()).sum::<f64>() / a.len() as f64
}

/// One row per non-slack bus.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PriceRow {
    pub bus: BusId,
    #[serde(rename = "dlmp_p[$ per MWh]")]
    pub dlmp_p: Option<f64>,
    #[serde(rename = "dlmp_q[$ per MVArh]")]
    pub dlmp_q: Option<f64>,
    #[serde(rename = "dlp_p[$ per MWh]")]
    pub dlp_p: Option<f64>,
    #[serde(rename = "dlp_q[$ per MVArh]")]
    pub dlp_q: Option<f64>,
    #[serde(rename = "dpl_dp[-]")]
    pub dpl_dp: Option<f64>,
    #[serde(rename = "dpl_dq[-]")]
    pub dpl_dq: Option<f64>,
    #[serde(rename = "dql_dp[-]")]
    pub dql_dp: Option<f64>,
    #[serde(rename = "dql_dq[-]")]
    pub dql_dq: Option<f64>,
    #[serde(rename = "pl_p[pu]")]
    pub pl_p: Option<f64>,
    #[serde(rename = "ql_p[pu]")]
    pub ql_p: Option<f64>,
    #[serde(rename = "pl_q[pu]")]
    pub pl_q: Option<f64>,
    #[serde(rename = "ql_q[pu]")]
    pub ql_q: Option<f64>,
    #[serde(rename = "oracle_p[$ per MWh]")]
    pub oracle_p: Option<f64>,
    #[serde(rename = "oracle_q[$ per MVArh]")]
    pub oracle_q: Option<f64>,
    #[serde(rename = "err_p[%]")]
    pub err_p: Option<f64>,
    #[serde(rename = "err_q[%]")]
    pub err_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PriceTable {
    pub rows: Vec<PriceRow>,
}

impl PriceTable {
    pub fn new(net: &Network, ti: &PathIncidence) -> Self {
        let rows = ti.order().iter().map(|&b| PriceRow { bus: net.buses()[b].id, ..PriceRow::default() }).collect();
        PriceTable { rows }
    }

    pub fn with_mlm(mut self, lf: &LossFactors, prices: &BusPrices) -> Self {
        for (k, r) in self.rows.iter_mut().enumerate() {
            r.dlmp_p = Some(prices.p[k]);
            r.dlmp_q = Some(prices.q[k]);
            r.dpl_dp = Some(lf.dpl_dp[k]);
            r.dpl_dq = Some(lf.dpl_dq[k]);
            r.dql_dp = Some(lf.dql_dp[k]);
            r.dql_dq = Some(lf.dql_dq[k]);
        }
        self
    }

    pub fn with_lam(mut self, alloc: &LossAllocation, prices: &BusPrices) -> Self {
        for (k, r) in self.rows.iter_mut().enumerate() {
            r.dlp_p = Some(prices.p[k]);
            r.dlp_q = Some(prices.q[k]);
            r.pl_p = Some(alloc.pl_p[k]);
            r.ql_p = Some(alloc.ql_p[k]);
            r.pl_q = Some(alloc.pl_q[k]);
            r.ql_q = Some(alloc.ql_q[k]);
        }
        self
    }

    /// Oracle prices and, where DLMP is present, its relative error in %.
    pub fn with_oracle(mut self, oracle: &BusPrices) -> Self {
        for (k, r) in self.rows.iter_mut().enumerate() {
            r.oracle_p = Some(oracle.p[k]);
            r.oracle_q = Some(oracle.q[k]);
            r.err_p = r.dlmp_p.map(|d| 100.0 * ((d - oracle.p[k]) / oracle.p[k]).abs());
            r.err_q = r.dlmp_q.map(|d| 100.0 * ((d - oracle.q[k]) / oracle.q[k]).abs());
        }
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdistflow::solve_fixed_load;
    use crate::network::tests::two_bus;
    use crate::network::{build_path_incidence, Injections};
    use approx::assert_relative_eq;

    fn state(net: &Network, ti: &PathIncidence) -> MdfState {
        solve_fixed_load(net, ti, &Injections::from_loads(net)).unwrap()
    }

    #[test]
    fn zero_injection_sensitivities_are_diagonal() {
        let net = two_bus(0.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let vs = voltage_sensitivities(&jacobian_at(&net, &ti, &s.v, &s.delta), Execution::Sequential).unwrap();
        let [pp, pq, qp, qq] = modified_injection_sensitivities(&s, &vs).dense();
        assert_eq!((pp[(0, 0)], pq[(0, 0)], qp[(0, 0)], qq[(0, 0)]), (1.0, 0.0, 0.0, 1.0));
        let lf = loss_factors(&ti, &s, &modified_injection_sensitivities(&s, &vs));
        assert_eq!(lf.dpl_dp, vec![0.0]);
        let prices = prices_from_factors(&net, &lf);
        assert_eq!((prices.p[0], prices.q[0]), (30.0, 3.0));
        let d = dlp(&net, &ti, &s).unwrap();
        assert_eq!((d.p[0], d.q[0]), (30.0, 3.0));
    }

    #[test]
    fn two_bus_allocation_by_hand() {
        let net = two_bus(1.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let a = allocate_losses(&ti, &s);
        assert_relative_eq!(a.pl_p[0], 0.01 * 1.0 / (0.99 * 0.99), epsilon = 1e-14);
        assert_relative_eq!(a.pl_p[0], losses(&ti, &s).pl_p, epsilon = 1e-15);
    }

    #[test]
    fn two_bus_dlp_by_hand() {
        let net = two_bus(1.0, 0.0, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let d = dlp(&net, &ti, &state(&net, &ti)).unwrap();
        assert_relative_eq!(d.p[0], 30.367, epsilon = 1e-3);
    }

    #[test]
    fn two_bus_loss_factor_against_exact_losses() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let (lf, _) = marginal_loss_prices(&net, &ti, &s, Execution::Sequential).unwrap();
        let eps = 1e-5;
        let pl = |dp: f64| {
            let mut inj = Injections::from_loads(&net);
            inj.p[1] += dp;
            newton_pf(&net, &ti, &inj, None, &PfOptions::default()).unwrap().pl_exact
        };
        let fd = (pl(eps) - pl(-eps)) / (2.0 * eps);
        assert!(((lf.dpl_dp[0] - fd) / fd).abs() < 0.05, "{} vs {}", lf.dpl_dp[0], fd);
    }

    #[test]
    fn dlp_settlement_is_exact_on_the_model() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let d = dlp(&net, &ti, &s).unwrap();
        let rep = settle(&net, &ti, &s, &d, Mechanism::Lam, LossBasis::Model);
        assert!(rep.ocl.abs() < 1e-12 * rep.revenue);
        let (_, m) = marginal_loss_prices(&net, &ti, &s, Execution::Sequential).unwrap();
        assert!(settle(&net, &ti, &s, &m, Mechanism::Mlm, LossBasis::Model).ocl > 0.0);
    }

    #[test]
    fn analytic_factors_match_model_differences() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let vs = voltage_sensitivities(&jacobian_at(&net, &ti, &s.v, &s.delta), Execution::Sequential).unwrap();
        let lf = loss_factors(&ti, &s, &modified_injection_sensitivities(&s, &vs));
        let fd = loss_factors_fd(&ti, &s, &vs, 1e-6);
        for (a, b) in [(&lf.dpl_dp, &fd.dpl_dp), (&lf.dpl_dq, &fd.dpl_dq), (&lf.dql_dp, &fd.dql_dp), (&lf.dql_dq, &fd.dql_dq)] {
            assert_relative_eq!(a[0], b[0], max_relative = 1e-7);
        }
    }

    #[test]
    fn price_table_csv_has_units() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let ti = build_path_incidence(&net);
        let s = state(&net, &ti);
        let t = PriceTable::new(&net, &ti).with_lam(&allocate_losses(&ti, &s), &dlp(&net, &ti, &s).unwrap());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bus,dlmp_p[$ per MWh],"));
        assert_eq!(text.lines().count(), 2);
    }
}
