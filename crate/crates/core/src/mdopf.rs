//! Optimal power flow on the modified-DistFlow model.
//!
//! The problem is assembled in the standard form of [`crate::qcqp`]. Costs
//! are kept in $/MWh against per-unit powers, so the solver objective is in
//! `$ / base_mva` per hour and equality multipliers read directly in $/MWh.

use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::acpf::{newton_pf, AcState, PfOptions};
use crate::error::{Error, Result};
use crate::mdistflow::{self, positional, MdfState};
use crate::network::{BusId, Injections, Network, PathIncidence};
use crate::par::{self, Execution};
use crate::qcqp::{self, LinearRow, QcqpProblem, QuadRow, SolveStats, SolverConfig, SparseRow, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdopfOptions {
    /// Enforce branch thermal limits where `i_max` is set.
    pub thermal_limits: bool,
    /// Refuse to build unless the objective is certified convex.
    pub require_convexity: bool,
    pub solver: SolverConfig,
}

impl Default for MdopfOptions {
    fn default() -> Self {
        MdopfOptions {
            thermal_limits: false,
            require_convexity: false,
            solver: SolverConfig { tol_gap: 1e-10, tol_feas: 1e-10, allow_indefinite: true, ..SolverConfig::default() },
        }
    }
}

/// Solver indices of one generator's `P̂ᴳ` and `Q̂ᴳ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GenVars {
    /// Network bus index.
    pub bus: usize,
    pub id: BusId,
    pub p: usize,
    pub q: usize,
}

/// Variable layout. Bus quantities are indexed like [`Network::buses`];
/// branch flows by incidence position. The slack generator comes first in
/// `gens`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarMap {
    pub w: Vec<usize>,
    pub v: Vec<usize>,
    pub p_hat: Vec<usize>,
    pub q_hat: Vec<usize>,
    pub gens: Vec<GenVars>,
    pub p_br: Vec<usize>,
    pub q_br: Vec<usize>,
    len: usize,
}

impl VarMap {
    pub fn new(net: &Network, ti: &PathIncidence) -> Self {
        let nb = net.bus_count();
        let slack = net.slack_index();
        let mut next = 0;
        let mut take = |k: usize| {
            let r: Vec<usize> = (next..next + k).collect();
            next += k;
            r
        };
        let w = take(nb);
        let v = take(nb);
        let p_hat = take(nb);
        let q_hat = take(nb);
        let mut gen_buses = vec![slack];
        gen_buses.extend((0..nb).filter(|&b| b != slack && net.buses()[b].gen.is_some()));
        let gens = gen_buses
            .into_iter()
            .map(|b| {
                let pq = take(2);
                GenVars { bus: b, id: net.buses()[b].id, p: pq[0], q: pq[1] }
            })
            .collect();
        let p_br = take(ti.len());
        let q_br = take(ti.len());
        VarMap { w, v, p_hat, q_hat, gens, p_br, q_br, len: next }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Non-slack generators.
    pub fn dgs(&self) -> &[GenVars] {
        &self.gens[1..]
    }

    pub fn names(&self, net: &Network, ti: &PathIncidence) -> Vec<String> {
        let mut out = vec![String::new(); self.len];
        for (b, bus) in net.buses().iter().enumerate() {
            out[self.w[b]] = format!("W[{}]", bus.id);
            out[self.v[b]] = format!("V[{}]", bus.id);
            out[self.p_hat[b]] = format!("Phat[{}]", bus.id);
            out[self.q_hat[b]] = format!("Qhat[{}]", bus.id);
        }
        for g in &self.gens {
            out[g.p] = format!("PhatG[{}]", g.id);
            out[g.q] = format!("QhatG[{}]", g.id);
        }
        for pos in 0..ti.len() {
            let br = &net.branches()[ti.branch(pos)];
            out[self.p_br[pos]] = format!("Phat[{}-{}]", br.from_bus, br.to_bus);
            out[self.q_br[pos]] = format!("Qhat[{}-{}]", br.from_bus, br.to_bus);
        }
        out
    }
}

/// Row indices needed to read prices and congestion back from a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowMap {
    pub p_injection: Vec<usize>,
    pub q_injection: Vec<usize>,
    /// `(position, quadratic row)` of each thermal limit.
    pub thermal: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdCertificate {
    pub psd: bool,
    /// Smallest pivot of the pivoted Cholesky factorisation.
    pub min_pivot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub psd: bool,
    pub min_pivot: f64,
    /// `tr(Cᴾ) + tr(Cᵠ)` over non-slack generators.
    pub cost_trace: f64,
    pub trace_condition: bool,
}

/// Objective `xᵀHx + gᵀx + c` with `H` as an upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Objective {
    pub hessian: Vec<(usize, usize, f64)>,
    pub g: Vec<f64>,
    pub c: f64,
    /// Load-only voltages by incidence position.
    pub v_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdopfProblem {
    pub qcqp: QcqpProblem,
    pub vars: VarMap,
    pub rows: RowMap,
    pub convexity: ConvexityReport,
    pub v_d: Vec<f64>,
}

fn slack_costs(net: &Network) -> (f64, f64) {
    net.psp_costs().unwrap_or((0.0, 0.0))
}

fn dg_positions(ti: &PathIncidence, vars: &VarMap) -> Vec<usize> {
    vars.dgs().iter().map(|g| ti.position(g.bus).expect("non-slack")).collect()
}

/// Linear and quadratic cost terms. The slack is priced at the fixed
/// supply-point voltage, the other generators at the load-only voltage plus
/// the affine voltage response to their own output.
pub fn build_objective(net: &Network, ti: &PathIncidence, vars: &VarMap) -> Result<Objective> {
    let w0 = 2.0 - net.slack_voltage();
    let pd: Vec<f64> = ti.order().iter().map(|&b| -net.buses()[b].p_load).collect();
    let qd: Vec<f64> = ti.order().iter().map(|&b| -net.buses()[b].q_load).collect();
    let v_d: Vec<f64> = mdistflow::sweep_voltages(ti, w0, &pd, &qd)?.into_iter().map(|w| 2.0 - w).collect();

    let mut g = vec![0.0; vars.len()];
    let (c0p, c0q) = slack_costs(net);
    let slack = vars.gens[0];
    g[slack.p] = net.slack_voltage() * c0p;
    g[slack.q] = net.slack_voltage() * c0q;

    let positions = dg_positions(ti, vars);
    let costs: Vec<(f64, f64)> = vars
        .dgs()
        .iter()
        .map(|gv| net.buses()[gv.bus].gen.as_ref().map(|x| (x.cost_p, x.cost_q)).expect("generator"))
        .collect();
    for ((gv, &pos), &(cp, cq)) in vars.dgs().iter().zip(&positions).zip(&costs) {
        g[gv.p] = v_d[pos] * cp;
        g[gv.q] = v_d[pos] * cq;
    }

    let sr = ti.t_transpose_mul(ti.r());
    let sx = ti.t_transpose_mul(ti.x());
    let mut by_feeder: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &pos) in positions.iter().enumerate() {
        by_feeder.entry(ti.feeder(pos)).or_default().push(k);
    }
    let mut h: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut add = |a: usize, b: usize, v: f64| {
        if v != 0.0 {
            let key = if a <= b { (a, b) } else { (b, a) };
            let scale = if a == b { 1.0 } else { 0.5 };
            *h.entry(key).or_insert(0.0) += scale * v;
        }
    };
    for members in by_feeder.values() {
        for &i in members {
            for &j in members {
                let mr = ti.shared_path_sum(positions[i], positions[j], &sr);
                let mx = ti.shared_path_sum(positions[i], positions[j], &sx);
                let (gi, gj) = (vars.dgs()[i], vars.dgs()[j]);
                let (cp, cq) = costs[i];
                add(gi.p, gj.p, cp * mr);
                add(gi.p, gj.q, cp * mx);
                add(gi.q, gj.p, cq * mr);
                add(gi.q, gj.q, cq * mx);
            }
        }
    }
    let hessian = h.into_iter().filter(|&(_, v)| v != 0.0).map(|((a, b), v)| (a, b, v)).collect();
    Ok(Objective { hessian, g, c: 0.0, v_d })
}

/// Numerical PSD test by diagonally pivoted Cholesky. A pivot below
/// `−1e−10·‖H‖` rejects; once the largest remaining pivot is negligible the
/// remaining Schur complement must vanish as well.
pub fn certify_convexity(h: &DMatrix<f64>) -> PsdCertificate {
    let n = h.nrows();
    if n == 0 {
        return PsdCertificate { psd: true, min_pivot: 0.0 };
    }
    let mut a = (h + h.transpose()) * 0.5;
    let norm = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * norm;
    let mut rest: Vec<usize> = (0..n).collect();
    let mut min_pivot = f64::INFINITY;
    while !rest.is_empty() {
        let (ri, p) = rest
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| a[(x.1, x.1)].total_cmp(&a[(y.1, y.1)]))
            .expect("non-empty");
        let d = a[(p, p)];
        min_pivot = min_pivot.min(d);
        if d < -tol {
            return PsdCertificate { psd: false, min_pivot };
        }
        if d <= tol {
            let mut off = 0.0f64;
            for &i in &rest {
                for &j in &rest {
                    if i != j {
                        off = off.max(a[(i, j)].abs());
                    }
                }
            }
            if off > tol {
                return PsdCertificate { psd: false, min_pivot: min_pivot.min(-off) };
            }
            return PsdCertificate { psd: true, min_pivot };
        }
        rest.swap_remove(ri);
        for &i in &rest {
            let f = a[(i, p)] / d;
            for &j in &rest {
                a[(i, j)] -= f * a[(p, j)];
            }
        }
    }
    PsdCertificate { psd: true, min_pivot }
}

/// `tr(Cᴾ) + tr(Cᵠ)` over the non-slack generators.
pub fn cost_trace(net: &Network) -> f64 {
    let slack = net.slack_index();
    net.buses()
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != slack)
        .filter_map(|(_, bus)| bus.gen.as_ref())
        .map(|g| g.cost_p + g.cost_q)
        .sum()
}

/// Certifies the objective Hessian feeder by feeder; generators on
/// different feeders are never coupled.
pub fn certify_objective(net: &Network, ti: &PathIncidence, vars: &VarMap, obj: &Objective) -> ConvexityReport {
    let positions = dg_positions(ti, vars);
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, gv) in vars.dgs().iter().enumerate() {
        let b = blocks.entry(ti.feeder(positions[k])).or_default();
        b.push(gv.p);
        b.push(gv.q);
    }
    let mut local = vec![usize::MAX; vars.len()];
    let mut owner = vec![usize::MAX; vars.len()];
    let blocks: Vec<Vec<usize>> = blocks.into_values().collect();
    for (bi, members) in blocks.iter().enumerate() {
        for (li, &v) in members.iter().enumerate() {
            local[v] = li;
            owner[v] = bi;
        }
    }
    let mut dense: Vec<DMatrix<f64>> = blocks.iter().map(|m| DMatrix::zeros(m.len(), m.len())).collect();
    for &(i, j, v) in &obj.hessian {
        let bi = owner[i];
        debug_assert_eq!(bi, owner[j]);
        dense[bi][(local[i], local[j])] += v;
        if i != j {
            dense[bi][(local[j], local[i])] += v;
        }
    }
    let certs = par::map(Execution::default(), &dense, certify_convexity);
    let psd = certs.iter().all(|c| c.psd);
    let min_pivot = certs.iter().map(|c| c.min_pivot).fold(f64::INFINITY, f64::min);
    let trace = cost_trace(net);
    ConvexityReport {
        psd,
        min_pivot: if min_pivot.is_finite() { min_pivot } else { 0.0 },
        cost_trace: trace,
        trace_condition: trace > 0.0,
    }
}

/// Assembles the optimisation problem.
pub fn build(net: &Network, ti: &PathIncidence, opts: &MdopfOptions) -> Result<MdopfProblem> {
    let vars = VarMap::new(net, ti);
    let obj = build_objective(net, ti, &vars)?;
    let convexity = certify_objective(net, ti, &vars, &obj);
    if !convexity.trace_condition {
        if opts.require_convexity {
            return Err(Error::Convexity(format!(
                "trace of the non-slack cost matrices is {} (must be positive)",
                convexity.cost_trace
            )));
        }
        if !vars.dgs().is_empty() {
            warn!("non-slack generator costs have zero trace; proceeding on the numerical certificate");
        }
    }
    if !convexity.psd {
        if opts.require_convexity {
            return Err(Error::Convexity(format!("objective Hessian is indefinite (pivot {:.3e})", convexity.min_pivot)));
        }
        warn!("objective Hessian is indefinite (pivot {:.3e}); solving for a stationary point", convexity.min_pivot);
    }

    let mut p = QcqpProblem::new(vars.len());
    p.hessian = obj.hessian;
    p.g = obj.g;
    p.c = obj.c;
    p.var_names = vars.names(net, ti);

    let nb = net.bus_count();
    let slack = net.slack_index();
    let row = |a: SparseRow, b: f64, tag: &str| LinearRow { a, b, tag: tag.to_string() };

    for (kind, hat, br) in [("p_balance", &vars.p_hat, &vars.p_br), ("q_balance", &vars.q_hat, &vars.q_br)] {
        for b in 0..nb {
            let mut a = SparseRow::new().push(hat[b], 1.0);
            let kids: &[usize] = match ti.position(b) {
                Some(pos) => {
                    a = a.push(br[pos], 1.0);
                    ti.children(pos)
                }
                None => ti.roots(),
            };
            for &c in kids {
                a = a.push(br[c], -1.0);
            }
            p.eq.push(row(a, 0.0, kind));
        }
    }
    for pos in 0..ti.len() {
        let child = ti.order()[pos];
        let parent = ti.parent(pos).map_or(slack, |pp| ti.order()[pp]);
        let a = SparseRow::new()
            .push(vars.w[child], 1.0)
            .push(vars.w[parent], -1.0)
            .push(vars.p_br[pos], -ti.r()[pos])
            .push(vars.q_br[pos], -ti.x()[pos]);
        p.eq.push(row(a, 0.0, "voltage_drop"));
    }
    for b in 0..nb {
        p.eq.push(row(SparseRow::new().push(vars.v[b], 1.0).push(vars.w[b], 1.0), 2.0, "voltage_identity"));
    }
    let mut gen_at = vec![None; nb];
    for g in &vars.gens {
        gen_at[g.bus] = Some(*g);
    }
    let mut rows = RowMap { p_injection: vec![0; nb], q_injection: vec![0; nb], thermal: Vec::new() };
    for axis in 0..2 {
        for b in 0..nb {
            let bus = &net.buses()[b];
            let (hat, load, tag) =
                if axis == 0 { (vars.p_hat[b], bus.p_load, "p_injection") } else { (vars.q_hat[b], bus.q_load, "q_injection") };
            let mut a = SparseRow::new().push(hat, -1.0).push(vars.w[b], -load);
            if let Some(g) = gen_at[b] {
                a = a.push(if axis == 0 { g.p } else { g.q }, 1.0);
            }
            let target = if axis == 0 { &mut rows.p_injection } else { &mut rows.q_injection };
            target[b] = p.eq.len();
            p.eq.push(row(a, 0.0, tag));
        }
    }
    p.eq.push(row(SparseRow::new().push(vars.w[slack], 1.0), 2.0 - net.slack_voltage(), "slack_voltage"));

    for b in (0..nb).filter(|&b| b != slack) {
        let bus = &net.buses()[b];
        p.ineq.push(row(SparseRow::new().push(vars.w[b], 1.0), 2.0 - bus.v_min, "w_upper"));
        p.ineq.push(row(SparseRow::new().push(vars.w[b], -1.0), -(2.0 - bus.v_max), "w_lower"));
    }
    for g in vars.dgs() {
        let gen = net.buses()[g.bus].gen.as_ref().expect("generator");
        let w = vars.w[g.bus];
        for (var, lo, hi, tag) in [(g.p, gen.p_min, gen.p_max, "dg_p"), (g.q, gen.q_min, gen.q_max, "dg_q")] {
            if lo.is_finite() {
                p.ineq.push(row(SparseRow::new().push(w, lo).push(var, -1.0), 0.0, &format!("{}_lower", tag)));
            }
            if hi.is_finite() {
                p.ineq.push(row(SparseRow::new().push(var, 1.0).push(w, -hi), 0.0, &format!("{}_upper", tag)));
            }
        }
    }
    if opts.thermal_limits {
        for pos in 0..ti.len() {
            if let Some(imax) = net.branches()[ti.branch(pos)].i_max {
                rows.thermal.push((pos, p.quad.len()));
                p.quad.push(QuadRow {
                    q: vec![(vars.p_br[pos], 1.0), (vars.q_br[pos], 1.0)],
                    a: SparseRow::new(),
                    b: imax * imax,
                    tag: "thermal".into(),
                });
            }
        }
    }
    debug_assert_eq!(p.eq.len(), 5 * nb + ti.len() + 1);
    Ok(MdopfProblem { qcqp: p, vars, rows, convexity, v_d: obj.v_d })
}

/// Expected number of equality rows for a network.
pub fn equality_row_count(net: &Network) -> usize {
    5 * net.bus_count() + net.branches().len() + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dispatch {
    pub bus: BusId,
    /// pu
    pub p: f64,
    /// pu
    pub q: f64,
}

/// Physical dispatch `Pᴳ = P̂ᴳ / W` and the full model state.
pub fn recover_dispatch(net: &Network, ti: &PathIncidence, vars: &VarMap, x: &[f64]) -> Result<(Vec<Dispatch>, MdfState)> {
    for (b, &wi) in vars.w.iter().enumerate() {
        if !(x[wi] > 0.0) {
            return Err(Error::Nonphysical { bus: net.buses()[b].id, w: x[wi] });
        }
    }
    let dispatch = vars
        .gens
        .iter()
        .map(|g| Dispatch { bus: g.id, p: x[g.p] / x[vars.w[g.bus]], q: x[g.q] / x[vars.w[g.bus]] })
        .collect();
    let pick = |idx: &[usize]| -> Vec<f64> { ti.order().iter().map(|&b| x[idx[b]]).collect() };
    let state = mdistflow::state_from_solution(net, ti, &pick(&vars.p_hat), &pick(&vars.q_hat), &pick(&vars.w))?;
    Ok((dispatch, state))
}

/// The convexified objective recomputed by tree sweeps from `x`: generator
/// costs weighted by the affine voltage model around `v_d`. In solver units.
pub fn convexified_objective(net: &Network, ti: &PathIncidence, vars: &VarMap, v_d: &[f64], x: &[f64]) -> f64 {
    let mut pg = vec![0.0; ti.len()];
    let mut qg = vec![0.0; ti.len()];
    let mut cp = vec![0.0; ti.len()];
    let mut cq = vec![0.0; ti.len()];
    for gv in vars.dgs() {
        let pos = ti.position(gv.bus).expect("non-slack");
        let gen = net.buses()[gv.bus].gen.as_ref().expect("generator");
        pg[pos] = x[gv.p];
        qg[pos] = x[gv.q];
        cp[pos] = gen.cost_p;
        cq[pos] = gen.cost_q;
    }
    let a = ti.t_mul(&pg);
    let b = ti.t_mul(&qg);
    let drop: Vec<f64> = (0..ti.len()).map(|k| ti.r()[k] * a[k] + ti.x()[k] * b[k]).collect();
    let rise = ti.t_transpose_mul(&drop);
    let (c0p, c0q) = slack_costs(net);
    let s = vars.gens[0];
    let mut total = net.slack_voltage() * (c0p * x[s.p] + c0q * x[s.q]);
    for k in 0..ti.len() {
        total += (v_d[k] + rise[k]) * (cp[k] * pg[k] + cq[k] * qg[k]);
    }
    total
}

/// Starting point from the load-only modified-DistFlow solution, or a flat
/// profile when that solve fails.
pub fn initial_point(net: &Network, ti: &PathIncidence, vars: &VarMap) -> Vec<f64> {
    let mut x = vec![0.0; vars.len()];
    let slack = net.slack_index();
    let w0 = 2.0 - net.slack_voltage();
    let state = mdistflow::solve_fixed_load(net, ti, &Injections::from_loads(net)).ok();
    for b in 0..net.bus_count() {
        let w = match (ti.position(b), &state) {
            (Some(pos), Some(s)) => s.w[pos],
            (Some(_), None) => 1.0,
            (None, _) => w0,
        };
        x[vars.w[b]] = w;
        x[vars.v[b]] = 2.0 - w;
        x[vars.p_hat[b]] = -net.buses()[b].p_load * w;
        x[vars.q_hat[b]] = -net.buses()[b].q_load * w;
    }
    if let Some(s) = &state {
        for pos in 0..ti.len() {
            x[vars.p_br[pos]] = s.p_br_hat[pos];
            x[vars.q_br[pos]] = s.q_br_hat[pos];
        }
        let draw_p: f64 = ti.roots().iter().map(|&r| s.p_br_hat[r]).sum();
        let draw_q: f64 = ti.roots().iter().map(|&r| s.q_br_hat[r]).sum();
        x[vars.p_hat[slack]] = draw_p;
        x[vars.q_hat[slack]] = draw_q;
        let g = vars.gens[0];
        x[g.p] = draw_p + net.buses()[slack].p_load * w0;
        x[g.q] = draw_q + net.buses()[slack].q_load * w0;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpfOutcome {
    pub status: Status,
    /// $/h
    pub objective: f64,
    pub dispatch: Vec<Dispatch>,
    #[serde(skip)]
    pub state: MdfState,
    #[serde(skip)]
    pub x: Vec<f64>,
    /// Equality multipliers in row order.
    #[serde(skip)]
    pub duals_eq: Vec<f64>,
    /// Multipliers of the active and reactive injection rows by bus, $/MWh.
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    /// Multiplier-based prices `λ / V` by bus.
    pub dual_price_p: Vec<f64>,
    pub dual_price_q: Vec<f64>,
    /// `(position, multiplier)` of each thermal row, $/h per pu².
    pub thermal_multipliers: Vec<(usize, f64)>,
    pub convexity: ConvexityReport,
    pub stats: SolveStats,
}

/// Builds and solves the problem and maps the solution back to the network.
pub fn solve(net: &Network, ti: &PathIncidence, opts: &MdopfOptions) -> Result<OpfOutcome> {
    let prob = build(net, ti, opts)?;
    let x0 = initial_point(net, ti, &prob.vars);
    let sol = qcqp::solve_from(&prob.qcqp, &opts.solver, Some(&x0))?;
    info!(
        "solver {:?} in {} iterations ({:.3} s), gap {:.2e}, feasibility {:.2e}",
        sol.status, sol.stats.iterations, sol.stats.runtime_seconds, sol.stats.final_gap, sol.stats.final_feas
    );
    if sol.status != Status::Optimal {
        return Err(qcqp::SolverError::NotOptimal { status: sol.status, iterations: sol.stats.iterations }.into());
    }
    let (dispatch, state) = recover_dispatch(net, ti, &prob.vars, &sol.x)?;
    let nb = net.bus_count();
    let lambda_p: Vec<f64> = (0..nb).map(|b| sol.y[prob.rows.p_injection[b]]).collect();
    let lambda_q: Vec<f64> = (0..nb).map(|b| sol.y[prob.rows.q_injection[b]]).collect();
    let v: Vec<f64> = (0..nb).map(|b| sol.x[prob.vars.v[b]]).collect();
    let m = prob.qcqp.ineq.len();
    let thermal_multipliers = prob.rows.thermal.iter().map(|&(pos, r)| (pos, sol.z[m + r])).collect();
    Ok(OpfOutcome {
        status: sol.status,
        objective: sol.objective * net.base_mva(),
        dispatch,
        state,
        dual_price_p: lambda_p.iter().zip(&v).map(|(l, v)| l / v).collect(),
        dual_price_q: lambda_q.iter().zip(&v).map(|(l, v)| l / v).collect(),
        lambda_p,
        lambda_q,
        thermal_multipliers,
        convexity: prob.convexity,
        stats: sol.stats,
        duals_eq: sol.y,
        x: sol.x,
    })
}

/// Net injections with the non-slack dispatch applied.
pub fn dispatch_injections(net: &Network, dispatch: &[Dispatch]) -> Injections {
    let slack = net.slack_id();
    let set: Vec<(usize, f64, f64)> = dispatch
        .iter()
        .filter(|d| d.bus != slack)
        .map(|d| (net.bus_index(d.bus).expect("dispatch bus exists"), d.p, d.q))
        .collect();
    Injections::from_loads(net).with_dispatch(&set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcEvaluation {
    /// $/h
    pub cost: f64,
    #[serde(skip)]
    pub state: AcState,
}

/// Cost of the dispatch under the exact power flow, with the slack covering
/// the residual demand and losses.
pub fn ac_cost(net: &Network, ti: &PathIncidence, dispatch: &[Dispatch], pf: &PfOptions) -> Result<AcEvaluation> {
    let inj = dispatch_injections(net, dispatch);
    let state = newton_pf(net, ti, &inj, None, pf)?;
    let (c0p, c0q) = slack_costs(net);
    let slack = net.slack_id();
    let mut cost = c0p * state.slack_p + c0q * state.slack_q;
    for d in dispatch.iter().filter(|d| d.bus != slack) {
        let gen = net.buses()[net.bus_index(d.bus).expect("exists")].gen.as_ref().expect("generator");
        cost += gen.cost_p * d.p + gen.cost_q * d.q;
    }
    Ok(AcEvaluation { cost: cost * net.base_mva(), state })
}

/// Positional vector of a bus-indexed solution quantity.
pub fn bus_values(ti: &PathIncidence, idx: &[usize], x: &[f64]) -> Vec<f64> {
    positional(ti, &idx.iter().map(|&i| x[i]).collect::<Vec<_>>())
}
