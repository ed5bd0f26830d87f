use std::time::Instant;

use log::debug;

use super::ldl::Symbolic;
use super::{psd_check, QcqpProblem, Solution, SolveStats, SolverConfig, SolverError, Status};

const STEP_TO_BOUNDARY: f64 = 0.995;
const DYN_EPS: f64 = 1e-13;
const DYN_DELTA: f64 = 2e-7;
const DIVERGENCE: f64 = 1e12;

/// Solves `p` from the origin.
pub fn solve(p: &QcqpProblem, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    solve_from(p, cfg, None)
}

/// Inequality row in gradient form: sparse support with `J` values
/// recomputed each iteration.
struct IneqRow {
    support: Vec<usize>,
    /// Linear coefficient per support entry.
    lin: Vec<f64>,
    /// Diagonal quadratic coefficient per support entry.
    quad: Vec<f64>,
    b: f64,
}

impl IneqRow {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = -self.b;
        for (k, &i) in self.support.iter().enumerate() {
            v += (self.lin[k] + self.quad[k] * x[i]) * x[i];
        }
        v
    }

    fn jacobian(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.support.iter().enumerate().map(|(k, &i)| self.lin[k] + 2.0 * self.quad[k] * x[i]));
    }
}

fn ineq_rows(p: &QcqpProblem) -> Vec<IneqRow> {
    let mut rows = Vec::with_capacity(p.ineq.len() + p.quad.len());
    let mut build = |q: &[(usize, f64)], idx: &[usize], val: &[f64], b: f64| {
        let mut support: Vec<usize> = q.iter().map(|t| t.0).chain(idx.iter().copied()).collect();
        support.sort_unstable();
        support.dedup();
        let mut lin = vec![0.0; support.len()];
        let mut quad = vec![0.0; support.len()];
        for (&i, &v) in idx.iter().zip(val) {
            lin[support.binary_search(&i).unwrap()] += v;
        }
        for &(i, v) in q {
            quad[support.binary_search(&i).unwrap()] += v;
        }
        rows.push(IneqRow { support, lin, quad, b });
    };
    for r in &p.ineq {
        build(&[], &r.a.idx, &r.a.val, r.b);
    }
    for r in &p.quad {
        build(&r.q, &r.a.idx, &r.a.val, r.b);
    }
    rows
}

/// Layout of the condensed KKT matrix `[[K, Aᵀ], [A, 0]]` as a list of
/// entries whose values are refreshed every iteration.
struct Kkt {
    entries: Vec<(usize, usize)>,
    hess: std::ops::Range<usize>,
    /// Start of each inequality row's `JᵀDJ` block (upper triangle of its
    /// support, row-major).
    ineq_start: Vec<usize>,
    quad_diag: Vec<(usize, usize, f64)>,
    x_diag: std::ops::Range<usize>,
    a_block: std::ops::Range<usize>,
    y_diag: std::ops::Range<usize>,
}

impl Kkt {
    fn new(p: &QcqpProblem, rows: &[IneqRow]) -> Self {
        let n = p.n_vars;
        let mut entries: Vec<(usize, usize)> = p.hessian.iter().map(|t| (t.0, t.1)).collect();
        let hess = 0..entries.len();
        let mut ineq_start = Vec::with_capacity(rows.len());
        for r in rows {
            ineq_start.push(entries.len());
            for a in 0..r.support.len() {
                for b in a..r.support.len() {
                    entries.push((r.support[a], r.support[b]));
                }
            }
        }
        let mut quad_diag = Vec::new();
        let off = p.ineq.len();
        for (k, r) in rows.iter().enumerate().skip(off) {
            for (m, &i) in r.support.iter().enumerate() {
                if r.quad[m] != 0.0 {
                    quad_diag.push((k, i, r.quad[m]));
                    entries.push((i, i));
                }
            }
        }
        let xs = entries.len();
        entries.extend((0..n).map(|i| (i, i)));
        let x_diag = xs..entries.len();
        let a0 = entries.len();
        for (r, row) in p.eq.iter().enumerate() {
            for &j in &row.a.idx {
                entries.push((j, n + r));
            }
        }
        let a_block = a0..entries.len();
        let y0 = entries.len();
        entries.extend((0..p.eq.len()).map(|r| (n + r, n + r)));
        let y_diag = y0..entries.len();
        Kkt { entries, hess, ineq_start, quad_diag, x_diag, a_block, y_diag }
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    ri: Vec<f64>,
    gval: Vec<f64>,
    jac: Vec<Vec<f64>>,
    grad: Vec<f64>,
    f: f64,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn residuals(p: &QcqpProblem, rows: &[IneqRow], it: &Iterate) -> Residuals {
    let grad = p.gradient(&it.x);
    let mut rd = grad.clone();
    for (r, row) in p.eq.iter().enumerate() {
        row.a.axpy(-it.y[r], &mut rd);
    }
    let mut jac = Vec::with_capacity(rows.len());
    let mut gval = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let mut j = Vec::new();
        row.jacobian(&it.x, &mut j);
        for (m, &i) in row.support.iter().enumerate() {
            rd[i] += it.z[k] * j[m];
        }
        gval.push(row.value(&it.x));
        jac.push(j);
    }
    let rp = p.eq.iter().map(|r| r.a.dot(&it.x) - r.b).collect();
    let ri = gval.iter().zip(&it.s).map(|(g, s)| g + s).collect();
    Residuals { rd, rp, ri, gval, jac, grad, f: p.objective(&it.x) }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = 1.0f64;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

/// Solves `p`, optionally starting from `x0`.
pub fn solve_from(p: &QcqpProblem, cfg: &SolverConfig, x0: Option<&[f64]>) -> Result<Solution, SolverError> {
    let start = Instant::now();
    p.check()?;
    cfg.check()?;
    if !cfg.allow_indefinite {
        let (psd, pivot) = psd_check(p.n_vars, &p.hessian, 1e-10);
        if !psd {
            return Err(SolverError::NonConvex { pivot });
        }
    }

    let n = p.n_vars;
    let me = p.eq.len();
    let rows = ineq_rows(p);
    let mi = rows.len();
    let kkt = Kkt::new(p, &rows);
    let dim = n + me;
    let sym = Symbolic::analyse(dim, &kkt.entries);
    let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    debug!("kkt dimension {} with {} entries, fill {}", dim, kkt.entries.len(), sym.fill());

    let x = match x0 {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    let s = rows.iter().map(|r| (-r.value(&x)).max(1.0)).collect();
    let mut it = Iterate { x, y: vec![0.0; me], z: vec![1.0; mi], s };

    let b_scale = 1.0
        + p.eq.iter().map(|r| r.b.abs()).chain(rows.iter().map(|r| r.b.abs())).fold(0.0, f64::max);
    let mut values = vec![0.0; kkt.entries.len()];
    let mut delta_x = 0.0f64;
    let mut corrections = 0;
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut res;

    loop {
        res = residuals(p, &rows, &it);
        let mu = if mi > 0 { it.s.iter().zip(&it.z).map(|(s, z)| s * z).sum::<f64>() / mi as f64 } else { 0.0 };
        let pres = norm_inf(&res.rp).max(norm_inf(&res.ri)) / b_scale;
        let dres = norm_inf(&res.rd) / (1.0 + norm_inf(&res.grad));
        let gap = mu / (1.0 + res.f.abs());
        debug!("iter {:3} f {:+.10e} pres {:.2e} dres {:.2e} gap {:.2e}", iterations, res.f, pres, dres, gap);
        if pres <= cfg.tol_feas && dres <= cfg.tol_feas && gap <= cfg.tol_gap {
            status = Status::Optimal;
            break;
        }
        let dual_size = norm_inf(&it.y).max(norm_inf(&it.z));
        if dual_size > DIVERGENCE * (1.0 + norm_inf(&p.g)) {
            status = Status::Infeasible;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        let d: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
        for (k, &(_, _, h)) in p.hessian.iter().enumerate() {
            values[kkt.hess.start + k] = 2.0 * h;
        }
        for (k, row) in rows.iter().enumerate() {
            let j = &res.jac[k];
            let mut at = kkt.ineq_start[k];
            for a in 0..row.support.len() {
                for b in a..row.support.len() {
                    values[at] = d[k] * j[a] * j[b];
                    at += 1;
                }
            }
        }
        let qd0 = kkt.x_diag.start - kkt.quad_diag.len();
        for (m, &(k, _, q)) in kkt.quad_diag.iter().enumerate() {
            values[qd0 + m] = 2.0 * it.z[k] * q;
        }
        let mut at = kkt.a_block.start;
        for row in &p.eq {
            for &v in &row.a.val {
                values[at] = v;
                at += 1;
            }
        }

        let factor_with = |dx: f64, values: &mut Vec<f64>| {
            for i in kkt.x_diag.clone() {
                values[i] = dx;
            }
            let mut reg = values.clone();
            for i in kkt.x_diag.clone() {
                reg[i] += cfg.regularization;
            }
            for i in kkt.y_diag.clone() {
                values[i] = 0.0;
                reg[i] = -cfg.regularization;
            }
            sym.factor(&reg, &signs, DYN_EPS, DYN_DELTA)
        };

        let mut factor = factor_with(delta_x, &mut values);
        if cfg.allow_indefinite {
            let mut tries = 0;
            while factor.wrong_sign > 0 {
                tries += 1;
                if tries > 40 {
                    return Err(SolverError::Factorization {
                        iteration: iterations,
                        detail: "inertia correction failed".into(),
                    });
                }
                delta_x = if delta_x == 0.0 { 1e-8 } else { delta_x * 8.0 };
                corrections += 1;
                factor = factor_with(delta_x, &mut values);
            }
            if tries == 0 && delta_x > 0.0 {
                delta_x = if delta_x < 1e-12 { 0.0 } else { delta_x / 3.0 };
            }
        }

        let solve_kkt = |rhs: &[f64]| -> Vec<f64> {
            let mut sol = rhs.to_vec();
            factor.solve(&mut sol);
            let scale = 1.0 + norm_inf(rhs);
            let mut last = f64::INFINITY;
            for _ in 0..5 {
                let prod = sym.mul(&kkt.entries, &values, &sol);
                let mut r: Vec<f64> = rhs.iter().zip(&prod).map(|(a, b)| a - b).collect();
                let rn = norm_inf(&r);
                if rn <= 1e-14 * scale || rn >= 0.5 * last {
                    break;
                }
                last = rn;
                factor.solve(&mut r);
                for (a, b) in sol.iter_mut().zip(&r) {
                    *a += b;
                }
            }
            sol
        };

        let direction = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // w = S⁻¹(Z r_i − r_c)
            let w: Vec<f64> = (0..mi).map(|k| (it.z[k] * res.ri[k] - rc[k]) / it.s[k]).collect();
            let mut rhs = vec![0.0; dim];
            for i in 0..n {
                rhs[i] = -res.rd[i];
            }
            for (k, row) in rows.iter().enumerate() {
                for (m, &i) in row.support.iter().enumerate() {
                    rhs[i] -= res.jac[k][m] * w[k];
                }
            }
            for r in 0..me {
                rhs[n + r] = -res.rp[r];
            }
            let sol = solve_kkt(&rhs);
            let dx = sol[..n].to_vec();
            let dy: Vec<f64> = sol[n..].iter().map(|u| -u).collect();
            let mut dz = vec![0.0; mi];
            let mut ds = vec![0.0; mi];
            for (k, row) in rows.iter().enumerate() {
                let jdx: f64 = row.support.iter().enumerate().map(|(m, &i)| res.jac[k][m] * dx[i]).sum();
                dz[k] = w[k] + d[k] * jdx;
                ds[k] = -res.ri[k] - jdx;
            }
            (dx, dy, dz, ds)
        };

        let rc_aff: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| s * z).collect();
        let (dx, dy, dz, ds) = if mi == 0 {
            direction(&rc_aff)
        } else {
            let (_, _, dz_a, ds_a) = direction(&rc_aff);
            let a_aff = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a));
            let mu_aff = (0..mi)
                .map(|k| (it.s[k] + a_aff * ds_a[k]) * (it.z[k] + a_aff * dz_a[k]))
                .sum::<f64>()
                / mi as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(cfg.barrier_decrease, 1.0);
            let rc: Vec<f64> = (0..mi).map(|k| rc_aff[k] + ds_a[k] * dz_a[k] - sigma * mu).collect();
            direction(&rc)
        };
        if dx.iter().chain(&dy).chain(&dz).chain(&ds).any(|v| !v.is_finite()) {
            return Err(SolverError::Factorization { iteration: iterations, detail: "non-finite search direction".into() });
        }
        let alpha = (STEP_TO_BOUNDARY * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0);
        for i in 0..n {
            it.x[i] += alpha * dx[i];
        }
        for r in 0..me {
            it.y[r] += alpha * dy[r];
        }
        for k in 0..mi {
            it.s[k] += alpha * ds[k];
            it.z[k] += alpha * dz[k];
        }
    }

    let complementarity = it.s.iter().zip(&it.z).fold(0.0f64, |m, (s, z)| m.max((s * z).abs()));
    let primal = norm_inf(&res.rp).max(res.gval.iter().fold(0.0f64, |m, &g| m.max(g)));
    let mu = if mi > 0 { it.s.iter().zip(&it.z).map(|(s, z)| s * z).sum::<f64>() / mi as f64 } else { 0.0 };
    let stats = SolveStats {
        iterations,
        final_gap: mu / (1.0 + res.f.abs()),
        final_feas: (norm_inf(&res.rp).max(norm_inf(&res.ri)) / b_scale)
            .max(norm_inf(&res.rd) / (1.0 + norm_inf(&res.grad))),
        runtime_seconds: start.elapsed().as_secs_f64(),
        stationarity: norm_inf(&res.rd),
        primal,
        complementarity,
        inertia_corrections: corrections,
    };
    Ok(Solution { status, objective: res.f, x: it.x, y: it.y, z: it.z, s: it.s, stats })
}
