//! Sparse `LDLᵀ` factorization without pivoting, for quasi-definite
//! matrices under a fill-reducing symmetric permutation.

use super::ordering::minimum_degree;

const NONE: usize = usize::MAX;

/// Pattern analysis shared by every factorization with the same structure.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    /// Upper-triangular CSC of the permuted matrix; the diagonal is the last
    /// entry in each column.
    ap: Vec<usize>,
    ai: Vec<usize>,
    /// CSC slot of every input entry.
    slot: Vec<usize>,
    diag_slot: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
}

pub struct Factor<'a> {
    sym: &'a Symbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    raw: Vec<f64>,
    /// Pivots of the wrong sign and magnitude above `dyn_eps`.
    pub wrong_sign: usize,
    /// Pivots replaced by dynamic regularization.
    pub regularized: usize,
}

impl Symbolic {
    /// Analyses the pattern `entries` (either triangle, duplicates allowed).
    pub fn analyse(n: usize, entries: &[(usize, usize)]) -> Self {
        let perm = minimum_degree(n, entries);
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let permuted: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (pinv[i], pinv[j]);
                if a <= b { (a, b) } else { (b, a) }
            })
            .collect();
        let mut keys: Vec<(usize, usize)> = permuted.iter().map(|&(r, c)| (c, r)).collect();
        keys.extend((0..n).map(|k| (k, k)));
        keys.sort_unstable();
        keys.dedup();

        let mut ap = vec![0; n + 1];
        let mut ai = Vec::with_capacity(keys.len());
        for &(c, r) in &keys {
            ap[c + 1] += 1;
            ai.push(r);
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }
        let slot = permuted.iter().map(|&(r, c)| find(&ai, ap[c], ap[c + 1], r)).collect();
        let diag_slot: Vec<usize> = (0..n).map(|c| ap[c + 1] - 1).collect();

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while i != j && work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Symbolic { n, perm, pinv, ap, ai, slot, diag_slot, etree, lp }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn fill(&self) -> usize {
        self.lp[self.n]
    }

    /// Scatters input entry values into permuted CSC order, summing
    /// duplicates.
    fn scatter(&self, values: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; self.ai.len()];
        for (k, &s) in self.slot.iter().enumerate() {
            ax[s] += values[k];
        }
        ax
    }

    /// Factors the matrix whose entries (in `analyse` order) are `values`.
    ///
    /// `signs[i]` is the expected pivot sign of original index `i`. A pivot
    /// with `signs·d <= dyn_eps` is replaced by `signs·dyn_delta` when
    /// `dyn_eps > 0`.
    pub fn factor(&self, values: &[f64], signs: &[f64], dyn_eps: f64, dyn_delta: f64) -> Factor<'_> {
        let n = self.n;
        let ax = self.scatter(values);
        let mut li = vec![0usize; self.fill()];
        let mut lx = vec![0.0; self.fill()];
        let mut d = vec![0.0; n];
        let mut raw = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next = self.lp[..n].to_vec();
        let mut y = vec![0.0; n];
        let mut used = vec![false; n];
        let mut pattern: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<usize> = Vec::with_capacity(n);
        let (mut wrong_sign, mut regularized) = (0, 0);

        for k in 0..n {
            pattern.clear();
            for p in self.ap[k]..self.ap[k + 1] {
                let i = self.ai[p];
                if i == k {
                    d[k] = ax[p];
                    continue;
                }
                y[i] = ax[p];
                if used[i] {
                    continue;
                }
                used[i] = true;
                stack.clear();
                stack.push(i);
                let mut e = self.etree[i];
                while e != NONE && e < k && !used[e] {
                    used[e] = true;
                    stack.push(e);
                    e = self.etree[e];
                }
                pattern.extend(stack.iter().rev());
            }
            for &c in pattern.iter().rev() {
                let yc = y[c];
                let end = next[c];
                for q in self.lp[c]..end {
                    y[li[q]] -= lx[q] * yc;
                }
                li[end] = k;
                lx[end] = yc * dinv[c];
                d[k] -= yc * lx[end];
                next[c] += 1;
                y[c] = 0.0;
                used[c] = false;
            }
            raw[k] = d[k];
            let sign = signs[self.perm[k]];
            if d[k] * sign < -dyn_eps {
                wrong_sign += 1;
            }
            if dyn_eps > 0.0 && d[k] * sign <= dyn_eps {
                d[k] = sign * dyn_delta;
                regularized += 1;
            }
            dinv[k] = if d[k] == 0.0 { 0.0 } else { 1.0 / d[k] };
        }
        Factor { sym: self, li, lx, d, raw, wrong_sign, regularized }
    }

    /// Product of the symmetric matrix given by `values` with `x`, in the
    /// original index space.
    pub fn mul(&self, entries: &[(usize, usize)], values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&(i, j), &v) in entries.iter().zip(values) {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    pub fn diag_slot(&self, i: usize) -> usize {
        self.diag_slot[self.pinv[i]]
    }
}

fn find(ai: &[usize], lo: usize, hi: usize, r: usize) -> usize {
    lo + ai[lo..hi].binary_search(&r).expect("entry present in pattern")
}

impl Factor<'_> {
    /// Pivots before any dynamic correction, in elimination order.
    pub fn pivots(&self) -> &[f64] {
        &self.raw
    }

    /// Number of positive pivots after correction.
    pub fn positive(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }

    /// Solves `A x = b` in place (original index space).
    pub fn solve(&self, b: &mut [f64]) {
        let s = self.sym;
        let mut x: Vec<f64> = s.perm.iter().map(|&p| b[p]).collect();
        for i in 0..s.n {
            let xi = x[i];
            for q in s.lp[i]..s.lp[i + 1] {
                x[self.li[q]] -= self.lx[q] * xi;
            }
        }
        for i in 0..s.n {
            x[i] = if self.d[i] == 0.0 { 0.0 } else { x[i] / self.d[i] };
        }
        for i in (0..s.n).rev() {
            let mut acc = x[i];
            for q in s.lp[i]..s.lp[i + 1] {
                acc -= self.lx[q] * x[self.li[q]];
            }
            x[i] = acc;
        }
        for (k, &p) in s.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}
