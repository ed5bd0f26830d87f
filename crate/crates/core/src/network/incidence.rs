use nalgebra::DMatrix;

use super::Network;

/// Path-branch incidence of a radial network.
///
/// Non-slack buses are numbered by position in `order`; the branch feeding a
/// bus shares its position. Entry `(l, k)` of `T` is one when branch `l` lies
/// on the path from bus `k` to the slack. Products with `T` and `Tᵀ` are
/// evaluated by tree sweeps, never by forming the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIncidence {
    order: Vec<usize>,
    position: Vec<Option<usize>>,
    parent: Vec<Option<usize>>,
    branch: Vec<usize>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    feeder: Vec<usize>,
    feeders: Vec<Vec<usize>>,
    r: Vec<f64>,
    x: Vec<f64>,
}

/// Builds `T` under a depth-first order rooted at the slack.
pub fn build_path_incidence(net: &Network) -> PathIncidence {
    let n = net.bus_count();
    let slack = net.slack_index();
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    for br in net.branches() {
        let f = net.bus_index(br.from_bus).expect("validated");
        let t = net.bus_index(br.to_bus).expect("validated");
        kids[f].push(t);
    }
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    let mut stack: Vec<usize> = kids[slack].iter().rev().copied().collect();
    while let Some(b) = stack.pop() {
        order.push(b);
        stack.extend(kids[b].iter().rev());
    }
    PathIncidence::with_order(net, &order).expect("depth-first order is topological")
}

impl PathIncidence {
    /// Builds `T` under any order of the non-slack buses that lists every
    /// parent before its children. Returns `None` for other orders.
    pub fn with_order(net: &Network, order: &[usize]) -> Option<Self> {
        let n = net.bus_count();
        let slack = net.slack_index();
        if order.len() + 1 != n {
            return None;
        }
        let mut parent_bus = vec![usize::MAX; n];
        let mut branch_of = vec![usize::MAX; n];
        for (k, br) in net.branches().iter().enumerate() {
            let f = net.bus_index(br.from_bus)?;
            let t = net.bus_index(br.to_bus)?;
            parent_bus[t] = f;
            branch_of[t] = k;
        }
        let mut position: Vec<Option<usize>> = vec![None; n];
        let mut parent = Vec::with_capacity(order.len());
        let mut depth = Vec::with_capacity(order.len());
        let mut feeder: Vec<usize> = Vec::with_capacity(order.len());
        let mut roots = Vec::new();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
        let mut feeders: Vec<Vec<usize>> = Vec::new();
        for (pos, &b) in order.iter().enumerate() {
            if b == slack || b >= n || position[b].is_some() {
                return None;
            }
            let pb = parent_bus[b];
            if pb == slack {
                parent.push(None);
                depth.push(1);
                feeder.push(feeders.len());
                feeders.push(vec![pos]);
                roots.push(pos);
            } else {
                let pp = position[pb]?;
                parent.push(Some(pp));
                depth.push(depth[pp] + 1);
                feeder.push(feeder[pp]);
                feeders[feeder[pp]].push(pos);
                children[pp].push(pos);
            }
            position[b] = Some(pos);
        }
        let branch: Vec<usize> = order.iter().map(|&b| branch_of[b]).collect();
        let r = branch.iter().map(|&k| net.branches()[k].r).collect();
        let x = branch.iter().map(|&k| net.branches()[k].x).collect();
        Some(PathIncidence {
            order: order.to_vec(),
            position,
            parent,
            branch,
            depth,
            children,
            roots,
            feeder,
            feeders,
            r,
            x,
        })
    }

    /// Number of non-slack buses (and branches).
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Network bus index at each position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of a network bus index; `None` for the slack.
    pub fn position(&self, bus: usize) -> Option<usize> {
        self.position[bus]
    }

    /// Parent position; `None` when the parent is the slack.
    pub fn parent(&self, pos: usize) -> Option<usize> {
        self.parent[pos]
    }

    /// Index into [`Network::branches`] of the branch feeding `pos`.
    pub fn branch(&self, pos: usize) -> usize {
        self.branch[pos]
    }

    pub fn depth(&self, pos: usize) -> usize {
        self.depth[pos]
    }

    pub fn children(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    /// Positions whose parent is the slack.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn feeder(&self, pos: usize) -> usize {
        self.feeder[pos]
    }

    /// Positions of each slack-child subtree, parents before children.
    pub fn feeders(&self) -> &[Vec<usize>] {
        &self.feeders
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// `T v`: for each branch, the sum of `v` over the buses it supplies.
    pub fn t_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut acc = v.to_vec();
        for pos in (0..self.len()).rev() {
            if let Some(p) = self.parent[pos] {
                acc[p] += acc[pos];
            }
        }
        acc
    }

    /// `Tᵀ v`: for each bus, the sum of `v` over the branches on its path.
    pub fn t_transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for pos in 0..self.len() {
            out[pos] = v[pos] + self.parent[pos].map_or(0.0, |p| out[p]);
        }
        out
    }

    /// Entry `(l, k)` of `T`.
    pub fn get(&self, l: usize, k: usize) -> bool {
        let mut cur = Some(k);
        while let Some(c) = cur {
            if c == l {
                return true;
            }
            if self.depth[c] <= self.depth[l] {
                return false;
            }
            cur = self.parent[c];
        }
        false
    }

    /// Branch positions from `k` up to the slack.
    pub fn path(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth[k]);
        let mut cur = Some(k);
        while let Some(c) = cur {
            out.push(c);
            cur = self.parent[c];
        }
        out
    }

    /// Deepest common ancestor-or-self of two positions.
    pub fn common_ancestor(&self, mut a: usize, mut b: usize) -> Option<usize> {
        if self.feeder[a] != self.feeder[b] {
            return None;
        }
        while self.depth[a] > self.depth[b] {
            a = self.parent[a]?;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b]?;
        }
        while a != b {
            a = self.parent[a]?;
            b = self.parent[b]?;
        }
        Some(a)
    }

    /// Entry `(k, l)` of `Tᵀ diag(w) T`: the sum of `w` over branches shared
    /// by the paths of `k` and `l`. Needs the path sums `Tᵀ w`.
    pub fn shared_path_sum(&self, k: usize, l: usize, path_sums: &[f64]) -> f64 {
        self.common_ancestor(k, l).map_or(0.0, |a| path_sums[a])
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut t = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in self.path(k) {
                t[(l, k)] = 1.0;
            }
        }
        t
    }
}
