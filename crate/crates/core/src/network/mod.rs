//! Radial network data model.
//!
//! All electrical quantities are per-unit on `base_mva`; generator costs stay
//! in $/MWh and $/MVArh. A [`Network`] can only be obtained through
//! validation, so every value of that type is a connected tree rooted at its
//! slack bus with branches oriented parent to child.

mod duplicate;
mod incidence;
pub mod matpower;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use duplicate::{duplicate_system, ScaleRange};
pub use incidence::{build_path_incidence, PathIncidence};

/// External bus number as it appears in case files.
pub type BusId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// $/MWh
    pub cost_p: f64,
    /// $/MVArh
    pub cost_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub p_load: f64,
    pub q_load: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<Generator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    /// Current limit, per-unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
}

/// Unvalidated network description; the native JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    pub base_mva: f64,
    pub base_kv: f64,
    pub slack: BusId,
    pub slack_voltage: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Network,
    Bus(BusId),
    Branch(usize),
}

/// One broken network invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

impl Violation {
    fn new(location: Location, message: impl Into<String>) -> Self {
        Violation { location, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Location::Network => write!(f, "{}", self.message),
            Location::Bus(id) => write!(f, "bus {}: {}", id, self.message),
            Location::Branch(k) => write!(f, "branch #{}: {}", k + 1, self.message),
        }
    }
}

/// Checks every network invariant and reports each offending bus or branch.
pub fn validate(data: &NetworkData) -> Vec<Violation> {
    let mut out = Vec::new();
    let net = Location::Network;

    if !(data.base_mva.is_finite() && data.base_mva > 0.0) {
        out.push(Violation::new(net.clone(), "base_mva must be positive"));
    }
    if !(data.slack_voltage.is_finite() && data.slack_voltage > 0.0 && data.slack_voltage < 2.0) {
        out.push(Violation::new(net.clone(), "slack voltage must lie in (0, 2) p.u."));
    }

    let mut index = HashMap::new();
    for (k, bus) in data.buses.iter().enumerate() {
        let at = Location::Bus(bus.id);
        if index.insert(bus.id, k).is_some() {
            out.push(Violation::new(at.clone(), "duplicate bus id"));
        }
        let finite = [bus.p_load, bus.q_load, bus.v_min, bus.v_max].iter().all(|v| v.is_finite());
        if !finite {
            out.push(Violation::new(at.clone(), "non-finite load or voltage limit"));
            continue;
        }
        if bus.p_load < 0.0 || bus.q_load < 0.0 {
            out.push(Violation::new(at.clone(), "negative load (model injections as generators)"));
        }
        // The slack voltage is fixed, so its limits are not used.
        if bus.id != data.slack {
            if bus.v_min <= 0.0 {
                out.push(Violation::new(at.clone(), "v_min must be positive"));
            }
            if bus.v_min >= bus.v_max {
                out.push(Violation::new(at.clone(), "v_min must be below v_max"));
            }
        }
        if let Some(g) = &bus.gen {
            let vals = [g.p_min, g.p_max, g.q_min, g.q_max, g.cost_p, g.cost_q];
            if !vals.iter().all(|v| v.is_finite()) {
                out.push(Violation::new(at.clone(), "non-finite generator data"));
            } else {
                if g.p_min > g.p_max || g.q_min > g.q_max {
                    out.push(Violation::new(at.clone(), "generator lower bound above upper bound"));
                }
                if g.cost_p < 0.0 || g.cost_q < 0.0 {
                    out.push(Violation::new(at.clone(), "negative generator cost"));
                }
            }
        }
    }

    let slack_count = data.buses.iter().filter(|b| b.id == data.slack).count();
    if slack_count == 0 {
        out.push(Violation::new(net.clone(), format!("slack bus {} not found", data.slack)));
    }

    let mut adj: HashMap<BusId, Vec<BusId>> = HashMap::new();
    for (k, br) in data.branches.iter().enumerate() {
        let at = Location::Branch(k);
        for end in [br.from_bus, br.to_bus] {
            if !index.contains_key(&end) {
                out.push(Violation::new(at.clone(), format!("unknown bus {}", end)));
            }
        }
        if br.from_bus == br.to_bus {
            out.push(Violation::new(at.clone(), "self-loop"));
        }
        if !(br.r.is_finite() && br.x.is_finite()) {
            out.push(Violation::new(at.clone(), "non-finite impedance"));
        } else if br.r < 0.0 || br.x < 0.0 {
            out.push(Violation::new(at.clone(), "negative impedance"));
        } else if br.r == 0.0 && br.x == 0.0 {
            out.push(Violation::new(at.clone(), "zero impedance (r = x = 0)"));
        }
        if let Some(i) = br.i_max {
            if !(i.is_finite() && i > 0.0) {
                out.push(Violation::new(at.clone(), "current limit must be positive"));
            }
        }
        adj.entry(br.from_bus).or_default().push(br.to_bus);
        adj.entry(br.to_bus).or_default().push(br.from_bus);
    }

    if !data.buses.is_empty() && data.branches.len() + 1 != data.buses.len() {
        out.push(Violation::new(
            net.clone(),
            format!(
                "non-radial topology: {} branches for {} buses",
                data.branches.len(),
                data.buses.len()
            ),
        ));
    } else if slack_count > 0 {
        let reached = bfs_order(data.slack, &adj).len();
        if reached != data.buses.len() {
            out.push(Violation::new(
                net,
                format!("disconnected network: {} of {} buses reachable from the slack", reached, data.buses.len()),
            ));
        }
    }
    out
}

fn bfs_order(root: BusId, adj: &HashMap<BusId, Vec<BusId>>) -> Vec<BusId> {
    let mut seen = HashMap::new();
    let mut queue = VecDeque::from([root]);
    let mut order = Vec::new();
    seen.insert(root, ());
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for &n in adj.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(n, ()).is_none() {
                queue.push_back(n);
            }
        }
    }
    order
}

/// A validated radial network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct Network {
    data: NetworkData,
    index: HashMap<BusId, usize>,
}

impl Network {
    /// Validates `data` and orients every branch from parent to child.
    pub fn new(mut data: NetworkData) -> Result<Self> {
        let violations = validate(&data);
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        let mut adj: HashMap<BusId, Vec<BusId>> = HashMap::new();
        for br in &data.branches {
            adj.entry(br.from_bus).or_default().push(br.to_bus);
            adj.entry(br.to_bus).or_default().push(br.from_bus);
        }
        let rank: HashMap<BusId, usize> =
            bfs_order(data.slack, &adj).into_iter().enumerate().map(|(k, b)| (b, k)).collect();
        for br in &mut data.branches {
            if rank[&br.from_bus] > rank[&br.to_bus] {
                std::mem::swap(&mut br.from_bus, &mut br.to_bus);
            }
        }
        let index = data.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        Ok(Network { data, index })
    }

    pub fn data(&self) -> &NetworkData {
        &self.data
    }

    pub fn into_data(self) -> NetworkData {
        self.data
    }

    pub fn buses(&self) -> &[Bus] {
        &self.data.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.data.branches
    }

    pub fn bus_count(&self) -> usize {
        self.data.buses.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.data.base_mva
    }

    pub fn base_kv(&self) -> f64 {
        self.data.base_kv
    }

    pub fn slack_id(&self) -> BusId {
        self.data.slack
    }

    pub fn slack_index(&self) -> usize {
        self.index[&self.data.slack]
    }

    pub fn slack_voltage(&self) -> f64 {
        self.data.slack_voltage
    }

    pub fn slack_bus(&self) -> &Bus {
        &self.data.buses[self.slack_index()]
    }

    /// PSP energy prices ($/MWh, $/MVArh) taken from the slack generator.
    pub fn psp_costs(&self) -> Option<(f64, f64)> {
        self.slack_bus().gen.as_ref().map(|g| (g.cost_p, g.cost_q))
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.data.buses.iter().fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    /// Applies `f` to a copy of the data and revalidates.
    pub fn modified(&self, f: impl FnOnce(&mut NetworkData)) -> Result<Network> {
        let mut data = self.data.clone();
        f(&mut data);
        Network::new(data)
    }
}

impl TryFrom<NetworkData> for Network {
    type Error = Error;

    fn try_from(data: NetworkData) -> Result<Self> {
        Network::new(data)
    }
}

impl From<Network> for NetworkData {
    fn from(net: Network) -> Self {
        net.data
    }
}

/// Net physical injections `P_i = P_i^G - P_i^D` per bus, indexed like
/// [`Network::buses`].
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    /// Loads only, every generator at zero output.
    pub fn from_loads(net: &Network) -> Self {
        Injections {
            p: net.buses().iter().map(|b| -b.p_load).collect(),
            q: net.buses().iter().map(|b| -b.q_load).collect(),
        }
    }

    /// Adds generator setpoints `(bus index, p, q)` on top of the loads.
    pub fn with_dispatch(mut self, dispatch: &[(usize, f64, f64)]) -> Self {
        for &(k, p, q) in dispatch {
            self.p[k] += p;
            self.q[k] += q;
        }
        self
    }
}
