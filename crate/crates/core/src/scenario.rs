//! Declarative scenario overlays applied on top of a base case.
//!
//! Powers in scenario files are in MW / MVAr and are converted to per-unit on
//! the case base when applied.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{duplicate_system, matpower, BusId, Generator, Network, ScaleRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgSpec {
    pub bus: BusId,
    /// `[min, max]`, MW.
    pub p_range: [f64; 2],
    /// `[min, max]`, MVAr.
    pub q_range: [f64; 2],
    pub cost_p: f64,
    pub cost_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraLoad {
    pub bus: BusId,
    /// MW
    pub p: f64,
    /// MVAr
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Duplication {
    pub copies: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_range")]
    pub range: [f64; 2],
}

fn unit_range() -> [f64; 2] {
    [1.0, 1.0]
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Case file (MATPOWER `.m` or native `.json`), resolved against the
    /// scenario file's directory, then `DISTOPF_CASE_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psp_voltage: Option<f64>,
    /// `($/MWh, $/MVArh)` at the supply point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psp_costs: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dg: Vec<DgSpec>,
    #[serde(default = "one")]
    pub load_scale: f64,
    #[serde(default = "one")]
    pub impedance_scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_loads: Vec<ExtraLoad>,
    /// Overrides `[v_min, v_max]` on every non-slack bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_limits: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplication: Option<Duplication>,
    #[serde(default)]
    pub thermal_limits: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            case: None,
            psp_voltage: None,
            psp_costs: None,
            dg: Vec::new(),
            load_scale: 1.0,
            impedance_scale: 1.0,
            extra_loads: Vec::new(),
            v_limits: None,
            duplication: None,
            thermal_limits: false,
        }
    }
}

pub const CASE_DIR_ENV: &str = "DISTOPF_CASE_DIR";

impl Scenario {
    /// Reads a scenario file; a relative `case` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        let mut s: Scenario = serde_json::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {}", path.display(), e)))?;
        if let (Some(case), Some(dir)) = (&s.case, path.parent()) {
            if case.is_relative() {
                let candidate = dir.join(case);
                if candidate.exists() {
                    s.case = Some(candidate);
                }
            }
        }
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.load_scale) || !positive(self.impedance_scale) {
            return Err(Error::Scenario("load and impedance multipliers must be positive".into()));
        }
        if let Some(v) = self.psp_voltage {
            if !positive(v) {
                return Err(Error::Scenario(format!("invalid supply-point voltage {}", v)));
            }
        }
        if let Some([p, q]) = self.psp_costs {
            if !(p >= 0.0 && q >= 0.0) {
                return Err(Error::Scenario("supply-point costs must be nonnegative".into()));
            }
        }
        if let Some([lo, hi]) = self.v_limits {
            if !(positive(lo) && lo < hi) {
                return Err(Error::Scenario(format!("invalid voltage limits [{}, {}]", lo, hi)));
            }
        }
        Ok(())
    }

    /// Applies the overlay to `base`.
    pub fn apply(&self, base: &Network) -> Result<Network> {
        self.check()?;
        let base_mva = base.base_mva();
        let slack = base.slack_id();
        for id in self.dg.iter().map(|d| d.bus).chain(self.extra_loads.iter().map(|l| l.bus)) {
            if base.bus_index(id).is_none() {
                return Err(Error::Scenario(format!("bus {} does not exist", id)));
            }
        }
        let net = base.modified(|d| {
            for b in &mut d.buses {
                b.p_load *= self.load_scale;
                b.q_load *= self.load_scale;
                if let (Some([lo, hi]), true) = (self.v_limits, b.id != slack) {
                    b.v_min = lo;
                    b.v_max = hi;
                }
            }
            for br in &mut d.branches {
                br.r *= self.impedance_scale;
                br.x *= self.impedance_scale;
            }
            for l in &self.extra_loads {
                let b = d.buses.iter_mut().find(|b| b.id == l.bus).expect("checked");
                b.p_load += l.p / base_mva;
                b.q_load += l.q / base_mva;
            }
            for g in &self.dg {
                let b = d.buses.iter_mut().find(|b| b.id == g.bus).expect("checked");
                let dg = Generator {
                    p_min: g.p_range[0] / base_mva,
                    p_max: g.p_range[1] / base_mva,
                    q_min: g.q_range[0] / base_mva,
                    q_max: g.q_range[1] / base_mva,
                    cost_p: g.cost_p,
                    cost_q: g.cost_q,
                };
                if g.bus != slack {
                    b.gen = Some(dg);
                }
            }
            if let Some(v) = self.psp_voltage {
                d.slack_voltage = v;
            }
            let sb = d.buses.iter_mut().find(|b| b.id == slack).expect("slack exists");
            let gen = sb.gen.get_or_insert(Generator {
                p_min: -1e9,
                p_max: 1e9,
                q_min: -1e9,
                q_max: 1e9,
                cost_p: 0.0,
                cost_q: 0.0,
            });
            if let Some([p, q]) = self.psp_costs {
                gen.cost_p = p;
                gen.cost_q = q;
            }
        });
        let net = net?;
        match &self.duplication {
            Some(dup) => duplicate_system(&net, dup.copies, dup.seed, ScaleRange::new(dup.range[0], dup.range[1])?),
            None => Ok(net),
        }
    }
}

/// Resolves a case path: as given, then under `DISTOPF_CASE_DIR`.
pub fn resolve_case(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    if let Ok(dir) = std::env::var(CASE_DIR_ENV) {
        let p = Path::new(&dir).join(path);
        if p.exists() {
            return p;
        }
    }
    path.to_path_buf()
}

/// Loads a MATPOWER (`.m`) or native JSON case.
pub fn load_case(path: &Path) -> Result<Network> {
    let path = resolve_case(path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", path.display(), e))))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        matpower::parse_matpower_case(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::two_bus;

    #[test]
    fn overlay_scales_and_places_dg() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let s = Scenario {
            load_scale: 2.0,
            impedance_scale: 3.0,
            psp_voltage: Some(1.05),
            psp_costs: Some([30.0, 3.0]),
            dg: vec![DgSpec { bus: 1, p_range: [0.0, 1.0], q_range: [0.0, 0.5], cost_p: 31.0, cost_q: 2.0 }],
            ..Scenario::default()
        };
        let out = s.apply(&net).unwrap();
        assert_eq!(out.buses()[1].p_load, 1.0);
        assert!((out.branches()[0].r - 0.03).abs() < 1e-15);
        assert_eq!(out.slack_voltage(), 1.05);
        assert_eq!(out.buses()[1].gen.as_ref().unwrap().p_max, 1.0);
        assert_eq!(out.psp_costs(), Some((30.0, 3.0)));
    }

    #[test]
    fn unknown_bus_is_rejected() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let s = Scenario { extra_loads: vec![ExtraLoad { bus: 9, p: 1.0, q: 0.0 }], ..Scenario::default() };
        assert!(matches!(s.apply(&net), Err(Error::Scenario(_))));
    }

    #[test]
    fn nonpositive_multiplier_is_rejected() {
        let net = two_bus(0.5, 0.2, 0.01, 0.02);
        let s = Scenario { load_scale: 0.0, ..Scenario::default() };
        assert!(s.apply(&net).is_err());
    }
}
