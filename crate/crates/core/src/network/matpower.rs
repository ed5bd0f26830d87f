//! Reader for the subset of the MATPOWER case format used by distribution
//! feeders.

use std::collections::HashMap;

use super::{validate, Branch, Bus, Generator, Location, Network, NetworkData, Violation};
use crate::error::{Error, Result};

const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const VM: usize = 7;
const BASE_KV: usize = 9;
const VMAX: usize = 11;
const VMIN: usize = 12;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const RATE_A: usize = 5;
const BR_STATUS: usize = 10;

const GEN_BUS: usize = 0;
const QMAX: usize = 3;
const QMIN: usize = 4;
const VG: usize = 5;
const GEN_STATUS: usize = 7;
const PMAX: usize = 8;
const PMIN: usize = 9;

struct Row {
    line: usize,
    values: Vec<f64>,
}

impl Row {
    fn need(&self, what: &str, cols: usize) -> Result<()> {
        if self.values.len() < cols {
            return Err(Error::parse(
                self.line,
                format!("{} row has {} columns, expected at least {}", what, self.values.len(), cols),
            ));
        }
        Ok(())
    }

    fn id(&self, col: usize) -> Result<usize> {
        let v = self.values[col];
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::parse(self.line, format!("invalid bus number {}", v)));
        }
        Ok(v as usize)
    }
}

#[derive(Default)]
struct Matrices {
    base_mva: Option<f64>,
    tables: HashMap<String, Vec<Row>>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

fn scan(text: &str) -> Result<Matrices> {
    let mut out = Matrices::default();
    let mut current: Option<(String, Vec<Row>, char)> = None;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let mut line = strip_comment(raw).trim();

        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else { continue };
            let Some((name, value)) = rest.split_once('=') else { continue };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                current = Some((name, Vec::new(), ']'));
                line = body;
            } else if let Some(body) = value.strip_prefix('{') {
                current = Some((name, Vec::new(), '}'));
                line = body;
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    let v: f64 = v.parse().map_err(|_| Error::parse(line_no, format!("invalid baseMVA '{}'", v)))?;
                    out.base_mva = Some(v);
                }
                continue;
            }
        }

        let (name, rows, close) = current.as_mut().expect("inside a matrix");
        let (body, done) = match line.find(*close) {
            Some(p) => (&line[..p], true),
            None => (line, false),
        };
        if *close == ']' {
            for chunk in body.split(';') {
                let chunk = chunk.trim();
                if chunk.is_empty() {
                    continue;
                }
                let values = chunk
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::parse(line_no, format!("malformed value '{}' in mpc.{}", s, name)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(Row { line: line_no, values });
            }
        }
        if done {
            let (name, rows, _) = current.take().expect("inside a matrix");
            out.tables.insert(name, rows);
        }
    }
    if let Some((name, _, _)) = current {
        return Err(Error::parse(text.lines().count(), format!("unterminated matrix mpc.{}", name)));
    }
    Ok(out)
}

/// Parses a case into raw data plus the slack-count violations that the
/// single-slack data model cannot represent.
fn parse_raw(text: &str) -> Result<(NetworkData, Vec<Violation>)> {
    let m = scan(text)?;
    let base_mva = m.base_mva.ok_or_else(|| Error::parse(0, "missing mpc.baseMVA"))?;
    let table = |name: &str| m.tables.get(name).ok_or_else(|| Error::parse(0, format!("missing mpc.{}", name)));
    let bus_rows = table("bus")?;
    let branch_rows = table("branch")?;
    let gen_rows = table("gen")?;
    let cost_rows = m.tables.get("gencost").map(Vec::as_slice).unwrap_or(&[]);

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut slacks = Vec::new();
    let mut base_kv = 0.0;
    let mut vm = HashMap::new();
    for row in bus_rows {
        row.need("bus", VMIN + 1)?;
        let id = row.id(BUS_I)?;
        let v = &row.values;
        if v[BUS_TYPE] == 3.0 {
            slacks.push(id);
            base_kv = v[BASE_KV];
        }
        vm.insert(id, v[VM]);
        buses.push(Bus {
            id,
            p_load: v[PD] / base_mva,
            q_load: v[QD] / base_mva,
            v_min: v[VMIN],
            v_max: v[VMAX],
            gen: None,
        });
    }
    if base_kv == 0.0 {
        base_kv = bus_rows.first().map(|r| r.values[BASE_KV]).unwrap_or(0.0);
    }

    let mut violations = Vec::new();
    match slacks.len() {
        0 => violations.push(Violation::new(Location::Network, "no slack bus (type 3)")),
        1 => {}
        n => violations.push(Violation::new(
            Location::Network,
            format!("{} slack buses (type 3), expected exactly one: {:?}", n, slacks),
        )),
    }
    let slack = slacks.first().copied().unwrap_or(0);

    let index: HashMap<usize, usize> = buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in branch_rows {
        row.need("branch", BR_B + 1)?;
        let v = &row.values;
        if v.len() > BR_STATUS && v[BR_STATUS] == 0.0 {
            continue;
        }
        let (f, t) = (row.id(F_BUS)?, row.id(T_BUS)?);
        for b in [f, t] {
            if !index.contains_key(&b) {
                return Err(Error::parse(row.line, format!("branch references unknown bus {}", b)));
            }
        }
        let rate = v.get(RATE_A).copied().unwrap_or(0.0);
        branches.push(Branch {
            from_bus: f,
            to_bus: t,
            r: v[BR_R],
            x: v[BR_X],
            i_max: (rate > 0.0).then(|| rate / base_mva),
        });
    }

    let mut costs = Vec::with_capacity(cost_rows.len());
    for row in cost_rows {
        row.need("gencost", 5)?;
        let v = &row.values;
        if v[0] != 2.0 || v[3] != 2.0 {
            return Err(Error::parse(
                row.line,
                format!("unsupported gencost model {} with {} coefficients (need linear model 2, 2 coefficients)", v[0], v[3]),
            ));
        }
        row.need("gencost", 6)?;
        costs.push(v[4]);
    }
    let mut slack_voltage = vm.get(&slack).copied().unwrap_or(1.0);
    for (g, row) in gen_rows.iter().enumerate() {
        row.need("gen", PMIN + 1)?;
        let v = &row.values;
        if v[GEN_STATUS] == 0.0 {
            continue;
        }
        let bus = row.id(GEN_BUS)?;
        let k = *index
            .get(&bus)
            .ok_or_else(|| Error::parse(row.line, format!("generator references unknown bus {}", bus)))?;
        if buses[k].gen.is_some() {
            return Err(Error::parse(row.line, format!("more than one generator at bus {}", bus)));
        }
        if bus == slack && v[VG] > 0.0 {
            slack_voltage = v[VG];
        }
        let cost_q = if costs.len() == 2 * gen_rows.len() { costs[gen_rows.len() + g] } else { 0.0 };
        buses[k].gen = Some(Generator {
            p_min: v[PMIN] / base_mva,
            p_max: v[PMAX] / base_mva,
            q_min: v[QMIN] / base_mva,
            q_max: v[QMAX] / base_mva,
            cost_p: costs.get(g).copied().unwrap_or(0.0),
            cost_q,
        });
    }

    let data = NetworkData { base_mva, base_kv, slack, slack_voltage, buses, branches };
    Ok((data, violations))
}

/// Parses MATPOWER case text into a validated per-unit network.
pub fn parse_matpower_case(text: &str) -> Result<Network> {
    let (data, mut violations) = parse_raw(text)?;
    if violations.is_empty() {
        return Network::new(data);
    }
    violations.extend(validate(&data));
    Err(Error::InvalidNetwork(violations))
}

/// Lists every invariant violation of a case file without failing on them.
pub fn validate_case(text: &str) -> Result<Vec<Violation>> {
    let (data, mut violations) = parse_raw(text)?;
    let no_slack = !violations.is_empty();
    violations.extend(
        validate(&data)
            .into_iter()
            .filter(|v| !(no_slack && v.message.starts_with("slack bus"))),
    );
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const TWO_BUS: &str = "\
function mpc = two
mpc.baseMVA = 1;
mpc.bus = [
    1 3 0 0 0 0 1 1 0 12.66 1 1.1 0.9;
    2 1 1.0 0 0 0 1 1 0 12.66 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 10 -10 1.0 100 1 10 0 ];
mpc.branch = [
    1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [ 2 0 0 2 30 0 ];
";

    #[test]
    fn two_bus_case() {
        let net = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(net.bus_count(), 2);
        assert_eq!(net.branches().len(), 1);
        assert_eq!(net.psp_costs(), Some((30.0, 0.0)));
        assert_eq!(net.buses()[1].p_load, 1.0);
    }

    #[test]
    fn two_slack_buses_is_one_violation() {
        let text = TWO_BUS.replace("2 1 1.0", "2 3 1.0");
        let v = validate_case(&text).unwrap();
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = TWO_BUS.replace("2 1 1.0 0", "2 1 abc 0");
        match parse_matpower_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadratic_gencost_is_rejected() {
        let text = TWO_BUS.replace("2 0 0 2 30 0", "2 0 0 3 0.1 30 0");
        assert!(matches!(parse_matpower_case(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_bus_in_branch() {
        let text = TWO_BUS.replace("1 2 0.01", "1 7 0.01");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(err.to_string().contains("unknown bus 7"));
    }

    #[test]
    fn loop_branch_is_non_radial() {
        let text = TWO_BUS.replace("];\nmpc.gencost", "    2 1 0.01 0.02 0 0 0 0 0 0 1 -360 360;\n];\nmpc.gencost");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(err.to_string().contains("non-radial topology"), "{err}");
    }
}
