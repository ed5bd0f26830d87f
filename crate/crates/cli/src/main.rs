use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use distopf::acpf::{newton_pf, PfOptions};
use distopf::mdistflow::{losses, solve_fixed_load};
use distopf::mdopf::{self, MdopfOptions};
use distopf::network::{build_path_incidence, duplicate_system, matpower, Injections, Network, ScaleRange};
use distopf::par::{self, Execution};
use distopf::pricing::{self, LossBasis, Mechanism, PriceTable};
use distopf::scenario::{load_case, DgSpec, Duplication, Scenario, CASE_DIR_ENV};
use distopf::{Error, ErrorKind};

/// Optimal power flow and locational pricing for radial distribution networks.
#[derive(Debug, Parser)]
#[command(name = "distopf", version)]
struct Cli {
    /// Report format for tabular output.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Directory for report files; reports go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Mlm,
    Lam,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a case and list every data violation.
    Validate {
        /// Case file, MATPOWER `.m` or native `.json`.
        #[arg(long, env = "DISTOPF_CASE")]
        case: PathBuf,
    },
    /// Compare modified-DistFlow voltages with an exact Newton power flow.
    Pf(ScenarioArgs),
    /// Solve the optimal dispatch.
    Opf(ScenarioArgs),
    /// Compute locational prices and settle them.
    Price {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
        mechanism: MechanismArg,
        /// Add finite-difference AC price columns and their errors.
        #[arg(long)]
        oracle: bool,
    },
    /// Replicate a case behind its supply point and write it as native JSON.
    Duplicate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lower bound of the random impedance and load multipliers.
        #[arg(long, default_value_t = 1.0)]
        scale_lo: f64,
        /// Upper bound of the random impedance and load multipliers.
        #[arg(long, default_value_t = 1.0)]
        scale_hi: f64,
    },
}

/// Scenario overlay; flags override values from `--scenario`.
#[derive(Debug, Clone, Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Case file, MATPOWER `.m` or native `.json`.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Supply-point voltage, pu.
    #[arg(long = "psp-v")]
    psp_v: Option<f64>,
    /// Supply-point active price, $/MWh.
    #[arg(long)]
    psp_cost_p: Option<f64>,
    /// Supply-point reactive price, $/MVArh.
    #[arg(long)]
    psp_cost_q: Option<f64>,
    #[arg(long)]
    load_scale: Option<f64>,
    #[arg(long)]
    impedance_scale: Option<f64>,
    /// Distributed generator as `BUS:PMAX_MW:QMAX_MVAR:COST_P:COST_Q`; repeatable.
    #[arg(long, value_parser = parse_dg)]
    dg: Vec<DgSpec>,
    /// Replicate the case this many times.
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enforce branch thermal limits.
    #[arg(long)]
    thermal_limits: bool,
}

fn parse_dg(s: &str) -> Result<DgSpec, String> {
    let f: Vec<&str> = s.split(':').collect();
    if f.len() != 5 {
        return Err("expected BUS:PMAX:QMAX:COST_P:COST_Q".into());
    }
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("'{}': {}", t, e));
    Ok(DgSpec {
        bus: f[0].parse().map_err(|e| format!("'{}': {}", f[0], e))?,
        p_range: [0.0, num(f[1])?],
        q_range: [0.0, num(f[2])?],
        cost_p: num(f[3])?,
        cost_q: num(f[4])?,
    })
}

impl ScenarioArgs {
    fn resolve(&self) -> distopf::Result<(Scenario, Network)> {
        let mut s = match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default(),
        };
        if let Some(c) = &self.case {
            s.case = Some(c.clone());
        }
        s.psp_voltage = self.psp_v.or(s.psp_voltage);
        if self.psp_cost_p.is_some() || self.psp_cost_q.is_some() {
            let [p, q] = s.psp_costs.unwrap_or([30.0, 3.0]);
            s.psp_costs = Some([self.psp_cost_p.unwrap_or(p), self.psp_cost_q.unwrap_or(q)]);
        }
        if let Some(v) = self.load_scale {
            s.load_scale = v;
        }
        if let Some(v) = self.impedance_scale {
            s.impedance_scale = v;
        }
        s.dg.extend(self.dg.iter().cloned());
        if let Some(copies) = self.copies {
            let d = s.duplication.get_or_insert(Duplication { copies, seed: 0, range: [1.0, 1.0] });
            d.copies = copies;
        }
        if let (Some(seed), Some(d)) = (self.seed, s.duplication.as_mut()) {
            d.seed = seed;
        }
        s.thermal_limits |= self.thermal_limits;
        let case = s.case.clone().ok_or_else(|| Error::Scenario("no case given (--case or scenario 'case')".into()))?;
        let net = s.apply(&load_case(&case)?)?;
        Ok((s, net))
    }
}

struct Output {
    format: Format,
    dir: Option<PathBuf>,
}

impl Output {
    fn table<T: Serialize>(&self, name: &str, rows: &[T]) -> distopf::Result<()> {
        let mut buf = Vec::new();
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(&mut buf);
                for r in rows {
                    w.serialize(r).map_err(|e| Error::Io(io::Error::other(e)))?;
                }
                w.flush()?;
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut buf, rows)?;
                buf.push(b'\n');
            }
        }
        self.emit(name, self.ext(), &buf)
    }

    fn prices(&self, name: &str, table: &PriceTable) -> distopf::Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                self.emit(name, "csv", &buf)
            }
            Format::Json => self.table(name, &table.rows),
        }
    }

    fn summary<T: Serialize>(&self, name: &str, value: &T) -> distopf::Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        match &self.dir {
            Some(_) => self.emit(name, "json", &buf),
            None => Ok(io::stderr().write_all(&buf)?),
        }
    }

    fn ext(&self) -> &'static str {
        match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    fn emit(&self, name: &str, ext: &str, bytes: &[u8]) -> distopf::Result<()> {
        match &self.dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                let path = d.join(format!("{}.{}", name, ext));
                fs::write(&path, bytes)?;
                info!("wrote {}", path.display());
                Ok(())
            }
            None => Ok(io::stdout().write_all(bytes)?),
        }
    }
}

#[derive(Serialize)]
struct PfRow {
    bus: usize,
    #[serde(rename = "V_mdf[pu]")]
    v_mdf: f64,
    #[serde(rename = "V_ac[pu]")]
    v_ac: f64,
    #[serde(rename = "abs_err[pu]")]
    abs_err: f64,
    #[serde(rename = "delta_mdf[rad]")]
    delta_mdf: f64,
    #[serde(rename = "delta_ac[rad]")]
    delta_ac: f64,
}

#[derive(Serialize)]
struct PfSummary {
    buses: usize,
    max_abs_err: f64,
    min_voltage_mdf: f64,
    min_voltage_bus: usize,
    loss_mdf_mw: f64,
    loss_ac_mw: f64,
    newton_iterations: usize,
}

fn cmd_pf(args: &ScenarioArgs, out: &Output) -> distopf::Result<()> {
    let (_, net) = args.resolve()?;
    let ti = build_path_incidence(&net);
    let inj = Injections::from_loads(&net);
    let mdf = solve_fixed_load(&net, &ti, &inj)?;
    let ac = newton_pf(&net, &ti, &inj, None, &PfOptions::default())?;
    let mut rows = vec![PfRow {
        bus: net.slack_id(),
        v_mdf: mdf.v0,
        v_ac: ac.v0,
        abs_err: 0.0,
        delta_mdf: 0.0,
        delta_ac: 0.0,
    }];
    for (pos, &b) in ti.order().iter().enumerate() {
        rows.push(PfRow {
            bus: net.buses()[b].id,
            v_mdf: mdf.v[pos],
            v_ac: ac.v[pos],
            abs_err: (mdf.v[pos] - ac.v[pos]).abs(),
            delta_mdf: mdf.delta[pos],
            delta_ac: ac.delta[pos],
        });
    }
    let low = rows.iter().min_by(|a, b| a.v_mdf.total_cmp(&b.v_mdf)).expect("slack row");
    let summary = PfSummary {
        buses: rows.len(),
        max_abs_err: rows.iter().map(|r| r.abs_err).fold(0.0, f64::max),
        min_voltage_mdf: low.v_mdf,
        min_voltage_bus: low.bus,
        loss_mdf_mw: losses(&ti, &mdf).pl * net.base_mva(),
        loss_ac_mw: ac.pl_exact * net.base_mva(),
        newton_iterations: ac.iterations,
    };
    out.table("pf", &rows)?;
    out.summary("pf_summary", &summary)
}

#[derive(Serialize)]
struct DispatchRow {
    bus: usize,
    #[serde(rename = "p[MW]")]
    p: f64,
    #[serde(rename = "q[MVAr]")]
    q: f64,
}

#[derive(Serialize)]
struct Stats {
    iterations: usize,
    final_gap: f64,
    final_feas: f64,
    stationarity: f64,
    primal: f64,
    complementarity: f64,
}

#[derive(Serialize)]
struct OpfSummary {
    objective: f64,
    ac_cost: f64,
    status: distopf::qcqp::Status,
    convexity: mdopf::ConvexityReport,
    solver: Stats,
}

fn run_opf(net: &Network, s: &Scenario) -> distopf::Result<(distopf::network::PathIncidence, mdopf::OpfOutcome)> {
    let ti = build_path_incidence(net);
    let opts = MdopfOptions { thermal_limits: s.thermal_limits, ..MdopfOptions::default() };
    let outcome = mdopf::solve(net, &ti, &opts)?;
    info!("solver time {:.3} s", outcome.stats.runtime_seconds);
    Ok((ti, outcome))
}

fn cmd_opf(args: &ScenarioArgs, out: &Output) -> distopf::Result<()> {
    let (s, net) = args.resolve()?;
    let (ti, o) = run_opf(&net, &s)?;
    let ac = mdopf::ac_cost(&net, &ti, &o.dispatch, &PfOptions::default())?;
    let base = net.base_mva();
    let rows: Vec<DispatchRow> = o.dispatch.iter().map(|d| DispatchRow { bus: d.bus, p: d.p * base, q: d.q * base }).collect();
    let st = o.stats;
    let summary = OpfSummary {
        objective: o.objective,
        ac_cost: ac.cost,
        status: o.status,
        convexity: o.convexity,
        solver: Stats {
            iterations: st.iterations,
            final_gap: st.final_gap,
            final_feas: st.final_feas,
            stationarity: st.stationarity,
            primal: st.primal,
            complementarity: st.complementarity,
        },
    };
    out.table("dispatch", &rows)?;
    out.summary("opf_summary", &summary)
}

#[derive(Serialize)]
struct PriceSummary {
    objective: f64,
    settlements: Vec<pricing::SettlementReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_err_p_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_err_q_percent: Option<f64>,
}

fn cmd_price(args: &ScenarioArgs, mechanism: MechanismArg, oracle: bool, out: &Output) -> distopf::Result<()> {
    let (s, net) = args.resolve()?;
    let (ti, o) = run_opf(&net, &s)?;
    let exec = Execution::default();
    let mut table = PriceTable::new(&net, &ti);
    let mut settlements = Vec::new();
    let mut mlm = None;
    let ac_losses = |dispatch: &[mdopf::Dispatch]| -> distopf::Result<LossBasis> {
        let ac = newton_pf(&net, &ti, &mdopf::dispatch_injections(&net, dispatch), None, &PfOptions::default())?;
        Ok(LossBasis::Exact { pl: ac.pl_exact, ql: ac.ql_exact })
    };
    let exact = ac_losses(&o.dispatch)?;
    if matches!(mechanism, MechanismArg::Mlm | MechanismArg::Both) {
        let (lf, prices) = pricing::dlmp(&net, &ti, &o, exec)?;
        table = table.with_mlm(&lf, &prices);
        for basis in [LossBasis::Model, exact] {
            settlements.push(pricing::settle(&net, &ti, &o.state, &prices, Mechanism::Mlm, basis));
        }
        mlm = Some(prices);
    }
    if matches!(mechanism, MechanismArg::Lam | MechanismArg::Both) {
        let prices = pricing::dlp(&net, &ti, &o.state)?;
        table = table.with_lam(&pricing::allocate_losses(&ti, &o.state), &prices);
        for basis in [LossBasis::Model, exact] {
            settlements.push(pricing::settle(&net, &ti, &o.state, &prices, Mechanism::Lam, basis));
        }
    }
    let (mut err_p, mut err_q) = (None, None);
    if oracle {
        let (_, reference) = pricing::oracle_prices(&net, &ti, &o.dispatch, exec)?;
        table = table.with_oracle(&reference);
        if let Some(m) = &mlm {
            err_p = Some(100.0 * pricing::mean_relative_error(&m.p, &reference.p));
            err_q = Some(100.0 * pricing::mean_relative_error(&m.q, &reference.q));
        }
    }
    out.prices("prices", &table)?;
    out.summary(
        "price_summary",
        &PriceSummary { objective: o.objective, settlements, mean_err_p_percent: err_p, mean_err_q_percent: err_q },
    )
}

fn cmd_validate(case: &Path) -> distopf::Result<()> {
    let path = distopf::scenario::resolve_case(case);
    let text = fs::read_to_string(&path)?;
    let violations = if path.extension().is_some_and(|e| e == "json") {
        let data: distopf::network::NetworkData = serde_json::from_str(&text)?;
        distopf::network::validate(&data)
    } else {
        matpower::validate_case(&text)?
    };
    if violations.is_empty() {
        println!("{}: ok", path.display());
        Ok(())
    } else {
        for v in &violations {
            println!("{}", v);
        }
        Err(Error::InvalidNetwork(violations))
    }
}

fn cmd_duplicate(case: &Path, copies: usize, seed: u64, lo: f64, hi: f64, out: &Output) -> distopf::Result<()> {
    let net = duplicate_system(&load_case(case)?, copies, seed, ScaleRange::new(lo, hi)?)?;
    eprintln!("{} buses", net.bus_count());
    let mut buf = serde_json::to_vec_pretty(&net)?;
    buf.push(b'\n');
    out.emit("network", "json", &buf)
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Data => 1,
        ErrorKind::Solver => 2,
        ErrorKind::Oracle => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        par::set_threads(n);
    }
    let out = Output { format: cli.format, dir: cli.out.clone() };
    let result = match &cli.command {
        Command::Validate { case } => cmd_validate(case),
        Command::Pf(a) => cmd_pf(a, &out),
        Command::Opf(a) => cmd_opf(a, &out),
        Command::Price { scenario, mechanism, oracle } => cmd_price(scenario, *mechanism, *oracle, &out),
        Command::Duplicate { case, copies, seed, scale_lo, scale_hi } => {
            cmd_duplicate(case, *copies, *seed, *scale_lo, *scale_hi, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            if std::env::var_os(CASE_DIR_ENV).is_none() && matches!(e, Error::Io(_)) {
                eprintln!("hint: relative case paths are also looked up under ${}", CASE_DIR_ENV);
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
