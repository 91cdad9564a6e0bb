use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use limbnet::catalog::{builtin_catalog, catalog_json, lookup};
use limbnet::emu::{self, DeviceConfig, EdgeConfig, EmuError, Transport};
use limbnet::engine::{analytic_crosscheck, EventTrace, Scenario};
use limbnet::link::{access_network_latency, frame_transmission_time, profile, RttModel};
use limbnet::report::{render_tables, simulate, tables, ReportDocument, SimulateError};
use limbnet::scenario::{ConfigError, ScenarioFile};
use limbnet::units::{exact_from_f64, Millis};

const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_UNREACHABLE: u8 = 4;

/// Latency model, simulator and loopback emulator for edge-controlled
/// bionic limbs.
#[derive(Parser, Debug)]
#[command(name = "limbnet", version, about)]
struct Cli {
    /// Machine-readable output
    #[arg(long, global = true)]
    json: bool,

    /// Override the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write outputs into this directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Network performance and transmission-time tables
    Tables,
    /// Builtin stream catalog
    Catalog,
    /// Run the discrete-event simulation for a scenario file
    Simulate(SimulateArgs),
    /// Run one side of the loopback emulation
    Emulate {
        #[command(subcommand)]
        role: Role,
    },
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    /// Scenario file
    #[arg(required_unless_present = "all", conflicts_with = "all")]
    config: Option<PathBuf>,

    /// Run every *.json scenario in this directory
    #[arg(long, value_name = "DIR")]
    all: Option<PathBuf>,

    /// Exit with status 3 when any stream misses the latency budget
    #[arg(long)]
    strict_budget: bool,

    /// Write the event trace as JSON lines
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// Write per-frame latencies as CSV
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransportArg {
    Tcp,
    Udp,
}

impl From<TransportArg> for Transport {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Tcp => Transport::Tcp,
            TransportArg::Udp => Transport::Udp,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Role {
    /// Serve frames and answer with commands until interrupted
    Edge {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: SocketAddr,
        #[arg(long, default_value_t = 0.0)]
        processing_ms: f64,
        #[arg(long, value_enum, default_value = "tcp")]
        transport: TransportArg,
    },
    /// Stream shaped frames to an edge agent and measure round trips
    Device {
        #[arg(long, default_value = "127.0.0.1:7070")]
        connect: SocketAddr,
        /// Link profile whose uplink rate and RTT drive the shaper
        #[arg(long, default_value = "5g100opt")]
        profile: String,
        #[arg(long, default_value = "rgbd_camera")]
        stream: String,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        /// Edge processing time assumed by the analytic comparison
        #[arg(long, default_value_t = 0.0)]
        processing_ms: f64,
        #[arg(long, value_enum, default_value = "tcp")]
        transport: TransportArg,
    },
}

/// Error carrying the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INVALID, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Tables => cmd_tables(cli),
        Command::Catalog => cmd_catalog(cli),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Emulate { role } => cmd_emulate(cli, role),
    }
}

/// Prints to stdout, or writes `name` under `--out` when given.
fn emit(cli: &Cli, name: &str, text: &str) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn output_path(cli: &Cli, path: &Path) -> PathBuf {
    match &cli.out {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn cmd_tables(cli: &Cli) -> Result<u8, Failure> {
    let t = tables();
    if cli.json {
        emit(cli, "tables.json", &pretty(&t))?;
    } else {
        emit(cli, "tables.txt", &render_tables(&t))?;
    }
    Ok(0)
}

fn cmd_catalog(cli: &Cli) -> Result<u8, Failure> {
    let streams = builtin_catalog();
    if cli.json {
        emit(cli, "catalog.json", &pretty(&catalog_json(&streams)))?;
        return Ok(0);
    }
    let mut text = format!("{:<16}{:<10}{:<16}{:>14}{:>14}{:>6}\n", "id", "dir", "kind", "rate", "frame bits", "rank");
    for s in &streams {
        let rate = s.rate().map(|r| r.display_si()).unwrap_or_else(|| "event".into());
        let kind = serde_json::to_value(s.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        text.push_str(&format!(
            "{:<16}{:<10}{:<16}{:>14}{:>14}{:>6}\n",
            s.id,
            s.direction.to_string(),
            kind, rate, s.frame_bits(), s.priority.rank
        ));
    }
    emit(cli, "catalog.txt", &text)?;
    Ok(0)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioFile, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::invalid)?;
    let mut file = ScenarioFile::from_json(&text)
        .map_err(|e| Failure::invalid(anyhow::anyhow!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        file.seed = seed;
    }
    // Validate fully before anything runs or gets written.
    file.resolve().map_err(|e: ConfigError| Failure::invalid(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok(file)
}

fn run_one(file: &ScenarioFile) -> Result<(ReportDocument, EventTrace), Failure> {
    simulate(file).map_err(|e| match e {
        SimulateError::Config(e) => Failure::invalid(e),
        SimulateError::Engine(e) => Failure::from(anyhow::Error::new(e)),
    })
}

fn summary(report: &ReportDocument) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18}{:<10}{:>7}{:>7}{:>7}{:>7}{:>10}{:>10}  {}\n",
        "stream", "dir", "gen", "deliv", "drop", "infl", "p50 ms", "p95 ms", "verdict"
    ));
    for (s, v) in m.streams.iter().zip(&report.verdicts) {
        let (p50, p95) = match &s.latency {
            Some(l) => (format!("{:.2}", l.p50_ms), format!("{:.2}", l.p95_ms)),
            None => ("-".into(), "-".into()),
        };
        let verdict = v.verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<18}{:<10}{:>7}{:>7}{:>7}{:>7}{:>10}{:>10}  {}\n",
            s.stream_id,
            s.direction.to_string(),
            s.counters.generated,
            s.counters.delivered,
            s.counters.dropped,
            s.counters.in_flight,
            p50,
            p95,
            verdict
        ));
    }
    out.push_str(&format!("budget violation fraction: {:.4}\n", m.budget_violation_fraction));
    out.push_str(&format!("fallback episodes: {} ({:.1} ms)\n", m.fallback_episodes, m.fallback_time_ms));
    if let Some(cc) = &report.crosscheck {
        for c in cc {
            out.push_str(&format!("analytic latency {}: {:.3} ms ({} ms)\n", c.stream_id, c.analytic_ms, c.analytic_ms_rounded));
        }
    }
    out
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<u8, Failure> {
    if let Some(dir) = &args.all {
        return simulate_all(cli, args, dir);
    }
    let path = args.config.as_ref().expect("clap enforces config or --all");
    let file = load_scenario(path, cli.seed)?;
    let (report, trace) = run_one(&file)?;
    if !report.metrics.conserved() {
        return Err(anyhow::anyhow!("frame conservation violated").into());
    }

    if cli.json || cli.out.is_some() {
        emit(cli, "report.json", &pretty(&report))?;
    } else {
        print!("{}", summary(&report));
    }
    if let Some(p) = &args.trace {
        write_file(&output_path(cli, p), &trace.to_jsonl())?;
    }
    if let Some(p) = &args.csv {
        write_file(&output_path(cli, p), &trace.latency_csv())?;
    }
    Ok(if args.strict_budget && report.any_infeasible() { EXIT_INFEASIBLE } else { 0 })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate_all(cli: &Cli, args: &SimulateArgs, dir: &Path) -> Result<u8, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(Failure::invalid)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let files = paths.iter().map(|p| load_scenario(p, cli.seed)).collect::<Result<Vec<_>, _>>()?;
    let results = files.par_iter().map(run_one).collect::<Result<Vec<_>, _>>()?;

    let mut merged = Vec::new();
    let mut text = String::new();
    for (path, (report, trace)) in paths.iter().zip(&results) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        if let Some(out) = &cli.out {
            write_file(&out.join(format!("{stem}.report.json")), &pretty(report))?;
            if args.trace.is_some() {
                write_file(&out.join(format!("{stem}.trace.jsonl")), &trace.to_jsonl())?;
            }
            if args.csv.is_some() {
                write_file(&out.join(format!("{stem}.latency.csv")), &trace.latency_csv())?;
            }
        }
        text.push_str(&format!("== {}\n{}", path.display(), summary(report)));
        merged.push(serde_json::json!({ "scenario_file": path.display().to_string(), "report": report }));
    }
    if cli.json || cli.out.is_some() {
        emit(cli, "reports.json", &pretty(&merged))?;
    } else {
        print!("{text}");
    }
    let infeasible = results.iter().any(|(r, _)| r.any_infeasible());
    Ok(if args.strict_budget && infeasible { EXIT_INFEASIBLE } else { 0 })
}

fn millis(field: &str, v: f64) -> Result<Millis, Failure> {
    match exact_from_f64(v) {
        Some(x) if v >= 0.0 => Ok(Millis(x)),
        _ => Err(Failure::invalid(anyhow::anyhow!("--{field} must be a nonnegative number"))),
    }
}

fn cmd_emulate(cli: &Cli, role: &Role) -> Result<u8, Failure> {
    match role {
        Role::Edge { listen, processing_ms, transport } => {
            let delay = millis("processing-ms", *processing_ms)?;
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;
            let cfg = EdgeConfig {
                endpoint: *listen,
                processing_delay: Duration::from_secs_f64(delay.as_f64() / 1e3),
                transport: (*transport).into(),
            };
            let stats = emu::run_edge(&cfg, stop).map_err(|e| anyhow::anyhow!(e))?;
            eprintln!(
                "edge stopped: {} frames, {} commands, {} malformed, {} connections",
                stats.frames, stats.commands, stats.malformed, stats.connections
            );
            Ok(0)
        }
        Role::Device { connect, profile: name, stream, duration_s, processing_ms, transport } => {
            let link = profile(name).map_err(Failure::invalid)?;
            let spec = lookup(stream).map_err(Failure::invalid)?;
            let processing = millis("processing-ms", *processing_ms)?;
            if !(duration_s.is_finite() && *duration_s > 0.0) {
                return Err(Failure::invalid(anyhow::anyhow!("--duration-s must be positive")));
            }
            let mut cfg = DeviceConfig::for_profile(*connect, &link, &spec, Duration::from_secs_f64(*duration_s))
                .map_err(Failure::invalid)?;
            cfg.transport = (*transport).into();

            // The analytic side comes from the same closed form the simulator
            // is checked against; it is undefined when the link saturates.
            let analytic = {
                let mut sc = Scenario::testbed(link.clone(), exact_from_f64(*duration_s).expect("finite"));
                sc.streams = vec![spec.clone()];
                sc.rtt_model = RttModel::deterministic(link.rtt_mean);
                sc.edge_processing = limbnet::engine::EdgeProcessing::Fixed(processing);
                match analytic_crosscheck(&sc) {
                    Ok(rows) => rows[0].1,
                    Err(e) => {
                        log::warn!("{e}; comparing against the unloaded access latency");
                        let tx = frame_transmission_time(spec.frame_bits(), link.uplink_rate).map_err(Failure::invalid)?;
                        access_network_latency(tx, link.rtt_mean) + processing
                    }
                }
            };

            let report = emu::run_device(&cfg).map_err(|e| match e {
                EmuError::Unreachable { .. } => Failure { code: EXIT_UNREACHABLE, error: e.into() },
                EmuError::Config(_) => Failure::invalid(e),
                EmuError::Transport(_) => Failure::from(anyhow::Error::new(e)),
            })?;
            let comparison = emu::compare(&report, analytic);
            if cli.json || cli.out.is_some() {
                let doc = serde_json::json!({ "report": report, "comparison": comparison });
                emit(cli, "emulation.json", &pretty(&doc))?;
            } else {
                println!(
                    "frames: {} generated, {} answered, {} missed, {} malformed",
                    report.generated, report.delivered, report.missed, report.malformed
                );
                println!("achieved uplink: {:.2} Mb/s", report.achieved_ul_mbps);
                println!("comparison:");
                println!("  analytic latency: {:.3} ms", comparison.analytic_ms);
                match comparison.measured_mean_ms {
                    Some(m) => println!("  measured mean:    {m:.3} ms"),
                    None => println!("  measured mean:    -"),
                }
                println!("  tolerance:        {:.3} ms", comparison.tolerance_ms);
                println!("  agreement:        {}", if comparison.agrees { "yes" } else { "no" });
            }
            Ok(0)
        }
    }
}
