//! Command-line front end for the nanotube walk toolkit.
//!
//! Subcommands: `generate` (graph export), `sweep` (transport grid to CSV),
//! `validate` (cross-checks on one setting), `maximize` (best source state
//! as JSON), `simulate` (survival trace to CSV). Exit codes: 0 success,
//! 2 usage or configuration error, 3 capability refused (problem too large
//! for the dense cross-check), 4 validation failure.

use clap::{Args, Parser, Subcommand};
use cntwalk::graph::{build_nanotube, export_text, StateGraph, TubeSpec};
use cntwalk::transport::{
    atp_via_simulation, make_regime, transport_report, validate, RegimeLabel, SimulationOptions,
    TransportReport, CSV_HEADER,
};
use cntwalk::trapped::{analytic_percolated_basis, span_residual, spectral_oracle, WalkFlavor};
use cntwalk::walk::{basis_state, Walk, C64};
use cntwalk::Error;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "cntwalk",
    version,
    about = "Source-to-sink transport of coined quantum walks on carbon nanotubes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a nanotube state graph and write its text export.
    Generate(GenerateArgs),
    /// Run a transport sweep described by a config file and write CSV.
    Sweep(SweepArgs),
    /// Cross-check the analytic pipeline on one setting (JSON report).
    Validate(SettingArgs),
    /// Find the transport maximum over source states (JSON report).
    Maximize(SettingArgs),
    /// Evolve the walk in time and write the survival trace as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Chirality as two comma-separated integers, e.g. 6,0 or 3,3.
    #[arg(long, value_parser = parse_chirality)]
    chirality: (u32, u32),
    /// Tube length in basal segments.
    #[arg(long)]
    length: u32,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to a flat key-value sweep configuration.
    config: PathBuf,
    /// Override the output path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parse the config and report the grid size without computing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SettingArgs {
    /// Chirality as two comma-separated integers, e.g. 6,0 or 3,3.
    #[arg(long, value_parser = parse_chirality)]
    chirality: (u32, u32),
    /// Tube length in basal segments.
    #[arg(long)]
    length: u32,
    /// Transport regime: vv, vl, lv, or ll.
    #[arg(long, value_parser = parse_regime)]
    regime: RegimeLabel,
    /// Walk flavor: cqw (ideal) or pcqw (percolated).
    #[arg(long, value_parser = parse_flavor)]
    flavor: WalkFlavor,
    /// Edge-open probability for the percolated flavor.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Monte Carlo trajectory count for the percolated flavor.
    #[arg(long, default_value_t = 10_000)]
    trajectories: usize,
    /// Random seed for Monte Carlo sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    setting: SettingArgs,
    /// Number of walk steps to evolve.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
}

fn parse_chirality(s: &str) -> Result<(u32, u32), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected m,n (two comma-separated integers), got {s:?}"));
    }
    let m = parts[0].trim().parse::<u32>().map_err(|e| format!("bad m in {s:?}: {e}"))?;
    let n = parts[1].trim().parse::<u32>().map_err(|e| format!("bad n in {s:?}: {e}"))?;
    Ok((m, n))
}

fn parse_regime(s: &str) -> Result<RegimeLabel, String> {
    RegimeLabel::from_str(s).map_err(|e| e.to_string())
}

fn parse_flavor(s: &str) -> Result<WalkFlavor, String> {
    match s {
        "cqw" => Ok(WalkFlavor::Cqw),
        "pcqw" => Ok(WalkFlavor::Pcqw),
        other => Err(format!("unknown flavor {other:?}; expected cqw or pcqw")),
    }
}

/// An error carrying the process exit code it should produce.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::OracleRefused(_) => 3,
            Error::InvalidSpec(_)
            | Error::DegenerateWrap(_)
            | Error::Embedding(_)
            | Error::Subspace(_)
            | Error::WalkSetup(_)
            | Error::Io(_) => 2,
            Error::Basis(_) | Error::Transport(_) | Error::Linalg(_) => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 2, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Validate(args) => cmd_validate(args),
        Cmd::Maximize(args) => cmd_maximize(args),
        Cmd::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn build(chirality: (u32, u32), length: u32) -> Result<StateGraph, CliError> {
    let spec = TubeSpec::new(chirality.0, chirality.1, length)?;
    Ok(build_nanotube(&spec)?)
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let g = build(args.chirality, args.length)?;
    emit(&args.out, &export_text(&g))
}

fn simulation_options(args: &SettingArgs) -> SimulationOptions {
    SimulationOptions {
        p: args.p,
        trajectories: args.trajectories,
        seed: args.seed,
        ..SimulationOptions::default()
    }
}

fn cmd_validate(args: SettingArgs) -> Result<(), CliError> {
    let g = build(args.chirality, args.length)?;
    let opts = simulation_options(&args);
    let report = validate(&g, args.regime, args.flavor, &opts)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError { code: 1, message: e.to_string() })?;
    emit(&args.out, &format!("{json}\n"))?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError { code: 4, message: "validation checks failed".into() })
    }
}

fn cmd_maximize(args: SettingArgs) -> Result<(), CliError> {
    let g = build(args.chirality, args.length)?;
    let report = transport_report(&g, args.regime, args.flavor)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError { code: 1, message: e.to_string() })?;
    emit(&args.out, &format!("{json}\n"))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let setting = args.setting;
    let g = build(setting.chirality, setting.length)?;
    let regime = make_regime(&g, setting.regime)?;
    let walk = Walk::new(&g, &regime.sink.states)?;
    let source_basis: Vec<Vec<C64>> =
        regime.source.states.iter().map(|&s| basis_state(&g, s)).collect();
    let mut csv = String::from("t,survival,stderr\n");
    match setting.flavor {
        WalkFlavor::Cqw => {
            let trace = walk.ideal_survival_trace(&source_basis, args.steps);
            for (t, s) in trace.iter().enumerate() {
                writeln!(csv, "{t},{s:.12},").expect("write to string");
            }
        }
        WalkFlavor::Pcqw => {
            let (mean, err) = walk.percolated_survival_mc(
                &source_basis,
                args.steps,
                setting.p,
                setting.trajectories,
                setting.seed,
            )?;
            for (t, (s, e)) in mean.iter().zip(&err).enumerate() {
                writeln!(csv, "{t},{s:.12},{e:.12}").expect("write to string");
            }
        }
    }
    emit(&setting.out, &csv)
}

// ---------------------------------------------------------------------------
// Sweep configuration
// ---------------------------------------------------------------------------

/// A parsed sweep configuration: the grid to expand, Monte Carlo knobs for
/// the optional per-row checks, and the output path.
struct SweepConfig {
    chiralities: Vec<(u32, u32)>,
    lengths: Vec<u32>,
    regimes: Vec<RegimeLabel>,
    flavors: Vec<WalkFlavor>,
    p: f64,
    trajectories: usize,
    seed: u64,
    out: Option<PathBuf>,
    check_oracle: bool,
    check_simulation: bool,
}

impl SweepConfig {
    fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut chiralities = None;
        let mut lengths = None;
        let mut regimes = None;
        let mut flavors = None;
        let mut p = 0.5f64;
        let mut trajectories = 10_000usize;
        let mut seed = 1u64;
        let mut out = None;
        let mut check_oracle = false;
        let mut check_simulation = false;
        let mut seen: Vec<String> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| {
                CliError::usage(format!("{}:{}: {msg}", origin.display(), lineno + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            match key {
                "chirality" => {
                    let mut list = Vec::new();
                    for item in value.split_whitespace() {
                        list.push(parse_chirality(item).map_err(&at)?);
                    }
                    chiralities = Some(list);
                }
                "length" => {
                    let mut list = Vec::new();
                    for item in value.split_whitespace() {
                        if let Some((a, b)) = item.split_once("..") {
                            let a: u32 =
                                a.parse().map_err(|e| at(format!("bad range start: {e}")))?;
                            let b: u32 =
                                b.parse().map_err(|e| at(format!("bad range end: {e}")))?;
                            list.extend(a..=b);
                        } else {
                            list.push(
                                item.parse().map_err(|e| at(format!("bad length: {e}")))?,
                            );
                        }
                    }
                    lengths = Some(list);
                }
                "regime" => {
                    let mut list = Vec::new();
                    for item in value.split_whitespace() {
                        if item == "all" {
                            list.extend(RegimeLabel::ALL);
                        } else {
                            list.push(parse_regime(item).map_err(&at)?);
                        }
                    }
                    regimes = Some(list);
                }
                "flavor" => {
                    let mut list = Vec::new();
                    for item in value.split_whitespace() {
                        if item == "both" {
                            list.extend([WalkFlavor::Cqw, WalkFlavor::Pcqw]);
                        } else {
                            list.push(parse_flavor(item).map_err(&at)?);
                        }
                    }
                    flavors = Some(list);
                }
                "p" => p = value.parse().map_err(|e| at(format!("bad p: {e}")))?,
                "trajectories" => {
                    trajectories =
                        value.parse().map_err(|e| at(format!("bad trajectories: {e}")))?
                }
                "seed" => seed = value.parse().map_err(|e| at(format!("bad seed: {e}")))?,
                "out" => out = Some(PathBuf::from(value)),
                "check_oracle" => {
                    check_oracle =
                        value.parse().map_err(|e| at(format!("bad check_oracle: {e}")))?
                }
                "check_simulation" => {
                    check_simulation = value
                        .parse()
                        .map_err(|e| at(format!("bad check_simulation: {e}")))?
                }
                other => return Err(at(format!("unknown key {other:?}"))),
            }
        }

        let origin_err = |msg: &str| CliError::usage(format!("{}: {msg}", origin.display()));
        let chiralities =
            chiralities.ok_or_else(|| origin_err("missing required key `chirality`"))?;
        let lengths = lengths.ok_or_else(|| origin_err("missing required key `length`"))?;
        let regimes = regimes.ok_or_else(|| origin_err("missing required key `regime`"))?;
        let flavors = flavors.ok_or_else(|| origin_err("missing required key `flavor`"))?;
        if chiralities.is_empty() {
            return Err(origin_err("chirality list is empty"));
        }
        if lengths.is_empty() {
            return Err(origin_err("length range is empty"));
        }
        if lengths.iter().any(|&l| l < 1) {
            return Err(origin_err("lengths must be at least 1"));
        }
        if regimes.is_empty() {
            return Err(origin_err("regime list is empty"));
        }
        if flavors.is_empty() {
            return Err(origin_err("flavor list is empty"));
        }
        if trajectories < 1 {
            return Err(origin_err("trajectories must be at least 1"));
        }
        Ok(SweepConfig {
            chiralities,
            lengths,
            regimes,
            flavors,
            p,
            trajectories,
            seed,
            out,
            check_oracle,
            check_simulation,
        })
    }

    /// Grid points in deterministic sweep order.
    fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &(m, n) in &self.chiralities {
            for &length in &self.lengths {
                for &regime in &self.regimes {
                    for &flavor in &self.flavors {
                        points.push(GridPoint { m, n, length, regime, flavor });
                    }
                }
            }
        }
        points
    }
}

#[derive(Clone, Copy)]
struct GridPoint {
    m: u32,
    n: u32,
    length: u32,
    regime: RegimeLabel,
    flavor: WalkFlavor,
}

/// One finished sweep row: the report columns (or blanks on failure) plus a
/// status column recording what happened.
fn sweep_row(cfg: &SweepConfig, pt: &GridPoint) -> String {
    match sweep_point(cfg, pt) {
        Ok((report, status)) => format!("{},{status}", report.csv_row()),
        Err(e) => format!(
            "{},{},{},{},{},,,,,,{}",
            pt.m,
            pt.n,
            pt.length,
            pt.regime,
            pt.flavor,
            e.message.replace(',', ";").replace('\n', " ")
        ),
    }
}

fn sweep_point(cfg: &SweepConfig, pt: &GridPoint) -> Result<(TransportReport, String), CliError> {
    let g = build((pt.m, pt.n), pt.length)?;
    let report = transport_report(&g, pt.regime, pt.flavor)?;
    let mut status = String::from("ok");

    if cfg.check_oracle && pt.flavor == WalkFlavor::Pcqw {
        let regime = make_regime(&g, pt.regime)?;
        let analytic = analytic_percolated_basis(&g, Some(&regime.sink))?;
        let numeric = spectral_oracle(&g, WalkFlavor::Pcqw)?;
        let residual = span_residual(&analytic.states, &numeric.states, g.state_count());
        if residual >= cntwalk::transport::VALIDATION_RESIDUAL_TOL {
            status = format!("oracle check failed: span residual {residual:.3e}");
        }
    }
    if cfg.check_simulation && status == "ok" {
        let regime = make_regime(&g, pt.regime)?;
        let opts = SimulationOptions {
            p: cfg.p,
            trajectories: cfg.trajectories,
            seed: cfg.seed,
            ..SimulationOptions::default()
        };
        let sim = atp_via_simulation(&g, &regime, pt.flavor, &opts)?;
        let gap = (report.averaged_atp - sim.atp).abs();
        let ok = match sim.stderr {
            Some(se) => gap <= 3.0 * se.max(1e-6),
            None => gap <= cntwalk::transport::VALIDATION_ATP_TOL,
        };
        if !ok {
            status = format!("simulation check failed: gap {gap:.3e}");
        }
    }
    Ok((report, status))
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::usage(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut cfg = SweepConfig::parse(&text, &args.config)?;
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    let grid = cfg.grid();
    if args.dry_run {
        println!("config ok: {} grid points", grid.len());
        return Ok(());
    }

    // Worker pool over grid points; collect preserves grid order, so output
    // is deterministic regardless of completion order.
    let rows: Vec<String> = grid.par_iter().map(|pt| sweep_row(&cfg, pt)).collect();

    let mut csv = format!("{CSV_HEADER},status\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    emit(&cfg.out, &csv)?;
    let failures = rows.iter().filter(|r| !r.ends_with(",ok")).count();
    if failures > 0 {
        eprintln!("{failures} of {} rows recorded a failure", rows.len());
    }
    Ok(())
}
