//! `feedersim` command-line driver.
//!
//! Exit codes: 0 on success, 1 when validation or a report has findings or a
//! run fails, 2 on usage errors (bad flags, unreadable inputs, bad config).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use feedersim_core::linecalc::segment_matrices;
use feedersim_core::solver::{audit_mismatch, solve_controlled, solve_snapshot, Circuit, SnapshotInput, SolveOptions};
use feedersim_core::timeseries::{
    aggregate_to_transformer, clean_all, ingest_meters, read_report, simulate_meters, synth_feeder, write_meters_csv,
    write_results, CleanParams, MeterSeries, PfRange, Provenance, RunOptions, SynthParams, HOURS_PER_YEAR,
};
use feedersim_core::{load_model, validate_radiality, NetworkModel};
use log::info;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "feedersim", version, about = "Quasi-static time-series power flow for radial distribution feeders")]
struct Cli {
    /// Print progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a model and check it is radial, connected and phase-consistent.
    Validate {
        /// Model JSON file.
        model: PathBuf,
    },
    /// Print the phase impedance and shunt admittance matrices of a segment.
    Linecalc {
        /// Model JSON file.
        model: PathBuf,
        /// Segment id.
        #[arg(long)]
        segment: String,
        /// Scale by the segment length instead of printing per-mile values.
        #[arg(long)]
        total: bool,
    },
    /// Solve one hour and write node voltages as CSV.
    Solve(SolveArgs),
    /// Generate the synthetic three-feeder model and a year of meter data.
    Synth {
        /// Seed for every random stream.
        #[arg(long, default_value_t = SynthParams::default().seed)]
        seed: u64,
        /// Output directory; receives model.json and meters.csv.
        #[arg(short, long)]
        output: PathBuf,
        /// Leave out the injected gaps and spikes.
        #[arg(long)]
        no_anomalies: bool,
    },
    /// Run a full year and write the result files.
    Run(RunArgs),
    /// Summarize a result directory; exits 1 if anything is out of limits.
    Report {
        /// Result directory written by `run`.
        #[arg(short, long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Model JSON file.
    model: PathBuf,
    /// Meter CSV (timestamp_iso8601,meter_id,kwh) for the year.
    #[arg(long)]
    loads: PathBuf,
    /// Hour of the year, 0-based.
    #[arg(long)]
    hour: usize,
    /// Seed for the power-factor draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Convergence tolerance, p.u. voltage update.
    #[arg(long, default_value_t = SolveOptions::<f64>::default().tolerance)]
    tolerance: f64,
    /// Sweep iteration limit.
    #[arg(long, default_value_t = SolveOptions::<f64>::default().max_iter)]
    max_iter: usize,
    /// Keep regulator taps at their initial positions.
    #[arg(long)]
    fixed_taps: bool,
    /// Solution CSV path; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Mismatch audit CSV path.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model JSON file (not with --synth).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Meter CSV (timestamp_iso8601,meter_id,kwh).
    #[arg(long, conflicts_with = "synth")]
    meters: Option<PathBuf>,
    /// Generate the synthetic model and meter data instead of reading them.
    #[arg(long)]
    synth: bool,
    /// Seed of the synthetic system; defaults to --seed.
    #[arg(long)]
    synth_seed: Option<u64>,
    /// Seed for the power-factor draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence tolerance, p.u. voltage update.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Sweep iteration limit per solve.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Simulate only the first N hours.
    #[arg(long)]
    hours: Option<usize>,
    /// Restrict voltage summaries to one feeder.
    #[arg(long)]
    feeder: Option<String>,
    /// Output directory for the result files.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: Option<PathBuf>,
    meters: Option<PathBuf>,
    synth: Option<SynthConfig>,
    seed: Option<u64>,
    tolerance: Option<f64>,
    max_iter: Option<usize>,
    hours: Option<usize>,
    feeder: Option<String>,
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    seed: Option<u64>,
    anomalies: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: None, anomalies: SynthParams::default().anomalies }
    }
}

enum Failure {
    /// Findings or a failed computation; exit 1.
    Findings(anyhow::Error),
    /// Bad invocation or unusable input; exit 2.
    Usage(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn findings(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Findings(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();

    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }

    let outcome = match cli.command {
        Command::Validate { model } => validate(&model),
        Command::Linecalc { model, segment, total } => linecalc(&model, &segment, total),
        Command::Solve(args) => solve(&args),
        Command::Synth { seed, output, no_anomalies } => synth(seed, &output, !no_anomalies),
        Command::Run(args) => run(&args),
        Command::Report { input } => report(&input),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Findings(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Caps the worker pool when `FEEDERSIM_THREADS` is set.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("FEEDERSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().with_context(|| format!("FEEDERSIM_THREADS={value:?} is not a count"))?;
    if n == 0 {
        return Err(anyhow!("FEEDERSIM_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    Ok(())
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("{} does not exist or is not a file", path.display())))
    }
}

fn open_model(path: &Path) -> Result<NetworkModel, Failure> {
    require_file(path)?;
    load_model(path).map_err(findings)
}

fn stdout_data(text: &str) -> Outcome {
    io::stdout().lock().write_all(text.as_bytes()).map_err(|e| findings(anyhow!("writing standard output: {e}")))
}

fn validate(path: &Path) -> Outcome {
    let model = open_model(path)?;
    let report = validate_radiality(&model);
    let entries = report.entries();
    let mut out = String::new();
    for e in &entries {
        let _ = writeln!(out, "{e}");
    }
    stdout_data(&out)?;
    if entries.is_empty() {
        info!("{}: {} buses, radial and phase-consistent", path.display(), model.buses.len());
        Ok(())
    } else {
        Err(findings(anyhow!("{} topology issue(s) in {}", entries.len(), path.display())))
    }
}

fn linecalc(path: &Path, segment: &str, total: bool) -> Outcome {
    let model = open_model(path)?;
    let seg = model.segment(segment).ok_or_else(|| usage(anyhow!("no segment `{segment}` in {}", path.display())))?;
    let per_mile = segment_matrices::<f64>(seg, &model).map_err(findings)?;
    let (m, unit) = if total { (per_mile.scaled(seg.length_mi), "") } else { (per_mile, "/mile") };
    let labels: Vec<String> = m.phases.iter().map(|p| p.to_string()).collect();
    let mut out = format!("segment {} ({} mi, phases {})\n\nZ (ohm{unit})\n", seg.id, seg.length_mi, m.phases);
    for (i, li) in labels.iter().enumerate() {
        let row: Vec<String> = (0..labels.len()).map(|j| format!("{:>10.6} {:+.6}j", m.z[(i, j)].re, m.z[(i, j)].im)).collect();
        let _ = writeln!(out, "{li}  {}", row.join("  "));
    }
    let _ = writeln!(out, "\nY shunt (microsiemens{unit})");
    for (i, li) in labels.iter().enumerate() {
        let row: Vec<String> = (0..labels.len()).map(|j| format!("{:+.6}j", m.y_shunt[(i, j)].im * 1e6)).collect();
        let _ = writeln!(out, "{li}  {}", row.join("  "));
    }
    stdout_data(&out)
}

fn read_meters(path: &Path) -> Result<Vec<MeterSeries>, Failure> {
    require_file(path)?;
    let meters = ingest_meters(path).map_err(usage)?;
    info!("{}: {} meters", path.display(), meters.len());
    Ok(meters)
}

fn solve(args: &SolveArgs) -> Outcome {
    if args.hour >= HOURS_PER_YEAR {
        return Err(usage(anyhow!("--hour must be below {HOURS_PER_YEAR}")));
    }
    if !(args.tolerance > 0.0) {
        return Err(usage(anyhow!("--tolerance must be positive")));
    }
    let model = open_model(&args.model)?;
    let meters = read_meters(&args.loads)?;
    let cleaned = clean_all(&meters, &CleanParams::default()).map_err(findings)?;
    let profiles = aggregate_to_transformer(&cleaned, &model, args.seed, PfRange::default(), Provenance::AggregatedReal)
        .map_err(findings)?;
    let circuit = Circuit::<f64>::compile(&model).map_err(findings)?;
    let loads: Vec<_> = circuit
        .load_points
        .iter()
        .map(|lp| profiles.iter().find(|p| p.load_point == lp.id).map(|p| p.snapshot(args.hour)))
        .collect::<Option<_>>()
        .ok_or_else(|| findings(anyhow!("a load point has no profile")))?;
    let caps = circuit.capacitor_states();
    let opts = SolveOptions { tolerance: args.tolerance, max_iter: args.max_iter };
    let (sol, taps) = if args.fixed_taps {
        let taps = circuit.initial_taps();
        let input = SnapshotInput { circuit: &circuit, loads: &loads, capacitors_on: &caps, taps: &taps, warm_start: None };
        (solve_snapshot(&input, &opts).map_err(findings)?, taps)
    } else {
        let ctl = solve_controlled(&circuit, &loads, &caps, &circuit.initial_taps(), None, &opts).map_err(findings)?;
        for e in &ctl.events {
            info!("regulator {} phase {}: tap {} -> {} at {:.2} V", e.regulator, e.phase, e.old_tap, e.new_tap, e.trigger_v);
        }
        (ctl.solution, ctl.taps)
    };

    let mut out = String::from("bus,phase,v_pu,angle_deg,feeder\n");
    for (n, node) in circuit.nodes.iter().enumerate() {
        for p in node.phases.iter() {
            let v = sol.voltages[n][p.index()];
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.4},{}",
                node.name,
                p,
                v.norm() / node.base_ln_volts,
                v.arg().to_degrees(),
                node.feeder.as_deref().unwrap_or("")
            );
        }
    }
    match &args.output {
        Some(path) => fs::write(path, out).with_context(|| format!("writing {}", path.display())).map_err(findings)?,
        None => stdout_data(&out)?,
    }

    let input = SnapshotInput { circuit: &circuit, loads: &loads, capacitors_on: &caps, taps: &taps, warm_start: None };
    let audit = audit_mismatch(&sol, &input);
    if let Some(path) = &args.audit {
        let mut s = String::from("load_point,error_pct\n");
        for sample in &audit.samples {
            let _ = writeln!(s, "{},{:.6e}", circuit.load_points[sample.load_point].id, sample.error_pct);
        }
        fs::write(path, s).with_context(|| format!("writing {}", path.display())).map_err(findings)?;
    }
    info!(
        "hour {}: {} iterations, substation {:.1} kW {:.1} kvar, max mismatch {:.2e} %",
        args.hour,
        sol.iterations,
        sol.substation_kva.re,
        sol.substation_kva.im,
        audit.max()
    );
    if sol.converged {
        Ok(())
    } else {
        Err(findings(anyhow!("hour {} did not converge in {} iterations", args.hour, sol.iterations)))
    }
}

fn synth(seed: u64, dir: &Path, anomalies: bool) -> Outcome {
    let sys = synth_feeder(&SynthParams { seed, anomalies, ..SynthParams::default() });
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(findings)?;
    fs::write(dir.join("model.json"), sys.model.to_json()).context("writing model.json").map_err(findings)?;
    write_meters_csv(dir.join("meters.csv"), &sys.meters).map_err(findings)?;
    info!("{}: {} buses, {} meters", dir.display(), sys.model.buses.len(), sys.meters.len());
    Ok(())
}

/// Input of a resolved run.
enum Source {
    Files { model: PathBuf, meters: PathBuf },
    Synthetic { seed: u64, anomalies: bool },
}

struct Resolved {
    source: Source,
    options: RunOptions,
    feeder: Option<String>,
    output: PathBuf,
}

/// Applies flags over the config file over defaults.
fn resolve(args: &RunArgs) -> Result<Resolved, Failure> {
    let config: RunConfig = match &args.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)?
        }
        None => RunConfig::default(),
    };
    let defaults = RunOptions::default();
    let seed = args.seed.or(config.seed).unwrap_or(defaults.seed);
    let tolerance = args.tolerance.or(config.tolerance).unwrap_or(defaults.tolerance);
    if !(tolerance > 0.0) {
        return Err(usage(anyhow!("tolerance must be positive")));
    }
    let max_iter = args.max_iter.or(config.max_iter).unwrap_or(defaults.max_iter);
    let hours = args.hours.or(config.hours).unwrap_or(HOURS_PER_YEAR);
    if hours == 0 || hours > HOURS_PER_YEAR {
        return Err(usage(anyhow!("hours must be between 1 and {HOURS_PER_YEAR}")));
    }
    let output = args.output.clone().or(config.output).ok_or_else(|| usage(anyhow!("an output directory is required")))?;

    let model = args.model.clone().or(config.model);
    // A flag for one input kind overrides a config entry for the other.
    let (meters, synth) = if args.synth {
        (None, Some(config.synth.unwrap_or_default()))
    } else if args.meters.is_some() {
        (args.meters.clone(), None)
    } else {
        (config.meters, config.synth)
    };
    let source = match (meters, synth) {
        (Some(_), Some(_)) => return Err(usage(anyhow!("give either meters or synth, not both"))),
        (None, None) => return Err(usage(anyhow!("give --meters or --synth"))),
        (Some(meters), None) => {
            let model = model.ok_or_else(|| usage(anyhow!("--meters needs --model")))?;
            Source::Files { model, meters }
        }
        (None, Some(s)) => {
            if model.is_some() {
                return Err(usage(anyhow!("--synth generates its own model; drop --model")));
            }
            Source::Synthetic { seed: args.synth_seed.or(s.seed).unwrap_or(seed), anomalies: s.anomalies }
        }
    };
    Ok(Resolved {
        source,
        options: RunOptions { tolerance, max_iter, seed, hours: 0..hours, ..defaults },
        feeder: args.feeder.clone().or(config.feeder),
        output,
    })
}

fn run(args: &RunArgs) -> Outcome {
    let cfg = resolve(args)?;
    let (model, meters, provenance, input) = match &cfg.source {
        Source::Files { model, meters } => {
            let m = open_model(model)?;
            let data = read_meters(meters)?;
            (m, data, Provenance::AggregatedReal, format!("meters {}", meters.display()))
        }
        Source::Synthetic { seed, anomalies } => {
            let sys = synth_feeder(&SynthParams { seed: *seed, anomalies: *anomalies, ..SynthParams::default() });
            (sys.model, sys.meters, Provenance::Synthetic, format!("synthetic seed {seed} anomalies {anomalies}"))
        }
    };
    let report = validate_radiality(&model);
    if !report.cycles.is_empty() {
        return Err(findings(anyhow!("model is not radial: {}", report.entries().join("; "))));
    }
    info!("running {} hours of {} ({} load points)", cfg.options.hours.len(), model.name, model.load_points.len());
    let mut result =
        simulate_meters(&model, &meters, provenance, &CleanParams::default(), &cfg.options).map_err(findings)?;
    result.meta.input = input;
    if let Some(f) = &cfg.feeder {
        result.restrict_to_feeder(f).map_err(usage)?;
    }
    write_results(&cfg.output, &result).map_err(findings)?;
    info!("{}: {} tap events", cfg.output.display(), result.events.len());
    if result.meta.nonconverged_hours.is_empty() {
        Ok(())
    } else {
        Err(findings(anyhow!(
            "{} hour(s) did not converge; results written to {}",
            result.meta.nonconverged_hours.len(),
            cfg.output.display()
        )))
    }
}

fn report(dir: &Path) -> Outcome {
    if !dir.is_dir() {
        return Err(usage(anyhow!("{} is not a directory", dir.display())));
    }
    let summary = read_report(dir).map_err(findings)?;
    let mut out = format!("{summary}\n");
    for f in &summary.findings {
        let _ = writeln!(out, "finding: {f}");
    }
    stdout_data(&out)?;
    if summary.findings.is_empty() {
        Ok(())
    } else {
        Err(findings(anyhow!("{} finding(s) in {}", summary.findings.len(), dir.display())))
    }
}
