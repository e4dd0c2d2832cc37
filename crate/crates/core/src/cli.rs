//! Command-line front end: validate and execute scenarios, run the full
//! combination sweep, recompute metrics from stored logs, render summary
//! tables and entropy plots, and calibrate the model thresholds.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration error
//! (bad arguments, unreadable or invalid scenario, refusing to overwrite),
//! 3 runtime failure.

use crate::calibrate::{self, CalibrationError};
use crate::log::EventLog;
use crate::managing::ControllerRegistry;
use crate::metrics::compute_report;
use crate::monitor::Thresholds;
use crate::plot::entropy_svg;
use crate::scenario::Scenario;
use crate::sim::run_scenario;
use crate::sweep::{execute, summarize, sweep_plans, to_csv};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fusesim",
    about = "Deterministic sensor-fusion pipeline simulator and adaptation benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario and write its event log and metrics report.
    Run(RunArgs),
    /// Run the full uncertainty-combination sweep and write the summary CSV.
    Sweep(SweepArgs),
    /// Recompute the metrics report from a stored event log.
    Metrics(MetricsArgs),
    /// Render a sweep summary CSV as a table; optionally plot each run.
    Report(ReportArgs),
    /// Search model temperatures and emit calibrated constants.
    Calibrate(CalibrateArgs),
    /// Check a scenario file without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for log.jsonl and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's controller.
    #[arg(long)]
    controller: Option<String>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing run artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Repetitions per uncertainty combination.
    #[arg(long)]
    reps: u32,
    /// Output directory for summary.csv and per-run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing summary.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Event log (JSONL) produced by `run` or `sweep`.
    #[arg(long)]
    log: PathBuf,
    /// Scenario the log was produced from.
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep summary CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Also render an entropy-vs-time SVG beside every run log found
    /// under the CSV's directory.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Where to write the calibrated constants (TOML).
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing constants file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
}

/// Parses and executes `args` (first element = program name) and returns
/// the process exit code. Kept separate from `main` so tests can drive the
/// CLI in-process.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version are successful outcomes; everything else is a
            // usage error.
            let benign = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if benign { EXIT_OK } else { EXIT_CONFIG };
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Report(args) => cmd_report(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

fn read_log(path: &Path) -> std::io::Result<EventLog> {
    let file = fs::File::open(path)?;
    EventLog::from_jsonl(std::io::BufReader::new(file))
}

/// Best-effort stdout write. `println!` aborts the process when the read
/// end of a pipe goes away (`fusesim metrics ... | head`); status output is
/// not worth crashing over, so a broken pipe is silently tolerated.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn emitln(text: &str) {
    emit(text);
    emit("\n");
}

fn load_scenario(path: &Path, registry: &ControllerRegistry) -> Result<Scenario, String> {
    let scenario = Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let known: Vec<String> = registry.names();
    scenario
        .validate(&known)
        .map_err(|errors| format!("{}: invalid scenario:\n  {}", path.display(), errors.join("\n  ")))?;
    Ok(scenario)
}

fn refuse_overwrite(paths: &[PathBuf], force: bool) -> Result<(), String> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            ));
        }
    }
    Ok(())
}

fn config_err(msg: String) -> i32 {
    eprintln!("error: {msg}");
    EXIT_CONFIG
}

fn runtime_err(msg: String) -> i32 {
    eprintln!("error: {msg}");
    EXIT_RUNTIME
}

fn cmd_run(args: RunArgs) -> i32 {
    let registry = ControllerRegistry::with_builtins();
    let mut scenario = match load_scenario(&args.scenario, &registry) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    if let Some(controller) = args.controller {
        if !registry.contains(&controller) {
            return config_err(format!(
                "unknown controller `{controller}` (known: {})",
                registry.names().join(", ")
            ));
        }
        scenario.controller = controller;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let log_path = args.out.join("log.jsonl");
    let report_path = args.out.join("report.json");
    if let Err(e) = refuse_overwrite(&[log_path.clone(), report_path.clone()], args.force) {
        return config_err(e);
    }
    if let Err(e) = fs::create_dir_all(&args.out) {
        return runtime_err(format!("creating {}: {e}", args.out.display()));
    }
    let result = match run_scenario(&scenario, &registry) {
        Ok(r) => r,
        Err(e) => return runtime_err(e),
    };
    let report = compute_report(&result.log, &scenario);
    if let Err(e) = fs::write(&log_path, result.log.to_jsonl()) {
        return runtime_err(format!("writing {}: {e}", log_path.display()));
    }
    if let Err(e) = fs::write(&report_path, report.to_json_pretty()) {
        return runtime_err(format!("writing {}: {e}", report_path.display()));
    }
    emitln(&format!(
        "run `{}` (controller {}, seed {}): iou {}, t_down {:.3} s, executed {}, resolved {}/{}",
        report.scenario,
        report.controller,
        report.seed,
        report.iou_mean.map_or("N/A".to_string(), |v| format!("{v:.4}")),
        report.t_down_secs,
        report.adaptations_executed,
        report.uncertainties_resolved,
        report.uncertainties_injected,
    ));
    emitln(&format!("wrote {} and {}", log_path.display(), report_path.display()));
    EXIT_OK
}

fn cmd_sweep(args: SweepArgs) -> i32 {
    if args.reps == 0 {
        return config_err("--reps must be at least 1".to_string());
    }
    let summary_path = args.out.join("summary.csv");
    if let Err(e) = refuse_overwrite(&[summary_path.clone()], args.force) {
        return config_err(e);
    }
    let registry = ControllerRegistry::with_builtins();
    let controllers: Vec<String> =
        registry.names().into_iter().filter(|n| n != "none").collect();
    let controller_refs: Vec<&str> = controllers.iter().map(String::as_str).collect();
    let plans = sweep_plans(&controller_refs, args.reps);
    emitln(&format!("executing {} runs...", plans.len()));
    let outcomes = match execute(&plans, &registry, Some(&args.out)) {
        Ok(o) => o,
        Err(e) => return runtime_err(format!("writing run artifacts: {e}")),
    };
    let failures: Vec<_> = outcomes.iter().filter(|o| o.report.is_err()).collect();
    for f in &failures {
        eprintln!(
            "run {} failed: {}",
            f.id,
            f.report.as_ref().err().map(String::as_str).unwrap_or("unknown")
        );
    }
    let csv = to_csv(&summarize(&outcomes));
    if let Err(e) = fs::write(&summary_path, &csv) {
        return runtime_err(format!("writing {}: {e}", summary_path.display()));
    }
    emit(&csv);
    emitln(&format!(
        "wrote {} ({} runs, {} failed)",
        summary_path.display(),
        outcomes.len(),
        failures.len()
    ));
    EXIT_OK
}

fn cmd_metrics(args: MetricsArgs) -> i32 {
    let registry = ControllerRegistry::with_builtins();
    let scenario = match load_scenario(&args.scenario, &registry) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    let log = match read_log(&args.log) {
        Ok(l) => l,
        Err(e) => return config_err(format!("{}: {e}", args.log.display())),
    };
    let report = compute_report(&log, &scenario);
    emitln(&report.to_json_pretty());
    EXIT_OK
}

fn cmd_report(args: ReportArgs) -> i32 {
    let csv = match fs::read_to_string(&args.csv) {
        Ok(c) => c,
        Err(e) => return config_err(format!("{}: {e}", args.csv.display())),
    };
    emit(&render_table(&csv));
    if !args.plot {
        return EXIT_OK;
    }
    let base = args.csv.parent().unwrap_or(Path::new("."));
    let runs_dir = base.join("runs");
    let threshold = Thresholds::default().entropy_max;
    let mut plotted = 0usize;
    let entries = match fs::read_dir(&runs_dir) {
        Ok(e) => e,
        Err(e) => {
            return config_err(format!(
                "--plot needs per-run logs under {}: {e}",
                runs_dir.display()
            ))
        }
    };
    let mut dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let log_path = dir.join("log.jsonl");
        if !log_path.exists() {
            continue;
        }
        let log = match read_log(&log_path) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("skipping {}: {e}", log_path.display());
                continue;
            }
        };
        let title = dir.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        let svg = entropy_svg(&log, &title, threshold);
        let svg_path = dir.join("entropy.svg");
        if let Err(e) = fs::write(&svg_path, svg) {
            return runtime_err(format!("writing {}: {e}", svg_path.display()));
        }
        plotted += 1;
    }
    emitln(&format!("wrote {plotted} entropy plots under {}", runs_dir.display()));
    EXIT_OK
}

/// Renders a CSV as an aligned text table.
fn render_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    if rows.is_empty() {
        return String::new();
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (c, value) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{value:<width$}", width = widths[c]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn cmd_calibrate(args: CalibrateArgs) -> i32 {
    if let Err(e) = refuse_overwrite(&[args.out.clone()], args.force) {
        return config_err(e);
    }
    let registry = ControllerRegistry::with_builtins();
    match calibrate::run_calibration(&registry, &calibrate::default_grid()) {
        Ok(result) => {
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    if let Err(e) = fs::create_dir_all(parent) {
                        return runtime_err(format!("creating {}: {e}", parent.display()));
                    }
                }
            }
            if let Err(e) = fs::write(&args.out, result.to_toml()) {
                return runtime_err(format!("writing {}: {e}", args.out.display()));
            }
            emit(&result.margin_report());
            emitln(&format!("wrote {}", args.out.display()));
            EXIT_OK
        }
        Err(CalibrationError::Infeasible(probes)) => {
            eprintln!("error: no temperature satisfies both calibration gates");
            eprint!("{}", calibrate::diagnostic_table(&probes));
            EXIT_RUNTIME
        }
        Err(CalibrationError::Runtime(e)) => runtime_err(e),
    }
}

fn cmd_validate(args: ValidateArgs) -> i32 {
    let registry = ControllerRegistry::with_builtins();
    match load_scenario(&args.scenario, &registry) {
        Ok(scenario) => {
            emitln(&format!(
                "{}: ok (name `{}`, controller {}, {} injections, {} scripted adaptations)",
                args.scenario.display(),
                scenario.name,
                scenario.controller,
                scenario.injections.len(),
                scenario.adaptations.len(),
            ));
            EXIT_OK
        }
        Err(e) => config_err(e),
    }
}
