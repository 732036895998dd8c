//! `adacusum` command-line tool: calibrate limits, monitor a stream, run
//! simulation studies.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use adacusum::calibrate::CalibrationReport;
use adacusum::experiments::{write_csv, TableDocument};
use adacusum::{
    arl_table, find_h, suite, BranchSet, CalibrationConfig, CalibrationMode, Error as CoreError,
    LimitTable, MonitorEvent, MonitorSnapshot, Scenario, SelfStartingMonitor, SignalReport,
};

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(what: &str, path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{what} {}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "adacusum",
    version,
    about = "Nonparametric adaptive CUSUM change detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the control limit for a target in-control ARL by simulation.
    Calibrate(CalibrateArgs),
    /// Monitor a stream of observations, one per line.
    Monitor(MonitorArgs),
    /// Estimate detection delays for change scenarios.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Number of categories.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Target in-control average run length.
    #[arg(long, default_value_t = 500.0)]
    arl0: f64,
    #[arg(long, default_value_t = 2000)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `oracle` uses exact quantiles, `selfstart` estimates them.
    #[arg(long, default_value = "oracle")]
    mode: String,
    /// Warm-up size for self-starting mode.
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Relative bisection tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Events,
    Series,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Control limit h.
    #[arg(long)]
    limit: Option<f64>,
    /// Calibration JSON (one report, a list, or a limit table) to take h from.
    #[arg(long, conflicts_with = "limit")]
    limits_file: Option<PathBuf>,
    /// Pick the limits-file entry for this ARL0 when several match `d`.
    #[arg(long)]
    arl0: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Observation file, or `-` for stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// Snapshot file: resumed from when present, rewritten on exit.
    #[arg(long)]
    state: Option<PathBuf>,
    /// `all` or a comma list of ltr+, ltr-, co+, co-.
    #[arg(long)]
    branches: Option<String>,
    #[arg(long, value_enum, default_value = "events")]
    emit: Emit,
    /// Reset the branches after an alarm and keep going.
    #[arg(long = "continue")]
    keep_going: bool,
    #[arg(long)]
    skip_header: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON: one scenario or a list.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    scenario: Option<PathBuf>,
    /// Preset grid: table2, table3, table4 or table6.
    #[arg(long)]
    suite: Option<String>,
    /// Category counts for a suite.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    d: Vec<usize>,
    /// In-control ARL the suite limits are looked up for.
    #[arg(long, default_value_t = 500.0)]
    arl0: f64,
    #[arg(long, default_value_t = 200)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Calibration JSON overriding the built-in limits.
    #[arg(long)]
    h_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV table, or a JSON document with run metadata.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Calibrate(args) => calibrate(args).map(|()| false),
        Command::Monitor(args) => monitor(args),
        Command::Simulate(args) => simulate(args).map(|()| false),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_failure("cannot write", path, e)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn calibrate(args: CalibrateArgs) -> CliResult<()> {
    let mode: CalibrationMode = args.mode.parse()?;
    let mut config = CalibrationConfig::new(args.d, args.arl0);
    config.replications = args.reps;
    config.seed = args.seed;
    config.mode = mode;
    config.m = args.m;
    config.tolerance = args.tolerance;
    config.validate()?;
    let result = find_h(&config)?;
    let report = CalibrationReport::new(&config, &result);
    write_output(args.out.as_deref(), &to_json_bytes(&report))
}

/// Reads one calibration report, a list of them, or a `LimitTable`.
fn load_limits(path: &Path) -> CliResult<LimitTable> {
    let text = fs::read_to_string(path).map_err(|e| io_failure("cannot read", path, e))?;
    if let Ok(report) = serde_json::from_str::<CalibrationReport>(&text) {
        return Ok(LimitTable::from_reports(&[report]));
    }
    if let Ok(reports) = serde_json::from_str::<Vec<CalibrationReport>>(&text) {
        return Ok(LimitTable::from_reports(&reports));
    }
    serde_json::from_str::<LimitTable>(&text).map_err(|e| {
        Failure::Usage(format!(
            "{}: not a calibration report or limit table: {e}",
            path.display()
        ))
    })
}

fn limit_from_file(path: &Path, d: usize, arl0: Option<f64>) -> CliResult<f64> {
    let table = load_limits(path)?;
    if let Some(arl0) = arl0 {
        return table.lookup(d, arl0).ok_or_else(|| {
            Failure::Usage(format!(
                "{}: no limit for d = {d}, ARL0 = {arl0}",
                path.display()
            ))
        });
    }
    let matches: Vec<f64> = table
        .entries
        .iter()
        .filter(|e| e.d == d)
        .map(|e| e.h)
        .collect();
    match matches.as_slice() {
        [h] => Ok(*h),
        [] => Err(Failure::Usage(format!(
            "{}: no limit for d = {d}",
            path.display()
        ))),
        _ => Err(Failure::Usage(format!(
            "{}: several limits for d = {d}; pick one with --arl0",
            path.display()
        ))),
    }
}

fn load_snapshot(path: &Path) -> CliResult<Option<MonitorSnapshot>> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Failure::Runtime(format!("bad snapshot {}: {e}", path.display()))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_failure("cannot read", path, e)),
    }
}

fn save_snapshot(path: &Path, snapshot: &MonitorSnapshot) -> CliResult<()> {
    // write-then-rename so an interrupted run never leaves half a snapshot
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_json_bytes(snapshot)).map_err(|e| io_failure("cannot write", &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_failure("cannot write", path, e))
}

fn build_monitor(args: &MonitorArgs) -> CliResult<SelfStartingMonitor> {
    if let Some(snapshot) = match &args.state {
        Some(path) => load_snapshot(path)?,
        None => None,
    } {
        let mismatch =
            |flag: &str| Failure::Usage(format!("--{flag} disagrees with the saved state"));
        if args.d.is_some_and(|d| d != snapshot.d) {
            return Err(mismatch("d"));
        }
        if args.warmup.is_some_and(|m| m != snapshot.m) {
            return Err(mismatch("warmup"));
        }
        if args.limit.is_some_and(|h| h != snapshot.limit) {
            return Err(mismatch("limit"));
        }
        return Ok(SelfStartingMonitor::from_snapshot(&snapshot)?);
    }
    let d = args.d.unwrap_or(20);
    let m = args.warmup.unwrap_or(20);
    let limit = match (&args.limit, &args.limits_file) {
        (Some(h), _) => *h,
        (None, Some(path)) => limit_from_file(path, d, args.arl0)?,
        (None, None) => {
            return Err(Failure::Usage(
                "a control limit is required: --limit or --limits-file".into(),
            ))
        }
    };
    let branches = match &args.branches {
        Some(s) => s.parse::<BranchSet>()?,
        None => BranchSet::all(),
    };
    Ok(SelfStartingMonitor::new(d, m, limit, branches)?)
}

#[derive(Serialize)]
struct TickRecord {
    tick: u64,
    s_ltr_plus: f64,
    s_ltr_minus: f64,
    s_co_plus: f64,
    s_co_minus: f64,
    s_max: f64,
    alarm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnosis: Option<Vec<String>>,
}

#[derive(Serialize)]
struct SignalRecord<'a> {
    signal: &'a SignalReport,
}

const SERIES_HEADER: &str = "tick,x,s_ltr_plus,s_ltr_minus,s_co_plus,s_co_minus,s_max,alarm";

fn monitor(args: MonitorArgs) -> CliResult<bool> {
    let mut monitor = build_monitor(&args)?;
    let reader: Box<dyn BufRead> = if args.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        let path = Path::new(&args.input);
        Box::new(io::BufReader::new(
            fs::File::open(path).map_err(|e| io_failure("cannot open", path, e))?,
        ))
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let write_err = |e: io::Error| Failure::Runtime(format!("stdout: {e}"));
    if args.emit == Emit::Series && monitor.tick() == 0 {
        writeln!(out, "{SERIES_HEADER}").map_err(write_err)?;
    }

    let mut alarmed = false;
    let mut failure = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                failure = Some(Failure::Runtime(format!("input line {lineno}: {e}")));
                break;
            }
        };
        if lineno == 1 && args.skip_header {
            continue;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let x: f64 = match text.parse() {
            Ok(x) => x,
            Err(_) => {
                failure = Some(Failure::Runtime(format!(
                    "input line {lineno}: not a number: '{text}'"
                )));
                break;
            }
        };
        let event = match monitor.push(x) {
            Ok(ev) => ev,
            Err(e) => {
                failure = Some(Failure::Runtime(format!("input line {lineno}: {e}")));
                break;
            }
        };
        let MonitorEvent::Tick { step, .. } = event else {
            continue;
        };
        let v = step.values;
        match args.emit {
            Emit::Events => {
                let record = TickRecord {
                    tick: step.tick,
                    s_ltr_plus: v[0],
                    s_ltr_minus: v[1],
                    s_co_plus: v[2],
                    s_co_minus: v[3],
                    s_max: step.statistic,
                    alarm: step.signal.is_some(),
                    diagnosis: step
                        .signal
                        .as_ref()
                        .map(|s| s.diagnosis.iter().map(|d| d.to_string()).collect()),
                };
                serde_json::to_writer(&mut out, &record)
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
                writeln!(out).map_err(write_err)?;
                if let Some(signal) = &step.signal {
                    serde_json::to_writer(&mut out, &SignalRecord { signal })
                        .map_err(|e| Failure::Runtime(e.to_string()))?;
                    writeln!(out).map_err(write_err)?;
                }
            }
            Emit::Series => {
                writeln!(
                    out,
                    "{},{x},{},{},{},{},{},{}",
                    step.tick,
                    v[0],
                    v[1],
                    v[2],
                    v[3],
                    step.statistic,
                    u8::from(step.signal.is_some())
                )
                .map_err(write_err)?;
            }
        }
        if step.signal.is_some() {
            alarmed = true;
            if args.keep_going {
                monitor.reset_branches();
            } else {
                break;
            }
        }
    }
    out.flush().map_err(write_err)?;
    if let Some(path) = &args.state {
        save_snapshot(path, &monitor.snapshot())?;
    }
    match failure {
        Some(f) => Err(f),
        None => Ok(alarmed),
    }
}

fn load_scenarios(path: &Path) -> CliResult<Vec<Scenario>> {
    let text = fs::read_to_string(path).map_err(|e| io_failure("cannot read", path, e))?;
    if let Ok(one) = serde_json::from_str::<Scenario>(&text) {
        return Ok(vec![one]);
    }
    serde_json::from_str::<Vec<Scenario>>(&text).map_err(|e| {
        Failure::Usage(format!(
            "{}: not a scenario or scenario list: {e}",
            path.display()
        ))
    })
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let scenarios = match (&args.scenario, &args.suite) {
        (Some(path), _) => load_scenarios(path)?,
        (None, Some(name)) => {
            suite(name, &args.d, args.arl0).map_err(|e| Failure::Usage(e.to_string()))?
        }
        (None, None) => unreachable!("clap requires one of --scenario and --suite"),
    };
    let mut limits = LimitTable::reference();
    if let Some(path) = &args.h_file {
        limits = limits.overlay(&load_limits(path)?);
    }
    let rows = arl_table(&scenarios, &limits, args.reps, args.seed)?;
    let bytes = match args.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            buf
        }
        Format::Json => to_json_bytes(&TableDocument::new(rows)),
    };
    write_output(args.out.as_deref(), &bytes)
}
