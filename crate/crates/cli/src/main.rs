use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ltlsynth::automaton::{compile, compute_dta, AutomatonError, StateId};
use ltlsynth::export::{emit_plots, export_log, read_log, ExportError, LogFormat};
use ltlsynth::hybrid::{
    check_boundedness, check_certificate, check_eventuality, check_time_domain, run_setup, Boundedness,
    CertificateReport, EngineError, RunOptions, Setup, TrajectoryLog, Verdict,
};
use ltlsynth::scenario::{Scenario, ScenarioError, TiebreakKind};
use ltlsynth::scltl::{parse_formula, Alphabet};
use ltlsynth::sysid::HistoryStack;
use rayon::prelude::*;
use serde::Serialize;

const OUT_DIR_VAR: &str = "LTLSYNTH_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "ltlsynth",
    version,
    about = "Synthesize and simulate learning-based hybrid controllers for scLTL tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a formula into a minimal automaton.
    Compile {
        #[arg(long)]
        formula: String,
        /// Comma-separated observation names.
        #[arg(long)]
        alphabet: String,
        /// Write Graphviz output to this path (`-` for stdout).
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Print the distance to acceptance of every state.
        #[arg(long)]
        dta: bool,
    },
    /// Simulate a scenario and write its trajectory log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Log path; defaults to `<out dir>/<scenario name>.ndjson`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_VAR, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Follow this observation word instead of the configured tiebreak.
        #[arg(long, value_delimiter = ',')]
        word: Option<Vec<String>>,
        /// Override a scenario field, e.g. `adp.kc1=0.01`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Start from a dumped history stack.
        #[arg(long)]
        stack_in: Option<PathBuf>,
        /// Dump the final history stack.
        #[arg(long)]
        stack_out: Option<PathBuf>,
        /// Also write plot data files into this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
        #[arg(long)]
        require_accept: bool,
    },
    /// Re-run the monitors on a saved log.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        require_accept: bool,
    },
    /// Run a scenario over a grid of parameter values.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// TOML file mapping dotted scenario keys to arrays of values.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = OUT_DIR_VAR, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        require_accept: bool,
    },
    /// Write plot data files for a saved log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to `<out dir>/plots`.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_VAR, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ndjson,
    Csv,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn monitor(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(_) => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(inner) => inner.into(),
            EngineError::Automaton(AutomatonError::EmptyLanguage) => Self::validation(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Io(_) => Self::runtime(e.to_string()),
            ExportError::Malformed { .. } => Self::validation(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile { formula, alphabet, dot, dta } => cmd_compile(&formula, &alphabet, dot.as_deref(), dta),
        Command::Run {
            scenario,
            out,
            out_dir,
            format,
            word,
            overrides,
            stack_in,
            stack_out,
            plots,
            require_accept,
        } => {
            let args = RunArgs { out, out_dir, format, word, overrides, stack_in, stack_out, plots, require_accept };
            cmd_run(&scenario, &args)
        }
        Command::Verify { log, require_accept } => cmd_verify(&log, require_accept),
        Command::Sweep { scenario, grid, jobs, out_dir, require_accept } => {
            cmd_sweep(&scenario, &grid, jobs, &out_dir, require_accept)
        }
        Command::Plot { log, dir, out_dir } => cmd_plot(&log, &dir.unwrap_or_else(|| out_dir.join("plots"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_compile(formula: &str, alphabet: &str, dot: Option<&Path>, dta: bool) -> Result<(), Failure> {
    let names: Vec<&str> = alphabet.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let alphabet = Alphabet::new(&names).map_err(|e| Failure::validation(e.to_string()))?;
    let phi = parse_formula(formula, &alphabet).map_err(|e| Failure::validation(e.to_string()))?;
    let fsa = compile(&phi, &alphabet).map_err(|e| Failure::validation(e.to_string()))?;
    let accepting: Vec<String> = fsa.states().filter(|&s| fsa.is_accepting(s)).map(|s| s.to_string()).collect();
    println!("states: {}", fsa.num_states());
    println!("initial: {}", fsa.initial());
    println!("accepting: {}", accepting.join(","));
    for s in fsa.states() {
        for o in alphabet.ids() {
            if let Some(t) = fsa.step(s, o) {
                println!("{s} --{}--> {t}", alphabet.name(o));
            }
        }
    }
    if dta {
        let table = compute_dta(&fsa);
        println!("dta:");
        for s in fsa.states() {
            match table.get(s) {
                Some(d) => println!("{s} {d}"),
                None => println!("{s} inf"),
            }
        }
    }
    match dot {
        Some(p) if p == Path::new("-") => print!("{}", fsa.export_dot()),
        Some(p) => fs::write(p, fsa.export_dot()).map_err(|e| io_failure(p, e))?,
        None => {}
    }
    Ok(())
}

struct RunArgs {
    out: Option<PathBuf>,
    out_dir: PathBuf,
    format: Option<Format>,
    word: Option<Vec<String>>,
    overrides: Vec<String>,
    stack_in: Option<PathBuf>,
    stack_out: Option<PathBuf>,
    plots: Option<PathBuf>,
    require_accept: bool,
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn apply_override(scenario: &mut Scenario, spec: &str) -> Result<(), Failure> {
    let (key, value) =
        spec.split_once('=').ok_or_else(|| Failure::validation(format!("override `{spec}` is not KEY=VALUE")))?;
    scenario.set_path(key.trim(), parse_value(value.trim()))?;
    Ok(())
}

fn write_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| io_failure(dir, e)),
        _ => Ok(()),
    }
}

fn cmd_run(path: &Path, args: &RunArgs) -> Result<(), Failure> {
    let mut scenario = Scenario::load(path)?;
    for spec in &args.overrides {
        apply_override(&mut scenario, spec)?;
    }
    if let Some(word) = &args.word {
        scenario.word = Some(word.clone());
        scenario.tiebreak = TiebreakKind::FixedWord;
    }
    let setup = Setup::new(&scenario)?;
    let initial_stack = match &args.stack_in {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            Some(HistoryStack::from_records(&text).map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let output = run_setup(&setup, RunOptions { initial_stack })?;
    let log = output.log;

    let out = args.out.clone().unwrap_or_else(|| {
        let ext = if matches!(args.format, Some(Format::Csv)) { "csv" } else { "ndjson" };
        args.out_dir.join(format!("{}.{ext}", scenario.name))
    });
    let format = match args.format {
        Some(Format::Ndjson) => LogFormat::Ndjson,
        Some(Format::Csv) => LogFormat::Csv,
        None => LogFormat::from_path(&out),
    };
    write_parent(&out)?;
    export_log(&log, &out, format)?;
    if let Some(p) = &args.stack_out {
        write_parent(p)?;
        fs::write(p, output.stack.to_records()).map_err(|e| io_failure(p, e))?;
    }
    if let Some(dir) = &args.plots {
        emit_plots(&log, dir)?;
    }

    let report = Report::new(&log, &setup);
    println!("log: {}", out.display());
    print_summary(&report);
    if args.require_accept && !report.eventuality.accepted {
        return Err(Failure::monitor("run did not reach an accepting state"));
    }
    Ok(())
}

/// Everything the offline monitors say about a log.
#[derive(Serialize)]
struct Report {
    scenario: String,
    config_hash: String,
    hash_matches: bool,
    word: Vec<String>,
    eventuality: Verdict,
    certificate: CertificateReport,
    time_domain_ok: bool,
    boundedness: Boundedness,
    final_theta_err: Option<f64>,
    excitation_c1: Option<f64>,
}

impl Report {
    fn new(log: &TrajectoryLog, setup: &Setup) -> Self {
        Self {
            scenario: log.header.scenario.name.clone(),
            config_hash: log.header.config_hash.clone(),
            hash_matches: log.header.config_hash == log.header.scenario.config_hash(),
            word: log.word(),
            eventuality: check_eventuality(log, &setup.fsa),
            certificate: check_certificate(log, &setup.fsa, &setup.dta, &setup.resolved.rois),
            time_domain_ok: check_time_domain(log),
            boundedness: check_boundedness(log),
            final_theta_err: log.samples.last().map(|s| s.theta_err),
            excitation_c1: log.excitation.as_ref().map(|e| e.c1),
        }
    }
}

fn print_summary(r: &Report) {
    let accepted_at = r.eventuality.t.map_or("never".to_string(), |t| format!("t = {t:.3}"));
    println!("accepted: {} ({accepted_at})", r.eventuality.accepted);
    println!("word: {}", r.word.join(" "));
    println!("certificate: {}", if r.certificate.holds() { "holds" } else { "violated" });
    if let Some(c) = r.certificate.min_clearance {
        println!("min clearance: {c:.4}");
    }
    if let Some(e) = r.final_theta_err {
        println!("final theta error: {e:.3e}");
    }
}

fn cmd_verify(path: &Path, require_accept: bool) -> Result<(), Failure> {
    let log = read_log(path)?;
    let setup = Setup::new(&log.header.scenario)?;
    let initial = StateId(log.header.initial_state);
    if initial != setup.fsa.initial() || log.header.alphabet != setup.resolved.alphabet.names() {
        return Err(Failure::validation("log header does not match its embedded scenario"));
    }
    let report = Report::new(&log, &setup);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    if !report.hash_matches {
        eprintln!("warning: config hash in header does not match the embedded scenario");
    }
    if require_accept && !report.eventuality.accepted {
        return Err(Failure::monitor("log never reaches an accepting state"));
    }
    Ok(())
}

fn cmd_plot(path: &Path, dir: &Path) -> Result<(), Failure> {
    let log = read_log(path)?;
    for file in emit_plots(&log, dir)? {
        println!("{}", file.display());
    }
    Ok(())
}

/// Flattens a grid file into `(dotted key, candidate values)` pairs.
fn grid_axes(table: &toml::Table, prefix: &str, out: &mut Vec<(String, Vec<toml::Value>)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(inner) => grid_axes(inner, &key, out),
            toml::Value::Array(values) => out.push((key, values.clone())),
            other => out.push((key, vec![other.clone()])),
        }
    }
}

/// Cartesian product of the axes, last axis varying fastest.
fn grid_points(axes: &[(String, Vec<toml::Value>)]) -> Vec<Vec<toml::Value>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

struct SweepRow {
    index: usize,
    values: Vec<String>,
    outcome: Result<(Report, PathBuf), Failure>,
}

fn sweep_one(
    base: &Scenario,
    axes: &[(String, Vec<toml::Value>)],
    point: &[toml::Value],
    dir: &Path,
) -> Result<(Report, PathBuf), Failure> {
    let mut scenario = base.clone();
    for ((key, _), value) in axes.iter().zip(point) {
        scenario.set_path(key, value.clone())?;
    }
    let setup = Setup::new(&scenario)?;
    let log = run_setup(&setup, RunOptions::default())?.log;
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let out = dir.join("log.ndjson");
    export_log(&log, &out, LogFormat::Ndjson)?;
    Ok((Report::new(&log, &setup), out))
}

fn cmd_sweep(path: &Path, grid: &Path, jobs: usize, out_dir: &Path, require_accept: bool) -> Result<(), Failure> {
    let base = Scenario::load(path)?;
    let text = fs::read_to_string(grid).map_err(|e| io_failure(grid, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", grid.display())))?;
    let mut axes = Vec::new();
    grid_axes(&table, "", &mut axes);
    if axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Failure::validation("grid has an axis with no values"));
    }
    let points = grid_points(&axes);
    let root = out_dir.join(format!("sweep-{}", base.name));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, point)| SweepRow {
                index,
                values: point.iter().map(|v| v.to_string()).collect(),
                outcome: sweep_one(&base, &axes, point, &root.join(format!("run-{index:04}"))),
            })
            .collect()
    });

    fs::create_dir_all(&root).map_err(|e| io_failure(&root, e))?;
    let summary = root.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(|e| Failure::runtime(e.to_string()))?;
    let mut header = vec!["run".to_string()];
    header.extend(axes.iter().map(|(k, _)| k.clone()));
    header.extend(
        ["accepted", "t_accept", "theta_err", "min_clearance", "certificate", "config_hash", "log", "error"]
            .map(String::from),
    );
    w.write_record(&header).map_err(|e| Failure::runtime(e.to_string()))?;
    let mut worst = 0u8;
    for row in &rows {
        let mut record = vec![row.index.to_string()];
        record.extend(row.values.iter().cloned());
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        match &row.outcome {
            Ok((r, log)) => {
                if require_accept && !r.eventuality.accepted {
                    worst = worst.max(3);
                }
                record.extend([
                    r.eventuality.accepted.to_string(),
                    opt(r.eventuality.t),
                    opt(r.final_theta_err),
                    opt(r.certificate.min_clearance),
                    r.certificate.holds().to_string(),
                    r.config_hash.clone(),
                    log.display().to_string(),
                    String::new(),
                ]);
            }
            Err(f) => {
                worst = worst.max(f.code);
                record.extend(["false", "", "", "", "", "", ""].map(String::from));
                record.push(f.message.clone());
            }
        }
        w.write_record(&record).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| io_failure(&summary, e))?;

    let accepted = rows.iter().filter(|r| matches!(&r.outcome, Ok((rep, _)) if rep.eventuality.accepted)).count();
    println!("summary: {}", summary.display());
    println!("runs: {}, accepted: {accepted}", rows.len());
    std::io::stdout().flush().ok();
    match worst {
        0 => Ok(()),
        3 => Err(Failure::monitor("some runs did not reach an accepting state")),
        code => Err(Failure { code, message: "some runs failed; see the summary".into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_as_toml_or_fall_back_to_strings() {
        assert_eq!(parse_value("0.25"), toml::Value::Float(0.25));
        assert_eq!(parse_value("[1, 2]"), toml::Value::Array(vec![1.into(), 2.into()]));
        assert_eq!(parse_value("nearest-roi"), toml::Value::String("nearest-roi".into()));
    }

    #[test]
    fn grid_is_flattened_and_expanded() {
        let table: toml::Table = toml::from_str("seed = [1, 2, 3]\n[adp]\nkc1 = [0.1, 0.2]\nka1 = 1.0\n").unwrap();
        let mut axes = Vec::new();
        grid_axes(&table, "", &mut axes);
        let keys: Vec<&str> = axes.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["adp.ka1", "adp.kc1", "seed"]);
        let points = grid_points(&axes);
        assert_eq!(points.len(), 6);
        assert_eq!(points[1], vec![toml::Value::Float(1.0), toml::Value::Float(0.1), 2.into()]);
    }

    #[test]
    fn empty_grid_is_a_single_run() {
        assert_eq!(grid_points(&[]), vec![Vec::<toml::Value>::new()]);
    }
}
