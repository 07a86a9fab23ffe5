//! Library side of the `orchsim` command. Every subcommand is an ordinary
//! function so it can be driven from tests without spawning a process.

use std::fs;
use std::path::{Path, PathBuf};

use orchsim_core::scenario::{self, Diagnostic, DiagnosticCode};
use orchsim_core::{metrics_summary, Engine, LogRecord, MetricsReport, RunOutput, SimTime};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const STRUCTURED_LOG: &str = "events.jsonl";
pub const STRUCTURED_REPORT: &str = "report.json";
pub const TEXT_LOG: &str = "events.txt";
pub const TEXT_REPORT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}:{line}: {message}")]
    MalformedLog { path: String, line: usize, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) | CliError::MalformedLog { .. } => EXIT_RUNTIME,
        }
    }
}

pub fn render_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Format {
    Text,
    #[default]
    Structured,
}

fn read_scenario(path: &Path) -> Result<scenario::CompiledScenario, Vec<Diagnostic>> {
    let text = fs::read_to_string(path).map_err(|e| {
        vec![Diagnostic::new(
            DiagnosticCode::Io,
            "",
            format!("cannot read {}: {e}", path.display()),
        )]
    })?;
    scenario::load(&text)
}

/// Diagnostics for a scenario file and the exit status they imply.
pub fn cmd_validate(path: &Path) -> (Vec<Diagnostic>, i32) {
    match read_scenario(path) {
        Ok(_) => (Vec::new(), EXIT_OK),
        Err(d) => (d, EXIT_INVALID),
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub format: Format,
    pub seed: Option<u64>,
    pub until: Option<SimTime>,
}

#[derive(Debug)]
pub struct RunResult {
    pub output: RunOutput,
    pub files: Vec<PathBuf>,
}

/// Simulates a scenario in memory.
pub fn simulate(path: &Path, seed: Option<u64>, until: Option<SimTime>) -> Result<RunOutput, CliError> {
    let mut compiled = read_scenario(path).map_err(CliError::Invalid)?;
    if let Some(seed) = seed {
        compiled.config.seed = seed;
    }
    Engine::new(compiled.setup, compiled.events, compiled.config)
        .run(until)
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn structured_log(log: &[LogRecord]) -> String {
    let mut s = String::new();
    for rec in log {
        s.push_str(&rec.to_json_line());
        s.push('\n');
    }
    s
}

pub fn text_log(log: &[LogRecord]) -> String {
    let mut s = format!("{:>10}  {:<26}{}\n", "TIME", "KIND", "DETAIL");
    for rec in log {
        s.push_str(&format!(
            "{:>10}  {:<26}{}\n",
            rec.time,
            rec.mutation.kind(),
            rec.mutation
        ));
    }
    s
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
    s.push('\n');
    s
}

fn write(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    files.push(path);
    Ok(())
}

/// Runs a scenario and writes its log and report into `args.out`.
pub fn cmd_run(args: &RunArgs) -> Result<RunResult, CliError> {
    let output = simulate(&args.scenario, args.seed, args.until)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let mut files = Vec::new();
    match args.format {
        Format::Structured => {
            write(args.out.join(STRUCTURED_LOG), &structured_log(&output.log), &mut files)?;
            write(
                args.out.join(STRUCTURED_REPORT),
                &report_json(&output.report),
                &mut files,
            )?;
        }
        Format::Text => {
            write(args.out.join(TEXT_LOG), &text_log(&output.log), &mut files)?;
            write(args.out.join(TEXT_REPORT), &output.report.to_string(), &mut files)?;
        }
    }
    Ok(RunResult { output, files })
}

/// Parses a line-delimited structured log. Blank lines are skipped.
pub fn parse_log(text: &str, path: &str) -> Result<Vec<LogRecord>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| CliError::MalformedLog {
            path: path.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Recomputes the metrics report from a structured log file.
pub fn cmd_report(log_path: &Path) -> Result<MetricsReport, CliError> {
    let name = log_path.display().to_string();
    let text = fs::read_to_string(log_path).map_err(|e| CliError::Runtime(format!("cannot read {name}: {e}")))?;
    let log = parse_log(&text, &name)?;
    // map record indices back to file lines, which may include blanks
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    metrics_summary(&log).map_err(|e| CliError::MalformedLog {
        path: name,
        line: lines[e.index],
        message: e.error.to_string(),
    })
}
