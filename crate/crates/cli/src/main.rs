use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use orchsim_cli::{cmd_report, cmd_run, cmd_validate, render_diagnostics, report_json, Format, RunArgs, EXIT_OK};

/// Deterministic cluster-orchestration simulator.
#[derive(Parser)]
#[command(name = "orchsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Structured,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => Format::Text,
            FormatArg::Structured => Format::Structured,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list any problems.
    Validate { file: PathBuf },
    /// Run a scenario and write its event log and metrics report.
    Run {
        file: PathBuf,
        /// Output directory.
        #[arg(long, env = "ORCHSIM_OUT")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "structured")]
        format: FormatArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop before simulated time T.
        #[arg(long, value_name = "T")]
        until: Option<u64>,
    },
    /// Recompute the metrics report from a structured event log.
    Report {
        log: PathBuf,
        #[arg(long, value_enum, default_value = "structured")]
        format: FormatArg,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(2))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { file } => {
            let (diags, status) = cmd_validate(&file);
            if diags.is_empty() {
                println!("{}: ok", file.display());
            } else {
                eprintln!("{}", render_diagnostics(&diags));
            }
            code(status)
        }
        Command::Run {
            file,
            out,
            format,
            seed,
            until,
        } => {
            let args = RunArgs {
                scenario: file,
                out,
                format: format.into(),
                seed,
                until,
            };
            match cmd_run(&args) {
                Ok(result) => {
                    print!("{}", result.output.report);
                    for f in &result.files {
                        println!("wrote {}", f.display());
                    }
                    code(EXIT_OK)
                }
                Err(e) => {
                    eprintln!("{e}");
                    code(e.exit_code())
                }
            }
        }
        Command::Report { log, format } => match cmd_report(&log) {
            Ok(report) => {
                match Format::from(format) {
                    Format::Structured => print!("{}", report_json(&report)),
                    Format::Text => print!("{report}"),
                }
                code(EXIT_OK)
            }
            Err(e) => {
                eprintln!("{e}");
                code(e.exit_code())
            }
        },
    }
}
