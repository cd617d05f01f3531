use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metadistill::io::TraceFormat;
use metadistill_cli::{
    cmd_check_axioms, cmd_run, cmd_sweep, exit_code, parse_alpha_grid, repro_appendix_a, RunArgs,
    EXIT_REPRO_MISMATCH, EXIT_RUNTIME, EXIT_VALIDATION,
};

/// Anchored recursive distillation simulator.
#[derive(Parser)]
#[command(name = "metadistill", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit its generation trace.
    Run {
        scenario: PathBuf,
        /// Directory to write `<scenario>.<format>` into; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write an SVG chart (needs --out).
        #[arg(long, requires = "out")]
        plot: bool,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check an operator against the axioms on random inputs.
    CheckAxioms {
        operator: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a scenario over a grid of anchor weights.
    Sweep {
        /// `start:end:step` or a comma-separated list.
        #[arg(long, default_value = "0.1:0.9:0.1")]
        alpha: String,
        scenario: PathBuf,
        /// Directory for one trace file per alpha.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Reproduce the three-token example and compare with the published table.
    ReproAppendixA,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("METADISTILL_LOG")).init();
    let cli = Cli::parse();

    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            plot,
            seed,
        } => cmd_run(&RunArgs {
            scenario,
            out,
            format: format.into(),
            plot,
            seed,
        }),
        Command::CheckAxioms {
            operator,
            trials,
            seed,
        } => cmd_check_axioms(&operator, trials, seed),
        Command::Sweep {
            alpha,
            scenario,
            out,
            format,
        } => {
            let alphas = match parse_alpha_grid(&alpha) {
                Ok(a) => a,
                Err(msg) => {
                    eprintln!("error: --alpha: {msg}");
                    return ExitCode::from(EXIT_VALIDATION as u8);
                }
            };
            cmd_sweep(&scenario, &alphas, out.as_deref(), format.into())
        }
        Command::ReproAppendixA => match repro_appendix_a() {
            Ok(report) => {
                print!("{}", report.text);
                return if report.mismatches.is_empty() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_REPRO_MISMATCH as u8)
                };
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUNTIME as u8);
            }
        },
    };

    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
