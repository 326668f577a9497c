use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use otemachine::harness::{self, LoadedScenario, RunOptions, RunOutput};
use otemachine::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "otemachine",
    version,
    about = "Steady states of a thermal machine coupled to qubits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario sweep (or Monte-Carlo ensemble) and write the table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Worker threads, 0 for all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Overrides the master seed of the ensemble.
        #[arg(long)]
        seed: Option<u64>,
        /// Abort on the first failing sweep point.
        #[arg(long)]
        strict: bool,
    },
    /// Parse the scenario and check every generator is completely positive.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load(path: &Path) -> Result<LoadedScenario, ExitCode> {
    LoadedScenario::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn emit(output: &RunOutput, format: Format, out: Option<&Path>) -> Result<(), Error> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    match format {
        Format::Csv => harness::write_csv(output, &mut sink)?,
        Format::Json => {
            harness::write_json(output, &mut sink)?;
            writeln!(sink)?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn simulate(
    config: &Path,
    out: Option<&Path>,
    format: Format,
    options: RunOptions,
) -> Result<(), ExitCode> {
    let loaded = load(config)?;
    let output = harness::run(&loaded, options).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Config(_) => ExitCode::from(EXIT_CONFIG),
            _ => ExitCode::from(EXIT_SOLVER),
        }
    })?;
    for row in output.errors() {
        if let Some(e) = &row.error {
            eprintln!(
                "warning: point {} ({}): {}: {}",
                row.index, row.value, e.module, e.message
            );
        }
    }
    emit(&output, format, out).map_err(|e| {
        eprintln!("error: writing output: {e}");
        ExitCode::from(EXIT_FAILURE)
    })
}

fn validate(config: &Path) -> Result<(), ExitCode> {
    let loaded = load(config)?;
    // a generator that is not completely positive is a bad configuration
    harness::validate_scenario(&loaded).map_err(|e| {
        eprintln!("error: {}: {e}", config.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    let points = loaded.sweep_values().len();
    println!(
        "ok: {} ({points} point{})",
        config.display(),
        if points == 1 { "" } else { "s" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            format,
            jobs,
            seed,
            strict,
        } => simulate(
            &config,
            out.as_deref(),
            format,
            RunOptions { jobs, seed, strict },
        ),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
