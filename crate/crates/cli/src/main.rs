use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use incremental_lpv_cli::{analyze, repro, simulate, synth, CliError, ExperimentConfig, Overrides};

/// Incremental LPV controller synthesis, analysis and simulation.
#[derive(Debug, Parser)]
#[command(name = "ilpv", version)]
struct Cli {
    /// Experiment config (JSON). Defaults reproduce the built-in example.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for all randomness (probe initial conditions, spot checks).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Gauss-Legendre order for path averages without a closed form.
    #[arg(long, global = true, value_name = "M")]
    quadrature_order: Option<usize>,

    /// Distance by which unit-circle weight poles are moved inward.
    #[arg(long, global = true, value_name = "E")]
    eps_pole: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize controllers and write certificates.
    Synth,
    /// Closed-loop gain bound and divergence probe of controller files.
    Analyze {
        /// Controller file; defaults to those written by `synth`.
        #[arg(long, value_name = "PATH")]
        controller: Vec<PathBuf>,
    },
    /// Run the configured scenarios and write trace CSVs.
    Simulate {
        #[arg(long, value_name = "PATH")]
        controller: Vec<PathBuf>,
    },
    /// Full reproduction with the acceptance checks.
    Repro,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Overrides {
        out: cli.out,
        seed: cli.seed,
        quadrature_order: cli.quadrature_order,
        eps_pole: cli.eps_pole,
    }
    .apply(&mut cfg)?;
    let output = match cli.command {
        Command::Synth => synth(&cfg)?,
        Command::Analyze { controller } => analyze(&cfg, &controller)?,
        Command::Simulate { controller } => simulate(&cfg, &controller)?,
        Command::Repro => {
            let (report, output) = repro(&cfg)?;
            let t = report.timings;
            eprintln!(
                "synthesis {:.2} s + {:.2} s, simulations {:.2} s, total {:.2} s",
                t.incremental_synthesis, t.standard_synthesis, t.simulations, t.total
            );
            output
        }
    };
    print!("{}", output.text);
    for f in &output.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
