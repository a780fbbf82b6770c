//! `dfsq`: design, simulate and sweep distributed functional scalar quantizers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Run};
use config::Experiment;

#[derive(Debug, Parser)]
#[command(name = "dfsq", version, about = "Functional scalar quantizer design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured number of Monte Carlo samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true, env = "DFSQ_THREADS")]
    threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Optimal point densities, allocation and codebooks: design.csv, design_summary.csv, codebook_j.csv.
    Design,
    /// Simulated versus predicted distortion and rate: distortion.csv, rate.csv.
    Simulate,
    /// Distortion over every rate and `n_values`: sweep.csv.
    Sweep,
    /// Run the property suites, and check the configured points against prediction.
    Verify,
}

fn load(cli: &Cli) -> Result<Option<Run>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let experiment = Experiment::load(path)?;
    if cli.samples == Some(0) {
        return Err(Failure::Schema(config::SchemaError {
            path: "--samples".into(),
            message: "at least one sample is required".into(),
        }));
    }
    Ok(Some(Run {
        samples: cli.samples.unwrap_or(experiment.config.samples),
        seed: cli.seed.unwrap_or(experiment.config.seed),
        out: cli.out.clone().unwrap_or_else(|| experiment.config.output_dir.clone()),
        experiment,
    }))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads.filter(|&t| t > 0) {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let run = load(cli)?;
    let need = |run: Option<Run>| {
        run.ok_or_else(|| {
            Failure::Schema(config::SchemaError { path: "--config".into(), message: "a configuration file is required".into() })
        })
    };
    match cli.command {
        Command::Design => commands::print_written(&commands::run_design(&need(run)?)?),
        Command::Simulate => commands::print_written(&commands::run_simulate(&need(run)?)?),
        Command::Sweep => commands::print_written(&commands::run_sweep(&need(run)?)?),
        Command::Verify => {
            let seed = run.as_ref().map_or(cli.seed.unwrap_or(0), |r| r.seed);
            let lines = commands::run_verify(seed, run.as_ref())?;
            let width = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
            for l in &lines {
                let verdict = if l.passed { "PASS" } else { "FAIL" };
                println!("{verdict}  {:width$}  {}", l.name, l.detail);
            }
            let failed = lines.iter().filter(|l| !l.passed).count();
            if failed > 0 {
                return Err(Failure::Checks(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dfsq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
