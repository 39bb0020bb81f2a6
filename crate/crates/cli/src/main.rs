//! `hpeel`: batch front end for the compression experiments.
//!
//! Failures print one line `error kind=<kind> message="<text>"` on stderr.
//! Usage and configuration errors exit with status 2, run failures with 1.

mod commands;
mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_coloring_study, cmd_compress, cmd_synth, cmd_verify, StudyConfig};
use config::{Experiment, FileConfig, RunArgs, RunConfig};

const DEFAULT_DIMS: [usize; 4] = [1, 2, 3, 4];
const DEFAULT_SIGMAS: [f64; 5] = [0.0, 1e-3, 1e-2, 1e-1, 1.0];
const STUDY_N: usize = 4096;

#[derive(Parser, Debug)]
#[command(
    name = "hpeel",
    version,
    about = "Black-box rank-structured matrix compression"
)]
struct Cli {
    /// TOML file with default values for the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress an operator and write results.csv plus the representation
    Compress {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the operator's dense matrix (N <= 4096)
        #[arg(long)]
        dump_mirror: bool,
    },
    /// Color counts for points on a noisy line in d dimensions
    ColoringStudy {
        #[command(flatten)]
        run: RunArgs,
        /// Ambient dimensions, comma separated
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Noise levels, comma separated
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Check a stored representation against its operator
    Verify {
        /// Representation file written by `compress` or `synth`
        #[arg(long)]
        rep: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Power-method iterations
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Write a synthetic rank-structured matrix
    Synth {
        #[command(flatten)]
        run: RunArgs,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<hpeel::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if err.downcast_ref::<csv::Error>().is_some() {
        return "csv";
    }
    "run"
}

fn report(failure: Failure) -> ExitCode {
    let (kind, err, code) = match &failure {
        Failure::Usage(e) => ("usage", e, 2),
        Failure::Run(e) => (error_kind(e), e, 1),
    };
    let message = format!("{err:#}").replace('"', "'");
    eprintln!("error kind={kind} message=\"{message}\"");
    ExitCode::from(code)
}

/// Fills `run` from the config file and returns the file's extra keys.
fn merged(config: Option<&PathBuf>, run: &mut RunArgs) -> Result<FileConfig, Failure> {
    let file = match config {
        Some(path) => FileConfig::load(path).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    file.merge_into(run).map_err(Failure::Usage)?;
    Ok(file)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config_path = cli.config.as_ref();
    match cli.command {
        Command::Compress {
            mut run,
            dump_mirror,
        } => {
            merged(config_path, &mut run)?;
            let config = RunConfig::resolve(run, Experiment::Bie).map_err(Failure::Usage)?;
            cmd_compress(&config, dump_mirror).map_err(Failure::Run)?;
        }
        Command::ColoringStudy {
            mut run,
            dims,
            sigmas,
        } => {
            let file = merged(config_path, &mut run)?;
            if run.n.is_none() && run.sweep.is_none() {
                run.n = Some(STUDY_N);
            }
            let config =
                RunConfig::resolve(run, Experiment::ColoringStudy).map_err(Failure::Usage)?;
            let study = StudyConfig {
                n: config.n(),
                leaf: config.leaf,
                seed: config.seed,
                dims: dims.or(file.dims).unwrap_or_else(|| DEFAULT_DIMS.to_vec()),
                sigmas: sigmas
                    .or(file.sigmas)
                    .unwrap_or_else(|| DEFAULT_SIGMAS.to_vec()),
                out: config.out,
            };
            study.validate().map_err(Failure::Usage)?;
            cmd_coloring_study(&study).map_err(Failure::Run)?;
        }
        Command::Verify {
            rep,
            mut run,
            iters,
        } => {
            let file = merged(config_path, &mut run)?;
            let format_given = run.format.is_some();
            let iters = iters.or(file.iters).unwrap_or(20);
            if iters == 0 {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "--iters must be at least 1"
                )));
            }
            let config = RunConfig::resolve(run, Experiment::Synthetic).map_err(Failure::Usage)?;
            cmd_verify(&config, &rep, iters, format_given).map_err(Failure::Run)?;
        }
        Command::Synth { mut run } => {
            merged(config_path, &mut run)?;
            let config = RunConfig::resolve(run, Experiment::Synthetic).map_err(Failure::Usage)?;
            for path in cmd_synth(&config).map_err(Failure::Run)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => report(failure),
    }
}
