use clap::{Parser, Subcommand};
use formagen_cli::{cmd_compare, cmd_evaluate, cmd_generate, cmd_plan, CliError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Form-structured music generation and structure evaluation.
#[derive(Parser)]
#[command(name = "formagen", version, about)]
struct Cli {
    /// JSON config file with flat RunConfig keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed for token generation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Audio backend.
    #[arg(long, global = true, value_parser = ["toy", "remote"])]
    backend: Option<String>,

    /// Remote backend URL (required with --backend remote).
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the LLM for structured piece plans and write them as JSON files.
    Plan {
        /// Free-text theme passed along with the stock instructions.
        #[arg(long)]
        brief: Option<String>,
        /// How many pieces to request.
        #[arg(long)]
        pieces: Option<usize>,
        /// Replay transcript fixture instead of calling the LLM.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Generate tokens for a plan and render audio.
    Generate { plan: PathBuf },
    /// Compute fused self-similarity matrices and corpus statistics for a
    /// directory of WAV files.
    Evaluate { audio_dir: PathBuf },
    /// Squared Fréchet distance between the structure statistics of two
    /// corpora.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(backend) = cli.backend {
        config.backend = backend;
    }
    if let Some(endpoint) = cli.endpoint {
        config.endpoint = Some(endpoint);
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }

    match cli.command {
        Command::Plan {
            brief,
            pieces,
            fixture,
        } => {
            if let Some(pieces) = pieces {
                config.pieces = pieces;
            }
            cmd_plan(&config, brief.as_deref(), fixture.as_deref())?;
        }
        Command::Generate { plan } => {
            cmd_generate(&config, &plan)?;
        }
        Command::Evaluate { audio_dir } => {
            cmd_evaluate(&config, &audio_dir)?;
        }
        Command::Compare { dir_a, dir_b } => {
            cmd_compare(&config, &dir_a, &dir_b)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
