use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use terse::cli::{self, CliError};

#[derive(Parser)]
#[command(name = "terse", version, about = "Train concise signaling policies with sequence-level clipped policy optimization")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a uniform policy and write metrics, parameters and a final evaluation.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy evaluation of saved parameters.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One training run per lambda_tok value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda_tok values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full method vs. no token penalty vs. no group normalization.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds to pair the variants on.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Train { config, out, seed } => {
            let o = cli::cmd_train(&config, out.as_deref(), seed)?;
            if let Some(f) = o.final_stats {
                println!(
                    "iterations={} final_success={:.4} final_mean_tokens={:.4}",
                    o.history.len(),
                    f.success,
                    f.mean_tokens
                );
            }
            println!("{}", serde_json::to_string(&o.eval).expect("summary serializes"));
        }
        Command::Eval { params, config, n, seed } => {
            let s = cli::cmd_eval(&params, &config, n, seed)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        Command::Sweep { config, values, out, seed } => {
            let rows = cli::cmd_sweep(&config, &values, out.as_deref(), seed)?;
            print!("{}", cli::format_sweep(&rows));
        }
        Command::Ablate { config, out, seed, seeds } => {
            let rows = cli::cmd_ablate(&config, out.as_deref(), seed, seeds)?;
            print!("{}", cli::format_ablation(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
