use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfedbred_cli::{parse_config, run_experiment, run_sweep};

#[derive(Parser)]
#[command(name = "pfedbred", version, about = "Personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy and write metrics and model dumps.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted config key, e.g. `trainer.lambda`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with all defaults filled in.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            for s in run_experiment(&cfg, &out)? {
                println!(
                    "{}: global {:.4} personalized {:.4} (best personalized {:.4})",
                    s.algo, s.final_global_acc, s.final_personalized_acc, s.best_personalized_acc
                );
            }
            println!("outputs in {}", out.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let rows = run_sweep(&config, &param, &values, out.as_deref())?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} points, {failed} failed", rows.len());
        }
        Command::Validate { config } => {
            print!("{}", parse_config(&config)?.to_toml());
        }
    }
    Ok(())
}
