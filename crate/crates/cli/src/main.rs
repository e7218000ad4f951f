use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pointsup_cli::commands::{self, DEFAULT_BUDGET_KINDS};
use pointsup_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "pointsup", version, about = "Point-supervised segmentation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with simulated annotations and objectness windows.
    Datagen,
    /// Train the configured supervision regime and evaluate it on the test split.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint to score; defaults to <out>/model.psck.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-image annotation times and fixed-budget image counts.
    Budget {
        /// Comma-separated kinds, e.g. POINTS_1+OBJ,FULL.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        /// Annotation budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Full and one-point image counts for the HYBRID row.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [100u64, 10482])]
        hybrid: Vec<u64>,
    },
    /// Simulate annotators over the training scenes and report error rates.
    Simulate,
    /// Serve annotation tasks over HTTP from the queue in <out>.
    Serve {
        /// Overrides the configured port and PORT.
        #[arg(long)]
        port: Option<u16>,
    },
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    match flag.clone().or_else(|| cfg.out.clone()) {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --out or set `out` in the config"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    let cfg = ExperimentConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    match cli.command {
        Command::Datagen => print!("{}", commands::datagen(&cfg, seed, &out_dir(&common.out, &cfg)?)?),
        Command::Train => {
            let out = out_dir(&common.out, &cfg)?;
            let (_, table) = commands::train(&cfg, seed, &out)?;
            print!("{table}");
        }
        Command::Eval { checkpoint } => {
            let out = out_dir(&common.out, &cfg)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join("model.psck"));
            let (_, table) = commands::eval(&cfg, seed, &ckpt, &out)?;
            print!("{table}");
        }
        Command::Budget { kinds, budget, hybrid } => {
            let kinds = if kinds.is_empty() { DEFAULT_BUDGET_KINDS.map(String::from).to_vec() } else { kinds };
            let rows = commands::budget(&cfg.budget, &kinds, budget, (hybrid[0], hybrid[1]))?;
            print!("{}", commands::budget_table(&rows));
            if let Some(out) = common.out.clone().or_else(|| cfg.out.clone()) {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join("budget.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
            }
        }
        Command::Simulate => {
            let (_, table) = commands::simulate(&cfg, seed, &out_dir(&common.out, &cfg)?)?;
            print!("{table}");
        }
        Command::Serve { port } => {
            let env_port = match std::env::var("PORT") {
                Ok(p) => Some(p.parse::<u16>().with_context(|| format!("PORT={p:?} is not a port number"))?),
                Err(_) => None,
            };
            let port = port.or(env_port).unwrap_or(cfg.serve.port);
            commands::serve(&cfg, seed, &out_dir(&common.out, &cfg)?, port)?;
        }
    }
    Ok(())
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
