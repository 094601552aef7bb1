use std::path::{Path, PathBuf};

use activectx::harness::commands::{self, CONTEXT_FILE};
use activectx::harness::RunConfig;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "activectx", version, about = "Train and evaluate a learned context curator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the curator with GRPO.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the active curator on held-out tasks.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Override `eval.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        /// Write the evaluation trajectories as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Success rate and context tokens for no-memory, full-context and active.
    CompareStrategies {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Per-turn context CSV; defaults to `<output.dir>/context.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare the analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a trajectory log turn by turn.
    Replay { log: PathBuf },
}

fn load(path: &Path, episodes: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(n) = episodes {
        cfg.eval_episodes = n;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, out } => {
            let cfg = load(&config, None)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = commands::cli_train(&cfg, &out)?;
            if let Some(last) = s.curve.last() {
                println!(
                    "iterations {} | final batch reward {:.3} | objective {:.4} | kl {:.5}",
                    s.curve.len(),
                    last.mean_reward,
                    last.objective,
                    last.mean_kl
                );
            }
            println!("params  {}", s.params_path.display());
            println!("metrics {}", s.metrics_path.display());
            if let Some(p) = s.log_path {
                println!("log     {}", p.display());
            }
        }
        Command::Eval { config, params, episodes, log } => {
            let cfg = load(&config, episodes)?;
            let r = commands::cli_eval(&cfg, params.as_deref(), log.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::CompareStrategies { config, params, episodes, csv } => {
            let cfg = load(&config, episodes)?;
            let csv = csv.unwrap_or_else(|| cfg.output_dir.join(CONTEXT_FILE));
            let cmp = commands::cli_compare_strategies(&cfg, params.as_deref(), &csv)?;
            println!("{:<14} {:>9} {:>10} {:>14}", "strategy", "success", "turns", "mean tokens");
            for r in &cmp.reports {
                println!("{:<14} {:>9.3} {:>10.2} {:>14.1}", r.strategy.name(), r.success_rate, r.mean_turns, r.mean_tokens);
            }
            println!("context rows {}", csv.display());
        }
        Command::Gradcheck { seed } => {
            let r = commands::cli_gradcheck(seed)?;
            for row in &r.rows {
                println!("h = {:.0e}  max relative error {:.3e}", row.h, row.max_rel_err);
            }
            println!("passed (tolerance {:.0e})", r.tolerance);
        }
        Command::Replay { log } => {
            print!("{}", commands::cli_replay(&log)?);
        }
    }
    Ok(())
}
