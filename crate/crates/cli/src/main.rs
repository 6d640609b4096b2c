use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use poolsel_cli::{commands, RunConfig};

#[derive(Parser)]
#[command(name = "poolsel", version, about = "Meta-learned static pool-based sample selection")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic pools as an embedding CSV.
    GenData {
        /// Output file (default `<out>/pools.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pretrain and freeze the representation model.
    PretrainRm,
    /// Meta-train the configured selection strategy.
    Train {
        /// Continue from `<out>/<strategy>/last.ckpt`.
        #[arg(long)]
        resume: bool,
        /// Strategy row name, e.g. `iterative-unordered` (overrides the config).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Evaluate every benchmark row on the metatest problems.
    Eval {
        /// Also write the paired per-episode log.
        #[arg(long)]
        per_episode: bool,
    },
    /// Run the exhaustive oracle on the metatest problems.
    OracleScan,
    /// Finite-difference check of every trainable strategy's loss.
    GradCheck,
    /// Print the resolved configuration.
    ShowConfig,
}

fn strategy_by_name(name: &str) -> Result<poolsel_core::selection::StrategySpec> {
    poolsel_core::selection::StrategySpec::benchmark_rows()
        .into_iter()
        .find(|s| s.is_trainable() && s.name() == name)
        .with_context(|| format!("unknown trainable strategy {name:?}"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Train { strategy: Some(name), .. } = &cli.command {
        cfg.train.strategy = strategy_by_name(name)?;
    }
    let cfg = cfg.resolve(cli.seed, cli.out)?;
    match cli.command {
        Command::GenData { output } => {
            commands::gen_data(&cfg, output)?;
        }
        Command::PretrainRm => {
            commands::pretrain_rm(&cfg)?;
        }
        Command::Train { resume, .. } => {
            commands::train(&cfg, resume)?;
        }
        Command::Eval { per_episode } => {
            commands::eval(&cfg, per_episode)?;
        }
        Command::OracleScan => {
            commands::oracle_scan(&cfg)?;
        }
        Command::GradCheck => commands::grad_check_cmd(&cfg)?,
        Command::ShowConfig => {
            println!("# config={}", cfg.digest());
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}
