use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod report;

use commands::{Context, SeedRange};

#[derive(Parser, Debug)]
#[command(name = "gunlearn", version, about = "Graph unlearning experiments for decoupled GNNs")]
struct Cli {
    /// JSON run configuration (nested objects or flat dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a batch of seeds `a..b` (or `a..=b`), one shard directory per seed.
    #[arg(long, global = true, conflicts_with = "seed")]
    seeds: Option<SeedRange>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    Mia,
    Edge,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic SBM dataset.
    Gen,
    /// Train the original model and write its checkpoint.
    Train,
    /// Unlearn a deletion request from a trained checkpoint.
    Unlearn,
    /// Retrain from scratch on the post-removal graph.
    Retrain,
    /// Run membership inference and/or the edge attack.
    Attack {
        #[arg(long, value_enum, default_value_t = AttackKind::Mia)]
        kind: AttackKind,
    },
    /// Aggregate a metrics file into a CSV summary and plot series.
    Report {
        /// Metrics file; defaults to `<out>/metrics.jsonl`.
        metrics: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> gunlearn::Result<()> {
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Report { metrics } => report::cmd_report(&ctx, metrics.as_deref()),
        command => {
            let step = move |ctx: &Context| match command {
                Command::Gen => commands::cmd_gen(ctx),
                Command::Train => commands::cmd_train(ctx),
                Command::Unlearn => commands::cmd_unlearn(ctx),
                Command::Retrain => commands::cmd_retrain(ctx),
                Command::Attack { kind } => commands::cmd_attack(ctx, kind),
                Command::Report { .. } => unreachable!(),
            };
            match cli.seeds {
                Some(range) => commands::run_batch(&ctx, range, &step),
                None => step(&ctx),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("{}: {message}", e.class());
            ExitCode::FAILURE
        }
    }
}
