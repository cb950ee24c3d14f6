use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pbb_cli::{
    cmd_certify, cmd_evaluate, cmd_grid_search, cmd_train, Checkpoint, GridConfig, Overrides,
    Precision, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "pbb",
    version,
    about = "Train probabilistic networks with PAC-Bayes objectives and certify them"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Budget {
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo weight samples for the certificate.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta_prime: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train prior and posterior, certify, and evaluate on the test set.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        precision: Option<Precision>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Recompute certificates from a checkpoint.
    Certify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Test predictors, ensemble disagreement and posterior scale histograms.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Train every combination of a hyperparameter grid and rank by certificate.
    GridSearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn overrides(b: &Budget, precision: Option<Precision>) -> Overrides {
    Overrides {
        seed: b.seed,
        m: b.m,
        delta: b.delta,
        delta_prime: b.delta_prime,
        precision,
    }
}

fn run(cli: Cli) -> pbb_cli::Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            precision,
            budget,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides(&budget, precision).apply(&mut cfg)?;
            let outcome = cmd_train(&cfg)?;
            let dir = out
                .or(cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&outcome.record.run_id));
            outcome.write(&dir)?;
            println!("{}", serde_json::to_string_pretty(&outcome.record)?);
            eprintln!("wrote {}", dir.display());
        }
        Command::Certify {
            checkpoint,
            out,
            budget,
        } => {
            let ckpt = Checkpoint::read(&checkpoint)?;
            let record = cmd_certify(&ckpt, &overrides(&budget, None))?;
            match out {
                Some(p) => record.write_json(&p)?,
                None => println!("{}", serde_json::to_string_pretty(&record)?),
            }
        }
        Command::Evaluate {
            checkpoint,
            out,
            ensemble,
            top_k,
        } => {
            let ckpt = Checkpoint::read(&checkpoint)?;
            let report = cmd_evaluate(&ckpt, ensemble, top_k)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| pbb_cli::CliError::io(&p, e))?,
                None => println!("{text}"),
            }
        }
        Command::GridSearch { config, out } => {
            let (grid, base) = GridConfig::load(&config)?;
            let rows = cmd_grid_search(&grid.grid, &base, &out)?;
            let failed = rows.iter().filter(|r| r.rank.is_none()).count();
            eprintln!(
                "{} runs, {failed} failed; wrote {}",
                rows.len(),
                out.join(pbb_cli::grid::GRID_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
