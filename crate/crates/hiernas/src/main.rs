use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hiernas::runner::{
    compare_baseline, export_best_dot, export_best_json, resume, run, Checkpoint, ExperimentConfig,
    RunError,
};

#[derive(Parser)]
#[command(name = "hiernas", about = "Hierarchical evolutionary architecture search", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the search-vs-random comparison over multiple seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds (0, 1, ..., N-1).
        #[arg(long)]
        seeds: u64,
    },
    /// Export the best phenotype from a checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
    },
    /// Resume an interrupted run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            if let Some(out) = out {
                config.output_dir = out;
            }
            std::fs::create_dir_all(&config.output_dir)?;
            let report = run(&config)?;
            for s in &report.seeds {
                println!("seed {}: best fitness {:.6}", s.seed, s.best_fitness);
            }
            println!("outputs written to {}", config.output_dir.display());
            Ok(())
        }
        Command::Compare { config, seeds } => {
            let config = ExperimentConfig::load(&config)?;
            let seed_list: Vec<u64> = (0..seeds).collect();
            let report = compare_baseline(&config, &seed_list)?;
            for c in &report.per_seed {
                println!(
                    "seed {}: search {:.6} vs random {:.6}{}",
                    c.seed,
                    c.search_final_best,
                    c.random_final_best,
                    if c.early_crossover { " (early crossover)" } else { "" }
                );
            }
            println!(
                "search wins {}/{}, early crossovers {}/{}, p = {:.4}",
                report.search_wins, report.seeds_total, report.early_crossovers, report.seeds_total,
                report.p_value
            );
            std::fs::create_dir_all(&config.output_dir)?;
            std::fs::write(
                config.output_dir.join("comparison.json"),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            println!(
                "comparison written to {}",
                config.output_dir.join("comparison.json").display()
            );
            Ok(())
        }
        Command::Export { checkpoint, format } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let best = ckpt
                .best
                .as_ref()
                .ok_or_else(|| RunError::CorruptCheckpoint("checkpoint has no best member".into()))?;
            match format {
                Format::Json => println!("{}", export_best_json(best)?),
                Format::Dot => println!("{}", export_best_dot(best)),
            }
            Ok(())
        }
        Command::Resume { checkpoint } => {
            let report = resume(&checkpoint)?;
            for s in &report.seeds {
                println!("seed {}: best fitness {:.6}", s.seed, s.best_fitness);
            }
            Ok(())
        }
    }
}
