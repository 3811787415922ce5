use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use polymoment::harness::{self, ExperimentConfig};
use polymoment::Error;

/// Seeded Monte-Carlo experiments for moment-based estimators.
#[derive(Debug, Parser)]
#[command(name = "polymoment", version)]
struct Cli {
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment from a JSON config; writes results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_path` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the replicate count.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Print a summary table of a results CSV (or a run directory).
    Summarize { results: PathBuf },
    /// List the available scenarios.
    ListScenarios {
        /// Print each scenario's default config as JSON.
        #[arg(long)]
        defaults: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            output,
            replicates,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if cli.workers == Some(0) {
                return Err(Error::Config("--workers must be >= 1".into()).into());
            }
            let dir = output
                .or_else(|| cfg.output_path.clone())
                .unwrap_or_else(|| PathBuf::from(format!("results/{}", cfg.scenario.name())));
            let out = harness::run_experiment(&cfg, cli.workers)?;
            let (csv, json) = harness::write_outputs(&out, &dir)
                .with_context(|| format!("writing results to {}", dir.display()))?;
            let failures: usize = out.summary.groups.iter().map(|g| g.failures).sum();
            println!(
                "{}: {} replicates, {} rows ({} failed) -> {}, {}",
                out.summary.scenario,
                out.summary.config.replicates,
                out.records.len(),
                failures,
                csv.display(),
                json.display()
            );
            for r in &out.summary.ratios {
                println!(
                    "  n={} {} {}/{} {}: {:.4} +- {:.4}",
                    r.sample_size, r.quantity, r.numerator, r.denominator, r.metric, r.value, r.half_width
                );
            }
        }
        Command::Summarize { results } => {
            print!("{}", harness::summarize(&results)?);
        }
        Command::ListScenarios { defaults } => {
            for (name, description) in harness::list_scenarios() {
                println!("{name:<20} {description}");
                if defaults {
                    let cfg = ExperimentConfig::for_scenario(name)?.resolved();
                    println!("{}", serde_json::to_string_pretty(&cfg)?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                Some(Error::Parse { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
