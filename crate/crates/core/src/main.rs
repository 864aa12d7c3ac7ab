use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use prodist::harness::{bench, run_to_dir, RunConfig};
use prodist::{oracle, ProductDistribution, Result};

#[derive(Parser)]
#[command(name = "prodist", version, about = "Product-distribution optimization of black-box utilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an annealed optimization and write trace.jsonl and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print exact reference values for the configured problem.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named benchmark suite and print one JSON record per line.
    Bench {
        #[arg(long)]
        suite: String,
    },
}

fn emit(line: &str) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{line}")?;
    Ok(())
}

fn base_dir(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn run_command(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = run_to_dir(&config, base_dir(config_path), out)?;
    emit(&serde_json::to_string(&outcome.summary)?)?;
    Ok(())
}

fn oracle_command(config_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let utilities = config.build_utilities(base_dir(config_path))?;
    let world = utilities.world();
    let (best_x, best_g) = oracle::global_minimum(world)?;
    let uniform = ProductDistribution::uniform(world.domain());
    let schedule = config.schedule;
    let mut canonical = Vec::new();
    let mut beta = schedule.beta0;
    for _ in 0..schedule.rounds.max(1) {
        let m = oracle::canonical_marginals(world, beta)?;
        canonical.push(json!({
            "beta": beta,
            "marginals": m.marginals(),
            "expected_g": oracle::exact_expectation(world, &m)?,
        }));
        beta *= schedule.beta_growth;
    }
    let report = json!({
        "move_counts": world.domain().move_counts(),
        "joint_size": world.domain().joint_size().to_string(),
        "best_x": best_x,
        "best_g": best_g,
        "uniform_expected_g": oracle::exact_expectation(world, &uniform)?,
        "canonical": canonical,
    });
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn bench_command(suite: &str) -> Result<()> {
    for record in bench::run_suite(suite)? {
        emit(&serde_json::to_string(&record)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, out } => run_command(config, *seed, out),
        Command::Oracle { config } => oracle_command(config),
        Command::Bench { suite } => bench_command(suite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
