use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use powsim::harness::{run_experiment, Aggregate, ExperimentSpec};

/// Runs repeated simulations and checks block shares against hash shares.
#[derive(Parser, Debug)]
#[command(name = "harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Execute an experiment described by a JSON file.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Check an aggregate file for fairness.
    Check {
        #[arg(long)]
        aggregate: PathBuf,
        #[arg(long)]
        tolerance_pp: f64,
    },
}

fn run(spec: PathBuf) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::from_json(&std::fs::read_to_string(spec)?)?;
    let aggregate = run_experiment(&spec)?;
    print!("{}", aggregate.render_table());
    println!("outputs in {}", spec.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn check(path: PathBuf, tolerance_pp: f64) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let aggregate: Aggregate = serde_json::from_slice(&std::fs::read(path)?)?;
    let verdicts = aggregate.fairness(tolerance_pp);
    for v in &verdicts {
        println!(
            "slot {}: hash {:.2}% block {:.2}% deviation {:+.2} pp {}",
            v.slot,
            v.hash_share_pct,
            v.block_share_pct,
            v.deviation_pp,
            if v.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if verdicts.iter().all(|v| v.pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Cmd::Run { spec } => run(spec),
        Cmd::Check { aggregate, tolerance_pp } => check(aggregate, tolerance_pp),
    };
    result.unwrap_or_else(|e| {
        eprintln!("harness: {e}");
        ExitCode::from(2)
    })
}
