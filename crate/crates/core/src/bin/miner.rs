use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use powsim::admin::DISCARD_EXIT_CODE;
use powsim::miner::{run_miner, ExitOutcome, HashpowerChoice, MinerOptions};

/// Miner process: registers with the admin and mines until told to stop.
#[derive(Parser, Debug)]
#[command(name = "miner", version)]
#[command(group(ArgGroup::new("power").required(true).args(["hashpower", "hashpower_random"])))]
struct Args {
    /// Admin address as HOST:PORT.
    #[arg(long)]
    admin: String,
    /// Port for incoming peer connections; 0 picks a free one.
    #[arg(long)]
    listen_port: u16,
    #[arg(long)]
    hashpower: Option<f64>,
    /// Draw hashpower uniformly from (0, 30].
    #[arg(long)]
    hashpower_random: bool,
    #[arg(long)]
    seed: u64,
    /// Extra random delay of up to D ms on each outgoing block.
    #[arg(long, default_value_t = 0)]
    extra_delay_ms: u64,
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let choice = match args.hashpower {
        Some(h) => HashpowerChoice::Fixed(h),
        None => HashpowerChoice::Random,
    };
    let mut opts = MinerOptions::new(args.admin, choice, args.seed);
    opts.listen_port = args.listen_port;
    opts.extra_delay_ms = args.extra_delay_ms;

    let exit = match run_miner(opts) {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("miner: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(path) = &args.stats_out {
        let written = serde_json::to_vec_pretty(&exit)
            .map_err(std::io::Error::from)
            .and_then(|bytes| std::fs::write(path, bytes));
        if let Err(e) = written {
            eprintln!("miner: writing {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }
    match exit.outcome {
        ExitOutcome::Accepted { .. } => ExitCode::SUCCESS,
        ExitOutcome::Discarded { .. } => ExitCode::from(DISCARD_EXIT_CODE as u8),
    }
}
