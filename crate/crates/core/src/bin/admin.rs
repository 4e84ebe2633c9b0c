use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use powsim::admin::{AdminOptions, AdminServer, ConsensusOutcome, SimulationConfig, DISCARD_EXIT_CODE};

/// Admin server: registers miners, runs one simulation, settles consensus.
#[derive(Parser, Debug)]
#[command(name = "admin", version)]
struct Args {
    #[arg(long)]
    port: u16,
    #[arg(long)]
    num_miners: usize,
    /// Simulated seconds to mine for.
    #[arg(long)]
    sim_time: f64,
    /// Target block interval in simulated seconds.
    #[arg(long)]
    block_interval: f64,
    #[arg(long)]
    seed: u64,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[arg(long, default_value_t = 0)]
    tx_pool_size: usize,
    /// Where to write the JSON run record.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    registration_timeout_secs: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = SimulationConfig {
        num_miners: args.num_miners,
        duration: args.sim_time,
        interval: args.block_interval,
        seed: args.seed,
        time_scale: args.time_scale,
        tx_pool_size: args.tx_pool_size,
    };
    let mut options = AdminOptions::new(config);
    options.registration_timeout = std::time::Duration::from_secs(args.registration_timeout_secs);

    let outcome = match AdminServer::bind(("0.0.0.0", args.port), options).and_then(AdminServer::run) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("admin: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(path) = &args.report_out {
        let written = serde_json::to_vec_pretty(&outcome)
            .map_err(std::io::Error::from)
            .and_then(|bytes| std::fs::write(path, bytes));
        if let Err(e) = written {
            eprintln!("admin: writing {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }
    match (&outcome.consensus, &outcome.report) {
        (ConsensusOutcome::Discarded { reason, .. }, _) => {
            println!("run discarded: {reason}");
            ExitCode::from(DISCARD_EXIT_CODE as u8)
        }
        (_, Some(report)) => {
            print!("{}", report.render_table());
            ExitCode::SUCCESS
        }
        (_, None) => ExitCode::SUCCESS,
    }
}
