//! Experiment driver: repeats a simulation with derived seeds, retries
//! discarded runs, and aggregates block shares per miner.
//!
//! A run is executed one of three ways:
//! - `logical` clock: in-process, see [`crate::logical`];
//! - `network` clock with `threads` launch: admin and miners as threads
//!   talking over loopback TCP;
//! - `network` clock with `processes` launch: `admin` and `miner` binaries
//!   as child processes.
//!
//! Independent runs are mapped across a rayon pool when the `parallel`
//! feature is on.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admin::{AdminError, AdminOptions, AdminOutcome, AdminServer, SimulationConfig, DISCARD_EXIT_CODE};
use crate::chain::splitmix64;
use crate::logical::{run_logical, LatencyModel, LogicalError};
use crate::miner::{run_miner, ExitOutcome, HashpowerChoice, MinerError, MinerExit, MinerOptions};
use crate::sched::sample_hashpower;
use crate::wire::MessageType;

/// Time scale used by the harness when a spec leaves it out.
pub const DEFAULT_HARNESS_TIME_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("experiment failed after {discards} discarded or failed attempts: {diagnostics:?}")]
    ExperimentFailure { discards: usize, diagnostics: Vec<String> },
    #[error("child process: {0}")]
    Process(String),
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Logical(#[from] LogicalError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Logical,
    #[default]
    Network,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Launch {
    #[default]
    Processes,
    Threads,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomTag {
    Random,
}

/// Either an explicit list (one entry per miner) or `"random"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hashpowers {
    Explicit(Vec<f64>),
    Random(RandomTag),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub config: SimulationConfig,
    pub hashpowers: Hashpowers,
    pub runs: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub launch: Launch,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Admin port of the first run; miner `i` listens on `base + i`.
    /// 0 means ephemeral ports (threads launch only).
    #[serde(default = "default_base_port")]
    pub base_port: u16,
    /// Concurrent runs. Defaults to the rayon pool size for logical runs
    /// and 1 for networked runs.
    #[serde(default)]
    pub parallel_runs: Option<usize>,
    #[serde(default)]
    pub extra_delay_ms: u64,
    /// Where the `admin` and `miner` binaries live; defaults to the
    /// directory of the running executable.
    #[serde(default)]
    pub bin_dir: Option<PathBuf>,
}

/// Below the usual ephemeral range so fixed ports do not collide with
/// outgoing connections.
fn default_base_port() -> u16 {
    21_000
}

impl ExperimentSpec {
    /// Parses a spec, filling in the harness default time scale.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        if let Some(cfg) = v.get_mut("config").and_then(|c| c.as_object_mut()) {
            cfg.entry("time_scale").or_insert(DEFAULT_HARNESS_TIME_SCALE.into());
        }
        let spec: ExperimentSpec = serde_json::from_value(v)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.config.validate()?;
        if self.runs == 0 {
            return Err(HarnessError::Spec("runs must be at least 1".into()));
        }
        if let Hashpowers::Explicit(list) = &self.hashpowers {
            if list.len() != self.config.num_miners {
                return Err(HarnessError::Spec(format!(
                    "{} hashpowers for {} miners",
                    list.len(),
                    self.config.num_miners
                )));
            }
            if list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(HarnessError::Spec("hashpowers must be positive".into()));
            }
        }
        if self.clock == ClockMode::Network && self.base_port != 0 {
            let span = (self.config.num_miners + 1) * self.runs;
            if self.base_port as usize + span > u16::MAX as usize {
                return Err(HarnessError::Spec(format!("base port {} leaves no room for {span} ports", self.base_port)));
            }
        }
        if self.clock == ClockMode::Network && self.launch == Launch::Processes && self.base_port == 0 {
            return Err(HarnessError::Spec("process launch needs a fixed base_port".into()));
        }
        Ok(())
    }

    fn run_config(&self, seed: u64) -> SimulationConfig {
        SimulationConfig { seed, ..self.config.clone() }
    }

    /// Seed handed to the miner in `slot`; also drives random hashpower.
    fn miner_seed(seed: u64, slot: usize) -> u64 {
        splitmix64(seed ^ (0xa5a5_0000 + slot as u64))
    }

    fn hashpower_choices(&self) -> Vec<HashpowerChoice> {
        match &self.hashpowers {
            Hashpowers::Explicit(list) => list.iter().map(|&h| HashpowerChoice::Fixed(h)).collect(),
            Hashpowers::Random(_) => (0..self.config.num_miners).map(|_| HashpowerChoice::Random).collect(),
        }
    }

    /// Hashpowers as the miners will resolve them.
    fn resolved_hashpowers(&self, seed: u64) -> Vec<f64> {
        self.hashpower_choices()
            .into_iter()
            .enumerate()
            .map(|(slot, c)| match c {
                HashpowerChoice::Fixed(h) => h,
                HashpowerChoice::Random => {
                    sample_hashpower(&mut crate::seeded_rng(Self::miner_seed(seed, slot)))
                }
            })
            .collect()
    }
}

/// Seed for attempt `attempt` of run `run`.
pub fn run_seed(base: u64, run: usize, attempt: usize) -> u64 {
    splitmix64(base ^ splitmix64(((run as u64) << 16) | attempt as u64))
}

/// One completed (possibly discarded) simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub attempt: usize,
    pub seed: u64,
    pub admin: AdminOutcome,
    /// Miner exits by slot (the order of the spec's hashpower list).
    pub miners: Vec<MinerExit>,
}

impl RunRecord {
    pub fn discarded(&self) -> bool {
        self.admin.consensus.is_discarded()
    }

    /// Every miner accepted the result and holds exactly the winning chain.
    pub fn agreement(&self) -> bool {
        let Some(chain) = self.admin.final_chain_ids() else {
            return false;
        };
        self.miners
            .iter()
            .all(|m| matches!(m.outcome, ExitOutcome::Accepted { .. }) && m.final_chain == chain)
    }

    /// Block share (percent) per slot.
    pub fn block_shares_pct(&self) -> Vec<f64> {
        let report = self.admin.report.as_ref();
        self.miners
            .iter()
            .map(|m| {
                report
                    .and_then(|r| r.miners.iter().find(|s| s.miner_id == m.miner_id))
                    .map_or(0.0, |s| s.block_share_pct)
            })
            .collect()
    }

    pub fn hash_shares_pct(&self) -> Vec<f64> {
        let total = self.admin.ledger.total_hashpower;
        self.miners.iter().map(|m| 100.0 * m.hashpower / total).collect()
    }

    pub fn total_blocks(&self) -> usize {
        self.admin.report.as_ref().map_or(0, |r| r.total_blocks)
    }

    pub fn cost(&self) -> RunCost {
        let inbound = &self.admin.accounting.inbound;
        RunCost {
            last_block_frames: inbound.frames_of(MessageType::LastBlock),
            last_block_blocks: inbound.blocks_of(MessageType::LastBlock),
            chain_frames: inbound.frames_of(MessageType::Chain),
            mining_phase_block_frames: self.admin.accounting.mining_phase_block_frames,
        }
    }
}

/// Admin-side consensus traffic for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCost {
    pub last_block_frames: usize,
    pub last_block_blocks: usize,
    pub chain_frames: usize,
    pub mining_phase_block_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSummary {
    pub slot: usize,
    pub mean_hashpower: f64,
    pub hash_share_pct: f64,
    pub mean_block_share_pct: f64,
    pub deviation_pp: f64,
    pub per_run_block_share_pct: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub discards: usize,
    /// Why each retried attempt was rejected.
    pub retry_reasons: Vec<String>,
    pub seeds: Vec<u64>,
    pub total_blocks: Vec<usize>,
    pub mean_total_blocks: f64,
    pub miners: Vec<SlotSummary>,
    pub agreement: Vec<bool>,
    pub costs: Vec<RunCost>,
    /// Winning chain of every run, for reproducibility checks.
    pub final_chains: Vec<Vec<crate::chain::BlockId>>,
}

impl Aggregate {
    pub fn from_records(records: &[RunRecord], retry_reasons: Vec<String>) -> Aggregate {
        let slots = records.first().map_or(0, |r| r.miners.len());
        let n = records.len().max(1) as f64;
        let shares: Vec<Vec<f64>> = records.iter().map(RunRecord::block_shares_pct).collect();
        let hashes: Vec<Vec<f64>> = records.iter().map(RunRecord::hash_shares_pct).collect();
        let miners = (0..slots)
            .map(|slot| {
                let per_run: Vec<f64> = shares.iter().map(|s| s[slot]).collect();
                let mean_block = per_run.iter().sum::<f64>() / n;
                let hash = hashes.iter().map(|h| h[slot]).sum::<f64>() / n;
                SlotSummary {
                    slot,
                    mean_hashpower: records.iter().map(|r| r.miners[slot].hashpower).sum::<f64>() / n,
                    hash_share_pct: hash,
                    mean_block_share_pct: mean_block,
                    deviation_pp: mean_block - hash,
                    per_run_block_share_pct: per_run,
                }
            })
            .collect();
        let total_blocks: Vec<usize> = records.iter().map(RunRecord::total_blocks).collect();
        Aggregate {
            runs: records.len(),
            discards: retry_reasons.len(),
            retry_reasons,
            seeds: records.iter().map(|r| r.seed).collect(),
            mean_total_blocks: total_blocks.iter().sum::<usize>() as f64 / n,
            total_blocks,
            miners,
            agreement: records.iter().map(RunRecord::agreement).collect(),
            costs: records.iter().map(RunRecord::cost).collect(),
            final_chains: records.iter().map(|r| r.admin.final_chain_ids().unwrap_or_default()).collect(),
        }
    }

    /// Sum of block shares in each run (percent).
    pub fn share_sums(&self) -> Vec<f64> {
        (0..self.runs)
            .map(|r| self.miners.iter().map(|m| m.per_run_block_share_pct[r]).sum())
            .collect()
    }

    pub fn fairness(&self, tolerance_pp: f64) -> Vec<FairnessVerdict> {
        let blocks: Vec<f64> = self.miners.iter().map(|m| m.mean_block_share_pct).collect();
        let hashes: Vec<f64> = self.miners.iter().map(|m| m.hash_share_pct).collect();
        judge(&blocks, &hashes, tolerance_pp)
    }

    /// Text table in the layout of a per-pool share comparison.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18}  {:>13}  {:>8}  {:>8}  {:>8}",
            "miner (hash %)", "mean block %", "dev pp", "min %", "max %"
        );
        for m in &self.miners {
            let min = m.per_run_block_share_pct.iter().copied().fold(f64::INFINITY, f64::min);
            let max = m.per_run_block_share_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let label = format!("slot {} ({:.1}%)", m.slot, m.hash_share_pct);
            let _ = writeln!(
                out,
                "{:<18}  {:>13.2}  {:>+8.2}  {:>8.2}  {:>8.2}",
                label, m.mean_block_share_pct, m.deviation_pp, min, max
            );
        }
        let _ = writeln!(
            out,
            "runs: {}  discarded: {}  mean total blocks: {:.2}",
            self.runs, self.discards, self.mean_total_blocks
        );
        out
    }

    /// `slot,hash_share_pct,block_share_pct` rows for pie charts.
    pub fn shares_csv(&self) -> String {
        let mut out = String::from("slot,hash_share_pct,block_share_pct\n");
        for m in &self.miners {
            let _ = writeln!(out, "{},{:.4},{:.4}", m.slot, m.hash_share_pct, m.mean_block_share_pct);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessVerdict {
    pub slot: usize,
    pub hash_share_pct: f64,
    pub block_share_pct: f64,
    pub deviation_pp: f64,
    pub pass: bool,
}

/// Compares mean block shares (percent) with the hash shares implied by
/// `hashpowers`.
pub fn fairness_check(mean_block_share_pct: &[f64], hashpowers: &[f64], tolerance_pp: f64) -> Vec<FairnessVerdict> {
    let total: f64 = hashpowers.iter().sum();
    let hashes: Vec<f64> = hashpowers.iter().map(|h| 100.0 * h / total).collect();
    judge(mean_block_share_pct, &hashes, tolerance_pp)
}

fn judge(blocks: &[f64], hashes: &[f64], tolerance_pp: f64) -> Vec<FairnessVerdict> {
    blocks
        .iter()
        .zip(hashes)
        .enumerate()
        .map(|(slot, (&b, &h))| {
            let deviation = b - h;
            FairnessVerdict {
                slot,
                hash_share_pct: h,
                block_share_pct: b,
                deviation_pp: deviation,
                pass: deviation.abs() <= tolerance_pp,
            }
        })
        .collect()
}

/// How independent runs are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        return Execution::Sequential;
    }
}

/// Maps `f` over `0..n`, preserving order. `threads` sizes the rayon
/// pool and is ignored for sequential execution.
#[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
pub fn map_runs<T, F>(n: usize, exec: Execution, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .expect("rayon pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
    }
}

/// Executes a single attempt of run `run`.
pub fn execute_run(spec: &ExperimentSpec, run: usize, attempt: usize) -> Result<RunRecord, HarnessError> {
    let seed = run_seed(spec.config.seed, run, attempt);
    let config = spec.run_config(seed);
    let (admin, miners) = match (spec.clock, spec.launch) {
        (ClockMode::Logical, _) => {
            let out = run_logical(&config, &spec.resolved_hashpowers(seed), spec.latency)?;
            (out.admin, out.miners)
        }
        (ClockMode::Network, Launch::Threads) => run_threads(spec, &config, run)?,
        (ClockMode::Network, Launch::Processes) => run_processes(spec, &config, run, attempt)?,
    };
    Ok(RunRecord { run, attempt, seed, admin, miners })
}

fn ports_for(spec: &ExperimentSpec, run: usize) -> (u16, impl Fn(usize) -> u16) {
    let base = spec.base_port;
    if base == 0 {
        return (0, Box::new(|_| 0u16) as Box<dyn Fn(usize) -> u16>);
    }
    let admin = base + (run * (spec.config.num_miners + 1)) as u16;
    (admin, Box::new(move |slot| admin + 1 + slot as u16))
}

fn run_threads(
    spec: &ExperimentSpec,
    config: &SimulationConfig,
    run: usize,
) -> Result<(AdminOutcome, Vec<MinerExit>), HarnessError> {
    let (admin_port, miner_port) = ports_for(spec, run);
    let mut opts = AdminOptions::new(config.clone());
    opts.registration_timeout = Duration::from_secs(30);
    let server = AdminServer::bind(("127.0.0.1", admin_port), opts)?;
    let addr = server.local_addr()?;
    let admin = thread::spawn(move || server.run());

    let handles: Vec<_> = spec
        .hashpower_choices()
        .into_iter()
        .enumerate()
        .map(|(slot, choice)| {
            let mut mo = MinerOptions::new(addr.to_string(), choice, ExperimentSpec::miner_seed(config.seed, slot));
            mo.listen_port = miner_port(slot);
            mo.extra_delay_ms = spec.extra_delay_ms;
            thread::spawn(move || run_miner(mo))
        })
        .collect();

    let mut exits = Vec::with_capacity(handles.len());
    let mut first_err = None;
    for h in handles {
        match h.join().map_err(|_| HarnessError::Process("miner thread panicked".into()))? {
            Ok(exit) => exits.push(exit),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let outcome = admin.join().map_err(|_| HarnessError::Process("admin thread panicked".into()))??;
    if let Some(e) = first_err {
        return Err(e.into());
    }
    Ok((outcome, exits))
}

fn bin_path(spec: &ExperimentSpec, name: &str) -> Result<PathBuf, HarnessError> {
    let dir = match &spec.bin_dir {
        Some(d) => d.clone(),
        None => std::env::current_exe()?
            .parent()
            .map(Path::to_path_buf)
            .ok_or_else(|| HarnessError::Process("cannot locate binaries".into()))?,
    };
    let path = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
    if !path.exists() {
        return Err(HarnessError::Process(format!("{} not found", path.display())));
    }
    Ok(path)
}

fn run_processes(
    spec: &ExperimentSpec,
    config: &SimulationConfig,
    run: usize,
    attempt: usize,
) -> Result<(AdminOutcome, Vec<MinerExit>), HarnessError> {
    let (admin_port, miner_port) = ports_for(spec, run);
    let dir = spec.out_dir.join(format!("run_{run:03}_attempt_{attempt}"));
    fs::create_dir_all(&dir)?;
    let report_path = dir.join("admin.json");

    let mut admin = Command::new(bin_path(spec, "admin")?)
        .args(["--port", &admin_port.to_string()])
        .args(["--num-miners", &config.num_miners.to_string()])
        .args(["--sim-time", &config.duration.to_string()])
        .args(["--block-interval", &config.interval.to_string()])
        .args(["--seed", &config.seed.to_string()])
        .args(["--time-scale", &config.time_scale.to_string()])
        .args(["--tx-pool-size", &config.tx_pool_size.to_string()])
        .arg("--report-out")
        .arg(&report_path)
        .stdout(Stdio::null())
        .stderr(fs::File::create(dir.join("admin.log"))?)
        .spawn()?;

    let miner_bin = bin_path(spec, "miner")?;
    let mut children = Vec::new();
    for (slot, choice) in spec.hashpower_choices().into_iter().enumerate() {
        let mut cmd = Command::new(&miner_bin);
        cmd.args(["--admin", &format!("127.0.0.1:{admin_port}")])
            .args(["--listen-port", &miner_port(slot).to_string()])
            .args(["--seed", &ExperimentSpec::miner_seed(config.seed, slot).to_string()])
            .args(["--extra-delay-ms", &spec.extra_delay_ms.to_string()])
            .arg("--stats-out")
            .arg(dir.join(format!("miner_{slot}.json")))
            .stdout(Stdio::null())
            .stderr(fs::File::create(dir.join(format!("miner_{slot}.log")))?);
        match choice {
            HashpowerChoice::Fixed(h) => cmd.args(["--hashpower", &h.to_string()]),
            HashpowerChoice::Random => cmd.arg("--hashpower-random"),
        };
        children.push(cmd.spawn()?);
    }

    let mut failed = Vec::new();
    for (slot, mut c) in children.into_iter().enumerate() {
        let status = c.wait()?;
        if !status.success() && status.code() != Some(DISCARD_EXIT_CODE) {
            failed.push(format!("miner slot {slot} exited with {status}"));
        }
    }
    let status = admin.wait()?;
    if !status.success() && status.code() != Some(DISCARD_EXIT_CODE) {
        failed.push(format!("admin exited with {status}"));
    }
    if !failed.is_empty() {
        return Err(HarnessError::Process(failed.join("; ")));
    }
    let outcome: AdminOutcome = serde_json::from_slice(&fs::read(&report_path)?)?;
    let exits = (0..config.num_miners)
        .map(|slot| -> Result<MinerExit, HarnessError> {
            Ok(serde_json::from_slice(&fs::read(dir.join(format!("miner_{slot}.json")))?)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((outcome, exits))
}

/// Runs the whole experiment and writes its outputs to `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Aggregate, HarnessError> {
    run_experiment_with(spec, Execution::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, exec: Execution) -> Result<Aggregate, HarnessError> {
    let (records, reasons) = collect_runs(spec, exec)?;
    let aggregate = Aggregate::from_records(&records, reasons);
    write_outputs(spec, &records, &aggregate)?;
    Ok(aggregate)
}

/// Executes every run (retrying discards) without touching the disk
/// except for child-process scratch files. Returns the records and the
/// reason for every retried attempt.
pub fn collect_runs(spec: &ExperimentSpec, exec: Execution) -> Result<(Vec<RunRecord>, Vec<String>), HarnessError> {
    spec.validate()?;
    let budget = 3 * spec.runs;
    let discards = AtomicUsize::new(0);
    let threads = spec.parallel_runs.or(match spec.clock {
        ClockMode::Network => Some(1),
        ClockMode::Logical => None,
    });

    let results = map_runs(spec.runs, exec, threads, |run| {
        let mut reasons = Vec::new();
        let mut attempt = 0;
        while discards.load(Ordering::SeqCst) <= budget {
            let reason = match execute_run(spec, run, attempt) {
                Ok(rec) if !rec.discarded() => return (Some(rec), reasons),
                Ok(rec) => format!("run {run} attempt {attempt} discarded: {:?}", rec.admin.consensus),
                Err(e) => format!("run {run} attempt {attempt} failed: {e}"),
            };
            warn!("{reason}");
            reasons.push(reason);
            discards.fetch_add(1, Ordering::SeqCst);
            attempt += 1;
        }
        (None, reasons)
    });

    let mut records = Vec::with_capacity(spec.runs);
    let mut all_reasons = Vec::new();
    let mut incomplete = false;
    for (rec, reasons) in results {
        all_reasons.extend(reasons);
        match rec {
            Some(rec) => records.push(rec),
            None => incomplete = true,
        }
    }
    if incomplete {
        return Err(HarnessError::ExperimentFailure { discards: all_reasons.len(), diagnostics: all_reasons });
    }
    info!("{} runs complete, {} retried", records.len(), all_reasons.len());
    Ok((records, all_reasons))
}

fn write_outputs(spec: &ExperimentSpec, records: &[RunRecord], aggregate: &Aggregate) -> Result<(), HarnessError> {
    fs::create_dir_all(&spec.out_dir)?;
    for rec in records {
        fs::write(spec.out_dir.join(format!("run_{:03}.json", rec.run)), serde_json::to_vec_pretty(rec)?)?;
    }
    fs::write(spec.out_dir.join("aggregate.json"), serde_json::to_vec_pretty(aggregate)?)?;
    fs::write(spec.out_dir.join("table.txt"), aggregate.render_table())?;
    fs::write(spec.out_dir.join("shares.csv"), aggregate.shares_csv())?;
    Ok(())
}
