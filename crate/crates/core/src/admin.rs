//! The admin server: registration rendezvous, run bootstrap, and the
//! end-of-run consensus round.
//!
//! The admin only speaks at the start and the end of a run. Between
//! SIM_START and SIM_END it neither sends nor relays blocks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    longest_chain_stats, select_consensus_winner, validate_chain, Block, BlockId, ChainError,
    ConsensusEntry, Transaction, TxId, ADMIN_ID,
};
use crate::wire::{read_message, write_message, FrameTally, MessageType, MinerInfo, WireError, WireMessage};

/// Longest wait for a REGISTER frame on a fresh connection.
const REGISTER_READ_TIMEOUT: Duration = Duration::from_secs(5);

/// Process status used when a run is discarded.
pub const DISCARD_EXIT_CODE: i32 = 3;

#[derive(Debug, Error)]
pub enum AdminError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("duplicate registration from {0}")]
    RejectedDuplicate(String),
    #[error("registration timed out with {registered} of {expected} miners")]
    RegistrationTimeout { registered: usize, expected: usize },
    #[error("consensus timed out waiting for miner {0}")]
    ConsensusTimeout(u32),
    #[error("invalid chain from miner {0}: {1}")]
    InvalidChain(u32, ChainError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub num_miners: usize,
    /// Run length in simulation seconds.
    pub duration: f64,
    /// Average network-wide block interval in simulation seconds.
    pub interval: f64,
    pub seed: u64,
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default)]
    pub tx_pool_size: usize,
}

fn default_time_scale() -> f64 {
    1.0
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), AdminError> {
        let bad = |m: &str| Err(AdminError::InvalidConfig(m.to_string()));
        if self.num_miners == 0 {
            return bad("num_miners must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return bad("interval must be positive");
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return bad("time_scale must be positive");
        }
        Ok(())
    }
}

/// Per-miner seed derived from the run seed.
pub fn miner_subseed(seed: u64, miner_id: u32) -> u64 {
    seed ^ miner_id as u64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrationLedger {
    pub entries: Vec<MinerInfo>,
    pub total_hashpower: f64,
}

impl RegistrationLedger {
    /// Assigns the next id (1, 2, ...) in registration order.
    pub fn register(&mut self, hashpower: f64, ip: &str, port: u16) -> Result<u32, AdminError> {
        if self.entries.iter().any(|e| e.ip == ip && e.port == port) {
            return Err(AdminError::RejectedDuplicate(format!("{ip}:{port}")));
        }
        if !(hashpower > 0.0 && hashpower.is_finite()) {
            return Err(AdminError::Protocol(format!("hashpower {hashpower} from {ip}:{port}")));
        }
        let miner_id = self.entries.len() as u32 + 1;
        self.entries.push(MinerInfo { miner_id, hashpower, ip: ip.to_string(), port });
        self.total_hashpower = self.entries.iter().map(|e| e.hashpower).sum();
        Ok(miner_id)
    }

    pub fn hashpowers(&self) -> BTreeMap<u32, f64> {
        self.entries.iter().map(|e| (e.miner_id, e.hashpower)).collect()
    }

    pub fn get(&self, miner_id: u32) -> Option<&MinerInfo> {
        self.entries.iter().find(|e| e.miner_id == miner_id)
    }
}

pub fn create_genesis(seed: u64) -> Block {
    Block {
        id: BlockId::derive(seed, ADMIN_ID, 0, 0.0, 0),
        parent_id: None,
        depth: 0,
        miner_id: ADMIN_ID,
        blocktime: 0.0,
        tx_ids: Vec::new(),
        is_empty: false,
    }
}

/// `tx_pool_size` transactions with sizes in [250, 1000] bytes and fees in
/// [0, 1). Ids are a random base plus the index, so they never collide.
pub fn create_tx_pool<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Vec<Transaction> {
    let base: u64 = rng.gen::<u64>() >> 1;
    (0..config.tx_pool_size as u64)
        .map(|i| Transaction {
            id: TxId(base + i),
            size_bytes: rng.gen_range(250..=1000),
            fee: rng.gen::<f64>(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConsensusOutcome {
    Accepted { winner_id: u32, chain: Vec<Block> },
    Discarded { winner_id: Option<u32>, reason: String },
}

impl ConsensusOutcome {
    pub fn is_discarded(&self) -> bool {
        matches!(self, ConsensusOutcome::Discarded { .. })
    }

    pub fn winner_id(&self) -> Option<u32> {
        match self {
            ConsensusOutcome::Accepted { winner_id, .. } => Some(*winner_id),
            ConsensusOutcome::Discarded { winner_id, .. } => *winner_id,
        }
    }
}

/// Picks the winner from the collected tips, fetches that one chain and
/// decides whether the run stands.
pub fn decide_consensus<F>(entries: &[ConsensusEntry], genesis: &Block, fetch_chain: F) -> ConsensusOutcome
where
    F: FnOnce(u32) -> Result<Vec<Block>, AdminError>,
{
    let winner_id = match select_consensus_winner(entries) {
        Ok(id) => id,
        Err(e) => return ConsensusOutcome::Discarded { winner_id: None, reason: e.to_string() },
    };
    let discard = |reason: String| ConsensusOutcome::Discarded { winner_id: Some(winner_id), reason };
    let chain = match fetch_chain(winner_id) {
        Ok(c) => c,
        Err(e) => return discard(e.to_string()),
    };
    if let Err(e) = validate_chain(&chain, genesis) {
        return discard(AdminError::InvalidChain(winner_id, e).to_string());
    }
    let claimed = entries.iter().find(|e| e.miner_id == winner_id).map(|e| e.last_block.id);
    if chain.last().map(|b| b.id) != claimed {
        return discard(format!("miner {winner_id} returned a chain not ending at its reported tip"));
    }
    let holes = chain.iter().filter(|b| b.is_empty).count();
    if holes > 0 {
        return discard(format!("winning chain holds {holes} unresolved placeholder block(s)"));
    }
    ConsensusOutcome::Accepted { winner_id, chain }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerShare {
    pub miner_id: u32,
    pub hashpower: f64,
    pub hash_share_pct: f64,
    pub blocks: usize,
    pub block_share_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Main-chain length excluding genesis.
    pub total_blocks: usize,
    pub miners: Vec<MinerShare>,
}

pub fn emit_report(final_chain: &[Block], ledger: &RegistrationLedger) -> Result<Report, ChainError> {
    let shares = longest_chain_stats(final_chain, &ledger.hashpowers())?;
    let total_blocks = final_chain.len().saturating_sub(1);
    let miners = ledger
        .entries
        .iter()
        .map(|e| {
            let share = shares.get(&e.miner_id).copied().unwrap_or(0.0);
            MinerShare {
                miner_id: e.miner_id,
                hashpower: e.hashpower,
                hash_share_pct: 100.0 * e.hashpower / ledger.total_hashpower,
                blocks: (share * total_blocks as f64).round() as usize,
                block_share_pct: 100.0 * share,
            }
        })
        .collect();
    Ok(Report { total_blocks, miners })
}

impl Report {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>10}  {:>8}  {:>7}  {:>8}", "miner", "hashpower", "hash %", "blocks", "block %");
        for m in &self.miners {
            let _ = writeln!(
                out,
                "{:>6}  {:>10.2}  {:>8.2}  {:>7}  {:>8.2}",
                m.miner_id, m.hashpower, m.hash_share_pct, m.blocks, m.block_share_pct
            );
        }
        let _ = writeln!(out, "total blocks mined: {}", self.total_blocks);
        out
    }
}

/// Frames seen on admin connections over a whole run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdminAccounting {
    pub inbound: FrameTally,
    pub outbound: FrameTally,
    /// BLOCK frames that reached the admin between SIM_START and SIM_END.
    pub mining_phase_block_frames: usize,
}

/// Everything the admin knows once a run is over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdminOutcome {
    pub config: SimulationConfig,
    pub ledger: RegistrationLedger,
    pub genesis_id: BlockId,
    pub consensus: ConsensusOutcome,
    pub report: Option<Report>,
    pub accounting: AdminAccounting,
}

impl AdminOutcome {
    pub fn final_chain_ids(&self) -> Option<Vec<BlockId>> {
        match &self.consensus {
            ConsensusOutcome::Accepted { chain, .. } => Some(chain.iter().map(|b| b.id).collect()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdminOptions {
    pub config: SimulationConfig,
    pub registration_timeout: Duration,
    pub consensus_timeout: Duration,
}

impl AdminOptions {
    pub fn new(config: SimulationConfig) -> Self {
        AdminOptions {
            config,
            registration_timeout: Duration::from_secs(60),
            consensus_timeout: Duration::from_secs(30),
        }
    }
}

struct MinerConn {
    miner_id: u32,
    stream: TcpStream,
}

pub struct AdminServer {
    listener: TcpListener,
    options: AdminOptions,
    accounting: AdminAccounting,
}

impl AdminServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, options: AdminOptions) -> Result<Self, AdminError> {
        options.config.validate()?;
        let listener = TcpListener::bind(addr)?;
        Ok(AdminServer { listener, options, accounting: AdminAccounting::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    fn send(&mut self, stream: &mut TcpStream, msg: &WireMessage) -> Result<(), AdminError> {
        let n = write_message(stream, msg)?;
        self.accounting.outbound.record(msg, n);
        Ok(())
    }

    fn recv(&mut self, stream: &mut TcpStream) -> Result<WireMessage, AdminError> {
        match read_message(stream)? {
            Some((msg, n)) => {
                self.accounting.inbound.record(&msg, n);
                Ok(msg)
            }
            None => Err(AdminError::Io(io::ErrorKind::UnexpectedEof.into())),
        }
    }

    /// Accepts REGISTER messages until every expected miner has an id,
    /// then hands each of them the roster.
    pub fn run_registration(&mut self) -> Result<(RegistrationLedger, Vec<(u32, TcpStream)>), AdminError> {
        let expected = self.options.config.num_miners;
        let deadline = Instant::now() + self.options.registration_timeout;
        let mut ledger = RegistrationLedger::default();
        let mut conns: Vec<MinerConn> = Vec::with_capacity(expected);
        self.listener.set_nonblocking(true)?;

        while conns.len() < expected {
            let now = Instant::now();
            if now >= deadline {
                return Err(AdminError::RegistrationTimeout { registered: conns.len(), expected });
            }
            let (mut stream, peer) = match self.listener.accept() {
                Ok(pair) => pair,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            let wait = deadline.saturating_duration_since(now).min(REGISTER_READ_TIMEOUT);
            stream.set_read_timeout(Some(wait.max(Duration::from_millis(1))))?;
            let msg = match self.recv(&mut stream) {
                Ok(m) => m,
                Err(e) => {
                    warn!("dropping connection from {peer}: {e}");
                    continue;
                }
            };
            let WireMessage::Register { hashpower, ip, port } = msg else {
                warn!("{peer} sent {} before registering", msg.kind());
                continue;
            };
            let ip = if ip.is_empty() { peer.ip().to_string() } else { ip };
            match ledger.register(hashpower, &ip, port) {
                Ok(miner_id) => {
                    info!("registered miner {miner_id} at {ip}:{port} with hashpower {hashpower:.3}");
                    stream.set_read_timeout(None)?;
                    conns.push(MinerConn { miner_id, stream });
                }
                Err(e) => {
                    warn!("{e}");
                    let reply = WireMessage::Discard { reason: e.to_string() };
                    let _ = self.send(&mut stream, &reply);
                }
            }
        }

        for conn in &mut conns {
            let msg = WireMessage::MinerInfo {
                self_id: conn.miner_id,
                miners: ledger.entries.clone(),
                total_hashpower: ledger.total_hashpower,
            };
            let n = write_message(&mut conn.stream, &msg)?;
            self.accounting.outbound.record(&msg, n);
        }
        Ok((ledger, conns.into_iter().map(|c| (c.miner_id, c.stream)).collect()))
    }

    /// Full lifecycle: registration, bootstrap, timed run, consensus.
    pub fn run(mut self) -> Result<AdminOutcome, AdminError> {
        let config = self.options.config.clone();
        let (ledger, mut conns) = self.run_registration()?;

        let genesis = create_genesis(config.seed);
        let mut rng = crate::seeded_rng(crate::chain::splitmix64(config.seed));
        let pool = create_tx_pool(&config, &mut rng);
        let started = Instant::now();
        for (miner_id, stream) in conns.iter_mut() {
            let start = WireMessage::SimStart {
                duration: config.duration,
                interval: config.interval,
                time_scale: config.time_scale,
                seed: miner_subseed(config.seed, *miner_id),
            };
            self.send(stream, &start)?;
            self.send(stream, &WireMessage::Genesis { block: genesis.clone() })?;
            self.send(stream, &WireMessage::TxPool { transactions: pool.clone() })?;
        }
        info!("simulation started: {} miners, {} sim-s at x{}", conns.len(), config.duration, config.time_scale);

        let wall = Duration::from_secs_f64(config.duration / config.time_scale);
        std::thread::sleep(wall.saturating_sub(started.elapsed()));

        for (_, stream) in conns.iter_mut() {
            if let Err(e) = self.send(stream, &WireMessage::SimEnd {}) {
                warn!("SIM_END not delivered: {e}");
            }
        }

        let consensus = self.run_consensus(&genesis, &mut conns)?;
        let report = match &consensus {
            ConsensusOutcome::Accepted { chain, .. } => Some(emit_report(chain, &ledger)?),
            ConsensusOutcome::Discarded { .. } => None,
        };
        Ok(AdminOutcome {
            config,
            ledger,
            genesis_id: genesis.id,
            consensus,
            report,
            accounting: self.accounting,
        })
    }

    fn run_consensus(&mut self, genesis: &Block, conns: &mut [(u32, TcpStream)]) -> Result<ConsensusOutcome, AdminError> {
        let deadline = Instant::now() + self.options.consensus_timeout;
        let mut entries = Vec::with_capacity(conns.len());
        for (miner_id, stream) in conns.iter_mut() {
            match self.await_message(stream, deadline, MessageType::LastBlock) {
                Ok(WireMessage::LastBlock { block, .. }) if !block.is_empty => {
                    entries.push(ConsensusEntry { miner_id: *miner_id, last_block: block });
                }
                Ok(other) => warn!("miner {miner_id} sent unusable {}", other.kind()),
                Err(e) => warn!("no LAST_BLOCK from miner {miner_id}: {e}"),
            }
        }
        debug!("collected {} tips", entries.len());

        let mut fetch_err = None;
        let outcome = decide_consensus(&entries, genesis, |winner| {
            let stream = &mut conns
                .iter_mut()
                .find(|(id, _)| *id == winner)
                .ok_or_else(|| AdminError::Protocol(format!("winner {winner} has no connection")))?
                .1;
            let res = self
                .send(stream, &WireMessage::ChainRequest {})
                .and_then(|_| self.await_message(stream, deadline, MessageType::Chain));
            match res {
                Ok(WireMessage::Chain { blocks, .. }) => Ok(blocks),
                Ok(other) => Err(AdminError::Protocol(format!("expected CHAIN, got {}", other.kind()))),
                Err(e) => {
                    fetch_err = Some(e.to_string());
                    Err(AdminError::ConsensusTimeout(winner))
                }
            }
        });
        if let Some(e) = fetch_err {
            warn!("chain fetch failed: {e}");
        }

        let msg = match &outcome {
            ConsensusOutcome::Accepted { winner_id, chain } => {
                info!("consensus: miner {winner_id} wins with {} blocks", chain.len() - 1);
                WireMessage::ConsensusResult { winner_id: *winner_id, chain: chain.clone() }
            }
            ConsensusOutcome::Discarded { reason, .. } => {
                warn!("simulation discarded: {reason}");
                WireMessage::Discard { reason: reason.clone() }
            }
        };
        for (miner_id, stream) in conns.iter_mut() {
            if let Err(e) = self.send(stream, &msg) {
                warn!("result not delivered to miner {miner_id}: {e}");
            }
        }
        Ok(outcome)
    }

    /// Reads until a frame of type `want` shows up, counting anything else.
    fn await_message(&mut self, stream: &mut TcpStream, deadline: Instant, want: MessageType) -> Result<WireMessage, AdminError> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(AdminError::Io(io::ErrorKind::TimedOut.into()));
            }
            stream.set_read_timeout(Some(left))?;
            let msg = self.recv(stream)?;
            if msg.kind() == want {
                return Ok(msg);
            }
            if msg.kind() == MessageType::Block {
                self.accounting.mining_phase_block_frames += 1;
            }
            warn!("ignoring {} while waiting for {want}", msg.kind());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::testutil::{child, linear};
    use std::collections::HashSet;

    fn config(n: usize) -> SimulationConfig {
        SimulationConfig { num_miners: n, duration: 1000.0, interval: 12.42, seed: 5, time_scale: 1.0, tx_pool_size: 0 }
    }

    #[test]
    fn ledger_assigns_consecutive_ids() {
        let mut ledger = RegistrationLedger::default();
        let powers = [17.0, 15.8, 12.9, 11.0, 6.6, 6.3, 30.4];
        for (i, h) in powers.iter().enumerate() {
            assert_eq!(ledger.register(*h, "10.0.0.1", 9000 + i as u16).unwrap(), i as u32 + 1);
        }
        assert!((ledger.total_hashpower - 100.0).abs() < 1e-9);
        assert!(matches!(ledger.register(3.0, "10.0.0.1", 9000), Err(AdminError::RejectedDuplicate(_))));

        let mut single = RegistrationLedger::default();
        assert_eq!(single.register(30.0, "h", 1).unwrap(), 1);
        assert_eq!(single.total_hashpower, 30.0);
    }

    #[test]
    fn genesis_shape() {
        let g = create_genesis(9);
        assert_eq!(g.depth, 0);
        assert!(g.parent_id.is_none());
        assert_eq!(g.miner_id, ADMIN_ID);
        assert_eq!(g.blocktime, 0.0);
        assert_eq!(g, create_genesis(9));
        assert_ne!(g.id, create_genesis(10).id);
    }

    #[test]
    fn tx_pool_contents() {
        let mut cfg = config(1);
        assert!(create_tx_pool(&cfg, &mut crate::seeded_rng(1)).is_empty());
        cfg.tx_pool_size = 1000;
        let pool = create_tx_pool(&cfg, &mut crate::seeded_rng(1));
        assert_eq!(pool.iter().map(|t| t.id).collect::<HashSet<_>>().len(), 1000);
        assert!(pool.iter().all(|t| (250..=1000).contains(&t.size_bytes) && (0.0..1.0).contains(&t.fee)));
        assert_eq!(pool, create_tx_pool(&cfg, &mut crate::seeded_rng(1)));
    }

    #[test]
    fn config_validation() {
        assert!(config(1).validate().is_ok());
        assert!(SimulationConfig { duration: 0.0, ..config(1) }.validate().is_err());
        assert!(SimulationConfig { interval: -1.0, ..config(1) }.validate().is_err());
        assert!(SimulationConfig { num_miners: 0, ..config(1) }.validate().is_err());
    }

    #[test]
    fn consensus_accepts_deepest_and_discards_placeholders() {
        let chain = linear(5, 1);
        let g = chain[0].clone();
        let short = linear(4, 2);
        let entries = vec![
            ConsensusEntry { miner_id: 1, last_block: chain[5].clone() },
            ConsensusEntry { miner_id: 2, last_block: short[4].clone() },
        ];
        let out = decide_consensus(&entries, &g, |w| {
            assert_eq!(w, 1);
            Ok(chain.clone())
        });
        assert_eq!(out, ConsensusOutcome::Accepted { winner_id: 1, chain: chain.clone() });

        let mut holed = chain.clone();
        holed[2] = Block::placeholder(chain[2].id, 2);
        let out = decide_consensus(&entries, &g, |_| Ok(holed));
        assert!(out.is_discarded());
        assert_eq!(out.winner_id(), Some(1));

        let out = decide_consensus(&entries, &g, |w| Err(AdminError::ConsensusTimeout(w)));
        assert!(out.is_discarded());

        let out = decide_consensus(&entries, &g, |_| Ok(short.clone()));
        assert!(out.is_discarded(), "chain must end at the reported tip");

        assert!(decide_consensus(&[], &g, |_| unreachable!()).is_discarded());
    }

    #[test]
    fn report_single_miner_and_normalisation() {
        let chain = linear(8, 1);
        let mut ledger = RegistrationLedger::default();
        ledger.register(30.0, "h", 1).unwrap();
        let r = emit_report(&chain, &ledger).unwrap();
        assert_eq!(r.total_blocks, 8);
        assert_eq!(r.miners[0].block_share_pct, 100.0);
        assert_eq!(r.miners[0].hash_share_pct, 100.0);

        let g = chain[0].clone();
        let a = child(&g, 1, 1.0);
        let b = child(&a, 2, 2.0);
        let c = child(&b, 2, 3.0);
        ledger.register(10.0, "h", 2).unwrap();
        ledger.register(5.0, "h", 3).unwrap();
        let r = emit_report(&[g, a, b, c], &ledger).unwrap();
        let sum: f64 = r.miners.iter().map(|m| m.block_share_pct).sum();
        assert!((sum - 100.0).abs() < 0.1);
        assert_eq!(r.miners[1].blocks, 2);
        assert!(r.render_table().contains("total blocks mined: 3"));
    }
}
