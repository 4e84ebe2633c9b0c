//! Miner node: the per-miner state machine and its TCP driver.
//!
//! [`MinerCore`] owns a [`LocalChainState`] and advances it given a clock
//! reading. [`run_miner`] wraps it with sockets: a listener thread feeding
//! a receive channel, a reader on the admin connection, and direct sends to
//! every peer.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    ActionKind, Arrival, Block, BlockId, ChainError, LocalChainState, Transaction, TxId, UpdateAction,
};
use crate::sched::{self, compute_block_time, pop_due_created, HashpowerProfile, SchedError, SimulationClock};
use crate::wire::{encode, read_message, write_message, FrameReader, MinerInfo, WireError, WireMessage};

/// Transactions referenced by each mined block.
pub const TXS_PER_BLOCK: usize = 8;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("cannot reach admin at {0}")]
    Connect(String),
    #[error("registration rejected: {0}")]
    Rejected(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Boundary for alternative mining behaviour. Only the honest rules ship.
pub trait Strategy: Send {
    fn on_created(&mut self, state: &mut LocalChainState, block: Block) -> Result<UpdateAction, ChainError>;
    fn on_received(
        &mut self,
        state: &mut LocalChainState,
        block: Block,
        sender_id: u32,
    ) -> Result<UpdateAction, ChainError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Honest;

impl Strategy for Honest {
    fn on_created(&mut self, state: &mut LocalChainState, block: Block) -> Result<UpdateAction, ChainError> {
        state.apply_created_block(block)
    }

    fn on_received(
        &mut self,
        state: &mut LocalChainState,
        block: Block,
        sender_id: u32,
    ) -> Result<UpdateAction, ChainError> {
        state.apply_received_block(block, sender_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerStats {
    /// Own blocks whose blocktime was reached.
    pub blocks_created: usize,
    pub blocks_broadcast: usize,
    pub dropped_stale: usize,
    pub received: usize,
    pub appended_received: usize,
    pub uncled: usize,
    pub switches: usize,
    pub placeholders_remaining: usize,
}

/// Roster as seen by one miner.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerRoster {
    pub self_id: u32,
    pub peers: Vec<MinerInfo>,
    pub total_hashpower: f64,
}

impl PeerRoster {
    pub fn from_miner_info(self_id: u32, miners: Vec<MinerInfo>, total_hashpower: f64) -> Result<Self, MinerError> {
        if !miners.iter().any(|m| m.miner_id == self_id) {
            return Err(MinerError::Protocol(format!("roster does not list miner {self_id}")));
        }
        let peers = miners.into_iter().filter(|m| m.miner_id != self_id).collect();
        Ok(PeerRoster { self_id, peers, total_hashpower })
    }
}

pub struct MinerCore {
    id: u32,
    profile: HashpowerProfile,
    interval: f64,
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
    pool: Vec<TxId>,
    state: LocalChainState,
    stats: MinerStats,
    strategy: Box<dyn Strategy>,
}

impl MinerCore {
    pub fn new(
        id: u32,
        profile: HashpowerProfile,
        interval: f64,
        genesis: Block,
        pool: &[Transaction],
        seed: u64,
    ) -> Result<Self, MinerError> {
        Ok(MinerCore {
            id,
            profile,
            interval,
            seed,
            counter: 0,
            rng: crate::seeded_rng(seed),
            pool: pool.iter().map(|t| t.id).collect(),
            state: LocalChainState::new(genesis)?,
            stats: MinerStats::default(),
            strategy: Box::new(Honest),
        })
    }

    pub fn with_strategy(mut self, strategy: Box<dyn Strategy>) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn state(&self) -> &LocalChainState {
        &self.state
    }

    pub fn stats(&self) -> &MinerStats {
        &self.stats
    }

    pub fn tip(&self) -> &Block {
        self.state.tip()
    }

    /// Blocktime of the pending own block.
    pub fn next_due(&self) -> Option<f64> {
        self.state.create_queue.peek().map(|b| b.blocktime)
    }

    /// Schedules the first block on top of genesis.
    pub fn start(&mut self, now: f64) -> Result<(), MinerError> {
        self.schedule_next(now)
    }

    /// Drops whatever is pending and draws a fresh block on the current tip.
    fn schedule_next(&mut self, now: f64) -> Result<(), MinerError> {
        self.state.create_queue.clear();
        let blocktime = compute_block_time(&self.profile, self.interval, now, &mut self.rng)?;
        let tip = self.state.tip();
        let depth = tip.depth + 1;
        let block = Block {
            id: BlockId::derive(self.seed, self.id, depth, blocktime, self.counter),
            parent_id: Some(tip.id),
            depth,
            miner_id: self.id,
            blocktime,
            tx_ids: self.pick_transactions(depth),
            is_empty: false,
        };
        self.counter += 1;
        self.state.create_queue.push(block);
        Ok(())
    }

    fn pick_transactions(&self, depth: u64) -> Vec<TxId> {
        if self.pool.is_empty() {
            return Vec::new();
        }
        let n = self.pool.len();
        let start = ((depth - 1) as usize * TXS_PER_BLOCK) % n;
        (0..TXS_PER_BLOCK.min(n)).map(|i| self.pool[(start + i) % n]).collect()
    }

    pub fn enqueue(&mut self, arrival: Arrival) {
        self.state.receive_queue.push_back(arrival);
    }

    /// Runs every received block that has arrived by `now` through the
    /// fork-choice rules, in arrival order.
    pub fn process_received(&mut self, now: f64) -> Result<(), MinerError> {
        while self.state.receive_queue.front().is_some_and(|a| a.arrived_at <= now) {
            let Arrival { block, sender_id, .. } = self.state.receive_queue.pop_front().expect("peeked");
            self.stats.received += 1;
            let act = self.strategy.on_received(&mut self.state, block, sender_id)?;
            match act.kind {
                ActionKind::AppendedReceived => self.stats.appended_received += 1,
                ActionKind::Uncled => self.stats.uncled += 1,
                ActionKind::SwitchedChain => self.stats.switches += 1,
                _ => {}
            }
        }
        Ok(())
    }

    /// One pass of the mining loop: received blocks first, then at most one
    /// due own block. Returns the block to broadcast, if any.
    pub fn mining_step(&mut self, now: f64) -> Result<Option<Block>, MinerError> {
        let tip_before = self.state.tip().id;
        self.process_received(now)?;
        let mut out = None;
        if let Some(block) = pop_due_created(&mut self.state.create_queue, now) {
            self.stats.blocks_created += 1;
            let act = self.strategy.on_created(&mut self.state, block.clone())?;
            match act.kind {
                ActionKind::AppendedOwn if act.broadcast => {
                    self.stats.blocks_broadcast += 1;
                    out = Some(block);
                }
                ActionKind::DroppedStale => self.stats.dropped_stale += 1,
                _ => {}
            }
        }
        if self.state.tip().id != tip_before || self.state.create_queue.is_empty() {
            self.schedule_next(now)?;
        }
        Ok(out)
    }

    /// Stores a late block without applying fork-choice rules.
    pub fn absorb(&mut self, block: Block) -> Result<(), MinerError> {
        Ok(self.state.absorb(block)?)
    }

    /// End of run: stops mining, stores anything still queued and fills
    /// placeholders on the main chain. Returns the unresolved count.
    pub fn finish(&mut self) -> Result<usize, MinerError> {
        self.state.create_queue.clear();
        while let Some(a) = self.state.receive_queue.pop_front() {
            self.state.absorb(a.block)?;
        }
        let remaining = self.state.fill_main_chain()?;
        self.stats.placeholders_remaining = remaining;
        Ok(remaining)
    }

    pub fn adopt(&mut self, chain: Vec<Block>) -> Result<(), MinerError> {
        Ok(self.state.adopt_chain(chain)?)
    }
}

/// Decodes peer bytes into arrivals stamped `now`. Non-BLOCK frames are
/// logged and skipped; a decode error is returned so the caller can drop
/// that connection.
pub fn ingest_peer_bytes(reader: &mut FrameReader, bytes: &[u8], now: f64) -> Result<Vec<Arrival>, WireError> {
    reader.push(bytes);
    let mut out = Vec::new();
    while let Some(msg) = reader.next_message()? {
        match msg {
            WireMessage::Block { sender_id, block } => out.push(Arrival { block, sender_id, arrived_at: now }),
            other => warn!("protocol violation: {} on a peer connection", other.kind()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum HashpowerChoice {
    Fixed(f64),
    Random,
}

#[derive(Clone, Debug)]
pub struct MinerOptions {
    pub admin: String,
    /// 0 picks an ephemeral port.
    pub listen_port: u16,
    pub hashpower: HashpowerChoice,
    pub seed: u64,
    pub extra_delay_ms: u64,
    pub connect_timeout: Duration,
    pub result_timeout: Duration,
}

impl MinerOptions {
    pub fn new(admin: impl Into<String>, hashpower: HashpowerChoice, seed: u64) -> Self {
        MinerOptions {
            admin: admin.into(),
            listen_port: 0,
            hashpower,
            seed,
            extra_delay_ms: 0,
            connect_timeout: Duration::from_secs(10),
            result_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExitOutcome {
    Accepted { winner_id: u32 },
    Discarded { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerExit {
    pub miner_id: u32,
    pub hashpower: f64,
    pub port: u16,
    pub stats: MinerStats,
    pub outcome: ExitOutcome,
    pub served_chain: bool,
    pub final_chain: Vec<BlockId>,
}

enum Event {
    Peer(Arrival),
    Admin(WireMessage),
    AdminGone(String),
}

struct PeerLink {
    info: MinerInfo,
    stream: Option<TcpStream>,
}

impl PeerLink {
    fn addr(&self) -> io::Result<SocketAddr> {
        (self.info.ip.as_str(), self.info.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address"))
    }

    /// Lazily connects; one retry on failure, then the peer misses it.
    fn send(&mut self, frame: &[u8]) -> bool {
        for attempt in 0..2 {
            if self.stream.is_none() {
                match self.addr().and_then(|a| TcpStream::connect_timeout(&a, Duration::from_secs(2))) {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        self.stream = Some(s);
                    }
                    Err(e) => {
                        debug!("connect to miner {} failed (attempt {attempt}): {e}", self.info.miner_id);
                        continue;
                    }
                }
            }
            if let Some(s) = self.stream.as_mut() {
                if s.write_all(frame).is_ok() {
                    return true;
                }
                self.stream = None;
            }
        }
        warn!("miner {} missed a block", self.info.miner_id);
        false
    }
}

enum Outbound {
    Direct(Vec<PeerLink>),
    Delayed(Vec<Sender<Arc<Vec<u8>>>>),
}

impl Outbound {
    fn new(peers: &[MinerInfo], extra_delay_ms: u64, seed: u64) -> Self {
        let links = peers.iter().map(|p| PeerLink { info: p.clone(), stream: None });
        if extra_delay_ms == 0 {
            return Outbound::Direct(links.collect());
        }
        let senders = links
            .enumerate()
            .map(|(i, mut link)| {
                let (tx, rx) = mpsc::channel::<Arc<Vec<u8>>>();
                let mut rng = crate::seeded_rng(seed.wrapping_add(i as u64 + 1));
                thread::spawn(move || {
                    // one thread per peer keeps per-peer order intact
                    for frame in rx {
                        thread::sleep(Duration::from_millis(rng.gen_range(0..=extra_delay_ms)));
                        link.send(&frame);
                    }
                });
                tx
            })
            .collect();
        Outbound::Delayed(senders)
    }

    fn broadcast(&mut self, frame: Vec<u8>) {
        match self {
            Outbound::Direct(links) => {
                for link in links {
                    link.send(&frame);
                }
            }
            Outbound::Delayed(senders) => {
                let frame = Arc::new(frame);
                for tx in senders.iter() {
                    let _ = tx.send(frame.clone());
                }
            }
        }
    }
}

fn connect_with_retry(addr: &str, timeout: Duration) -> Result<TcpStream, MinerError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(MinerError::Connect(format!("{addr}: {e}")));
            }
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

fn expect_message(stream: &mut TcpStream) -> Result<WireMessage, MinerError> {
    match read_message(stream)? {
        Some((msg, _)) => Ok(msg),
        None => Err(MinerError::Protocol("admin closed the connection".into())),
    }
}

fn spawn_listener(listener: TcpListener, tx: Sender<Event>, clock: SimulationClock, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("peer connection from {peer}");
                    let (tx, clock, stop) = (tx.clone(), clock.clone(), stop.clone());
                    thread::spawn(move || read_peer(stream, tx, clock, stop));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
    });
    Ok(())
}

fn read_peer(mut stream: TcpStream, tx: Sender<Event>, clock: SimulationClock, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(Duration::from_millis(100))).is_err() {
        return;
    }
    let mut reader = FrameReader::new();
    let mut buf = [0u8; 16 * 1024];
    while !stop.load(Ordering::Relaxed) {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => match ingest_peer_bytes(&mut reader, &buf[..n], clock.now()) {
                Ok(arrivals) => {
                    for a in arrivals {
                        if tx.send(Event::Peer(a)).is_err() {
                            return;
                        }
                    }
                }
                Err(e) => {
                    warn!("closing peer connection: {e}");
                    return;
                }
            },
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => {}
            Err(_) => return,
        }
    }
}

fn spawn_admin_reader(mut stream: TcpStream, tx: Sender<Event>) {
    thread::spawn(move || loop {
        match read_message(&mut stream) {
            Ok(Some((msg, _))) => {
                if tx.send(Event::Admin(msg)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(Event::AdminGone("admin closed the connection".into()));
                return;
            }
            Err(e) => {
                let _ = tx.send(Event::AdminGone(e.to_string()));
                return;
            }
        }
    });
}

/// Stops the listener and readers when the miner returns.
struct StopOnDrop(Arc<AtomicBool>);

impl Drop for StopOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Relaxed);
    }
}

/// Full miner lifecycle: register, mine until SIM_END, take part in
/// consensus, adopt the result.
pub fn run_miner(opts: MinerOptions) -> Result<MinerExit, MinerError> {
    let hashpower = match opts.hashpower {
        HashpowerChoice::Fixed(h) if h > 0.0 && h.is_finite() => h,
        HashpowerChoice::Fixed(h) => return Err(SchedError::InvalidHashpower { own: h, total: h }.into()),
        HashpowerChoice::Random => sched::sample_hashpower(&mut crate::seeded_rng(opts.seed)),
    };
    let listener = TcpListener::bind(("0.0.0.0", opts.listen_port))?;
    let port = listener.local_addr()?.port();

    let mut admin = connect_with_retry(&opts.admin, opts.connect_timeout)?;
    admin.set_nodelay(true)?;
    let ip = admin.local_addr()?.ip().to_string();
    write_message(&mut admin, &WireMessage::Register { hashpower, ip, port })?;

    let roster = match expect_message(&mut admin)? {
        WireMessage::MinerInfo { self_id, miners, total_hashpower } => {
            PeerRoster::from_miner_info(self_id, miners, total_hashpower)?
        }
        WireMessage::Discard { reason } => return Err(MinerError::Rejected(reason)),
        other => return Err(MinerError::Protocol(format!("expected MINER_INFO, got {}", other.kind()))),
    };
    let id = roster.self_id;
    info!("registered as miner {id} (hashpower {hashpower:.3}, port {port}, {} peers)", roster.peers.len());

    let (duration, interval, clock, subseed) = match expect_message(&mut admin)? {
        WireMessage::SimStart { duration, interval, time_scale, seed } => {
            (duration, interval, SimulationClock::scaled(time_scale)?, seed)
        }
        other => return Err(MinerError::Protocol(format!("expected SIM_START, got {}", other.kind()))),
    };
    let genesis = match expect_message(&mut admin)? {
        WireMessage::Genesis { block } => block,
        other => return Err(MinerError::Protocol(format!("expected GENESIS, got {}", other.kind()))),
    };
    let pool = match expect_message(&mut admin)? {
        WireMessage::TxPool { transactions } => transactions,
        other => return Err(MinerError::Protocol(format!("expected TX_POOL, got {}", other.kind()))),
    };

    let profile = HashpowerProfile::new(hashpower, roster.total_hashpower)?;
    let mut core = MinerCore::new(id, profile, interval, genesis, &pool, subseed)?;
    core.start(clock.now())?;

    let stop = Arc::new(AtomicBool::new(false));
    let _guard = StopOnDrop(stop.clone());
    let (tx, rx) = mpsc::channel();
    spawn_listener(listener, tx.clone(), clock.clone(), stop.clone())?;
    spawn_admin_reader(admin.try_clone()?, tx);
    let mut outbound = Outbound::new(&roster.peers, opts.extra_delay_ms, subseed);

    mine_until_end(&mut core, &rx, &clock, duration, &mut outbound)?;
    drop(outbound);

    let remaining = core.finish()?;
    if remaining > 0 {
        warn!("miner {id}: {remaining} placeholder(s) left on the main chain");
    }
    write_message(&mut admin, &WireMessage::LastBlock { miner_id: id, block: core.tip().clone() })?;

    let mut served_chain = false;
    let deadline = Instant::now() + opts.result_timeout;
    let outcome = loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Event::Admin(WireMessage::ChainRequest {})) => {
                let blocks = core.state().main_chain().to_vec();
                write_message(&mut admin, &WireMessage::Chain { miner_id: id, blocks })?;
                served_chain = true;
            }
            Ok(Event::Admin(WireMessage::ConsensusResult { winner_id, chain })) => {
                core.adopt(chain)?;
                break ExitOutcome::Accepted { winner_id };
            }
            Ok(Event::Admin(WireMessage::Discard { reason })) => break ExitOutcome::Discarded { reason },
            Ok(Event::Admin(other)) => warn!("unexpected {} after SIM_END", other.kind()),
            Ok(Event::Peer(a)) => core.absorb(a.block)?,
            Ok(Event::AdminGone(why)) => return Err(MinerError::Protocol(why)),
            Err(RecvTimeoutError::Timeout) => return Err(MinerError::Protocol("no consensus result".into())),
            Err(RecvTimeoutError::Disconnected) => return Err(MinerError::Protocol("event channel closed".into())),
        }
    };

    Ok(MinerExit {
        miner_id: id,
        hashpower,
        port,
        stats: core.stats().clone(),
        outcome,
        served_chain,
        final_chain: core.state().main_chain().iter().map(|b| b.id).collect(),
    })
}

fn mine_until_end(
    core: &mut MinerCore,
    rx: &Receiver<Event>,
    clock: &SimulationClock,
    duration: f64,
    outbound: &mut Outbound,
) -> Result<(), MinerError> {
    let idle = Duration::from_millis(20);
    let mut events = VecDeque::new();
    loop {
        let now = clock.now();
        let wait = match core.next_due() {
            Some(t) if now < duration => clock.wall_until(t.min(duration)).min(idle),
            _ => idle,
        };
        match rx.recv_timeout(wait) {
            Ok(ev) => {
                events.push_back(ev);
                events.extend(rx.try_iter());
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                return Err(MinerError::Protocol("event channel closed".into()));
            }
        }

        let mut sim_end = false;
        while let Some(ev) = events.pop_front() {
            match ev {
                Event::Peer(a) if sim_end => core.absorb(a.block)?,
                Event::Peer(a) => core.enqueue(a),
                Event::Admin(WireMessage::SimEnd {}) => sim_end = true,
                Event::Admin(other) => {
                    return Err(MinerError::Protocol(format!("unexpected {} during mining", other.kind())));
                }
                Event::AdminGone(why) => return Err(MinerError::Protocol(why)),
            }
        }

        let now = clock.now();
        if now < duration && !sim_end {
            if let Some(block) = core.mining_step(now)? {
                debug!("miner {} broadcasts depth {} at {:.2}", core.id(), block.depth, now);
                let frame = encode(&WireMessage::Block { sender_id: core.id(), block })?;
                outbound.broadcast(frame);
            }
        } else {
            core.process_received(f64::INFINITY)?;
        }
        if sim_end {
            for ev in rx.try_iter() {
                if let Event::Peer(a) = ev {
                    core.absorb(a.block)?;
                }
            }
            return Ok(());
        }
    }
}
