//! In-process network with a logical clock.
//!
//! Runs the same [`MinerCore`] state machines and admin consensus as the
//! TCP deployment, but every frame travels through an event queue instead
//! of a socket. Each message is still encoded and decoded with the wire
//! codec, so frame accounting matches a networked run. Given a seed the
//! run is bit-for-bit reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admin::{
    create_genesis, create_tx_pool, decide_consensus, emit_report, miner_subseed, AdminAccounting, AdminError,
    AdminOutcome, ConsensusOutcome, RegistrationLedger, SimulationConfig,
};
use crate::chain::{splitmix64, Arrival, ChainError, ConsensusEntry};
use crate::miner::{ExitOutcome, MinerCore, MinerError, MinerExit};
use crate::sched::{HashpowerProfile, SimulationClock};
use crate::wire::{decode, encode, FrameTally, WireError, WireMessage};

/// One-way peer latency in simulation seconds, uniform in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub min: f64,
    pub max: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { min: 0.01, max: 0.2 }
    }
}

impl LatencyModel {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogicalError {
    #[error("hashpower list has {got} entries for {want} miners")]
    HashpowerCount { got: usize, want: usize },
    #[error("invalid latency model {0:?}")]
    Latency(LatencyModel),
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Result of one logical run: what the admin saw plus every miner's exit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalRun {
    pub admin: AdminOutcome,
    /// Indexed by slot (registration order), so `miners[i].miner_id == i + 1`.
    pub miners: Vec<MinerExit>,
}

/// Sends `msg` through the codec, recording it on both tallies.
fn transmit(msg: &WireMessage, out: Option<&mut FrameTally>, inbound: Option<&mut FrameTally>) -> Result<WireMessage, WireError> {
    let frame = encode(msg)?;
    let (decoded, used) = decode(&frame)?;
    debug_assert_eq!(used, frame.len());
    if let Some(t) = out {
        t.record(&decoded, used);
    }
    if let Some(t) = inbound {
        t.record(&decoded, used);
    }
    Ok(decoded)
}

/// Key for the delivery queue; bit order of non-negative floats matches
/// numeric order.
type DeliveryKey = (u64, u64);

struct Delivery {
    to: usize,
    frame: Vec<u8>,
}

pub fn run_logical(
    config: &SimulationConfig,
    hashpowers: &[f64],
    latency: LatencyModel,
) -> Result<LogicalRun, LogicalError> {
    config.validate()?;
    if hashpowers.len() != config.num_miners {
        return Err(LogicalError::HashpowerCount { got: hashpowers.len(), want: config.num_miners });
    }
    if !(latency.min >= 0.0 && latency.max >= latency.min && latency.max.is_finite()) {
        return Err(LogicalError::Latency(latency));
    }
    let n = config.num_miners;
    let mut acct = AdminAccounting::default();
    let clock = SimulationClock::logical();

    // registration, in slot order
    let mut ledger = RegistrationLedger::default();
    for (slot, &h) in hashpowers.iter().enumerate() {
        let port = 20_000 + slot as u16;
        let msg = WireMessage::Register { hashpower: h, ip: "127.0.0.1".into(), port };
        if let WireMessage::Register { hashpower, ip, port } = transmit(&msg, None, Some(&mut acct.inbound))? {
            ledger.register(hashpower, &ip, port)?;
        }
    }

    let genesis = create_genesis(config.seed);
    let mut pool_rng = crate::seeded_rng(splitmix64(config.seed));
    let pool = create_tx_pool(config, &mut pool_rng);
    let mut miners = Vec::with_capacity(n);
    for entry in &ledger.entries {
        let id = entry.miner_id;
        let info = WireMessage::MinerInfo {
            self_id: id,
            miners: ledger.entries.clone(),
            total_hashpower: ledger.total_hashpower,
        };
        transmit(&info, Some(&mut acct.outbound), None)?;
        let start = WireMessage::SimStart {
            duration: config.duration,
            interval: config.interval,
            time_scale: config.time_scale,
            seed: miner_subseed(config.seed, id),
        };
        let WireMessage::SimStart { interval, seed, .. } = transmit(&start, Some(&mut acct.outbound), None)? else {
            unreachable!()
        };
        transmit(&WireMessage::Genesis { block: genesis.clone() }, Some(&mut acct.outbound), None)?;
        transmit(&WireMessage::TxPool { transactions: pool.clone() }, Some(&mut acct.outbound), None)?;
        let profile = HashpowerProfile::new(entry.hashpower, ledger.total_hashpower).map_err(MinerError::from)?;
        let mut core = MinerCore::new(id, profile, interval, genesis.clone(), &pool, seed)?;
        core.start(0.0)?;
        miners.push(core);
    }

    // mining phase
    let mut net_rng = crate::seeded_rng(splitmix64(config.seed ^ 0x6c6f_6769_6361_6c00));
    let mut deliveries: BTreeMap<DeliveryKey, Delivery> = BTreeMap::new();
    let mut link_clear = vec![vec![0.0f64; n]; n];
    let mut seq = 0u64;
    loop {
        let next_create = miners.iter().filter_map(|m| m.next_due()).fold(f64::INFINITY, f64::min);
        let next_delivery = deliveries.keys().next().map_or(f64::INFINITY, |k| f64::from_bits(k.0));
        let t = next_create.min(next_delivery);
        if t >= config.duration {
            break;
        }
        clock.advance_to(t);

        while let Some(entry) = deliveries.first_entry() {
            if f64::from_bits(entry.key().0) > t {
                break;
            }
            let at = f64::from_bits(entry.key().0);
            let d = entry.remove();
            if let (WireMessage::Block { sender_id, block }, _) = decode(&d.frame)? {
                miners[d.to].enqueue(Arrival { block, sender_id, arrived_at: at });
            }
        }

        let now = clock.now();
        for from in 0..n {
            let Some(block) = miners[from].mining_step(now)? else { continue };
            let frame = encode(&WireMessage::Block { sender_id: miners[from].id(), block })?;
            for to in (0..n).filter(|&to| to != from) {
                // per-link FIFO, as over a TCP stream
                let at = (now + latency.sample(&mut net_rng)).max(link_clear[from][to]);
                link_clear[from][to] = at;
                deliveries.insert((at.to_bits(), seq), Delivery { to, frame: frame.clone() });
                seq += 1;
            }
        }
    }

    // SIM_END: frames still in flight land in the stores, then each miner
    // fills its chain and reports its tip
    for (_, d) in std::mem::take(&mut deliveries) {
        if let (WireMessage::Block { block, .. }, _) = decode(&d.frame)? {
            miners[d.to].absorb(block)?;
        }
    }
    let mut entries = Vec::with_capacity(n);
    for m in miners.iter_mut() {
        transmit(&WireMessage::SimEnd {}, Some(&mut acct.outbound), None)?;
        m.finish()?;
        let msg = WireMessage::LastBlock { miner_id: m.id(), block: m.tip().clone() };
        if let WireMessage::LastBlock { miner_id, block } = transmit(&msg, None, Some(&mut acct.inbound))? {
            entries.push(ConsensusEntry { miner_id, last_block: block });
        }
    }

    let mut fetch_err = None;
    let consensus = decide_consensus(&entries, &genesis, |winner| {
        transmit(&WireMessage::ChainRequest {}, Some(&mut acct.outbound), None)?;
        let m = &miners[winner as usize - 1];
        let msg = WireMessage::Chain { miner_id: winner, blocks: m.state().main_chain().to_vec() };
        match transmit(&msg, None, Some(&mut acct.inbound)) {
            Ok(WireMessage::Chain { blocks, .. }) => Ok(blocks),
            Ok(_) => unreachable!(),
            Err(e) => {
                fetch_err = Some(e.to_string());
                Err(AdminError::ConsensusTimeout(winner))
            }
        }
    });
    if let Some(e) = fetch_err {
        log::warn!("chain fetch failed: {e}");
    }

    let result_msg = match &consensus {
        ConsensusOutcome::Accepted { winner_id, chain } => {
            WireMessage::ConsensusResult { winner_id: *winner_id, chain: chain.clone() }
        }
        ConsensusOutcome::Discarded { reason, .. } => WireMessage::Discard { reason: reason.clone() },
    };
    let mut exits = Vec::with_capacity(n);
    for m in miners.iter_mut() {
        let delivered = transmit(&result_msg, Some(&mut acct.outbound), None)?;
        let outcome = match delivered {
            WireMessage::ConsensusResult { winner_id, chain } => {
                m.adopt(chain)?;
                ExitOutcome::Accepted { winner_id }
            }
            WireMessage::Discard { reason } => ExitOutcome::Discarded { reason },
            _ => unreachable!(),
        };
        let id = m.id();
        exits.push(MinerExit {
            miner_id: id,
            hashpower: ledger.get(id).map_or(0.0, |e| e.hashpower),
            port: ledger.get(id).map_or(0, |e| e.port),
            stats: m.stats().clone(),
            served_chain: consensus.winner_id() == Some(id),
            outcome,
            final_chain: m.state().main_chain().iter().map(|b| b.id).collect(),
        });
    }

    let report = match &consensus {
        ConsensusOutcome::Accepted { chain, .. } => Some(emit_report(chain, &ledger)?),
        ConsensusOutcome::Discarded { .. } => None,
    };
    Ok(LogicalRun {
        admin: AdminOutcome {
            config: config.clone(),
            ledger,
            genesis_id: genesis.id,
            consensus,
            report,
            accounting: acct,
        },
        miners: exits,
    })
}
