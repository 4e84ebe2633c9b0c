//! Blocks, local chains and the fork-choice rules every miner applies.
//!
//! Everything in here is pure: no clocks, no sockets. A [`LocalChainState`]
//! is owned by exactly one activity, which feeds it created and received
//! blocks and reads back an [`UpdateAction`] describing what happened.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Miner id used by the admin server (creator of genesis).
pub const ADMIN_ID: u32 = 0;

/// Creator recorded on placeholder blocks whose origin is not known.
pub const UNKNOWN_MINER: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("block id {0} already stored with different contents")]
    DuplicateIdConflict(BlockId),
    #[error("no consensus participants")]
    NoParticipants,
    #[error("chain holds {0} unresolved placeholder block(s)")]
    InvalidForStats(usize),
}

fn structural(msg: impl Into<String>) -> ChainError {
    ChainError::Structural(msg.into())
}

/// 16-byte opaque block identifier, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockId(pub [u8; 16]);

impl BlockId {
    /// Stands in for an identifier nobody knows yet (placeholder slots
    /// below a gap in the parent links).
    pub const UNKNOWN: BlockId = BlockId([0; 16]);

    /// Deterministic id from the block's coordinates. Not a hash of the
    /// contents; proof of work is simulated by timing alone.
    pub fn derive(seed: u64, miner_id: u32, depth: u64, blocktime: f64, counter: u64) -> BlockId {
        let mut h = splitmix64(seed);
        for word in [miner_id as u64, depth, blocktime.to_bits(), counter] {
            h = splitmix64(h ^ word);
        }
        let lo = splitmix64(h ^ 0x5851_f42d_4c95_7f2d);
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&h.to_be_bytes());
        bytes[8..].copy_from_slice(&lo.to_be_bytes());
        if bytes == [0; 16] {
            bytes[15] = 1;
        }
        BlockId(bytes)
    }

    pub fn is_unknown(&self) -> bool {
        *self == Self::UNKNOWN
    }

    /// Abbreviated form for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({})", self.short())
    }
}

impl FromStr for BlockId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 16];
        hex::decode_to_slice(s, &mut bytes)?;
        Ok(BlockId(bytes))
    }
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Transaction identifier, rendered as 16 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct TxId(pub u64);

impl Serialize for TxId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0))
    }
}

impl<'de> Deserialize<'de> for TxId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("tx id must be 16 lowercase hex digits"));
        }
        u64::from_str_radix(&s, 16)
            .map(TxId)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub size_bytes: u32,
    pub fee: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent_id: Option<BlockId>,
    pub depth: u64,
    pub miner_id: u32,
    /// Simulation seconds at which the block becomes valid.
    pub blocktime: f64,
    pub tx_ids: Vec<TxId>,
    pub is_empty: bool,
}

impl Block {
    /// Temporary stand-in for an ancestor that is not in the local store.
    pub fn placeholder(id: BlockId, depth: u64) -> Block {
        Block {
            id,
            parent_id: Some(BlockId::UNKNOWN),
            depth,
            miner_id: UNKNOWN_MINER,
            blocktime: 0.0,
            tx_ids: Vec::new(),
            is_empty: true,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.depth == 0
    }

    /// Checks the per-block invariants. Placeholders are exempt from the
    /// positive-blocktime rule since their creation time is unknown.
    pub fn check(&self) -> Result<(), ChainError> {
        if (self.depth == 0) != self.parent_id.is_none() {
            return Err(structural(format!(
                "block {} at depth {} has parent {:?}",
                self.id, self.depth, self.parent_id
            )));
        }
        if self.is_empty {
            if !self.tx_ids.is_empty() || self.miner_id != UNKNOWN_MINER {
                return Err(structural(format!("placeholder {} carries content", self.id)));
            }
        } else if self.depth > 0 && !(self.blocktime > 0.0 && self.blocktime.is_finite()) {
            return Err(structural(format!(
                "block {} has non-positive blocktime {}",
                self.id, self.blocktime
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    AppendedOwn,
    AppendedReceived,
    Uncled,
    SwitchedChain,
    DroppedStale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateAction {
    pub kind: ActionKind,
    /// Only set for [`ActionKind::AppendedOwn`].
    pub broadcast: bool,
    pub new_tip_id: BlockId,
}

impl UpdateAction {
    fn quiet(kind: ActionKind, tip: BlockId) -> Self {
        UpdateAction { kind, broadcast: false, new_tip_id: tip }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    pub miner_id: u32,
    pub last_block: Block,
}

/// A block taken off the wire, stamped with its local arrival time.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrival {
    pub block: Block,
    pub sender_id: u32,
    pub arrived_at: f64,
}

/// Own scheduled blocks, kept sorted by blocktime (ties by id).
#[derive(Clone, Debug, Default)]
pub struct CreateQueue {
    blocks: Vec<Block>,
}

impl CreateQueue {
    pub fn push(&mut self, block: Block) {
        let key = (block.blocktime, block.id);
        let at = self
            .blocks
            .partition_point(|b| (b.blocktime, b.id) <= key);
        self.blocks.insert(at, block);
    }

    pub fn peek(&self) -> Option<&Block> {
        self.blocks.first()
    }

    pub fn pop_front(&mut self) -> Option<Block> {
        if self.blocks.is_empty() {
            None
        } else {
            Some(self.blocks.remove(0))
        }
    }

    pub fn remove(&mut self, id: &BlockId) -> Option<Block> {
        let at = self.blocks.iter().position(|b| b.id == *id)?;
        Some(self.blocks.remove(at))
    }

    /// Drops every scheduled block at depth `<= depth`; returns how many.
    pub fn discard_up_to_depth(&mut self, depth: u64) -> usize {
        let before = self.blocks.len();
        self.blocks.retain(|b| b.depth > depth);
        before - self.blocks.len()
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }
}

/// Id → block map of everything a miner has ever created or received.
pub type BlockStore = HashMap<BlockId, Block>;

/// One miner's view of the world.
#[derive(Clone, Debug)]
pub struct LocalChainState {
    main_chain: Vec<Block>,
    uncles: BTreeMap<BlockId, Block>,
    store: BlockStore,
    pub create_queue: CreateQueue,
    pub receive_queue: VecDeque<Arrival>,
}

impl LocalChainState {
    pub fn new(genesis: Block) -> Result<Self, ChainError> {
        if !genesis.is_genesis() || genesis.is_empty {
            return Err(structural("chain must start from a genesis block"));
        }
        genesis.check()?;
        let mut store = BlockStore::new();
        store.insert(genesis.id, genesis.clone());
        Ok(LocalChainState {
            main_chain: vec![genesis],
            uncles: BTreeMap::new(),
            store,
            create_queue: CreateQueue::default(),
            receive_queue: VecDeque::new(),
        })
    }

    pub fn main_chain(&self) -> &[Block] {
        &self.main_chain
    }

    pub fn tip(&self) -> &Block {
        self.main_chain.last().expect("main chain always holds genesis")
    }

    pub fn genesis(&self) -> &Block {
        &self.main_chain[0]
    }

    pub fn uncles(&self) -> &BTreeMap<BlockId, Block> {
        &self.uncles
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn placeholder_count(&self) -> usize {
        self.main_chain.iter().filter(|b| b.is_empty).count()
    }

    /// Handles an own block whose blocktime has been reached.
    pub fn apply_created_block(&mut self, block: Block) -> Result<UpdateAction, ChainError> {
        if block.is_empty || block.depth == 0 {
            return Err(structural(format!("created block {} is not minable", block.id)));
        }
        block.check()?;
        self.create_queue.remove(&block.id);

        let tip = self.tip();
        if tip.depth < block.depth {
            if block.parent_id != Some(tip.id) || block.depth != tip.depth + 1 {
                return Err(structural(format!(
                    "created block {} (depth {}) does not extend tip {} (depth {})",
                    block.id, block.depth, tip.id, tip.depth
                )));
            }
            self.insert_stored(block.clone())?;
            let id = block.id;
            self.main_chain.push(block);
            Ok(UpdateAction { kind: ActionKind::AppendedOwn, broadcast: true, new_tip_id: id })
        } else {
            self.insert_stored(block)?;
            Ok(UpdateAction::quiet(ActionKind::DroppedStale, self.tip().id))
        }
    }

    /// Handles a block delivered by a peer.
    pub fn apply_received_block(
        &mut self,
        block: Block,
        sender_id: u32,
    ) -> Result<UpdateAction, ChainError> {
        if block.is_empty {
            return Err(structural(format!(
                "peer {sender_id} sent placeholder block {}",
                block.id
            )));
        }
        if let Some(existing) = self.store.get(&block.id) {
            if *existing == block {
                return Ok(UpdateAction::quiet(ActionKind::Uncled, self.tip().id));
            }
            return Err(ChainError::DuplicateIdConflict(block.id));
        }
        block.check()?;
        if block.depth == 0 {
            return Err(structural(format!("peer {sender_id} sent a second genesis")));
        }

        let tip_id = self.tip().id;
        let tip_depth = self.tip().depth;
        self.store.insert(block.id, block.clone());

        if block.depth <= tip_depth {
            // A late ancestor filling a placeholder stays out of the uncle
            // set; it is swapped in by fill_empty_blocks.
            let fills_slot = self
                .main_chain
                .get(block.depth as usize)
                .is_some_and(|b| b.is_empty && b.id == block.id);
            if !fills_slot {
                self.uncles.insert(block.id, block);
            }
            return Ok(UpdateAction::quiet(ActionKind::Uncled, tip_id));
        }

        if block.parent_id == Some(tip_id) {
            if block.depth != tip_depth + 1 {
                self.store.remove(&block.id);
                return Err(structural(format!(
                    "block {} claims depth {} on parent at depth {}",
                    block.id, block.depth, tip_depth
                )));
            }
            self.create_queue.discard_up_to_depth(block.depth);
            let id = block.id;
            self.main_chain.push(block);
            return Ok(UpdateAction::quiet(ActionKind::AppendedReceived, id));
        }

        let new_chain = match reconstruct_chain(&self.store, &block) {
            Ok(chain) => chain,
            Err(e) => {
                self.store.remove(&block.id);
                return Err(e);
            }
        };
        if new_chain[0].id != self.genesis().id {
            self.store.remove(&block.id);
            return Err(structural(format!("block {} descends from a foreign genesis", block.id)));
        }
        let on_new: HashSet<BlockId> = new_chain.iter().map(|b| b.id).collect();
        let old = std::mem::replace(&mut self.main_chain, new_chain);
        self.retire(old, &on_new);
        Ok(UpdateAction::quiet(ActionKind::SwitchedChain, block.id))
    }

    /// Stores a block without running any fork-choice rule. Used once the
    /// run is over for blocks still arriving.
    pub fn absorb(&mut self, block: Block) -> Result<(), ChainError> {
        if block.is_empty {
            return Ok(());
        }
        match self.store.get(&block.id) {
            Some(existing) if *existing == block => Ok(()),
            Some(_) => Err(ChainError::DuplicateIdConflict(block.id)),
            None => {
                block.check()?;
                self.store.insert(block.id, block);
                Ok(())
            }
        }
    }

    /// Swaps placeholders on the main chain for stored blocks. Returns the
    /// number still unresolved.
    pub fn fill_main_chain(&mut self) -> Result<usize, ChainError> {
        let chain = std::mem::take(&mut self.main_chain);
        match fill_empty_blocks(chain.clone(), &self.store) {
            Ok((filled, remaining)) => {
                for b in filled.iter().filter(|b| !b.is_empty) {
                    self.uncles.remove(&b.id);
                }
                self.main_chain = filled;
                Ok(remaining)
            }
            Err(e) => {
                self.main_chain = chain;
                Err(e)
            }
        }
    }

    /// Replaces the main chain wholesale with a consensus result.
    pub fn adopt_chain(&mut self, chain: Vec<Block>) -> Result<(), ChainError> {
        validate_chain(&chain, self.genesis())?;
        for b in chain.iter().filter(|b| !b.is_empty) {
            self.absorb(b.clone())?;
        }
        let on_new: HashSet<BlockId> = chain.iter().map(|b| b.id).collect();
        let old = std::mem::replace(&mut self.main_chain, chain);
        self.retire(old, &on_new);
        Ok(())
    }

    /// Moves blocks of a replaced main chain that are off the new one into
    /// the uncle set. A placeholder slot contributes its stored block if
    /// that arrived in the meantime.
    fn retire(&mut self, old: Vec<Block>, on_new: &HashSet<BlockId>) {
        for displaced in old {
            if on_new.contains(&displaced.id) {
                continue;
            }
            if !displaced.is_empty {
                self.uncles.insert(displaced.id, displaced);
            } else if let Some(stored) = self.store.get(&displaced.id) {
                self.uncles.insert(stored.id, stored.clone());
            }
        }
        for id in on_new {
            self.uncles.remove(id);
        }
    }

    fn insert_stored(&mut self, block: Block) -> Result<(), ChainError> {
        match self.store.get(&block.id) {
            Some(existing) if *existing != block => Err(ChainError::DuplicateIdConflict(block.id)),
            _ => {
                self.store.insert(block.id, block);
                Ok(())
            }
        }
    }
}

/// Traces parent links from `tip` back to genesis through `store`.
///
/// A missing ancestor becomes a placeholder carrying the missing id; slots
/// below it cannot be identified and hold placeholders with
/// [`BlockId::UNKNOWN`] until [`fill_empty_blocks`] resolves them.
pub fn reconstruct_chain(store: &BlockStore, tip: &Block) -> Result<Vec<Block>, ChainError> {
    if tip.is_empty {
        return Err(structural("cannot trace from a placeholder"));
    }
    tip.check()?;
    let len = tip.depth as usize + 1;
    let mut rev = Vec::with_capacity(len);
    let mut seen = HashSet::with_capacity(len);
    seen.insert(tip.id);
    rev.push(tip.clone());

    let mut expected = tip.parent_id;
    for depth in (0..tip.depth).rev() {
        let found = expected.and_then(|id| store.get(&id)).filter(|b| !b.is_empty);
        match (expected, found) {
            (Some(_), Some(b)) => {
                if b.depth != depth {
                    return Err(structural(format!(
                        "block {} sits at depth {} but traced to depth {depth}",
                        b.id, b.depth
                    )));
                }
                if !seen.insert(b.id) {
                    return Err(structural(format!("cycle through block {}", b.id)));
                }
                expected = b.parent_id;
                rev.push(b.clone());
            }
            (Some(id), None) if depth > 0 => {
                rev.push(Block::placeholder(id, depth));
                expected = None;
            }
            (Some(id), None) => {
                return Err(structural(format!("genesis {id} not in store")));
            }
            (None, _) if depth > 0 => rev.push(Block::placeholder(BlockId::UNKNOWN, depth)),
            (None, _) => {
                let mut roots = store.values().filter(|b| b.depth == 0 && !b.is_empty);
                match (roots.next(), roots.next()) {
                    (Some(g), None) => rev.push(g.clone()),
                    _ => return Err(structural("store must hold exactly one genesis")),
                }
            }
        }
    }
    if expected.is_some() {
        return Err(structural(format!(
            "trace from {} ran past genesis (tip depth {})",
            tip.id, tip.depth
        )));
    }
    rev.reverse();
    Ok(rev)
}

/// Replaces placeholders with stored blocks.
///
/// Walking down from the tip, each resolved block reveals the id of the
/// slot beneath it. A slot whose id is still unknown takes the only stored
/// block at its depth that fits the slot below, if there is exactly one.
/// Both passes repeat until nothing changes.
pub fn fill_empty_blocks(
    mut chain: Vec<Block>,
    store: &BlockStore,
) -> Result<(Vec<Block>, usize), ChainError> {
    for (i, b) in chain.iter().enumerate() {
        if b.depth != i as u64 {
            return Err(structural(format!("slot {i} holds block at depth {}", b.depth)));
        }
    }
    let mut by_depth: HashMap<u64, Vec<&Block>> = HashMap::new();
    if chain.iter().any(|b| b.is_empty && b.id.is_unknown()) {
        for b in store.values().filter(|b| !b.is_empty) {
            by_depth.entry(b.depth).or_default().push(b);
        }
    }

    loop {
        let mut changed = false;
        for i in (0..chain.len()).rev() {
            if !chain[i].is_empty {
                continue;
            }
            let from_child = chain
                .get(i + 1)
                .filter(|c| !c.is_empty)
                .and_then(|c| c.parent_id);
            let own = Some(chain[i].id).filter(|id| !id.is_unknown());
            if let (Some(a), Some(b)) = (from_child, own) {
                if a != b {
                    return Err(structural(format!("placeholder {b} disagrees with child link {a}")));
                }
            }
            let Some(id) = from_child.or(own) else { continue };
            match store.get(&id).filter(|b| !b.is_empty) {
                Some(found) => {
                    if found.depth != i as u64 {
                        return Err(structural(format!(
                            "replacement {} has depth {}, slot is {i}",
                            found.id, found.depth
                        )));
                    }
                    chain[i] = found.clone();
                    changed = true;
                }
                None if chain[i].id != id => {
                    chain[i].id = id;
                    changed = true;
                }
                None => {}
            }
        }
        for i in 1..chain.len() {
            if !(chain[i].is_empty && chain[i].id.is_unknown()) {
                continue;
            }
            let below = chain[i - 1].id;
            let mut fits = by_depth
                .get(&(i as u64))
                .into_iter()
                .flatten()
                .filter(|b| below.is_unknown() || b.parent_id == Some(below));
            if let (Some(only), None) = (fits.next(), fits.next()) {
                chain[i] = (*only).clone();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    for i in 1..chain.len() {
        let (below, b) = (&chain[i - 1], &chain[i]);
        if !below.is_empty && !b.is_empty && b.parent_id != Some(below.id) {
            return Err(structural(format!("block {} does not link to {} below it", b.id, below.id)));
        }
    }
    let remaining = chain.iter().filter(|b| b.is_empty).count();
    Ok((chain, remaining))
}

/// Structural validation of a full chain received from another party.
pub fn validate_chain(chain: &[Block], genesis: &Block) -> Result<(), ChainError> {
    let first = chain.first().ok_or_else(|| structural("empty chain"))?;
    if first.id != genesis.id || first.is_empty {
        return Err(structural("chain does not start at the shared genesis"));
    }
    for (i, b) in chain.iter().enumerate() {
        if b.depth != i as u64 {
            return Err(structural(format!("block {} at index {i} has depth {}", b.id, b.depth)));
        }
        b.check()?;
        if i > 0 {
            let prev = &chain[i - 1];
            if !b.is_empty && !prev.is_empty && b.parent_id != Some(prev.id) {
                return Err(structural(format!("block {} does not link to {}", b.id, prev.id)));
            }
        }
    }
    let last = chain.last().expect("non-empty");
    if last.is_empty {
        return Err(structural("chain tip is a placeholder"));
    }
    Ok(())
}

/// Deepest tip wins; ties go to the earliest blocktime, then the lowest id.
pub fn select_consensus_winner(entries: &[ConsensusEntry]) -> Result<u32, ChainError> {
    entries
        .iter()
        .min_by(|a, b| {
            Reverse(a.last_block.depth)
                .cmp(&Reverse(b.last_block.depth))
                .then(a.last_block.blocktime.total_cmp(&b.last_block.blocktime))
                .then(a.miner_id.cmp(&b.miner_id))
        })
        .map(|e| e.miner_id)
        .ok_or(ChainError::NoParticipants)
}

/// Fraction of non-genesis blocks each miner contributed to `chain`.
///
/// Every miner in `hashpowers` appears in the result, zero if it mined
/// nothing.
pub fn longest_chain_stats(
    chain: &[Block],
    hashpowers: &BTreeMap<u32, f64>,
) -> Result<BTreeMap<u32, f64>, ChainError> {
    let holes = chain.iter().filter(|b| b.is_empty).count();
    if holes > 0 {
        return Err(ChainError::InvalidForStats(holes));
    }
    let mut counts: BTreeMap<u32, usize> = hashpowers.keys().map(|&m| (m, 0)).collect();
    for b in chain.iter().skip(1) {
        *counts.entry(b.miner_id).or_default() += 1;
    }
    let total = chain.len().saturating_sub(1);
    Ok(counts
        .into_iter()
        .map(|(m, n)| (m, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
        .collect())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn genesis() -> Block {
        Block {
            id: BlockId::derive(7, ADMIN_ID, 0, 0.0, 0),
            parent_id: None,
            depth: 0,
            miner_id: ADMIN_ID,
            blocktime: 0.0,
            tx_ids: vec![],
            is_empty: false,
        }
    }

    pub fn child(parent: &Block, miner_id: u32, blocktime: f64) -> Block {
        Block {
            id: BlockId::derive(7, miner_id, parent.depth + 1, blocktime, 0),
            parent_id: Some(parent.id),
            depth: parent.depth + 1,
            miner_id,
            blocktime,
            tx_ids: vec![TxId(parent.depth)],
            is_empty: false,
        }
    }

    /// Linear chain of `n` blocks on top of genesis, all by `miner`.
    pub fn linear(n: usize, miner: u32) -> Vec<Block> {
        let mut chain = vec![genesis()];
        for i in 0..n {
            let b = child(chain.last().unwrap(), miner, (i + 1) as f64 * 10.0);
            chain.push(b);
        }
        chain
    }

    pub fn store_of(blocks: &[Block]) -> BlockStore {
        blocks.iter().map(|b| (b.id, b.clone())).collect()
    }

    pub fn state_on(chain: &[Block]) -> LocalChainState {
        let mut s = LocalChainState::new(chain[0].clone()).unwrap();
        for b in &chain[1..] {
            s.apply_received_block(b.clone(), 9).unwrap();
        }
        s
    }
}
