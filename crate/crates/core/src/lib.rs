//! Networked proof-of-work blockchain simulator.
//!
//! An admin server registers miner processes, hands them a shared genesis
//! block and transaction pool, and after a timed run settles on one chain
//! by collecting only each miner's tip. Miners exchange blocks directly
//! over TCP and apply longest-chain rules to a local block store.
//!
//! The same miner state machine also runs inside [`logical`], an
//! in-process discrete-event network with a logical clock, used for
//! reproducible experiments and large Monte Carlo batches.

pub mod admin;
pub mod chain;
pub mod harness;
pub mod logical;
pub mod miner;
pub mod sched;
pub mod wire;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use chain::{Block, BlockId, LocalChainState};
pub use wire::WireMessage;

/// Every random stream in the simulator comes from here.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
