//! Simulation time and the block-birth event model.
//!
//! Proof of work is not computed. Each miner instead draws the moment its
//! next block becomes valid from an exponential distribution whose mean
//! scales with the miner's share of total hashpower.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::distributions::Open01;
use rand::Rng;
use thiserror::Error;

use crate::chain::{Block, CreateQueue};

/// Upper bound of the randomly sampled hashpower range.
pub const MAX_RANDOM_HASHPOWER: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("invalid hashpower: own {own}, total {total}")]
    InvalidHashpower { own: f64, total: f64 },
    #[error("invalid block interval {0}")]
    InvalidInterval(f64),
    #[error("invalid time scale {0}")]
    InvalidTimeScale(f64),
}

/// Simulation seconds since the run started.
///
/// `Scaled` follows the wall clock, multiplied by `time_scale`. `Logical`
/// only moves when the driver advances it.
#[derive(Clone, Debug)]
pub enum SimulationClock {
    Scaled { start: Instant, time_scale: f64 },
    Logical(Arc<AtomicU64>),
}

impl SimulationClock {
    pub fn scaled(time_scale: f64) -> Result<Self, SchedError> {
        if !(time_scale > 0.0 && time_scale.is_finite()) {
            return Err(SchedError::InvalidTimeScale(time_scale));
        }
        Ok(SimulationClock::Scaled { start: Instant::now(), time_scale })
    }

    pub fn logical() -> Self {
        SimulationClock::Logical(Arc::new(AtomicU64::new(0f64.to_bits())))
    }

    pub fn now(&self) -> f64 {
        match self {
            SimulationClock::Scaled { start, time_scale } => {
                start.elapsed().as_secs_f64() * time_scale
            }
            SimulationClock::Logical(t) => f64::from_bits(t.load(Ordering::Acquire)),
        }
    }

    /// Moves a logical clock forward to `t`. Never moves it backwards; a
    /// no-op on a scaled clock.
    pub fn advance_to(&self, t: f64) {
        if let SimulationClock::Logical(cell) = self {
            let _ = cell.fetch_update(Ordering::AcqRel, Ordering::Acquire, |cur| {
                (t > f64::from_bits(cur)).then_some(t.to_bits())
            });
        }
    }

    /// Wall time until simulation time `t`, zero if already past.
    pub fn wall_until(&self, t: f64) -> Duration {
        match self {
            SimulationClock::Scaled { time_scale, .. } => {
                let ahead = (t - self.now()).max(0.0) / time_scale;
                Duration::from_secs_f64(ahead.min(3600.0))
            }
            SimulationClock::Logical(_) => Duration::ZERO,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashpowerProfile {
    pub own: f64,
    pub total: f64,
}

impl HashpowerProfile {
    pub fn new(own: f64, total: f64) -> Result<Self, SchedError> {
        let p = HashpowerProfile { own, total };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), SchedError> {
        let ok = self.own > 0.0 && self.own.is_finite() && self.total >= self.own && self.total.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SchedError::InvalidHashpower { own: self.own, total: self.total })
        }
    }

    /// Mean seconds between this miner's blocks.
    pub fn mean_block_time(&self, interval: f64) -> f64 {
        interval * self.total / self.own
    }
}

/// Uniform draw from (0, 30].
pub fn sample_hashpower<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    MAX_RANDOM_HASHPOWER * (1.0 - rng.gen::<f64>())
}

/// Blocktime of the next block mined from `now`.
pub fn compute_block_time<R: Rng + ?Sized>(
    profile: &HashpowerProfile,
    interval: f64,
    now: f64,
    rng: &mut R,
) -> Result<f64, SchedError> {
    profile.validate()?;
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(SchedError::InvalidInterval(interval));
    }
    Ok(now + exponential(profile.mean_block_time(interval), rng))
}

/// Inverse-CDF exponential draw; strictly positive since u ∈ (0, 1).
fn exponential<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -mean * u.ln()
}

/// Removes and returns the head of `queue` if its blocktime is due.
pub fn pop_due_created(queue: &mut CreateQueue, now: f64) -> Option<Block> {
    match queue.peek() {
        Some(head) if head.blocktime <= now => queue.pop_front(),
        _ => None,
    }
}

pub fn simulation_expired(clock: &SimulationClock, duration: f64) -> bool {
    clock.now() >= duration
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{BlockId, TxId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_at(t: f64) -> Block {
        Block {
            id: BlockId::derive(1, 1, 1, t, 0),
            parent_id: Some(BlockId([1; 16])),
            depth: 1,
            miner_id: 1,
            blocktime: t,
            tx_ids: vec![TxId(1)],
            is_empty: false,
        }
    }

    #[test]
    fn hashpower_in_range_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let h = sample_hashpower(&mut rng);
            assert!(h > 0.0 && h <= 30.0);
        }
        let a = sample_hashpower(&mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_hashpower(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn hashpower_mean_is_fifteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_hashpower(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 15.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn block_time_positive_and_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HashpowerProfile::new(17.0, 100.0).unwrap();
        for _ in 0..10_000 {
            assert!(compute_block_time(&p, 12.42, 5.0, &mut rng).unwrap() > 5.0);
        }
        let zero = HashpowerProfile { own: 0.0, total: 10.0 };
        assert!(matches!(
            compute_block_time(&zero, 12.42, 0.0, &mut rng),
            Err(SchedError::InvalidHashpower { .. })
        ));
        assert!(HashpowerProfile::new(0.0, 1.0).is_err());
        assert!(HashpowerProfile::new(2.0, 1.0).is_err());
        assert!(compute_block_time(&p, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn pop_due_boundaries() {
        let mut q = CreateQueue::default();
        assert!(pop_due_created(&mut q, 100.0).is_none());
        q.push(block_at(10.0));
        assert!(pop_due_created(&mut q, 9.9).is_none());
        assert_eq!(pop_due_created(&mut q, 10.0).unwrap().blocktime, 10.0);
        assert!(q.is_empty());
    }

    #[test]
    fn create_queue_orders_by_blocktime() {
        let mut q = CreateQueue::default();
        for t in [5.0, 1.0, 3.0] {
            q.push(block_at(t));
        }
        assert_eq!(pop_due_created(&mut q, 10.0).unwrap().blocktime, 1.0);
        assert_eq!(pop_due_created(&mut q, 10.0).unwrap().blocktime, 3.0);
    }

    #[test]
    fn expiry() {
        let clock = SimulationClock::logical();
        clock.advance_to(999.9);
        assert!(!simulation_expired(&clock, 1000.0));
        clock.advance_to(1000.0);
        assert!(simulation_expired(&clock, 1000.0));
        clock.advance_to(1500.0);
        assert!(simulation_expired(&clock, 1000.0));
        clock.advance_to(10.0);
        assert_eq!(clock.now(), 1500.0);
    }

    #[test]
    fn scaled_clock_runs_fast() {
        let clock = SimulationClock::scaled(1000.0).unwrap();
        std::thread::sleep(Duration::from_millis(20));
        assert!(clock.now() >= 19.0);
        assert!(SimulationClock::scaled(0.0).is_err());
    }
}
