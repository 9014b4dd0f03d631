//! Logical time shared by the store, the simulator and the manager loop.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// One step of the logical clock.
pub type Tick = u64;

/// A shared, monotonically advancing logical clock.
///
/// Cloning yields another handle onto the same counter.
#[derive(Debug, Clone, Default)]
pub struct Clock(Arc<AtomicU64>);

impl Clock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(tick: Tick) -> Self {
        Self(Arc::new(AtomicU64::new(tick)))
    }

    pub fn now(&self) -> Tick {
        self.0.load(Ordering::SeqCst)
    }

    /// Advance by one tick and return the new time.
    pub fn advance(&self) -> Tick {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn set(&self, tick: Tick) {
        self.0.store(tick, Ordering::SeqCst);
    }
}
