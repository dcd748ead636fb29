//! Time sources. Everything that ends up in an audit record or a report reads
//! time through [`Clock`] so scripted runs can be made byte-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch (or since an arbitrary origin for
    /// synthetic clocks).
    fn now_millis(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Deterministic clock: every read returns the current value and then advances
/// it by `step` milliseconds.
#[derive(Debug)]
pub struct TickClock {
    next: AtomicU64,
    step: u64,
}

impl TickClock {
    pub fn new(start: u64, step: u64) -> Self {
        Self {
            next: AtomicU64::new(start),
            step,
        }
    }
}

impl Clock for TickClock {
    fn now_millis(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}
