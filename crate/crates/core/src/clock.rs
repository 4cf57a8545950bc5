//! Time sources. Transcripts carry timestamps, so replay runs use a logical
//! clock to stay byte-identical.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds since the Unix epoch.
pub type Millis = u64;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Deterministic clock: starts at `start` and advances by `step` on every read.
#[derive(Debug)]
pub struct LogicalClock {
    next: AtomicU64,
    step: u64,
}

impl LogicalClock {
    pub fn new(start: Millis, step: u64) -> Self {
        Self {
            next: AtomicU64::new(start),
            step,
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new(0, 1)
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> Millis {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}
