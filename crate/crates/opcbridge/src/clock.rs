//! Time source abstraction. Production code runs on the wall clock; every
//! timing-sensitive test runs on the simulated clock driven by the
//! [`crate::sim`] scheduler.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the UNIX epoch (simulated clocks: since t=0).
    fn now_ms(&self) -> u64;

    /// Blocks until `now_ms() >= deadline_ms`.
    fn sleep_until(&self, deadline_ms: u64);
}

/// Wall clock.
#[derive(Debug, Default)]
pub struct RealClock;

impl Clock for RealClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep_until(&self, deadline_ms: u64) {
        loop {
            let now = self.now_ms();
            if now >= deadline_ms {
                return;
            }
            std::thread::sleep(Duration::from_millis(deadline_ms - now));
        }
    }
}

/// Simulated clock: time moves only when advanced, instantly.
///
/// Under the event scheduler the scheduler is the only writer. A
/// single-threaded test may also drive it directly through `sleep_until`.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new(start_ms: u64) -> SimClock {
        SimClock { now: AtomicU64::new(start_ms) }
    }

    /// Moves time forward; never backwards.
    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, deadline_ms: u64) {
        self.advance_to(deadline_ms);
    }
}
