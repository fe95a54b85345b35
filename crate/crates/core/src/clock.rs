//! Time source abstraction. Replay runs use [`LogicalClock`] so persisted
//! artifacts carry no wall-clock data and stay byte-identical across runs.

use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> DateTime<Utc>;

    /// Timestamp to stamp on the `seq`-th event of a session.
    fn event_time(&self, seq: u64) -> DateTime<Utc>;

    /// Seconds elapsed since `start`, as recorded in artifacts.
    fn elapsed_secs(&self, start: Instant) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn event_time(&self, _seq: u64) -> DateTime<Utc> {
        Utc::now()
    }

    fn elapsed_secs(&self, start: Instant) -> f64 {
        start.elapsed().as_secs_f64()
    }
}

/// Fixed epoch; the n-th event is stamped epoch + n seconds and all
/// durations read as zero.
#[derive(Debug, Clone, Copy)]
pub struct LogicalClock {
    epoch: DateTime<Utc>,
}

impl LogicalClock {
    pub fn new() -> Self {
        LogicalClock {
            epoch: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> DateTime<Utc> {
        self.epoch
    }

    fn event_time(&self, seq: u64) -> DateTime<Utc> {
        self.epoch + chrono::Duration::seconds(seq as i64)
    }

    fn elapsed_secs(&self, _start: Instant) -> f64 {
        0.0
    }
}
