//! Simulation clock.
//!
//! A [`Clock`] is a cheap, clonable handle. Clones of a manual clock share the
//! same counter, so every node in a scenario observes one timeline.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds on the scenario clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn saturating_add(self, ms: u64) -> Self {
        Timestamp(self.0.saturating_add(ms))
    }

    /// Milliseconds elapsed from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Clone, Debug)]
enum Mode {
    Manual(Arc<AtomicU64>),
    System,
}

#[derive(Clone, Debug)]
pub struct Clock {
    mode: Mode,
}

impl Clock {
    /// A clock that only moves when [`Clock::advance`] is called.
    pub fn manual(start: Timestamp) -> Self {
        Clock {
            mode: Mode::Manual(Arc::new(AtomicU64::new(start.0))),
        }
    }

    /// Wall-clock time since the Unix epoch.
    pub fn system() -> Self {
        Clock { mode: Mode::System }
    }

    pub fn is_manual(&self) -> bool {
        matches!(self.mode, Mode::Manual(_))
    }

    pub fn now(&self) -> Timestamp {
        match &self.mode {
            Mode::Manual(current) => Timestamp(current.load(Ordering::SeqCst)),
            Mode::System => {
                let ms = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis() as u64)
                    .unwrap_or(0);
                Timestamp(ms)
            }
        }
    }

    /// Moves a manual clock forward. A no-op on the system clock.
    pub fn advance(&self, ms: u64) -> Timestamp {
        match &self.mode {
            Mode::Manual(current) => {
                let prev = current.fetch_add(ms, Ordering::SeqCst);
                Timestamp(prev.saturating_add(ms))
            }
            Mode::System => self.now(),
        }
    }
}
