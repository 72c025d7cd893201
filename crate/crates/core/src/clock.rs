// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Seconds-resolution clock. Virtual clocks are shared handles, so advancing
/// one advances every component built from it.
#[derive(Debug, Clone)]
pub enum Clock {
    Virtual(Arc<AtomicU64>),
    Wall,
}

impl Clock {
    pub fn virtual_at(secs: u64) -> Self {
        Clock::Virtual(Arc::new(AtomicU64::new(secs)))
    }

    pub fn now(&self) -> u64 {
        match self {
            Clock::Virtual(t) => t.load(Ordering::SeqCst),
            Clock::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    /// Moves a virtual clock forward. No effect on the wall clock.
    pub fn advance(&self, secs: u64) {
        if let Clock::Virtual(t) = self {
            t.fetch_add(secs, Ordering::SeqCst);
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_shared() {
        let a = Clock::virtual_at(100);
        let b = a.clone();
        a.advance(5);
        assert_eq!(b.now(), 105);
        Clock::Wall.advance(5);
        assert!(Clock::Wall.now() > 1_600_000_000);
    }
}
