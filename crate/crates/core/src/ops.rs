//! Operation counters used to audit multiplication-freedom of spike paths.

use std::sync::atomic::{AtomicU64, Ordering};

/// Tallies floating-point work by operand kind. Shared across threads.
#[derive(Debug, Default)]
pub struct OpCounter {
    accumulates: AtomicU64,
    multiplies: AtomicU64,
    spike_multiplies: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpTally {
    /// Additions of a weight into an accumulator, triggered by a spike.
    pub accumulates: u64,
    /// Real-by-real multiplies.
    pub multiplies: u64,
    /// Multiplies where one operand is a spike value. Must stay zero.
    pub spike_multiplies: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_accumulates(&self, n: u64) {
        self.accumulates.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_multiplies(&self, n: u64) {
        self.multiplies.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_spike_multiplies(&self, n: u64) {
        self.spike_multiplies.fetch_add(n, Ordering::Relaxed);
    }

    pub fn tally(&self) -> OpTally {
        OpTally {
            accumulates: self.accumulates.load(Ordering::Relaxed),
            multiplies: self.multiplies.load(Ordering::Relaxed),
            spike_multiplies: self.spike_multiplies.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.accumulates.store(0, Ordering::Relaxed);
        self.multiplies.store(0, Ordering::Relaxed);
        self.spike_multiplies.store(0, Ordering::Relaxed);
    }
}
