//! Floating point operation tallies for the compression and apply paths.
//!
//! Counts are analytic (standard leading-order operation counts for each
//! kernel) rather than hardware measurements.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct FlopTally(AtomicU64);

impl FlopTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    /// `(m × k) · (k × n)`.
    pub fn gemm(&self, m: usize, n: usize, k: usize) {
        self.add(2 * (m * n * k) as u64);
    }

    /// Householder QR of an `m × n` matrix.
    pub fn qr(&self, m: usize, n: usize) {
        let (big, small) = (m.max(n) as u64, m.min(n) as u64);
        self.add(2 * big * small * small);
    }

    /// Dense SVD of an `m × n` matrix.
    pub fn svd(&self, m: usize, n: usize) {
        let (big, small) = (m.max(n) as u64, m.min(n) as u64);
        self.add(4 * big * small * small + 8 * small * small * small);
    }
}
