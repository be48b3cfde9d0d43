//! Seed derivation for schedule-independent parallel work.
//!
//! Every unit of work (replicate, bootstrap column, experiment run) gets its
//! own generator seeded from the master seed plus a stream tag and index, so
//! results never depend on execution order.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Replicate = 1,
    Bootstrap = 2,
    Significance = 3,
    Run = 4,
    Synthetic = 5,
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(mix(master) ^ stream as u64) ^ index)
}
