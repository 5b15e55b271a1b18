//! Batch runs, scaling and collapse suites, and drift verification.

pub mod batch;
pub mod drift;
pub mod init;
pub mod stats;
pub mod suites;

pub use batch::{run_batch, BatchConfig, BatchResult, TrajectoryRow, TrialRecord};
pub use init::{lower_bound_k_star, make_init, InitSpec, DEFAULT_LOWER_BOUND_C};

/// Mixes `master` with `tag` (splitmix64 finaliser) into an independent seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
