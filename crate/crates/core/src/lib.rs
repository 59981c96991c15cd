//! Coverage-guided fuzzing of cycle-accurate software models of hardware.
//!
//! The crate bundles everything needed to reproduce hardware-fuzzing
//! experiments at desk scale:
//!
//! * [`dut`]: the digital-lock family and the model/snapshot/assertion plumbing
//! * [`coverage`]: AFL-style edge maps, scope filtering and FSM coverage
//! * [`grammar`]: the wait/read/write bus instruction grammar
//! * [`bus`]: a single-beat TL-UL style host with timer and lock peripherals
//! * [`harness`]: the port-mapping and bus-centric test harnesses
//! * [`fuzzer`]: the mutational greybox fuzzer and the constrained-random baseline
//! * [`stats`]: Mann-Whitney U and run-time summaries
//! * [`experiments`]: campaign orchestration and CSV reporting

pub mod bus;
pub mod coverage;
pub mod dut;
pub mod error;
pub mod experiments;
pub mod fuzzer;
pub mod grammar;
pub mod harness;
pub mod stats;

pub use error::{ConfigError, Error, Result};

/// Number of cycles reset is held asserted at the start of a test.
pub const RESET_CYCLES: u64 = 2;

/// Derives an independent 64-bit seed for `stream` from `base` (splitmix64).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
