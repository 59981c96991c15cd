//! The configurable digital lock.
//!
//! A lock with `N` state bits and `M`-bit codes advances one state each
//! cycle its `code` input equals the hard-coded code for the current state,
//! holds on a wrong code, and clears on reset. It is unlocked once the state
//! register is all ones, i.e. after `2^N - 1` consecutive correct codes.
//!
//! The comparator is modelled as one branch pair per state, which is what a
//! per-state decoder compiles to; each state therefore contributes its own
//! "match" and "mismatch" coverage sites.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AssertionRegistry, DutModel, DutSnapshot, FsmState, Port};
use crate::coverage::{Component, EdgeSink, Site, Tracer};
use crate::error::{ConfigError, SnapshotError};

pub const MAX_STATE_BITS: u32 = 16;
pub const MAX_CODE_WIDTH: u32 = 32;

const SITE_RESET: Site = Site::dut(0x0101);
const SITE_UNLOCKED_HOLD: Site = Site::dut(0x0102);
const SITE_MATCH_BASE: u16 = 0x0110;
const SITE_MISMATCH_BASE: u16 = 0x0111;

/// Shape and secret of a lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LockConfig {
    state_bits: u32,
    code_width: u32,
    rng_seed: u64,
}

impl LockConfig {
    pub fn new(state_bits: u32, code_width: u32, rng_seed: u64) -> Result<Self, ConfigError> {
        if !(1..=MAX_STATE_BITS).contains(&state_bits) {
            return Err(ConfigError::OutOfRange {
                field: "state_bits",
                value: state_bits.into(),
                expected: "1..=16",
            });
        }
        if !(1..=MAX_CODE_WIDTH).contains(&code_width) {
            return Err(ConfigError::OutOfRange {
                field: "code_width",
                value: code_width.into(),
                expected: "1..=32",
            });
        }
        Ok(LockConfig { state_bits, code_width, rng_seed })
    }

    pub fn state_bits(&self) -> u32 {
        self.state_bits
    }

    pub fn code_width(&self) -> u32 {
        self.code_width
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn num_states(&self) -> u32 {
        1 << self.state_bits
    }

    /// Length of the code sequence that opens the lock.
    pub fn sequence_len(&self) -> u32 {
        self.num_states() - 1
    }

    pub fn code_mask(&self) -> u32 {
        if self.code_width == 32 {
            u32::MAX
        } else {
            (1 << self.code_width) - 1
        }
    }

    fn descriptor(&self) -> String {
        format!("lock(N={},M={},seed={:#x})", self.state_bits, self.code_width, self.rng_seed)
    }
}

#[derive(Debug, Clone)]
pub struct DigitalLock {
    config: LockConfig,
    state: u32,
    cycle: u64,
    correct_codes: Vec<u32>,
    descriptor: String,
}

impl DigitalLock {
    pub fn new(config: LockConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mask = config.code_mask();
        let correct_codes = (0..config.num_states()).map(|_| rng.next_u32() & mask).collect();
        DigitalLock { config, state: 0, cycle: 0, correct_codes, descriptor: config.descriptor() }
    }

    pub fn config(&self) -> &LockConfig {
        &self.config
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn unlocked(&self) -> bool {
        self.state == self.config.num_states() - 1
    }

    /// Full code table, `2^N` entries; the last one is never compared.
    pub fn correct_codes(&self) -> &[u32] {
        &self.correct_codes
    }

    /// The `2^N - 1` codes that open the lock, in order.
    pub fn unlock_sequence(&self) -> &[u32] {
        &self.correct_codes[..self.config.sequence_len() as usize]
    }

    /// One full clock cycle. Inputs wider than the port are truncated.
    /// Returns the `unlocked` output after the edge.
    #[inline]
    pub fn eval<S: EdgeSink + ?Sized>(&mut self, reset_n: bool, code: u32, sink: &mut S) -> bool {
        let code = code & self.config.code_mask();
        if !reset_n {
            sink.hit(SITE_RESET);
            self.state = 0;
        } else if self.unlocked() {
            sink.hit(SITE_UNLOCKED_HOLD);
        } else if code == self.correct_codes[self.state as usize] {
            sink.hit(Site::indexed(Component::Dut, SITE_MATCH_BASE, self.state));
            self.state += 1;
        } else {
            sink.hit(Site::indexed(Component::Dut, SITE_MISMATCH_BASE, self.state));
        }
        self.cycle += 1;
        self.unlocked()
    }

    /// Snapshot descriptor of this configuration.
    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn snapshot(&self) -> DutSnapshot {
        DutSnapshot::new(self.descriptor.clone(), self.snapshot_words().to_vec())
    }

    pub fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError> {
        let words = snapshot.words_for(&self.descriptor)?;
        self.restore_words(words);
        Ok(())
    }

    pub(crate) fn snapshot_words(&self) -> [u64; 2] {
        [self.state.into(), self.cycle]
    }

    pub(crate) fn restore_words(&mut self, words: &[u64]) {
        self.state = words[0] as u32;
        self.cycle = words[1];
    }
}

/// The lock wired for the generic harness: a single `code` port (optionally
/// preceded by `reset_n`) and an assertion that fires once it is unlocked.
#[derive(Debug, Clone)]
pub struct LockDut {
    lock: DigitalLock,
    ports: Vec<Port>,
    expose_reset: bool,
    assertions: AssertionRegistry<DigitalLock>,
}

impl LockDut {
    pub const UNLOCK_ASSERTION: &'static str = "unlocked";

    pub fn new(config: LockConfig) -> Self {
        let mut assertions = AssertionRegistry::new();
        assertions.register(Self::UNLOCK_ASSERTION, |l: &DigitalLock| !l.unlocked());
        LockDut {
            lock: DigitalLock::new(config),
            ports: vec![Port { name: "code", width: config.code_width() }],
            expose_reset: false,
            assertions,
        }
    }

    /// Lets the fuzzer drive `reset_n` as a one-byte port ahead of `code`.
    pub fn with_reset_port(mut self) -> Self {
        self.expose_reset = true;
        self.ports.insert(0, Port { name: "reset_n", width: 1 });
        self
    }

    pub fn with_unlock_assertion(mut self, armed: bool) -> Self {
        self.assertions.set_armed(Self::UNLOCK_ASSERTION, armed);
        self
    }

    pub fn lock(&self) -> &DigitalLock {
        &self.lock
    }
}

impl DutModel for LockDut {
    fn name(&self) -> String {
        self.lock.descriptor.clone()
    }

    fn input_ports(&self) -> &[Port] {
        &self.ports
    }

    fn power_on(&mut self) {
        self.lock = DigitalLock::new(self.lock.config);
    }

    fn reset_cycle(&mut self, tracer: &mut Tracer) {
        self.lock.eval(false, 0, tracer);
    }

    fn cycle(&mut self, inputs: &[u64], tracer: &mut Tracer) {
        let (reset_n, code) = if self.expose_reset {
            (inputs[0] & 1 == 1, inputs[1])
        } else {
            (true, inputs[0])
        };
        self.lock.eval(reset_n, code as u32, tracer);
    }

    fn check_assertions(&mut self) -> Option<&'static str> {
        self.assertions.check(&self.lock)
    }

    fn rearm_assertions(&mut self) {
        self.assertions.rearm();
    }

    fn snapshot(&self) -> DutSnapshot {
        self.lock.snapshot()
    }

    fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError> {
        self.lock.restore(snapshot)
    }

    fn fsm_state(&self) -> Option<FsmState> {
        Some(FsmState { state: self.lock.state, num_states: self.lock.config.num_states() })
    }
}
