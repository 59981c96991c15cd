//! Cycle-accurate device models and the plumbing shared by all of them:
//! snapshots, assertion registries and the port-level model interface used
//! by the generic harness.

mod lock;

pub use lock::{DigitalLock, LockConfig, LockDut, MAX_CODE_WIDTH, MAX_STATE_BITS};

use crate::coverage::Tracer;
use crate::error::SnapshotError;

/// Opaque copy of a model's architectural state.
///
/// The snapshot remembers which configuration produced it and refuses to be
/// restored into a model built from a different one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DutSnapshot {
    config: String,
    words: Vec<u64>,
}

impl DutSnapshot {
    pub(crate) fn new(config: String, words: Vec<u64>) -> Self {
        DutSnapshot { config, words }
    }

    /// Configuration descriptor of the model that produced the snapshot.
    pub fn config(&self) -> &str {
        &self.config
    }

    pub(crate) fn words_for(&self, config: &str) -> Result<&[u64], SnapshotError> {
        if self.config != config {
            return Err(SnapshotError { expected: config.to_string(), found: self.config.clone() });
        }
        Ok(&self.words)
    }
}

struct Assertion<T> {
    name: &'static str,
    holds: fn(&T) -> bool,
    armed: bool,
    fired: bool,
}

impl<T> Clone for Assertion<T> {
    fn clone(&self) -> Self {
        Assertion { name: self.name, holds: self.holds, armed: self.armed, fired: self.fired }
    }
}

/// Named predicates over model state, checked after every rising edge.
///
/// An armed assertion that stops holding fires once; it stays quiet until
/// [`AssertionRegistry::rearm`] is called at the start of the next test.
pub struct AssertionRegistry<T> {
    entries: Vec<Assertion<T>>,
}

impl<T> Clone for AssertionRegistry<T> {
    fn clone(&self) -> Self {
        AssertionRegistry { entries: self.entries.clone() }
    }
}

impl<T> Default for AssertionRegistry<T> {
    fn default() -> Self {
        AssertionRegistry { entries: Vec::new() }
    }
}

impl<T> std::fmt::Debug for AssertionRegistry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|a| (a.name, a.armed))).finish()
    }
}

impl<T> AssertionRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an armed assertion; `holds` returns false on violation.
    pub fn register(&mut self, name: &'static str, holds: fn(&T) -> bool) {
        self.entries.push(Assertion { name, holds, armed: true, fired: false });
    }

    /// Arms or disarms by name. Returns false if no such assertion exists.
    pub fn set_armed(&mut self, name: &str, armed: bool) -> bool {
        match self.entries.iter_mut().find(|a| a.name == name) {
            Some(a) => {
                a.armed = armed;
                true
            }
            None => false,
        }
    }

    pub fn is_armed(&self, name: &str) -> bool {
        self.entries.iter().any(|a| a.name == name && a.armed)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|a| a.name)
    }

    /// Evaluates every armed assertion; returns the first one that fires.
    pub fn check(&mut self, state: &T) -> Option<&'static str> {
        let mut first = None;
        for a in self.entries.iter_mut().filter(|a| a.armed && !a.fired) {
            if !(a.holds)(state) {
                a.fired = true;
                first.get_or_insert(a.name);
            }
        }
        first
    }

    pub fn rearm(&mut self) {
        self.entries.iter_mut().for_each(|a| a.fired = false);
    }
}

/// An input port of a model as seen by the generic harness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub name: &'static str,
    pub width: u32,
}

impl Port {
    /// Bytes the generic harness reads for this port.
    pub fn byte_len(&self) -> usize {
        self.width.div_ceil(8) as usize
    }

    pub fn mask(&self) -> u64 {
        if self.width >= 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }
}

/// Current position of a model's main state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsmState {
    pub state: u32,
    pub num_states: u32,
}

/// A model with iterable input ports, driven one clock cycle at a time.
pub trait DutModel {
    fn name(&self) -> String;

    /// Inputs in declaration order.
    fn input_ports(&self) -> &[Port];

    /// Rebuilds the model from its configuration, as a freshly started
    /// simulation process would.
    fn power_on(&mut self);

    /// One cycle with the model's reset asserted.
    fn reset_cycle(&mut self, tracer: &mut Tracer);

    /// One cycle with the given port values, in `input_ports` order.
    fn cycle(&mut self, inputs: &[u64], tracer: &mut Tracer);

    /// Name of an assertion that fired on the last edge, if any.
    fn check_assertions(&mut self) -> Option<&'static str>;

    fn rearm_assertions(&mut self);

    fn snapshot(&self) -> DutSnapshot;

    fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError>;

    fn fsm_state(&self) -> Option<FsmState> {
        None
    }
}
