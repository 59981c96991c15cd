//! Coverage-guided greybox fuzzing and the constrained-random baseline.
//!
//! [`fuzz_campaign`] is the classic mutational loop: run the seeds, keep
//! every input that raises global coverage, then repeatedly pick a queue
//! entry, mutate it and execute the result until the budget runs out.
//! [`crv_campaign`] drives random code sequences into a lock with no
//! feedback at all.
//!
//! Both report run time in three units: executions, simulated clock cycles
//! (including reset cycles) and wall-clock time. Only the first two
//! are reproducible.

mod campaign;
mod crv;
pub mod mutate;
mod queue;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

pub use campaign::fuzz_campaign;
pub use crv::{crv_campaign, CrvConfig};
pub use mutate::{Mutator, Stage};
pub use queue::{Provenance, TestCase};

use crate::error::{ConfigError, Error, Result};

pub const DEFAULT_MAX_LEN: usize = 4096;
pub const DEFAULT_HAVOC_STACK_MAX: u32 = 16;
pub const DEFAULT_SAMPLE_EVERY: u64 = 256;

/// Extension used for persisted test files.
pub const TEST_FILE_EXT: &str = "hwf";

/// Campaign limits; the campaign stops at whichever is reached first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Budget {
    pub max_execs: Option<u64>,
    pub max_sim_cycles: Option<u64>,
    pub max_wall_ms: Option<u64>,
}

impl Budget {
    pub fn execs(n: u64) -> Self {
        Budget { max_execs: Some(n), ..Budget::default() }
    }

    pub fn sim_cycles(n: u64) -> Self {
        Budget { max_sim_cycles: Some(n), ..Budget::default() }
    }

    pub fn wall_ms(n: u64) -> Self {
        Budget { max_wall_ms: Some(n), ..Budget::default() }
    }

    pub fn is_bounded(&self) -> bool {
        self.max_execs.is_some() || self.max_sim_cycles.is_some() || self.max_wall_ms.is_some()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.is_bounded() {
            Ok(())
        } else {
            Err(ConfigError::Invalid("budget needs at least one of max_execs, max_sim_cycles, max_wall_ms".into()))
        }
    }

    pub(crate) fn exhausted(&self, execs: u64, sim_cycles: u64, started: Instant) -> bool {
        self.max_execs.is_some_and(|m| execs >= m)
            || self.max_sim_cycles.is_some_and(|m| sim_cycles >= m)
            || self.max_wall_ms.is_some_and(|m| started.elapsed() >= Duration::from_millis(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzerConfig {
    pub rng_seed: u64,
    pub max_len: usize,
    pub havoc_stack_max: u32,
    pub budget: Budget,
    pub stop_on_first_crash: bool,
    /// Trajectory sampling period in execs; 0 disables sampling.
    pub sample_every: u64,
}

impl FuzzerConfig {
    pub fn new(rng_seed: u64, budget: Budget) -> Self {
        FuzzerConfig {
            rng_seed,
            max_len: DEFAULT_MAX_LEN,
            havoc_stack_max: DEFAULT_HAVOC_STACK_MAX,
            budget,
            stop_on_first_crash: true,
            sample_every: DEFAULT_SAMPLE_EVERY,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.budget.validate()?;
        if self.max_len == 0 {
            return Err(ConfigError::OutOfRange { field: "max_len", value: 0, expected: ">= 1" });
        }
        if self.havoc_stack_max == 0 {
            return Err(ConfigError::OutOfRange { field: "havoc_stack_max", value: 0, expected: ">= 1" });
        }
        Ok(())
    }
}

/// One point of a coverage time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub execs: u64,
    pub sim_cycles: u64,
    pub wall_us: u64,
    pub edges_covered: usize,
    pub fsm_fraction: f64,
}

/// Point at which the number of visited FSM states first reached `states`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsmProgress {
    pub states: u32,
    pub execs: u64,
    pub sim_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashRecord {
    pub input: Vec<u8>,
    pub assertion: &'static str,
    /// Cycle within the test at which the assertion fired.
    pub cycle: u64,
    /// Campaign exec index (1-based) and cumulative cycles at the crash.
    pub exec: u64,
    pub sim_cycles: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub execs: u64,
    pub sim_cycles: u64,
    pub wall_us: u64,
    pub first_crash_wall_us: Option<u64>,
    /// Unique crashes in discovery order; the first entry is the first crash.
    pub crashes: Vec<CrashRecord>,
    pub queue: Vec<TestCase>,
    pub trajectory: Vec<TrajectorySample>,
    pub fsm_progress: Vec<FsmProgress>,
    pub fsm_states: Option<u32>,
    /// Sorted map indices covered by any execution.
    pub covered_edges: Vec<usize>,
}

impl CampaignResult {
    pub fn first_crash(&self) -> Option<&CrashRecord> {
        self.crashes.first()
    }

    pub fn execs_to_first_crash(&self) -> Option<u64> {
        self.first_crash().map(|c| c.exec)
    }

    pub fn sim_cycles_to_first_crash(&self) -> Option<u64> {
        self.first_crash().map(|c| c.sim_cycles)
    }

    pub fn edges_covered(&self) -> usize {
        self.covered_edges.len()
    }

    pub fn fsm_fraction(&self) -> Option<f64> {
        let total = self.fsm_states?;
        let seen = self.fsm_progress.last().map_or(0, |p| p.states);
        Some(f64::from(seen) / f64::from(total))
    }

    /// First point where at least `fraction` of the FSM states were visited.
    pub fn fsm_reached(&self, fraction: f64) -> Option<FsmProgress> {
        let total = f64::from(self.fsm_states?);
        self.fsm_progress.iter().find(|p| f64::from(p.states) >= fraction * total - 1e-9).copied()
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_wall_time(&self) -> CampaignResult {
        let mut r = self.clone();
        r.wall_us = 0;
        r.first_crash_wall_us = r.first_crash_wall_us.map(|_| 0);
        r.trajectory.iter_mut().for_each(|s| s.wall_us = 0);
        r
    }

    /// Writes `queue/id{N}.hwf` and `crashes/id{N}.hwf` under `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        let write_all = |sub: &str, items: &mut dyn Iterator<Item = &[u8]>| -> Result<()> {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for (i, bytes) in items.enumerate() {
                let p = d.join(format!("id{i:06}.{TEST_FILE_EXT}"));
                fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            }
            Ok(())
        };
        write_all("queue", &mut self.queue.iter().map(|c| c.bytes.as_slice()))?;
        write_all("crashes", &mut self.crashes.iter().map(|c| c.input.as_slice()))?;
        Ok(())
    }
}
