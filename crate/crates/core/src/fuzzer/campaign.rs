use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::queue::{depth_multiplier, Provenance, Queue, TestCase};
use super::{CampaignResult, CrashRecord, FsmProgress, FuzzerConfig, Mutator, TrajectorySample};
use crate::coverage::{FsmCoverage, GlobalCoverage, MAP_SIZE};
use crate::error::ConfigError;
use crate::harness::{Harness, Status};

/// Mutations per selected queue entry, before the depth multiplier.
const BASE_ENERGY: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Boring,
    Queued,
    Crash,
}

struct Campaign<'h, H: ?Sized> {
    harness: &'h mut H,
    config: FuzzerConfig,
    rng: ChaCha8Rng,
    mutator: Mutator,
    queue: Queue,
    global: GlobalCoverage,
    crash_global: GlobalCoverage,
    seen: Vec<bool>,
    seen_count: usize,
    fsm: Option<FsmCoverage>,
    fsm_progress: Vec<FsmProgress>,
    execs: u64,
    sim_cycles: u64,
    started: Instant,
    trajectory: Vec<TrajectorySample>,
    crashes: Vec<CrashRecord>,
    first_crash_wall_us: Option<u64>,
}

impl<H: Harness + ?Sized> Campaign<'_, H> {
    fn exhausted(&self) -> bool {
        self.config.budget.exhausted(self.execs, self.sim_cycles, self.started)
    }

    fn wall_us(&self) -> u64 {
        self.started.elapsed().as_micros() as u64
    }

    fn fsm_fraction(&self) -> f64 {
        self.fsm.as_ref().map_or(0.0, FsmCoverage::fraction)
    }

    fn sample(&mut self) {
        self.trajectory.push(TrajectorySample {
            execs: self.execs,
            sim_cycles: self.sim_cycles,
            wall_us: self.wall_us(),
            edges_covered: self.seen_count,
            fsm_fraction: self.fsm_fraction(),
        });
    }

    fn run_one(&mut self, input: Vec<u8>, provenance: Provenance, depth: u32) -> Verdict {
        let e = self.harness.execute(&input);
        self.execs += 1;
        self.sim_cycles += e.executed_cycles + e.reset_cycles;

        if let Some(visited) = self.harness.fsm_visited() {
            let fsm = self.fsm.get_or_insert_with(|| FsmCoverage::new(visited.num_states()));
            if fsm.merge(visited) > 0 {
                self.fsm_progress.push(FsmProgress {
                    states: fsm.visited_count(),
                    execs: self.execs,
                    sim_cycles: self.sim_cycles,
                });
            }
        }

        let map = self.harness.coverage();
        for (i, _) in map.iter_nonzero() {
            if !self.seen[i] {
                self.seen[i] = true;
                self.seen_count += 1;
            }
        }

        let verdict = match e.status {
            Status::Crash { assertion, cycle } => {
                let first = self.crashes.is_empty();
                if self.crash_global.merge(map) > 0 || first {
                    if first {
                        self.first_crash_wall_us = Some(self.wall_us());
                    }
                    self.crashes.push(CrashRecord {
                        input,
                        assertion,
                        cycle,
                        exec: self.execs,
                        sim_cycles: self.sim_cycles,
                    });
                }
                Verdict::Crash
            }
            Status::Ok => {
                if self.global.merge(map) > 0 || matches!(provenance, Provenance::Seed(_)) {
                    let edges = map.covered_indices();
                    let case = TestCase { bytes: input, provenance, found_at: self.execs };
                    self.queue.push(case, edges, depth);
                    Verdict::Queued
                } else {
                    Verdict::Boring
                }
            }
        };
        if self.config.sample_every > 0 && self.execs.is_multiple_of(self.config.sample_every) {
            self.sample();
        }
        verdict
    }

    fn stop_after(&self, verdict: Verdict) -> bool {
        verdict == Verdict::Crash && self.config.stop_on_first_crash
    }

    fn run(&mut self, seeds: &[Vec<u8>]) {
        for (i, seed) in seeds.iter().enumerate() {
            if self.exhausted() {
                return;
            }
            let mut bytes = seed.clone();
            bytes.truncate(self.config.max_len);
            if self.run_one(bytes, Provenance::Seed(i), 0) == Verdict::Crash && self.config.stop_on_first_crash {
                return;
            }
        }
        if self.queue.len() == 0 {
            // every seed crashed; keep mutating them anyway
            for (i, seed) in seeds.iter().enumerate() {
                let mut bytes = seed.clone();
                bytes.truncate(self.config.max_len);
                self.queue.push(TestCase { bytes, provenance: Provenance::Seed(i), found_at: 0 }, Vec::new(), 0);
            }
        }

        loop {
            if self.exhausted() {
                return;
            }
            let idx = self.queue.next(&mut self.rng);
            let entry = &self.queue.entries[idx];
            let parent = entry.case.bytes.clone();
            let depth = entry.depth;
            let energy = BASE_ENERGY * depth_multiplier(depth);
            for _ in 0..energy {
                if self.exhausted() {
                    return;
                }
                let n = self.queue.len();
                let partner = if n > 1 {
                    let mut j = self.rng.gen_range(0..n - 1);
                    if j >= idx {
                        j += 1;
                    }
                    Some(self.queue.entries[j].case.bytes.clone())
                } else {
                    None
                };
                let (child, stage) = self.mutator.mutate(&parent, partner.as_deref(), &mut self.rng);
                let verdict = self.run_one(child, Provenance::Mutation { parent: idx, stage: stage.label() }, depth + 1);
                if self.stop_after(verdict) {
                    return;
                }
            }
            self.queue.mark_fuzzed(idx);
        }
    }

    fn finish(mut self) -> CampaignResult {
        if self.trajectory.last().is_none_or(|s| s.execs != self.execs) {
            self.sample();
        }
        let covered_edges = (0..MAP_SIZE).filter(|&i| self.seen[i]).collect();
        CampaignResult {
            execs: self.execs,
            sim_cycles: self.sim_cycles,
            wall_us: self.wall_us(),
            first_crash_wall_us: self.first_crash_wall_us,
            crashes: self.crashes,
            queue: self.queue.entries.into_iter().map(|e| e.case).collect(),
            trajectory: self.trajectory,
            fsm_progress: self.fsm_progress,
            fsm_states: self.fsm.as_ref().map(FsmCoverage::num_states),
            covered_edges,
        }
    }
}

/// Runs a fuzzing campaign against `harness`, starting from `seeds`.
///
/// Every seed is executed and queued. Mutants are queued only when they
/// raise the class of some edge in the global map; crashing inputs are
/// never queued and are recorded only if they reach new crash coverage.
/// Given the same harness, seeds and config the exec-indexed results are
/// identical from run to run (a wall-clock budget aside).
pub fn fuzz_campaign<H: Harness + ?Sized>(
    harness: &mut H,
    seeds: &[Vec<u8>],
    config: &FuzzerConfig,
) -> Result<CampaignResult, ConfigError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("at least one seed is required (an empty input is a valid seed)".into()));
    }
    let mut c = Campaign {
        harness,
        config: *config,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        mutator: Mutator::new(config.max_len, config.havoc_stack_max),
        queue: Queue::default(),
        global: GlobalCoverage::new(),
        crash_global: GlobalCoverage::new(),
        seen: vec![false; MAP_SIZE],
        seen_count: 0,
        fsm: None,
        fsm_progress: Vec::new(),
        execs: 0,
        sim_cycles: 0,
        started: Instant::now(),
        trajectory: Vec::new(),
        crashes: Vec::new(),
        first_crash_wall_us: None,
    };
    c.run(seeds);
    Ok(c.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::ScopeFilter;
    use crate::dut::{LockConfig, LockDut};
    use crate::fuzzer::Budget;
    use crate::harness::{ForkPoint, GenericHarness};

    fn lock_harness(n: u32, m: u32) -> GenericHarness<LockDut> {
        let cfg = LockConfig::new(n, m, 0x5EED).unwrap();
        GenericHarness::new(LockDut::new(cfg), ForkPoint::AfterReset, ScopeFilter::DutOnly)
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let mut h = lock_harness(1, 1);
        let err = fuzz_campaign(&mut h, &[], &FuzzerConfig::new(0, Budget::execs(10))).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn unbounded_budget_is_rejected() {
        let mut h = lock_harness(1, 1);
        assert!(fuzz_campaign(&mut h, &[vec![]], &FuzzerConfig::new(0, Budget::default())).is_err());
    }

    #[test]
    fn tiny_lock_falls_quickly() {
        let mut h = lock_harness(1, 1);
        let r = fuzz_campaign(&mut h, &[vec![]], &FuzzerConfig::new(7, Budget::execs(1000))).unwrap();
        let crash = r.first_crash().expect("crash within budget");
        assert!(crash.exec < 100, "{}", crash.exec);
        assert_eq!(crash.assertion, "unlocked");
        assert_eq!(r.fsm_fraction(), Some(1.0));
    }

    #[test]
    fn seeds_always_queued_and_counted() {
        let mut h = lock_harness(3, 8);
        let cfg = FuzzerConfig::new(1, Budget::execs(3));
        let r = fuzz_campaign(&mut h, &[vec![], vec![], vec![1, 2, 3]], &cfg).unwrap();
        assert_eq!(r.execs, 3);
        assert_eq!(r.queue.len(), 3);
        assert!(r.crashes.is_empty());
        assert_eq!(r.execs_to_first_crash(), None);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = FuzzerConfig { stop_on_first_crash: false, ..FuzzerConfig::new(42, Budget::execs(3000)) };
        let a = fuzz_campaign(&mut lock_harness(3, 4), &[vec![]], &cfg).unwrap();
        let b = fuzz_campaign(&mut lock_harness(3, 4), &[vec![]], &cfg).unwrap();
        assert_eq!(a.without_wall_time(), b.without_wall_time());
        let c = fuzz_campaign(&mut lock_harness(3, 4), &[vec![]], &FuzzerConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a.without_wall_time(), c.without_wall_time());
    }

    #[test]
    fn trajectory_is_monotone() {
        let cfg = FuzzerConfig { stop_on_first_crash: false, sample_every: 50, ..FuzzerConfig::new(3, Budget::execs(2000)) };
        let r = fuzz_campaign(&mut lock_harness(3, 4), &[vec![]], &cfg).unwrap();
        assert_eq!(r.trajectory.len(), 40);
        for w in r.trajectory.windows(2) {
            assert!(w[0].edges_covered <= w[1].edges_covered);
            assert!(w[0].fsm_fraction <= w[1].fsm_fraction);
            assert!(w[0].sim_cycles <= w[1].sim_cycles);
        }
    }
}
