use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Budget, CampaignResult, CrashRecord, FsmProgress, TrajectorySample, DEFAULT_SAMPLE_EVERY};
use crate::dut::{DigitalLock, LockConfig, LockDut};
use crate::error::ConfigError;
use crate::RESET_CYCLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrvConfig {
    pub rng_seed: u64,
    pub budget: Budget,
    /// Trajectory sampling period in attempts; 0 disables sampling.
    pub sample_every: u64,
}

impl CrvConfig {
    pub fn new(rng_seed: u64, budget: Budget) -> Self {
        CrvConfig { rng_seed, budget, sample_every: DEFAULT_SAMPLE_EVERY }
    }
}

/// Constrained-random verification of a lock: each attempt resets the lock
/// for [`RESET_CYCLES`] cycles, then drives `2^N - 1` uniformly random codes,
/// stopping as soon as the lock opens. Attempts count as execs.
///
/// The winning attempt is reported as the single crash; its input is the
/// code sequence in the generic harness's byte layout, so it replays there.
pub fn crv_campaign(lock: &LockConfig, config: &CrvConfig) -> Result<CampaignResult, ConfigError> {
    config.budget.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut dut = DigitalLock::new(*lock);
    let seq_len = lock.sequence_len() as usize;
    let mask = lock.code_mask();
    let code_bytes = lock.code_width().div_ceil(8) as usize;
    let mut codes = vec![0u32; seq_len];

    let mut execs = 0u64;
    let mut sim_cycles = 0u64;
    let mut best_state = 0u32;
    let mut fsm_progress = vec![FsmProgress { states: 1, execs: 0, sim_cycles: 0 }];
    let mut trajectory = Vec::new();
    let mut crashes = Vec::new();
    let mut first_crash_wall_us = None;
    let fsm_fraction = |best: u32| f64::from(best + 1) / f64::from(lock.num_states());
    let sample = |execs, sim_cycles, best, traj: &mut Vec<TrajectorySample>| {
        traj.push(TrajectorySample {
            execs,
            sim_cycles,
            wall_us: started.elapsed().as_micros() as u64,
            edges_covered: 0,
            fsm_fraction: fsm_fraction(best),
        })
    };

    while !config.budget.exhausted(execs, sim_cycles, started) {
        execs += 1;
        for _ in 0..RESET_CYCLES {
            dut.eval(false, 0, &mut ());
        }
        sim_cycles += RESET_CYCLES;
        let mut opened_at = None;
        for (i, slot) in codes.iter_mut().enumerate() {
            // uniform over [0, 2^M) since the mask is all ones
            let code = rng.gen::<u32>() & mask;
            *slot = code;
            sim_cycles += 1;
            if dut.eval(true, code, &mut ()) {
                opened_at = Some(i + 1);
                break;
            }
        }
        if dut.state() > best_state {
            best_state = dut.state();
            fsm_progress.push(FsmProgress { states: best_state + 1, execs, sim_cycles });
        }
        if config.sample_every > 0 && execs.is_multiple_of(config.sample_every) {
            sample(execs, sim_cycles, best_state, &mut trajectory);
        }
        if let Some(cycle) = opened_at {
            first_crash_wall_us = Some(started.elapsed().as_micros() as u64);
            let input = codes[..cycle].iter().flat_map(|c| c.to_le_bytes()[..code_bytes].to_vec()).collect();
            crashes.push(CrashRecord {
                input,
                assertion: LockDut::UNLOCK_ASSERTION,
                cycle: cycle as u64,
                exec: execs,
                sim_cycles,
            });
            break;
        }
    }
    if trajectory.last().is_none_or(|s| s.execs != execs) {
        sample(execs, sim_cycles, best_state, &mut trajectory);
    }
    Ok(CampaignResult {
        execs,
        sim_cycles,
        wall_us: started.elapsed().as_micros() as u64,
        first_crash_wall_us,
        crashes,
        queue: Vec::new(),
        trajectory,
        fsm_progress,
        fsm_states: Some(lock.num_states()),
        covered_edges: Vec::new(),
    })
}
