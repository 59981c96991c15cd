//! Independent estimate of the edges a target can reach.
//!
//! The explorer knows the register map and, for locks, the secret codes. It
//! runs structured random programs (valid instructions, register-aware
//! addresses, boundary data values, long idle stretches and directed unlock
//! prefixes) through a fresh harness and records the union of the covered
//! edges. The result is the denominator for empty-seed coverage fractions.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::target::{Device, Target};
use crate::bus::{lock_periph, timer, RegisterInfo};
use crate::dut::DigitalLock;
use crate::grammar::{encode_instructions, Instruction};

pub const DEFAULT_PROGRAMS: usize = 20_000;

/// Edges covered by `programs` explorer runs against `target` (with its
/// unlock assertion disarmed so tests run past the unlock).
pub fn reachable_edges(target: &Target, programs: usize, rng_seed: u64) -> Vec<usize> {
    let target = target.with_unlock_assertion(false);
    let mut harness = target.build();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let codes = DigitalLock::new(target.lock).unlock_sequence().to_vec();
    let mut seen = BTreeSet::new();
    for _ in 0..programs {
        let bytes = match target.device {
            Device::Lock => lock_program(&target, &codes, &mut rng),
            Device::LockPeriph | Device::Timer => {
                if rng.gen_range(0..10) == 0 {
                    // raw bytes exercise invalid and truncated frames
                    (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect()
                } else {
                    let prog = bus_program(&target, &codes, &mut rng);
                    encode_instructions(&prog, target.encoding.opcode, target.encoding.frame)
                }
            }
        };
        harness.execute(&bytes);
        seen.extend(harness.coverage().iter_nonzero().map(|(i, _)| i));
    }
    seen.into_iter().collect()
}

fn code_bytes(code: u32, width: u32) -> Vec<u8> {
    code.to_le_bytes()[..width.div_ceil(8) as usize].to_vec()
}

fn lock_program(target: &Target, codes: &[u32], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let m = target.lock.code_width();
    let mask = target.lock.code_mask();
    let mut out = Vec::new();
    if rng.gen_bool(0.5) {
        let prefix = rng.gen_range(0..=codes.len());
        for &c in &codes[..prefix] {
            out.extend(code_bytes(c, m));
            if rng.gen_range(0..4) == 0 {
                out.extend(code_bytes(rng.gen::<u32>() & mask, m));
            }
        }
    }
    for _ in 0..rng.gen_range(0..16) {
        out.extend(code_bytes(rng.gen::<u32>() & mask, m));
    }
    if rng.gen_bool(0.2) {
        // partial trailing code
        out.push(rng.gen());
    }
    out
}

fn pick_address(regs: &[RegisterInfo], width: u32, rng: &mut ChaCha8Rng) -> u32 {
    let window = 1u32 << width;
    let low = match rng.gen_range(0..20) {
        0..=14 => regs.choose(rng).unwrap().offset,
        15..=16 => regs.choose(rng).unwrap().offset + rng.gen_range(1..4),
        _ => rng.gen_range(0..window / 4) * 4,
    };
    if rng.gen_bool(0.3) {
        low | (rng.gen::<u32>() & !(window - 1))
    } else {
        low
    }
}

fn pick_data(hints: &[u32], rng: &mut ChaCha8Rng) -> u32 {
    match rng.gen_range(0..10) {
        0 => 0,
        1 => 1,
        2 => u32::MAX,
        3 => 0x8000_0000,
        4 => rng.gen_range(0..16),
        5 => rng.gen(),
        _ => *hints.choose(rng).unwrap_or(&0),
    }
}

fn bus_program(target: &Target, codes: &[u32], rng: &mut ChaCha8Rng) -> Vec<Instruction> {
    let (regs, width, hints): (&[RegisterInfo], u32, Vec<u32>) = match target.device {
        Device::Timer => {
            let mut hints: Vec<u32> = (0..4u32).flat_map(|p| (1..4u32).map(move |s| p | (s << 12))).collect();
            hints.extend([0, 1, 2, 3, 5, 8, 16, 40, 100]);
            (timer::REGISTERS, 5, hints)
        }
        _ => (lock_periph::REGISTERS, 4, codes.to_vec()),
    };
    let mut prog = Vec::new();
    if target.device == Device::LockPeriph && rng.gen_bool(0.5) {
        let prefix = rng.gen_range(0..=codes.len());
        for &c in &codes[..prefix] {
            prog.push(Instruction::Write { address: lock_periph::CODE, data: c });
            if rng.gen_range(0..3) == 0 {
                prog.push(random_instruction(regs, width, &hints, rng));
            }
        }
    }
    for _ in 0..rng.gen_range(1..=48) {
        if rng.gen_range(0..20) == 0 {
            let run = rng.gen_range(1..=300);
            prog.extend(std::iter::repeat_n(Instruction::Wait, run));
        } else {
            prog.push(random_instruction(regs, width, &hints, rng));
        }
    }
    prog
}

fn random_instruction(regs: &[RegisterInfo], width: u32, hints: &[u32], rng: &mut ChaCha8Rng) -> Instruction {
    match rng.gen_range(0..10) {
        0..=1 => Instruction::Wait,
        2..=4 => Instruction::Read { address: pick_address(regs, width, rng) },
        _ => Instruction::Write { address: pick_address(regs, width, rng), data: pick_data(hints, rng) },
    }
}
