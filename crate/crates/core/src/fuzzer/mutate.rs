//! AFL-style mutation stages.

use rand::seq::SliceRandom;
use rand::Rng;

pub const ARITH_MAX: u32 = 35;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
pub const INTERESTING_32: [i32; 8] =
    [-2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Flip `width` (1, 2 or 4) consecutive bits.
    BitFlip { width: u8 },
    /// Invert `width` (1, 2 or 4) consecutive bytes.
    ByteFlip { width: u8 },
    /// Add or subtract 1..=35 to an 8/16/32-bit field.
    Arith { bits: u8 },
    /// Overwrite an 8/16/32-bit field with an interesting value.
    Interesting { bits: u8 },
    Havoc,
    Splice,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::BitFlip { width: 1 } => "flip1",
            Stage::BitFlip { width: 2 } => "flip2",
            Stage::BitFlip { .. } => "flip4",
            Stage::ByteFlip { width: 1 } => "flip8",
            Stage::ByteFlip { width: 2 } => "flip16",
            Stage::ByteFlip { .. } => "flip32",
            Stage::Arith { bits: 8 } => "arith8",
            Stage::Arith { bits: 16 } => "arith16",
            Stage::Arith { .. } => "arith32",
            Stage::Interesting { bits: 8 } => "int8",
            Stage::Interesting { bits: 16 } => "int16",
            Stage::Interesting { .. } => "int32",
            Stage::Havoc => "havoc",
            Stage::Splice => "splice",
        }
    }
}

/// Mutation engine with a length cap and havoc stacking depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mutator {
    pub max_len: usize,
    pub havoc_stack_max: u32,
}

impl Mutator {
    pub fn new(max_len: usize, havoc_stack_max: u32) -> Self {
        Mutator { max_len, havoc_stack_max: havoc_stack_max.max(1) }
    }

    /// Draws a stage for `input`. Stages that need bytes fall back to
    /// havoc on an empty input; splice needs a partner.
    pub fn pick_stage<R: Rng + ?Sized>(&self, input_len: usize, can_splice: bool, rng: &mut R) -> Stage {
        let roll = rng.gen_range(0..100);
        let stage = match roll {
            0..=3 => Stage::BitFlip { width: *[1, 2, 4].choose(rng).unwrap() },
            4..=5 => Stage::ByteFlip { width: *[1, 2, 4].choose(rng).unwrap() },
            6..=9 => Stage::Arith { bits: *[8, 16, 32].choose(rng).unwrap() },
            10..=13 => Stage::Interesting { bits: *[8, 16, 32].choose(rng).unwrap() },
            14..=21 => Stage::Splice,
            _ => Stage::Havoc,
        };
        match stage {
            Stage::Splice if !can_splice => Stage::Havoc,
            Stage::Havoc | Stage::Splice => stage,
            _ if input_len == 0 => Stage::Havoc,
            _ => stage,
        }
    }

    /// One mutation of `input`. `partner` is a random other queue entry,
    /// used by splicing.
    pub fn mutate<R: Rng + ?Sized>(&self, input: &[u8], partner: Option<&[u8]>, rng: &mut R) -> (Vec<u8>, Stage) {
        let stage = self.pick_stage(input.len(), partner.is_some(), rng);
        (self.apply(stage, input, partner, rng), stage)
    }

    pub fn apply<R: Rng + ?Sized>(&self, stage: Stage, input: &[u8], partner: Option<&[u8]>, rng: &mut R) -> Vec<u8> {
        let mut out = input.to_vec();
        match stage {
            Stage::BitFlip { width } => {
                if !out.is_empty() {
                    let bits = out.len() * 8;
                    let w = usize::from(width).min(bits);
                    let at = rng.gen_range(0..=bits - w);
                    for b in at..at + w {
                        flip_bit(&mut out, b);
                    }
                }
            }
            Stage::ByteFlip { width } => {
                if !out.is_empty() {
                    let w = usize::from(width).min(out.len());
                    let at = rng.gen_range(0..=out.len() - w);
                    out[at..at + w].iter_mut().for_each(|b| *b = !*b);
                }
            }
            Stage::Arith { bits } => {
                let delta = rng.gen_range(1..=ARITH_MAX) as u64;
                arith(&mut out, usize::from(bits / 8), rng.gen(), delta, rng.gen(), rng);
            }
            Stage::Interesting { bits } => interesting(&mut out, usize::from(bits / 8), rng),
            Stage::Havoc => {
                // powers of two up to the cap, as in AFL
                let stack = (1u32 << rng.gen_range(0..=self.havoc_stack_max.ilog2())).min(self.havoc_stack_max);
                for _ in 0..stack {
                    self.havoc_op(&mut out, rng);
                }
            }
            Stage::Splice => match partner {
                Some(other) => {
                    out = splice(input, other, rng);
                    // AFL follows a splice with a havoc round
                    for _ in 0..rng.gen_range(1..=self.havoc_stack_max) {
                        self.havoc_op(&mut out, rng);
                    }
                }
                None => self.havoc_op(&mut out, rng),
            },
        }
        out.truncate(self.max_len);
        out
    }

    /// One random havoc operation.
    pub fn havoc_op<R: Rng + ?Sized>(&self, out: &mut Vec<u8>, rng: &mut R) {
        let op = if out.is_empty() { rng.gen_range(15..17) } else { rng.gen_range(0..17) };
        match op {
            0 => {
                let b = rng.gen_range(0..out.len() * 8);
                flip_bit(out, b);
            }
            1 => interesting(out, 1, rng),
            2 => interesting(out, 2, rng),
            3 => interesting(out, 4, rng),
            4..=5 => {
                let d = rng.gen_range(1..=ARITH_MAX) as u64;
                arith(out, 1, op == 5, d, false, rng);
            }
            6..=7 => {
                let d = rng.gen_range(1..=ARITH_MAX) as u64;
                arith(out, 2, op == 7, d, rng.gen(), rng);
            }
            8..=9 => {
                let d = rng.gen_range(1..=ARITH_MAX) as u64;
                arith(out, 4, op == 9, d, rng.gen(), rng);
            }
            10 => {
                let at = rng.gen_range(0..out.len());
                out[at] ^= rng.gen_range(1..=255u8);
            }
            11..=12 => {
                // delete a block, possibly everything
                let len = choose_block_len(out.len(), rng);
                let at = rng.gen_range(0..=out.len() - len);
                out.drain(at..at + len);
            }
            13 => {
                // overwrite with a copy of another block or a constant run
                let len = choose_block_len(out.len(), rng);
                let from = rng.gen_range(0..=out.len() - len);
                let to = rng.gen_range(0..=out.len() - len);
                if rng.gen_bool(0.75) {
                    out.copy_within(from..from + len, to);
                } else {
                    let v = if rng.gen() { rng.gen() } else { out[rng.gen_range(0..out.len())] };
                    out[to..to + len].fill(v);
                }
            }
            14 => {
                // duplicate a block in place
                let len = choose_block_len(out.len(), rng);
                let from = rng.gen_range(0..=out.len() - len);
                let to = rng.gen_range(0..=out.len());
                if out.len() + len <= self.max_len {
                    let block: Vec<u8> = out[from..from + len].to_vec();
                    out.splice(to..to, block);
                }
            }
            _ => {
                // insert a block of random bytes or a constant run
                let len = choose_block_len(self.max_len.saturating_sub(out.len()).min(HAVOC_BLK_LARGE), rng);
                if len > 0 {
                    let to = rng.gen_range(0..=out.len());
                    let block: Vec<u8> = if op == 15 {
                        (0..len).map(|_| rng.gen()).collect()
                    } else {
                        vec![rng.gen(); len]
                    };
                    out.splice(to..to, block);
                }
            }
        }
    }
}

const HAVOC_BLK_SMALL: usize = 32;
const HAVOC_BLK_MEDIUM: usize = 128;
const HAVOC_BLK_LARGE: usize = 1500;

/// Block length in `1..=limit`, biased towards short blocks.
fn choose_block_len<R: Rng + ?Sized>(limit: usize, rng: &mut R) -> usize {
    if limit == 0 {
        return 0;
    }
    let (min, max) = match rng.gen_range(0..3) {
        0 => (1, 4),
        1 => (1, HAVOC_BLK_SMALL),
        _ => {
            if rng.gen_range(0..10) == 0 {
                (HAVOC_BLK_MEDIUM, HAVOC_BLK_LARGE)
            } else {
                (HAVOC_BLK_SMALL, HAVOC_BLK_MEDIUM)
            }
        }
    };
    let min = min.min(limit);
    let max = max.min(limit);
    rng.gen_range(min..=max)
}

fn flip_bit(buf: &mut [u8], bit: usize) {
    buf[bit >> 3] ^= 0x80 >> (bit & 7);
}

fn read_field(buf: &[u8], at: usize, width: usize, big_endian: bool) -> u64 {
    let mut v = 0u64;
    for i in 0..width {
        let b = if big_endian { buf[at + i] } else { buf[at + width - 1 - i] };
        v = (v << 8) | u64::from(b);
    }
    v
}

fn write_field(buf: &mut [u8], at: usize, width: usize, value: u64, big_endian: bool) {
    for i in 0..width {
        let b = (value >> (8 * i)) as u8;
        if big_endian {
            buf[at + width - 1 - i] = b;
        } else {
            buf[at + i] = b;
        }
    }
}

fn field_mask(width: usize) -> u64 {
    if width >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * width)) - 1
    }
}

fn arith<R: Rng + ?Sized>(buf: &mut [u8], width: usize, add: bool, delta: u64, big_endian: bool, rng: &mut R) {
    if buf.len() < width {
        return;
    }
    let at = rng.gen_range(0..=buf.len() - width);
    let v = read_field(buf, at, width, big_endian);
    let v = if add { v.wrapping_add(delta) } else { v.wrapping_sub(delta) } & field_mask(width);
    write_field(buf, at, width, v, big_endian);
}

fn interesting<R: Rng + ?Sized>(buf: &mut [u8], width: usize, rng: &mut R) {
    if buf.len() < width {
        return;
    }
    let at = rng.gen_range(0..=buf.len() - width);
    let v = match width {
        1 => *INTERESTING_8.choose(rng).unwrap() as u8 as u64,
        2 => {
            let pool: Vec<i64> = INTERESTING_8.iter().map(|&x| i64::from(x)).chain(INTERESTING_16.iter().map(|&x| i64::from(x))).collect();
            *pool.choose(rng).unwrap() as u64
        }
        _ => {
            let pool: Vec<i64> = INTERESTING_8
                .iter()
                .map(|&x| i64::from(x))
                .chain(INTERESTING_16.iter().map(|&x| i64::from(x)))
                .chain(INTERESTING_32.iter().map(|&x| i64::from(x)))
                .collect();
            *pool.choose(rng).unwrap() as u64
        }
    } & field_mask(width);
    write_field(buf, at, width, v, rng.gen());
}

/// Prefix of `a` joined to the suffix of `b` at a random split point
/// inside their common length.
pub fn splice<R: Rng + ?Sized>(a: &[u8], b: &[u8], rng: &mut R) -> Vec<u8> {
    let common = a.len().min(b.len());
    let split = rng.gen_range(0..=common);
    let mut out = a[..split].to_vec();
    out.extend_from_slice(&b[split..]);
    out
}
