//! Binary bus-instruction grammar.
//!
//! A test file is a stream of instructions, each an 8-bit opcode optionally
//! followed by a little-endian 32-bit address and a 32-bit data word:
//!
//! | opcode | address | data | action                        |
//! |--------|---------|------|-------------------------------|
//! | wait   | no      | no   | advance the clock one period  |
//! | read   | yes     | no   | bus Get                       |
//! | write  | yes     | yes  | bus PutFullData               |
//!
//! Two opcode formats decide how the 256 opcode byte values map to actions:
//! [`OpcodeFormat::Constant`] uses `0x00`/`0x01`/`0x02` and ignores all other
//! values; [`OpcodeFormat::Mapped`] splits the byte range into three
//! contiguous ranges (`0x00..=0x55` wait, `0x56..=0xAA` read, `0xAB..=0xFF`
//! write). Two frame formats decide how many bytes an instruction occupies:
//! [`FrameFormat::Fixed`] always uses 9, [`FrameFormat::Variable`] uses 1, 5
//! or 9 depending on the opcode.
//!
//! Decoding is total: unknown opcodes are skipped one byte at a time and a
//! trailing frame that is cut short is dropped.

use serde::{Deserialize, Serialize};

use crate::error::SeedParseError;

pub const CONSTANT_WAIT: u8 = 0x00;
pub const CONSTANT_READ: u8 = 0x01;
pub const CONSTANT_WRITE: u8 = 0x02;

/// Last opcode byte decoded as wait under the mapped format.
pub const MAPPED_WAIT_END: u8 = 0x55;
/// Last opcode byte decoded as read under the mapped format.
pub const MAPPED_READ_END: u8 = 0xAA;

pub const FIXED_FRAME_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Wait,
    Read,
    Write,
}

impl Opcode {
    /// Frame length under the variable format.
    pub fn variable_len(self) -> usize {
        match self {
            Opcode::Wait => 1,
            Opcode::Read => 5,
            Opcode::Write => 9,
        }
    }
}

/// A decoded instruction. Only the fields an opcode requires are carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Wait,
    Read { address: u32 },
    Write { address: u32, data: u32 },
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Wait => Opcode::Wait,
            Instruction::Read { .. } => Opcode::Read,
            Instruction::Write { .. } => Opcode::Write,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpcodeFormat {
    #[default]
    Constant,
    Mapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Fixed,
    #[default]
    Variable,
}

/// An (opcode format, frame format) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Encoding {
    pub opcode: OpcodeFormat,
    pub frame: FrameFormat,
}

impl Encoding {
    pub const ALL: [Encoding; 4] = [
        Encoding { opcode: OpcodeFormat::Constant, frame: FrameFormat::Fixed },
        Encoding { opcode: OpcodeFormat::Constant, frame: FrameFormat::Variable },
        Encoding { opcode: OpcodeFormat::Mapped, frame: FrameFormat::Fixed },
        Encoding { opcode: OpcodeFormat::Mapped, frame: FrameFormat::Variable },
    ];

    pub fn new(opcode: OpcodeFormat, frame: FrameFormat) -> Self {
        Encoding { opcode, frame }
    }

    pub fn label(&self) -> &'static str {
        match (self.opcode, self.frame) {
            (OpcodeFormat::Constant, FrameFormat::Fixed) => "constant_fixed",
            (OpcodeFormat::Constant, FrameFormat::Variable) => "constant_variable",
            (OpcodeFormat::Mapped, FrameFormat::Fixed) => "mapped_fixed",
            (OpcodeFormat::Mapped, FrameFormat::Variable) => "mapped_variable",
        }
    }

    pub fn from_label(label: &str) -> Option<Encoding> {
        Encoding::ALL.into_iter().find(|e| e.label() == label)
    }

    pub fn frame_len(&self, op: Opcode) -> usize {
        match self.frame {
            FrameFormat::Fixed => FIXED_FRAME_LEN,
            FrameFormat::Variable => op.variable_len(),
        }
    }
}

pub fn decode_opcode(byte: u8, format: OpcodeFormat) -> Option<Opcode> {
    match format {
        OpcodeFormat::Constant => match byte {
            CONSTANT_WAIT => Some(Opcode::Wait),
            CONSTANT_READ => Some(Opcode::Read),
            CONSTANT_WRITE => Some(Opcode::Write),
            _ => None,
        },
        OpcodeFormat::Mapped => Some(match byte {
            0..=MAPPED_WAIT_END => Opcode::Wait,
            0x56..=MAPPED_READ_END => Opcode::Read,
            _ => Opcode::Write,
        }),
    }
}

/// Canonical opcode byte used when encoding.
pub fn encode_opcode(op: Opcode, format: OpcodeFormat) -> u8 {
    match (format, op) {
        (OpcodeFormat::Constant, Opcode::Wait) => CONSTANT_WAIT,
        (OpcodeFormat::Constant, Opcode::Read) => CONSTANT_READ,
        (OpcodeFormat::Constant, Opcode::Write) => CONSTANT_WRITE,
        (OpcodeFormat::Mapped, Opcode::Wait) => 0x00,
        (OpcodeFormat::Mapped, Opcode::Read) => MAPPED_WAIT_END + 1,
        (OpcodeFormat::Mapped, Opcode::Write) => MAPPED_READ_END + 1,
    }
}

/// One step of the decoder, including the cases that produce nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeEvent {
    Instruction(Instruction),
    /// An opcode byte with no meaning under the constant format.
    Invalid(u8),
    /// A frame whose address/data bytes run past the end of the stream.
    Truncated(Opcode),
}

/// Streaming decoder over a byte slice.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8], encoding: Encoding) -> Self {
        Decoder { bytes, pos: 0, encoding }
    }

    /// Byte offset of the next undecoded byte.
    pub fn position(&self) -> usize {
        self.pos
    }

    fn word(&self, at: usize) -> u32 {
        u32::from_le_bytes(self.bytes[at..at + 4].try_into().unwrap())
    }
}

impl Iterator for Decoder<'_> {
    type Item = DecodeEvent;

    fn next(&mut self) -> Option<DecodeEvent> {
        let &byte = self.bytes.get(self.pos)?;
        let Some(op) = decode_opcode(byte, self.encoding.opcode) else {
            self.pos += 1;
            return Some(DecodeEvent::Invalid(byte));
        };
        let len = self.encoding.frame_len(op);
        let start = self.pos;
        if start + len > self.bytes.len() {
            self.pos = self.bytes.len();
            return Some(DecodeEvent::Truncated(op));
        }
        self.pos += len;
        let instr = match op {
            Opcode::Wait => Instruction::Wait,
            Opcode::Read => Instruction::Read { address: self.word(start + 1) },
            Opcode::Write => Instruction::Write { address: self.word(start + 1), data: self.word(start + 5) },
        };
        Some(DecodeEvent::Instruction(instr))
    }
}

pub fn decode_stream(bytes: &[u8], opcode: OpcodeFormat, frame: FrameFormat) -> Vec<Instruction> {
    Decoder::new(bytes, Encoding::new(opcode, frame))
        .filter_map(|e| match e {
            DecodeEvent::Instruction(i) => Some(i),
            _ => None,
        })
        .collect()
}

pub fn encode_instructions(instrs: &[Instruction], opcode: OpcodeFormat, frame: FrameFormat) -> Vec<u8> {
    let enc = Encoding::new(opcode, frame);
    let mut out = Vec::with_capacity(instrs.len() * FIXED_FRAME_LEN);
    for instr in instrs {
        let start = out.len();
        out.push(encode_opcode(instr.opcode(), opcode));
        match *instr {
            Instruction::Wait => {}
            Instruction::Read { address } => out.extend_from_slice(&address.to_le_bytes()),
            Instruction::Write { address, data } => {
                out.extend_from_slice(&address.to_le_bytes());
                out.extend_from_slice(&data.to_le_bytes());
            }
        }
        out.resize(start + enc.frame_len(instr.opcode()), 0);
    }
    out
}

fn parse_hex(token: &str, line: usize) -> Result<u32, SeedParseError> {
    let digits = token.strip_prefix("0x").or_else(|| token.strip_prefix("0X")).unwrap_or(token);
    u32::from_str_radix(digits, 16).map_err(|e| SeedParseError { line, message: format!("bad hex value `{token}`: {e}") })
}

/// Parses the line-oriented seed language:
///
/// ```text
/// # comment
/// wait
/// read  <hex-addr>
/// write <hex-addr> <hex-data>
/// ```
pub fn parse_seed_text(text: &str) -> Result<Vec<Instruction>, SeedParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let arity = |n: usize| {
            if tokens.len() == n + 1 {
                Ok(())
            } else {
                Err(SeedParseError {
                    line,
                    message: format!("`{}` takes {n} operand(s), got {}", tokens[0], tokens.len() - 1),
                })
            }
        };
        let instr = match tokens[0].to_ascii_lowercase().as_str() {
            "wait" => {
                arity(0)?;
                Instruction::Wait
            }
            "read" => {
                arity(1)?;
                Instruction::Read { address: parse_hex(tokens[1], line)? }
            }
            "write" => {
                arity(2)?;
                Instruction::Write { address: parse_hex(tokens[1], line)?, data: parse_hex(tokens[2], line)? }
            }
            other => return Err(SeedParseError { line, message: format!("unknown instruction `{other}`") }),
        };
        out.push(instr);
    }
    Ok(out)
}

pub fn compile_seed_text(text: &str, encoding: Encoding) -> Result<Vec<u8>, SeedParseError> {
    Ok(encode_instructions(&parse_seed_text(text)?, encoding.opcode, encoding.frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use FrameFormat::*;
    use OpcodeFormat::*;

    #[test]
    fn empty_stream() {
        for e in Encoding::ALL {
            assert!(decode_stream(&[], e.opcode, e.frame).is_empty());
            assert!(encode_instructions(&[], e.opcode, e.frame).is_empty());
        }
    }

    #[test]
    fn single_wait_byte() {
        assert_eq!(decode_stream(&[0x00], Constant, Variable), vec![Instruction::Wait]);
        assert_eq!(encode_instructions(&[Instruction::Wait], Constant, Variable), vec![0x00]);
    }

    #[test]
    fn fixed_wait_is_padded() {
        let b = encode_instructions(&[Instruction::Wait], Constant, Fixed);
        assert_eq!(b, vec![0u8; 9]);
    }

    #[test]
    fn mapped_fixed_write_is_little_endian() {
        let bytes = [0xC0, 0x10, 0x00, 0x00, 0x00, 0xEF, 0xBE, 0xAD, 0xDE];
        assert_eq!(
            decode_stream(&bytes, Mapped, Fixed),
            vec![Instruction::Write { address: 0x10, data: 0xDEAD_BEEF }]
        );
    }

    #[test]
    fn mapped_ranges() {
        let count = |op| (0..=255u8).filter(|&b| decode_opcode(b, Mapped) == Some(op)).count();
        assert_eq!(count(Opcode::Wait), 86);
        assert_eq!(count(Opcode::Read), 85);
        assert_eq!(count(Opcode::Write), 85);
        assert_eq!(decode_opcode(0x55, Mapped), Some(Opcode::Wait));
        assert_eq!(decode_opcode(0x56, Mapped), Some(Opcode::Read));
        assert_eq!(decode_opcode(0xAA, Mapped), Some(Opcode::Read));
        assert_eq!(decode_opcode(0xAB, Mapped), Some(Opcode::Write));
    }

    #[test]
    fn constant_has_three_opcodes() {
        assert_eq!((0..=255u8).filter(|&b| decode_opcode(b, Constant).is_some()).count(), 3);
        // a single-byte stream only yields the wait instruction under variable frames
        let yielded: usize = (0..=255u8).map(|b| decode_stream(&[b], Constant, Variable).len()).sum();
        assert_eq!(yielded, 1);
    }

    #[test]
    fn invalid_opcodes_skip_one_byte() {
        let bytes = [0x77, 0x33, 0x00, 0x01, 4, 0, 0, 0];
        assert_eq!(decode_stream(&bytes, Constant, Variable), vec![Instruction::Wait, Instruction::Read { address: 4 }]);
    }

    #[test]
    fn truncated_frame_dropped() {
        assert_eq!(decode_stream(&[0x00, 0x02, 1, 2, 3], Constant, Variable), vec![Instruction::Wait]);
        assert_eq!(decode_stream(&[0x00; 8], Constant, Fixed), vec![]);
        let events: Vec<_> = Decoder::new(&[0x01, 1, 2], Encoding::new(Constant, Variable)).collect();
        assert_eq!(events, vec![DecodeEvent::Truncated(Opcode::Read)]);
    }

    #[test]
    fn fixed_frames_ignore_dead_fields() {
        let bytes = [0x01, 8, 0, 0, 0, 0xFF, 0xFF, 0xFF, 0xFF];
        assert_eq!(decode_stream(&bytes, Constant, Fixed), vec![Instruction::Read { address: 8 }]);
    }

    #[test]
    fn seed_text_compiles() {
        let instrs = parse_seed_text("wait\nwrite 0x10 0xdeadbeef").unwrap();
        assert_eq!(instrs, vec![Instruction::Wait, Instruction::Write { address: 0x10, data: 0xDEAD_BEEF }]);
        assert_eq!(parse_seed_text("read 0x04").unwrap(), vec![Instruction::Read { address: 4 }]);
        let bytes = compile_seed_text("# setup\n\nwait  # idle\nread 4\n", Encoding::new(Constant, Variable)).unwrap();
        assert_eq!(bytes, vec![0x00, 0x01, 4, 0, 0, 0]);
    }

    #[test]
    fn seed_text_errors_carry_line_numbers() {
        let err = parse_seed_text("frobnicate").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_seed_text("wait\n\nread").unwrap_err();
        assert_eq!(err.line, 3);
        let err = parse_seed_text("write 0x10 zz").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("zz"));
        let err = parse_seed_text("wait 3").unwrap_err();
        assert_eq!(err.line, 1);
    }
}
