//! eBPF/SBF instruction set: decoding, encoding, a micro-assembler and a
//! concrete reference interpreter.

pub mod asm;
pub mod interp;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Bytes per instruction slot.
pub const INSN_SIZE: usize = 8;

/// Frame pointer register.
pub const FRAME_REG: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Alu64,
    Alu32,
    Jmp,
    Jmp32,
    LdImm64,
    Ldx,
    St,
    Stx,
    Call,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Or,
    And,
    Lsh,
    Rsh,
    Neg,
    Mod,
    Xor,
    Mov,
    Arsh,
    /// Byte swap to little endian (truncation on a little-endian machine).
    Le,
    /// Byte swap to big endian.
    Be,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JumpCond {
    Always,
    Eq,
    Gt,
    Ge,
    Set,
    Ne,
    Sgt,
    Sge,
    Lt,
    Le,
    Slt,
    Sle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Imm,
    Reg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Width {
    B,
    H,
    W,
    DW,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::B => 1,
            Width::H => 2,
            Width::W => 4,
            Width::DW => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            Width::W => 0x00,
            Width::H => 0x08,
            Width::B => 0x10,
            Width::DW => 0x18,
        }
    }

    fn from_code(code: u8) -> Width {
        match code & 0x18 {
            0x00 => Width::W,
            0x08 => Width::H,
            0x10 => Width::B,
            _ => Width::DW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Alu(AluOp, Source),
    Jump(JumpCond, Source),
    Mem(Width),
    LdImm64,
    Call(Source),
    Exit,
}

/// One decoded instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub class: Class,
    pub op: Op,
    pub dst: u8,
    pub src: u8,
    pub offset: i16,
    pub imm: i64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("illegal opcode {opcode:#04x}")]
    IllegalOpcode { opcode: u8 },
    #[error("invalid register in instruction {opcode:#04x}")]
    InvalidRegister { opcode: u8 },
    #[error("lddw without a second slot")]
    TruncatedWide,
    #[error("instruction index {0} out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("immediate {0} does not fit in 32 bits")]
    Unencodable(i64),
    #[error("register out of range")]
    InvalidRegister,
    #[error("operation not valid for class {0:?}")]
    InvalidForm(Class),
}

/// Runtime faults shared by both execution engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum FaultKind {
    OutOfBounds,
    WriteToReadOnly,
    DivisionByZero,
    CallDepthExceeded,
    InvalidCallTarget,
    IllegalInstruction,
    PcOutOfRange,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const CLASS_LD: u8 = 0x00;
const CLASS_LDX: u8 = 0x01;
const CLASS_ST: u8 = 0x02;
const CLASS_STX: u8 = 0x03;
const CLASS_ALU: u8 = 0x04;
const CLASS_JMP: u8 = 0x05;
const CLASS_JMP32: u8 = 0x06;
const CLASS_ALU64: u8 = 0x07;

const MODE_MEM: u8 = 0x60;
const OPCODE_LDDW: u8 = 0x18;
const OPCODE_CALL: u8 = 0x85;
const OPCODE_CALLX: u8 = 0x8d;
const OPCODE_EXIT: u8 = 0x95;

fn alu_code(op: AluOp) -> u8 {
    match op {
        AluOp::Add => 0x00,
        AluOp::Sub => 0x10,
        AluOp::Mul => 0x20,
        AluOp::Div => 0x30,
        AluOp::Or => 0x40,
        AluOp::And => 0x50,
        AluOp::Lsh => 0x60,
        AluOp::Rsh => 0x70,
        AluOp::Neg => 0x80,
        AluOp::Mod => 0x90,
        AluOp::Xor => 0xa0,
        AluOp::Mov => 0xb0,
        AluOp::Arsh => 0xc0,
        AluOp::Le | AluOp::Be => 0xd0,
    }
}

fn alu_from_code(code: u8) -> Option<AluOp> {
    Some(match code {
        0x00 => AluOp::Add,
        0x10 => AluOp::Sub,
        0x20 => AluOp::Mul,
        0x30 => AluOp::Div,
        0x40 => AluOp::Or,
        0x50 => AluOp::And,
        0x60 => AluOp::Lsh,
        0x70 => AluOp::Rsh,
        0x80 => AluOp::Neg,
        0x90 => AluOp::Mod,
        0xa0 => AluOp::Xor,
        0xb0 => AluOp::Mov,
        0xc0 => AluOp::Arsh,
        _ => return None,
    })
}

fn jump_code(cond: JumpCond) -> u8 {
    match cond {
        JumpCond::Always => 0x00,
        JumpCond::Eq => 0x10,
        JumpCond::Gt => 0x20,
        JumpCond::Ge => 0x30,
        JumpCond::Set => 0x40,
        JumpCond::Ne => 0x50,
        JumpCond::Sgt => 0x60,
        JumpCond::Sge => 0x70,
        JumpCond::Lt => 0xa0,
        JumpCond::Le => 0xb0,
        JumpCond::Slt => 0xc0,
        JumpCond::Sle => 0xd0,
    }
}

fn jump_from_code(code: u8) -> Option<JumpCond> {
    Some(match code {
        0x00 => JumpCond::Always,
        0x10 => JumpCond::Eq,
        0x20 => JumpCond::Gt,
        0x30 => JumpCond::Ge,
        0x40 => JumpCond::Set,
        0x50 => JumpCond::Ne,
        0x60 => JumpCond::Sgt,
        0x70 => JumpCond::Sge,
        0xa0 => JumpCond::Lt,
        0xb0 => JumpCond::Le,
        0xc0 => JumpCond::Slt,
        0xd0 => JumpCond::Sle,
        _ => return None,
    })
}

fn source_bit(source: Source) -> u8 {
    match source {
        Source::Imm => 0x00,
        Source::Reg => 0x08,
    }
}

fn source_from_bit(opcode: u8) -> Source {
    if opcode & 0x08 != 0 {
        Source::Reg
    } else {
        Source::Imm
    }
}

impl Instruction {
    pub fn new(class: Class, op: Op, dst: u8, src: u8, offset: i16, imm: i64) -> Self {
        Instruction {
            class,
            op,
            dst,
            src,
            offset,
            imm,
        }
    }

    pub fn exit() -> Self {
        Instruction::new(Class::Exit, Op::Exit, 0, 0, 0, 0)
    }

    pub fn alu64(op: AluOp, dst: u8, source: Source, src: u8, imm: i64) -> Self {
        Instruction::new(Class::Alu64, Op::Alu(op, source), dst, src, 0, imm)
    }

    pub fn call_relative(delta: i64) -> Self {
        Instruction::new(Class::Call, Op::Call(Source::Imm), 0, 1, 0, delta)
    }

    pub fn size_slots(&self) -> usize {
        if self.class == Class::LdImm64 {
            2
        } else {
            1
        }
    }

    /// Whether executing this instruction writes `dst`.
    pub fn writes_dst(&self) -> bool {
        matches!(
            self.class,
            Class::Alu64 | Class::Alu32 | Class::LdImm64 | Class::Ldx
        )
    }

    /// The raw opcode byte.
    pub fn opcode(&self) -> Result<u8, EncodeError> {
        let invalid = || EncodeError::InvalidForm(self.class);
        Ok(match (self.class, self.op) {
            (Class::Alu64 | Class::Alu32, Op::Alu(op, source)) => {
                let class = if self.class == Class::Alu64 {
                    CLASS_ALU64
                } else {
                    CLASS_ALU
                };
                match op {
                    AluOp::Le | AluOp::Be => {
                        if self.class != Class::Alu32 || source != Source::Imm {
                            return Err(invalid());
                        }
                        let bit = if op == AluOp::Be { 0x08 } else { 0x00 };
                        class | 0xd0 | bit
                    }
                    AluOp::Neg if source == Source::Reg => return Err(invalid()),
                    _ => class | alu_code(op) | source_bit(source),
                }
            }
            (Class::Jmp | Class::Jmp32, Op::Jump(cond, source)) => {
                if self.class == Class::Jmp32 && cond == JumpCond::Always {
                    return Err(invalid());
                }
                if cond == JumpCond::Always && source == Source::Reg {
                    return Err(invalid());
                }
                let class = if self.class == Class::Jmp {
                    CLASS_JMP
                } else {
                    CLASS_JMP32
                };
                class | jump_code(cond) | source_bit(source)
            }
            (Class::LdImm64, Op::LdImm64) => OPCODE_LDDW,
            (Class::Ldx, Op::Mem(w)) => MODE_MEM | w.code() | CLASS_LDX,
            (Class::St, Op::Mem(w)) => MODE_MEM | w.code() | CLASS_ST,
            (Class::Stx, Op::Mem(w)) => MODE_MEM | w.code() | CLASS_STX,
            (Class::Call, Op::Call(Source::Imm)) => OPCODE_CALL,
            (Class::Call, Op::Call(Source::Reg)) => OPCODE_CALLX,
            (Class::Exit, Op::Exit) => OPCODE_EXIT,
            _ => return Err(invalid()),
        })
    }
}

/// Decodes one instruction. `next` must be provided for `lddw`.
pub fn decode(slot: &[u8; 8], next: Option<&[u8; 8]>) -> Result<Instruction, DecodeError> {
    let opcode = slot[0];
    let dst = slot[1] & 0x0f;
    let src = slot[1] >> 4;
    let offset = i16::from_le_bytes([slot[2], slot[3]]);
    let imm32 = i32::from_le_bytes([slot[4], slot[5], slot[6], slot[7]]);
    let illegal = DecodeError::IllegalOpcode { opcode };
    let class_bits = opcode & 0x07;
    let (class, op) = match class_bits {
        CLASS_ALU64 | CLASS_ALU => {
            let class = if class_bits == CLASS_ALU64 {
                Class::Alu64
            } else {
                Class::Alu32
            };
            let code = opcode & 0xf0;
            let source = source_from_bit(opcode);
            let op = if code == 0xd0 {
                if class != Class::Alu32 {
                    return Err(illegal);
                }
                match source {
                    Source::Imm => AluOp::Le,
                    Source::Reg => AluOp::Be,
                }
            } else {
                alu_from_code(code).ok_or(illegal.clone())?
            };
            if op == AluOp::Neg && source == Source::Reg {
                return Err(illegal);
            }
            let source = if matches!(op, AluOp::Le | AluOp::Be) {
                Source::Imm
            } else {
                source
            };
            (class, Op::Alu(op, source))
        }
        CLASS_JMP | CLASS_JMP32 => {
            let code = opcode & 0xf0;
            if class_bits == CLASS_JMP && opcode == OPCODE_CALL {
                (Class::Call, Op::Call(Source::Imm))
            } else if class_bits == CLASS_JMP && opcode == OPCODE_CALLX {
                (Class::Call, Op::Call(Source::Reg))
            } else if class_bits == CLASS_JMP && opcode == OPCODE_EXIT {
                (Class::Exit, Op::Exit)
            } else {
                let cond = jump_from_code(code).ok_or(illegal.clone())?;
                let source = source_from_bit(opcode);
                if cond == JumpCond::Always && (class_bits == CLASS_JMP32 || source == Source::Reg)
                {
                    return Err(illegal);
                }
                let class = if class_bits == CLASS_JMP {
                    Class::Jmp
                } else {
                    Class::Jmp32
                };
                (class, Op::Jump(cond, source))
            }
        }
        CLASS_LD => {
            if opcode != OPCODE_LDDW {
                return Err(illegal);
            }
            (Class::LdImm64, Op::LdImm64)
        }
        CLASS_LDX | CLASS_ST | CLASS_STX => {
            if opcode & 0xe0 != MODE_MEM {
                return Err(illegal);
            }
            let class = match class_bits {
                CLASS_LDX => Class::Ldx,
                CLASS_ST => Class::St,
                _ => Class::Stx,
            };
            (class, Op::Mem(Width::from_code(opcode)))
        }
        _ => return Err(illegal),
    };
    if dst > 10 || src > 10 {
        return Err(DecodeError::InvalidRegister { opcode });
    }
    let mut insn = Instruction {
        class,
        op,
        dst,
        src,
        offset,
        imm: imm32 as i64,
    };
    if insn.writes_dst() && dst == FRAME_REG {
        return Err(DecodeError::InvalidRegister { opcode });
    }
    if class == Class::LdImm64 {
        let next = next.ok_or(DecodeError::TruncatedWide)?;
        if next[..4] != [0, 0, 0, 0] {
            return Err(DecodeError::IllegalOpcode { opcode: next[0] });
        }
        let hi = u32::from_le_bytes([next[4], next[5], next[6], next[7]]) as u64;
        insn.imm = ((hi << 32) | imm32 as u32 as u64) as i64;
    }
    Ok(insn)
}

/// Encodes an instruction into one or two slots.
pub fn encode(insn: &Instruction) -> Result<Vec<u8>, EncodeError> {
    if insn.dst > 10 || insn.src > 10 || (insn.writes_dst() && insn.dst == FRAME_REG) {
        return Err(EncodeError::InvalidRegister);
    }
    let opcode = insn.opcode()?;
    let mut out = Vec::with_capacity(16);
    out.push(opcode);
    out.push((insn.src << 4) | insn.dst);
    out.extend_from_slice(&insn.offset.to_le_bytes());
    if insn.class == Class::LdImm64 {
        let value = insn.imm as u64;
        out.extend_from_slice(&(value as u32).to_le_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        out.extend_from_slice(&((value >> 32) as u32).to_le_bytes());
    } else {
        let imm = i32::try_from(insn.imm).map_err(|_| EncodeError::Unencodable(insn.imm))?;
        out.extend_from_slice(&imm.to_le_bytes());
    }
    Ok(out)
}

/// Every opcode byte the decoder accepts.
pub fn legal_opcodes() -> Vec<u8> {
    (0u8..=255)
        .filter(|&op| {
            let slot = [op, 0x21, 0, 0, 0, 0, 0, 0];
            decode(&slot, Some(&[0; 8])).is_ok()
        })
        .collect()
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        asm::disassemble(self, f)
    }
}
