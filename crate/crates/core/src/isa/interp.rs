//! Concrete reference interpreter.
//!
//! Used as the differential oracle for the symbolic engine and to replay
//! finding witnesses.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::{AluOp, Class, FaultKind, Instruction, JumpCond, Op, Source, Width};
use crate::image::{CallTarget, ProgramImage};
use crate::syscalls::{classify, SyscallKind};
use crate::vm::{self, Region};

/// One store performed by the program or by a syscall model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MemWrite {
    pub addr: u64,
    /// Width in bytes.
    pub width: u8,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    Exit,
    Abort,
    Fault(FaultKind, usize),
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecResult {
    pub r0_final: u64,
    pub steps: u64,
    pub outcome: Outcome,
    pub memory_writes: Vec<MemWrite>,
}

pub enum SyscallOutcome {
    Return(u64),
    Abort,
    Fault(FaultKind),
}

pub type SyscallFn = Arc<dyn Fn(&mut Machine, [u64; 5]) -> SyscallOutcome + Send + Sync>;

/// Syscall implementations. Names without an override use the built-in
/// model for their [`SyscallKind`].
#[derive(Clone, Default)]
pub struct Handlers {
    overrides: BTreeMap<String, SyscallFn>,
    /// Seed for runtime-derived values not listed in `derived_overrides`.
    pub derived_seed: u64,
    pub derived_overrides: BTreeMap<u32, u64>,
}

impl Handlers {
    pub fn standard() -> Self {
        Handlers::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        Handlers {
            derived_seed: seed,
            ..Handlers::default()
        }
    }

    pub fn set(&mut self, name: &str, handler: SyscallFn) {
        self.overrides.insert(name.to_string(), handler);
    }
}

struct Frame {
    return_pc: usize,
    saved: [u64; 4],
}

/// Concrete machine state visible to syscall handlers.
pub struct Machine<'a> {
    pub regs: [u64; 11],
    image: &'a ProgramImage,
    depth: usize,
    frames: Vec<Frame>,
    input: Vec<u8>,
    stack: Vec<u8>,
    heap: Vec<u8>,
    heap_pos: u64,
    derived_seed: u64,
    derived_overrides: &'a BTreeMap<u32, u64>,
    derived_next: u32,
    writes: Vec<MemWrite>,
}

impl<'a> Machine<'a> {
    fn region(&self, addr: u64, len: u64) -> Result<Region, FaultKind> {
        vm::classify_access(addr, len, self.depth, self.input.len() as u64, |a, l| {
            self.image.read_program(a, l as usize).is_some()
        })
        .ok_or(FaultKind::OutOfBounds)
    }

    pub fn read_bytes(&self, addr: u64, len: u64) -> Result<Vec<u8>, FaultKind> {
        if len == 0 {
            return Ok(Vec::new());
        }
        let region = self.region(addr, len)?;
        let len = len as usize;
        Ok(match region {
            Region::Program => self.image.read_program(addr, len).unwrap().to_vec(),
            Region::Stack => {
                let off = (addr - vm::MM_STACK_START) as usize;
                self.stack[off..off + len].to_vec()
            }
            Region::Heap => {
                let off = (addr - vm::MM_HEAP_START) as usize;
                self.heap[off..off + len].to_vec()
            }
            Region::Input => {
                let off = (addr - vm::MM_INPUT_START) as usize;
                self.input[off..off + len].to_vec()
            }
        })
    }

    fn store_raw(&mut self, addr: u64, bytes: &[u8]) -> Result<(), FaultKind> {
        if bytes.is_empty() {
            return Ok(());
        }
        let region = self.region(addr, bytes.len() as u64)?;
        let buf = match region {
            Region::Program => return Err(FaultKind::WriteToReadOnly),
            Region::Stack => &mut self.stack[(addr - vm::MM_STACK_START) as usize..],
            Region::Heap => &mut self.heap[(addr - vm::MM_HEAP_START) as usize..],
            Region::Input => &mut self.input[(addr - vm::MM_INPUT_START) as usize..],
        };
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Checks that `[addr, addr + len)` is writable without writing.
    pub fn check_writable(&self, addr: u64, len: u64) -> Result<(), FaultKind> {
        if len == 0 {
            return Ok(());
        }
        match self.region(addr, len)? {
            Region::Program => Err(FaultKind::WriteToReadOnly),
            _ => Ok(()),
        }
    }

    /// Byte-wise write as performed by syscall models; logged one entry per byte.
    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> Result<(), FaultKind> {
        self.check_writable(addr, bytes.len() as u64)?;
        self.store_raw(addr, bytes)?;
        for (i, &b) in bytes.iter().enumerate() {
            self.writes.push(MemWrite {
                addr: addr + i as u64,
                width: 1,
                value: b as u64,
            });
        }
        Ok(())
    }

    /// The next runtime-derived value.
    pub fn fresh_derived(&mut self, width_bits: u32) -> u64 {
        let index = self.derived_next;
        self.derived_next += 1;
        let value = match self.derived_overrides.get(&index) {
            Some(&v) => v,
            None => vm::derived_value(self.derived_seed, index, width_bits),
        };
        if width_bits >= 64 {
            value
        } else {
            value & ((1u64 << width_bits) - 1)
        }
    }

    fn load(&self, addr: u64, width: Width) -> Result<u64, FaultKind> {
        let bytes = self.read_bytes(addr, width.bytes() as u64)?;
        let mut buf = [0u8; 8];
        buf[..bytes.len()].copy_from_slice(&bytes);
        Ok(u64::from_le_bytes(buf))
    }

    fn store(&mut self, addr: u64, width: Width, value: u64) -> Result<(), FaultKind> {
        let n = width.bytes();
        let bytes = value.to_le_bytes();
        self.store_raw(addr, &bytes[..n])?;
        let value = if n == 8 {
            value
        } else {
            value & ((1u64 << (n * 8)) - 1)
        };
        self.writes.push(MemWrite {
            addr,
            width: n as u8,
            value,
        });
        Ok(())
    }

    fn builtin_syscall(&mut self, name: &str, args: [u64; 5]) -> SyscallOutcome {
        match self.run_builtin(name, args) {
            Ok(outcome) => outcome,
            Err(kind) => SyscallOutcome::Fault(kind),
        }
    }

    fn run_builtin(&mut self, name: &str, args: [u64; 5]) -> Result<SyscallOutcome, FaultKind> {
        let [a1, a2, a3, a4, a5] = args;
        Ok(match classify(name) {
            SyscallKind::Log | SyscallKind::Invoke(_) => SyscallOutcome::Return(0),
            SyscallKind::Memcpy | SyscallKind::Memmove => {
                let data = self.read_bytes(a2, a3)?;
                self.write_bytes(a1, &data)?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::Memset => {
                self.check_writable(a1, a3)?;
                let data = vec![a2 as u8; a3 as usize];
                self.write_bytes(a1, &data)?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::Memcmp => {
                let left = self.read_bytes(a1, a3)?;
                let right = self.read_bytes(a2, a3)?;
                let result = left
                    .iter()
                    .zip(&right)
                    .find(|(l, r)| l != r)
                    .map(|(&l, &r)| l as i32 - r as i32)
                    .unwrap_or(0);
                self.write_bytes(a4, &result.to_le_bytes())?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::Abort => SyscallOutcome::Abort,
            SyscallKind::Hash => {
                self.check_writable(a3, 32)?;
                let out: Vec<u8> = (0..32).map(|_| self.fresh_derived(8) as u8).collect();
                self.write_bytes(a3, &out)?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::CreatePda => {
                self.check_writable(a4, 32)?;
                let out: Vec<u8> = (0..32).map(|_| self.fresh_derived(8) as u8).collect();
                self.write_bytes(a4, &out)?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::FindPda => {
                self.check_writable(a4, 32)?;
                self.check_writable(a5, 1)?;
                let out: Vec<u8> = (0..32).map(|_| self.fresh_derived(8) as u8).collect();
                let bump = self.fresh_derived(8) as u8;
                self.write_bytes(a4, &out)?;
                self.write_bytes(a5, &[bump])?;
                SyscallOutcome::Return(0)
            }
            SyscallKind::Alloc => {
                if a2 != 0 {
                    return Ok(SyscallOutcome::Return(0));
                }
                match vm::bump_alloc(self.heap_pos, a1) {
                    Some((pos, addr)) => {
                        self.heap_pos = pos;
                        SyscallOutcome::Return(addr)
                    }
                    None => SyscallOutcome::Return(0),
                }
            }
            SyscallKind::Unknown => SyscallOutcome::Return(self.fresh_derived(64)),
        })
    }
}

/// Evaluates an ALU operation. `None` signals division by zero.
pub fn alu(op: AluOp, is64: bool, dst: u64, src: u64) -> Option<u64> {
    if is64 {
        Some(match op {
            AluOp::Add => dst.wrapping_add(src),
            AluOp::Sub => dst.wrapping_sub(src),
            AluOp::Mul => dst.wrapping_mul(src),
            AluOp::Div => dst.checked_div(src)?,
            AluOp::Mod => dst.checked_rem(src)?,
            AluOp::Or => dst | src,
            AluOp::And => dst & src,
            AluOp::Xor => dst ^ src,
            AluOp::Lsh => dst.wrapping_shl(src as u32 & 63),
            AluOp::Rsh => dst.wrapping_shr(src as u32 & 63),
            AluOp::Arsh => ((dst as i64) >> (src & 63)) as u64,
            AluOp::Neg => dst.wrapping_neg(),
            AluOp::Mov => src,
            AluOp::Le | AluOp::Be => byte_swap(op, dst, src),
        })
    } else {
        let (d, s) = (dst as u32, src as u32);
        Some(match op {
            AluOp::Add => d.wrapping_add(s) as u64,
            AluOp::Sub => d.wrapping_sub(s) as u64,
            AluOp::Mul => d.wrapping_mul(s) as u64,
            AluOp::Div => d.checked_div(s)? as u64,
            AluOp::Mod => d.checked_rem(s)? as u64,
            AluOp::Or => (d | s) as u64,
            AluOp::And => (d & s) as u64,
            AluOp::Xor => (d ^ s) as u64,
            AluOp::Lsh => d.wrapping_shl(s & 31) as u64,
            AluOp::Rsh => d.wrapping_shr(s & 31) as u64,
            AluOp::Arsh => ((d as i32) >> (s & 31)) as u32 as u64,
            AluOp::Neg => d.wrapping_neg() as u64,
            AluOp::Mov => s as u64,
            AluOp::Le | AluOp::Be => byte_swap(op, dst, src),
        })
    }
}

/// `le`/`be` with `bits` in {16, 32, 64}; other widths leave the value unchanged.
fn byte_swap(op: AluOp, value: u64, bits: u64) -> u64 {
    match (op, bits) {
        (AluOp::Le, 16) => value & 0xffff,
        (AluOp::Le, 32) => value & 0xffff_ffff,
        (AluOp::Be, 16) => (value as u16).swap_bytes() as u64,
        (AluOp::Be, 32) => (value as u32).swap_bytes() as u64,
        (AluOp::Be, 64) => value.swap_bytes(),
        _ => value,
    }
}

/// Evaluates a jump condition.
pub fn condition(cond: JumpCond, is64: bool, a: u64, b: u64) -> bool {
    let (a, b) = if is64 {
        (a, b)
    } else {
        (a as u32 as u64, b as u32 as u64)
    };
    let (sa, sb) = if is64 {
        (a as i64, b as i64)
    } else {
        (a as u32 as i32 as i64, b as u32 as i32 as i64)
    };
    match cond {
        JumpCond::Always => true,
        JumpCond::Eq => a == b,
        JumpCond::Ne => a != b,
        JumpCond::Gt => a > b,
        JumpCond::Ge => a >= b,
        JumpCond::Lt => a < b,
        JumpCond::Le => a <= b,
        JumpCond::Set => a & b != 0,
        JumpCond::Sgt => sa > sb,
        JumpCond::Sge => sa >= sb,
        JumpCond::Slt => sa < sb,
        JumpCond::Sle => sa <= sb,
    }
}

/// Second operand of an ALU or jump instruction.
pub fn operand(insn: &Instruction, regs: &[u64; 11], source: Source) -> u64 {
    match source {
        Source::Reg => regs[insn.src as usize],
        Source::Imm if insn.class == Class::Alu32 || insn.class == Class::Jmp32 => {
            insn.imm as u32 as u64
        }
        Source::Imm => insn.imm as u64,
    }
}

/// Runs the program from its entry with `r1` pointing at `input_region`.
pub fn interpret(
    image: &ProgramImage,
    input_region: &[u8],
    handlers: &Handlers,
    budget: u64,
) -> ExecResult {
    let mut m = Machine {
        regs: [0; 11],
        image,
        depth: 0,
        frames: Vec::new(),
        input: input_region.to_vec(),
        stack: vec![0; vm::MAX_CALL_DEPTH * vm::STACK_FRAME_SIZE as usize],
        heap: vec![0; vm::HEAP_SIZE as usize],
        heap_pos: 0,
        derived_seed: handlers.derived_seed,
        derived_overrides: &handlers.derived_overrides,
        derived_next: 0,
        writes: Vec::new(),
    };
    m.regs[1] = vm::MM_INPUT_START;
    m.regs[10] = vm::frame_pointer(0);
    let mut pc = image.entry_offset;
    let mut steps = 0u64;
    let outcome = loop {
        if steps >= budget {
            break Outcome::BudgetExhausted;
        }
        let insn = match image.instruction(pc) {
            Ok(insn) => insn,
            Err(crate::isa::DecodeError::OutOfRange(_)) => {
                break Outcome::Fault(FaultKind::PcOutOfRange, pc)
            }
            Err(_) => break Outcome::Fault(FaultKind::IllegalInstruction, pc),
        };
        steps += 1;
        let fault = |kind| Outcome::Fault(kind, pc);
        let mut next = pc + insn.size_slots();
        match insn.op {
            Op::Alu(op, source) => {
                let is64 = insn.class == Class::Alu64;
                let src = if matches!(op, AluOp::Le | AluOp::Be) {
                    insn.imm as u64
                } else {
                    operand(&insn, &m.regs, source)
                };
                match alu(op, is64, m.regs[insn.dst as usize], src) {
                    Some(v) => m.regs[insn.dst as usize] = v,
                    None => break fault(FaultKind::DivisionByZero),
                }
            }
            Op::LdImm64 => m.regs[insn.dst as usize] = insn.imm as u64,
            Op::Mem(width) => {
                let base = match insn.class {
                    Class::Ldx => m.regs[insn.src as usize],
                    _ => m.regs[insn.dst as usize],
                };
                let addr = base.wrapping_add(insn.offset as i64 as u64);
                let result = match insn.class {
                    Class::Ldx => m.load(addr, width).map(|v| m.regs[insn.dst as usize] = v),
                    Class::St => m.store(addr, width, insn.imm as u64),
                    _ => m.store(addr, width, m.regs[insn.src as usize]),
                };
                if let Err(kind) = result {
                    break fault(kind);
                }
            }
            Op::Jump(cond, source) => {
                let is64 = insn.class == Class::Jmp;
                let b = operand(&insn, &m.regs, source);
                if condition(cond, is64, m.regs[insn.dst as usize], b) {
                    let target = pc as i64 + insn.offset as i64 + 1;
                    if target < 0 {
                        break fault(FaultKind::PcOutOfRange);
                    }
                    next = target as usize;
                }
            }
            Op::Call(Source::Reg) => break fault(FaultKind::IllegalInstruction),
            Op::Call(Source::Imm) => match image.resolve_call(pc, &insn) {
                CallTarget::Internal(target) => {
                    if m.depth + 1 >= vm::MAX_CALL_DEPTH {
                        break fault(FaultKind::CallDepthExceeded);
                    }
                    m.frames.push(Frame {
                        return_pc: next,
                        saved: [m.regs[6], m.regs[7], m.regs[8], m.regs[9]],
                    });
                    m.depth += 1;
                    m.regs[10] = vm::frame_pointer(m.depth);
                    next = target;
                }
                CallTarget::Syscall(name) => {
                    let args = [m.regs[1], m.regs[2], m.regs[3], m.regs[4], m.regs[5]];
                    let result = match handlers.overrides.get(&name) {
                        Some(handler) => handler(&mut m, args),
                        None => m.builtin_syscall(&name, args),
                    };
                    match result {
                        SyscallOutcome::Return(v) => m.regs[0] = v,
                        SyscallOutcome::Abort => break Outcome::Abort,
                        SyscallOutcome::Fault(kind) => break fault(kind),
                    }
                }
                CallTarget::Unresolved(_) => break fault(FaultKind::InvalidCallTarget),
            },
            Op::Exit => match m.frames.pop() {
                None => break Outcome::Exit,
                Some(frame) => {
                    m.regs[6..10].copy_from_slice(&frame.saved);
                    m.depth -= 1;
                    m.regs[10] = vm::frame_pointer(m.depth);
                    next = frame.return_pc;
                }
            },
        }
        pc = next;
    };
    ExecResult {
        r0_final: m.regs[0],
        steps,
        outcome,
        memory_writes: m.writes,
    }
}
