//! Symbolic instruction semantics and syscall models.

use super::{CpiObservation, End, Exploration, Explorer};
use crate::detect::extract_call_target;
use crate::image::CallTarget;
use crate::isa::{AluOp, Class, DecodeError, FaultKind, Instruction, JumpCond, Op, Source};
use crate::solver::{slice, Verdict};
use crate::sym::{CallFrame, MachineState, SymExpr};
use crate::syscalls::{classify, Abi, SyscallKind};
use crate::vm;

pub enum Successor {
    Live(MachineState),
    Done(MachineState, End),
}

fn c64(v: u64) -> SymExpr {
    SymExpr::from_u64(64, v)
}

fn low32(e: &SymExpr) -> SymExpr {
    e.extract(31, 0)
}

fn byte_swap(op: AluOp, value: &SymExpr, bits: i64) -> SymExpr {
    let bytes =
        |n: u16| -> Vec<SymExpr> { (0..n).map(|i| value.extract(i * 8 + 7, i * 8)).collect() };
    match (op, bits) {
        (AluOp::Le, 16) => value.extract(15, 0).zext(64),
        (AluOp::Le, 32) => value.extract(31, 0).zext(64),
        (AluOp::Be, 16 | 32 | 64) => {
            let mut b = bytes(bits as u16 / 8);
            b.reverse();
            SymExpr::concat_le(&b).zext(64)
        }
        _ => value.clone(),
    }
}

/// ALU result; division by zero is ruled out by the caller.
fn alu(op: AluOp, is64: bool, dst: &SymExpr, src: &SymExpr) -> SymExpr {
    let (d, s, w) = if is64 {
        (dst.clone(), src.clone(), 64u16)
    } else {
        (low32(dst), low32(src), 32u16)
    };
    let mask = SymExpr::from_u64(w, w as u64 - 1);
    let r = match op {
        AluOp::Add => d.add(&s),
        AluOp::Sub => d.sub(&s),
        AluOp::Mul => d.mul(&s),
        AluOp::Div => d.udiv(&s),
        AluOp::Mod => d.urem(&s),
        AluOp::Or => d.or(&s),
        AluOp::And => d.and(&s),
        AluOp::Xor => d.xor(&s),
        AluOp::Lsh => d.shl(&s.and(&mask)),
        AluOp::Rsh => d.lshr(&s.and(&mask)),
        AluOp::Arsh => d.ashr(&s.and(&mask)),
        AluOp::Neg => d.neg(),
        AluOp::Mov => s,
        AluOp::Le | AluOp::Be => unreachable!("byte swaps are handled separately"),
    };
    if is64 {
        r
    } else {
        r.zext(64)
    }
}

fn jump_condition(cond: JumpCond, is64: bool, a: &SymExpr, b: &SymExpr) -> SymExpr {
    let (a, b) = if is64 {
        (a.clone(), b.clone())
    } else {
        (low32(a), low32(b))
    };
    match cond {
        JumpCond::Always => SymExpr::bool(true),
        JumpCond::Eq => a.eq(&b),
        JumpCond::Ne => a.ne(&b),
        JumpCond::Gt => b.ult(&a),
        JumpCond::Ge => b.ule(&a),
        JumpCond::Lt => a.ult(&b),
        JumpCond::Le => a.ule(&b),
        JumpCond::Set => a.and(&b).ne(&SymExpr::from_u64(a.width(), 0)),
        JumpCond::Sgt => b.slt(&a),
        JumpCond::Sge => b.sle(&a),
        JumpCond::Slt => a.slt(&b),
        JumpCond::Sle => a.sle(&b),
    }
}

fn operand(insn: &Instruction, state: &MachineState, source: Source) -> SymExpr {
    match source {
        Source::Reg => state.regs[insn.src as usize].clone(),
        Source::Imm if insn.class == Class::Alu32 || insn.class == Class::Jmp32 => {
            c64(insn.imm as u32 as u64)
        }
        Source::Imm => c64(insn.imm as u64),
    }
}

fn done(state: MachineState, end: End) -> Vec<Successor> {
    vec![Successor::Done(state, end)]
}

fn live(state: MachineState) -> Vec<Successor> {
    vec![Successor::Live(state)]
}

/// Outcome of a syscall model on one concretized state.
enum Model {
    Return(MachineState, SymExpr),
    End(MachineState, End),
}

impl Explorer<'_> {
    /// Splits on `cond`; infeasible children are dropped.
    fn branch(
        &self,
        state: MachineState,
        cond: &SymExpr,
        out: &mut Exploration,
    ) -> (Option<MachineState>, Option<MachineState>) {
        if cond.is_true() {
            return (Some(state), None);
        }
        if cond.is_false() {
            return (None, Some(state));
        }
        out.stats.forks += 1;
        let taken_ok = self.feasible(&state.constraints, cond, out);
        let other_ok = if taken_ok {
            self.feasible(&state.constraints, &cond.bool_not(), out)
        } else {
            true
        };
        let (t, f) = state.fork(cond);
        (taken_ok.then_some(t), other_ok.then_some(f))
    }

    fn feasible(&self, prefix: &[SymExpr], cond: &SymExpr, out: &mut Exploration) -> bool {
        out.stats.solver_queries += 1;
        match self.solver.check_extension(prefix, cond) {
            Verdict::Unsat => false,
            Verdict::Sat(_) => true,
            Verdict::Unknown(_) => {
                out.stats.solver_unknown += 1;
                true
            }
        }
    }

    /// Feasible concrete values of `e`, at most `pointer_fanout` of them.
    pub(crate) fn concretize(
        &self,
        state: &MachineState,
        e: &SymExpr,
        out: &mut Exploration,
    ) -> Option<Vec<u64>> {
        if let Some(v) = e.as_u64() {
            return Some(vec![v]);
        }
        out.stats.solver_queries += 1;
        let cs = slice(&state.constraints, e.origins());
        let (values, complete) = self.solver.enumerate(&cs, e, self.config.pointer_fanout);
        match complete {
            Some(true) => Some(values.iter().map(|v| v.as_u64()).collect()),
            Some(false) => None,
            None => {
                out.stats.solver_unknown += 1;
                None
            }
        }
    }

    /// Forks `state` over concrete values of every expression in `exprs`.
    fn with_concrete(
        &self,
        state: MachineState,
        exprs: &[SymExpr],
        out: &mut Exploration,
        mut f: impl FnMut(MachineState, &[u64], &mut Exploration) -> Vec<Successor>,
    ) -> Vec<Successor> {
        let pc = state.pc;
        let mut partial = vec![(state, Vec::new())];
        let mut result = Vec::new();
        for e in exprs {
            let mut next = Vec::new();
            for (s, vals) in partial {
                if let Some(v) = e.as_u64() {
                    let mut vals = vals;
                    vals.push(v);
                    next.push((s, vals));
                    continue;
                }
                match self.concretize(&s, e, out) {
                    Some(values) => {
                        for v in values {
                            let mut child = s.clone();
                            child.assume(e.eq(&SymExpr::from_u64(e.width(), v)));
                            let mut vals = vals.clone();
                            vals.push(v);
                            next.push((child, vals));
                        }
                    }
                    None => result.push(Successor::Done(s, End::UnresolvedPointer(pc))),
                }
            }
            partial = next;
        }
        for (s, vals) in partial {
            result.extend(f(s, &vals, out));
        }
        result
    }

    pub(crate) fn step(&self, mut state: MachineState, out: &mut Exploration) -> Vec<Successor> {
        let pc = state.pc;
        if state.step_count >= self.config.step_budget {
            return done(state, End::StepBudget);
        }
        let insn = match self.image.instruction(pc) {
            Ok(insn) => insn,
            Err(DecodeError::OutOfRange(_)) => {
                return done(state, End::Fault(FaultKind::PcOutOfRange, pc))
            }
            Err(_) => return done(state, End::Fault(FaultKind::IllegalInstruction, pc)),
        };
        state.step_count += 1;
        log::trace!("pc {pc}: {insn}");
        let next = pc + insn.size_slots();
        let fault = |s, kind| done(s, End::Fault(kind, pc));
        match insn.op {
            Op::Alu(op @ (AluOp::Le | AluOp::Be), _) => {
                let d = insn.dst as usize;
                state.regs[d] = byte_swap(op, &state.regs[d], insn.imm);
                state.pc = next;
                live(state)
            }
            Op::Alu(op, source) => {
                let is64 = insn.class == Class::Alu64;
                let src = operand(&insn, &state, source);
                let d = insn.dst as usize;
                if matches!(op, AluOp::Div | AluOp::Mod) {
                    let divisor = if is64 { src.clone() } else { low32(&src) };
                    let zero = divisor.eq(&SymExpr::from_u64(divisor.width(), 0));
                    let (z, nz) = self.branch(state, &zero, out);
                    let mut res = Vec::new();
                    if let Some(z) = z {
                        res.extend(fault(z, FaultKind::DivisionByZero));
                    }
                    if let Some(mut nz) = nz {
                        nz.regs[d] = alu(op, is64, &nz.regs[d], &src);
                        nz.pc = next;
                        res.push(Successor::Live(nz));
                    }
                    return res;
                }
                state.regs[d] = alu(op, is64, &state.regs[d], &src);
                state.pc = next;
                live(state)
            }
            Op::LdImm64 => {
                state.regs[insn.dst as usize] = c64(insn.imm as u64);
                state.pc = next;
                live(state)
            }
            Op::Mem(width) => {
                let base = match insn.class {
                    Class::Ldx => &state.regs[insn.src as usize],
                    _ => &state.regs[insn.dst as usize],
                };
                let addr = base.add(&c64(insn.offset as i64 as u64));
                let n = width.bytes();
                self.with_concrete(state, &[addr], out, |mut s, v, _| {
                    let addr = v[0];
                    let result = match insn.class {
                        Class::Ldx => s.read_mem(self.image, addr, n).map(|value| {
                            s.regs[insn.dst as usize] = value.zext(64);
                        }),
                        Class::St => s.write_mem(self.image, addr, n, &c64(insn.imm as u64)),
                        _ => {
                            let value = s.regs[insn.src as usize].clone();
                            s.write_mem(self.image, addr, n, &value)
                        }
                    };
                    match result {
                        Ok(()) => {
                            s.pc = next;
                            live(s)
                        }
                        Err(kind) => fault(s, kind),
                    }
                })
            }
            Op::Jump(cond, source) => {
                let is64 = insn.class == Class::Jmp;
                let b = operand(&insn, &state, source);
                let c = jump_condition(cond, is64, &state.regs[insn.dst as usize], &b);
                let target = pc as i64 + insn.offset as i64 + 1;
                let (taken, fallthrough) = self.branch(state, &c, out);
                let mut res = Vec::new();
                if let Some(mut t) = taken {
                    if target < 0 {
                        res.extend(fault(t, FaultKind::PcOutOfRange));
                    } else {
                        let target = target as usize;
                        let mut over = false;
                        if target <= pc {
                            let n = t.back_edges.entry((pc, target)).or_insert(0);
                            *n += 1;
                            over = *n > self.config.loop_bound;
                        }
                        t.pc = target;
                        res.push(if over {
                            Successor::Done(t, End::LoopBound)
                        } else {
                            Successor::Live(t)
                        });
                    }
                }
                if let Some(mut f) = fallthrough {
                    f.pc = next;
                    res.push(Successor::Live(f));
                }
                res
            }
            Op::Call(Source::Reg) => fault(state, FaultKind::IllegalInstruction),
            Op::Call(Source::Imm) => match self.image.resolve_call(pc, &insn) {
                CallTarget::Internal(target) => {
                    if state.depth() + 1 >= vm::MAX_CALL_DEPTH {
                        return fault(state, FaultKind::CallDepthExceeded);
                    }
                    let saved = std::array::from_fn(|i| state.regs[6 + i].clone());
                    state.call_stack.push(CallFrame {
                        return_pc: next,
                        caller_function: state.function,
                        saved,
                    });
                    state.regs[10] = c64(vm::frame_pointer(state.depth()));
                    state.function = target;
                    state.pc = target;
                    live(state)
                }
                CallTarget::Syscall(name) => self.syscall(state, &name, next, out),
                CallTarget::Unresolved(_) => fault(state, FaultKind::InvalidCallTarget),
            },
            Op::Exit => match state.call_stack.pop() {
                None => done(state, End::Exit),
                Some(frame) => {
                    for (i, v) in frame.saved.into_iter().enumerate() {
                        state.regs[6 + i] = v;
                    }
                    state.regs[10] = c64(vm::frame_pointer(state.depth()));
                    state.function = frame.caller_function;
                    state.pc = frame.return_pc;
                    live(state)
                }
            },
        }
    }

    fn syscall(
        &self,
        state: MachineState,
        name: &str,
        next: usize,
        out: &mut Exploration,
    ) -> Vec<Successor> {
        let pc = state.pc;
        if self.config.cpi_syscalls.iter().any(|s| s == name) {
            let obs = self.observe(&state, name, out);
            out.observations.push(obs);
            if self.config.terminate_at_cpi {
                return done(state, End::Cpi);
            }
            let mut state = state;
            state.regs[0] = c64(0);
            state.pc = next;
            return live(state);
        }
        let kind = classify(name);
        let arg = |i: usize| state.regs[i].clone();
        let concrete_args: Vec<SymExpr> = match kind {
            SyscallKind::Memcpy | SyscallKind::Memmove => vec![arg(1), arg(2), arg(3)],
            SyscallKind::Memset => vec![arg(1), arg(3)],
            SyscallKind::Memcmp => vec![arg(1), arg(2), arg(3), arg(4)],
            SyscallKind::Hash => vec![arg(3)],
            SyscallKind::CreatePda => vec![arg(4)],
            SyscallKind::FindPda => vec![arg(4), arg(5)],
            SyscallKind::Alloc => vec![arg(1), arg(2)],
            _ => Vec::new(),
        };
        if kind == SyscallKind::Unknown {
            out.stats.unknown_syscalls.insert(name.to_string());
            log::debug!("unmodeled syscall {name} at {pc}");
        }
        self.with_concrete(state, &concrete_args, out, |s, v, _| {
            match self.syscall_model(s, kind, v) {
                Model::Return(mut s, r0) => {
                    s.regs[0] = r0;
                    s.pc = next;
                    live(s)
                }
                Model::End(s, end) => done(s, end),
            }
        })
    }

    fn syscall_model(&self, mut s: MachineState, kind: SyscallKind, v: &[u64]) -> Model {
        let pc = s.pc;
        let image = self.image;
        let zero = c64(0);
        macro_rules! tryf {
            ($e:expr) => {
                match $e {
                    Ok(x) => x,
                    Err(kind) => return Model::End(s, End::Fault(kind, pc)),
                }
            };
        }
        match kind {
            SyscallKind::Log | SyscallKind::Invoke(_) => Model::Return(s, zero),
            SyscallKind::Memcpy | SyscallKind::Memmove => {
                let data = tryf!(s.read_bytes(image, v[1], v[2] as usize));
                tryf!(s.write_bytes(image, v[0], &data));
                Model::Return(s, zero)
            }
            SyscallKind::Memset => {
                tryf!(s.check_writable(image, v[0], v[1]));
                let byte = s.regs[2].extract(7, 0);
                let data = vec![byte; v[1] as usize];
                tryf!(s.write_bytes(image, v[0], &data));
                Model::Return(s, zero)
            }
            SyscallKind::Memcmp => {
                let n = v[2] as usize;
                let left = tryf!(s.read_bytes(image, v[0], n));
                let right = tryf!(s.read_bytes(image, v[1], n));
                let mut result = SymExpr::from_u64(32, 0);
                for (l, r) in left.iter().zip(&right).rev() {
                    let diff = l.zext(32).sub(&r.zext(32));
                    result = SymExpr::ite(&l.ne(r), &diff, &result);
                }
                let bytes: Vec<SymExpr> = (0..4u16)
                    .map(|i| result.extract(i * 8 + 7, i * 8))
                    .collect();
                tryf!(s.write_bytes(image, v[3], &bytes));
                Model::Return(s, zero)
            }
            SyscallKind::Abort => Model::End(s, End::Abort),
            SyscallKind::Hash | SyscallKind::CreatePda => {
                tryf!(s.check_writable(image, v[0], 32));
                let data: Vec<SymExpr> = (0..32).map(|_| s.fresh_derived(8)).collect();
                tryf!(s.write_bytes(image, v[0], &data));
                Model::Return(s, zero)
            }
            SyscallKind::FindPda => {
                tryf!(s.check_writable(image, v[0], 32));
                tryf!(s.check_writable(image, v[1], 1));
                let data: Vec<SymExpr> = (0..32).map(|_| s.fresh_derived(8)).collect();
                let bump = s.fresh_derived(8);
                tryf!(s.write_bytes(image, v[0], &data));
                tryf!(s.write_bytes(image, v[1], &[bump]));
                Model::Return(s, zero)
            }
            SyscallKind::Alloc => {
                if v[1] != 0 {
                    return Model::Return(s, zero);
                }
                match vm::bump_alloc(s.heap_pos, v[0]) {
                    Some((pos, addr)) => {
                        s.heap_pos = pos;
                        Model::Return(s, c64(addr))
                    }
                    None => Model::Return(s, zero),
                }
            }
            SyscallKind::Unknown => {
                let r0 = s.fresh_derived(64);
                Model::Return(s, r0)
            }
        }
    }

    fn observe(&self, state: &MachineState, name: &str, out: &mut Exploration) -> CpiObservation {
        let abi = Abi::of_syscall(name);
        let (target, diagnostic) = match extract_call_target(state, self.image, abi, |e| {
            self.concretize(state, e, out)
                .filter(|vals| vals.len() == 1)
                .map(|vals| vals[0])
        }) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let target_origins = target
            .as_ref()
            .map(|t| t.origins().iter().copied().collect())
            .unwrap_or_default();
        log::debug!("CPI via {name} at {}", state.pc);
        CpiObservation {
            callsite: state.pc,
            syscall: name.to_string(),
            abi,
            target,
            target_origins,
            diagnostic,
            constraints: state.constraints.clone(),
            journal: state.journal.clone(),
            account_count: state.layout.account_count(),
            layout: state.layout.clone(),
        }
    }
}
