//! Control-flow recovery, CPI site discovery, and backward CPI reachability.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::image::{CallTarget, ProgramImage};
use crate::isa::{DecodeError, JumpCond, Op, Source};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("cannot decode instruction at {pc}: {source}")]
    DecodeFailure { pc: usize, source: DecodeError },
    #[error("indirect call at {pc}")]
    IndirectCall { pc: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Terminator {
    FallThrough,
    Jump,
    CondJump,
    Call,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EdgeKind {
    Flow,
    TrueBranch,
    FalseBranch,
    CallReturn,
}

/// Instructions `start..end` (slot indices, `end` exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    /// Slot of the final instruction.
    pub last: usize,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Function {
    pub entry_block: usize,
    pub name: Option<String>,
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Callee {
    Function(usize),
    Syscall(String),
    Unresolved(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallEdge {
    pub site: usize,
    pub callee: Callee,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    pub functions: Vec<Function>,
    pub call_edges: Vec<CallEdge>,
    pub entry_block: usize,
}

struct Scan {
    leaders: BTreeSet<usize>,
    insns: BTreeMap<usize, (Op, usize)>,
    function_starts: BTreeSet<usize>,
}

fn branch_target(pc: usize, offset: i16) -> i64 {
    pc as i64 + offset as i64 + 1
}

fn decode_failure(pc: usize, source: DecodeError) -> CfgError {
    CfgError::DecodeFailure { pc, source }
}

fn scan(image: &ProgramImage) -> Result<Scan, CfgError> {
    let slots = image.slot_count();
    let mut s = Scan {
        leaders: BTreeSet::new(),
        insns: BTreeMap::new(),
        function_starts: BTreeSet::new(),
    };
    let mut work = vec![image.entry_offset];
    s.leaders.insert(image.entry_offset);
    s.function_starts.insert(image.entry_offset);
    let target = |pc: usize, t: i64| -> Result<usize, CfgError> {
        if t < 0 || t as usize >= slots {
            return Err(decode_failure(
                pc,
                DecodeError::OutOfRange(t.max(0) as usize),
            ));
        }
        Ok(t as usize)
    };
    while let Some(mut pc) = work.pop() {
        loop {
            if s.insns.contains_key(&pc) {
                break;
            }
            let insn = image.instruction(pc).map_err(|e| decode_failure(pc, e))?;
            let next = pc + insn.size_slots();
            s.insns.insert(pc, (insn.op, next));
            match insn.op {
                Op::Exit => break,
                Op::Jump(JumpCond::Always, _) => {
                    let t = target(pc, branch_target(pc, insn.offset))?;
                    s.leaders.insert(t);
                    work.push(t);
                    break;
                }
                Op::Jump(..) => {
                    let t = target(pc, branch_target(pc, insn.offset))?;
                    let f = target(pc, next as i64)?;
                    s.leaders.insert(t);
                    s.leaders.insert(f);
                    work.push(t);
                    work.push(f);
                    break;
                }
                Op::Call(Source::Reg) => return Err(CfgError::IndirectCall { pc }),
                Op::Call(Source::Imm) => {
                    if let CallTarget::Internal(t) = image.resolve_call(pc, &insn) {
                        s.leaders.insert(t);
                        s.function_starts.insert(t);
                        work.push(t);
                    }
                    let f = target(pc, next as i64)?;
                    s.leaders.insert(f);
                    work.push(f);
                    break;
                }
                _ => {
                    pc = target(pc, next as i64)?;
                }
            }
        }
    }
    // Named functions that the traversal reaches become boundaries too.
    for &pc in image.symbols.keys() {
        if s.insns.contains_key(&pc) {
            s.leaders.insert(pc);
        }
    }
    Ok(s)
}

pub fn build_cfg(image: &ProgramImage) -> Result<Cfg, CfgError> {
    let s = scan(image)?;
    let mut blocks = Vec::new();
    let mut block_at = BTreeMap::new();
    for &leader in &s.leaders {
        let mut pc = leader;
        let terminator;
        let mut last;
        loop {
            let (op, next) = s.insns[&pc];
            last = pc;
            let t = match op {
                Op::Exit => Some(Terminator::Exit),
                Op::Jump(JumpCond::Always, _) => Some(Terminator::Jump),
                Op::Jump(..) => Some(Terminator::CondJump),
                Op::Call(_) => Some(Terminator::Call),
                _ if s.leaders.contains(&next) => Some(Terminator::FallThrough),
                _ => None,
            };
            if let Some(t) = t {
                terminator = t;
                break;
            }
            pc = next;
        }
        block_at.insert(leader, blocks.len());
        blocks.push(Block {
            start: leader,
            end: s.insns[&last].1,
            last,
            terminator,
        });
    }

    let mut edges = Vec::new();
    let mut call_edges = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let insn = image.instruction(b.last).expect("scanned");
        let after = block_at.get(&b.end).copied();
        let target = || block_at[&(branch_target(b.last, insn.offset) as usize)];
        match b.terminator {
            Terminator::Exit => {}
            Terminator::FallThrough => edges.push(Edge {
                from: i,
                to: after.expect("leader"),
                kind: EdgeKind::Flow,
            }),
            Terminator::Jump => edges.push(Edge {
                from: i,
                to: target(),
                kind: EdgeKind::Flow,
            }),
            Terminator::CondJump => {
                edges.push(Edge {
                    from: i,
                    to: target(),
                    kind: EdgeKind::TrueBranch,
                });
                edges.push(Edge {
                    from: i,
                    to: after.expect("leader"),
                    kind: EdgeKind::FalseBranch,
                });
            }
            Terminator::Call => {
                edges.push(Edge {
                    from: i,
                    to: after.expect("leader"),
                    kind: EdgeKind::CallReturn,
                });
                let callee = match image.resolve_call(b.last, &insn) {
                    CallTarget::Internal(t) => Callee::Function(t),
                    CallTarget::Syscall(name) => Callee::Syscall(name),
                    CallTarget::Unresolved(h) => Callee::Unresolved(h),
                };
                call_edges.push(CallEdge {
                    site: b.last,
                    callee,
                });
            }
        }
    }

    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
    for e in &edges {
        succ[e.from].push(e.to);
    }
    let starts: Vec<usize> = s.function_starts.iter().copied().collect();
    let index_of_start: BTreeMap<usize, usize> =
        starts.iter().enumerate().map(|(i, &pc)| (pc, i)).collect();
    let functions = starts
        .iter()
        .map(|&pc| {
            let entry = block_at[&pc];
            let mut seen = BTreeSet::from([entry]);
            let mut queue = VecDeque::from([entry]);
            while let Some(b) = queue.pop_front() {
                for &n in &succ[b] {
                    if seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
            Function {
                entry_block: entry,
                name: image.function_name(pc).map(str::to_string),
                blocks: seen.into_iter().collect(),
            }
        })
        .collect();
    for ce in &mut call_edges {
        if let Callee::Function(pc) = ce.callee {
            ce.callee = Callee::Function(index_of_start[&pc]);
        }
    }

    Ok(Cfg {
        entry_block: block_at[&image.entry_offset],
        blocks,
        edges,
        functions,
        call_edges,
    })
}

impl Cfg {
    /// Block containing instruction slot `pc`.
    pub fn block_of(&self, pc: usize) -> Option<usize> {
        let i = self.blocks.partition_point(|b| b.start <= pc);
        (i > 0 && pc < self.blocks[i - 1].end).then(|| i - 1)
    }

    pub fn successors(&self, block: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == block)
    }

    /// Index of the function whose entry is at slot `pc`.
    pub fn function_at(&self, pc: usize) -> Option<usize> {
        let b = self.block_of(pc)?;
        self.functions
            .iter()
            .position(|f| f.entry_block == b && self.blocks[b].start == pc)
    }

    pub fn call_at(&self, site: usize) -> Option<&Callee> {
        self.call_edges
            .iter()
            .find(|c| c.site == site)
            .map(|c| &c.callee)
    }

    /// DOT rendering of blocks and edges.
    pub fn to_dot(&self, image: &ProgramImage) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box fontname=monospace];\n");
        for (i, b) in self.blocks.iter().enumerate() {
            let mut label = format!("b{i} [{}..{})\\l", b.start, b.end);
            let mut pc = b.start;
            while pc < b.end {
                match image.instruction(pc) {
                    Ok(insn) => {
                        let text = insn.to_string().replace('"', "\\\"");
                        let _ = write!(label, "{pc}: {text}\\l");
                        pc += insn.size_slots();
                    }
                    Err(_) => break,
                }
            }
            let _ = writeln!(out, "  b{i} [label=\"{label}\"];");
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Flow => "",
                EdgeKind::TrueBranch => " [label=T]",
                EdgeKind::FalseBranch => " [label=F]",
                EdgeKind::CallReturn => " [style=dashed]",
            };
            let _ = writeln!(out, "  b{} -> b{}{style};", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }
}

/// CALL instructions whose resolved syscall name is in `cpi_syscalls`.
pub fn find_cpi_sites<S: AsRef<str>>(cfg: &Cfg, cpi_syscalls: &[S]) -> BTreeSet<usize> {
    cfg.call_edges
        .iter()
        .filter(|c| match &c.callee {
            Callee::Syscall(name) => cpi_syscalls.iter().any(|s| s.as_ref() == name),
            _ => false,
        })
        .map(|c| c.site)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CpiReachability {
    pub cpi_sites: BTreeSet<usize>,
    /// Blocks from which a CPI site is reachable, through callees included.
    pub block_reaches: BTreeSet<usize>,
    /// Blocks that reach a CPI site without entering a callee.
    pub block_reaches_site: BTreeSet<usize>,
    pub function_reaches: BTreeSet<usize>,
}

fn backward_closure(cfg: &Cfg, seeds: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); cfg.blocks.len()];
    for e in &cfg.edges {
        pred[e.to].push(e.from);
    }
    let mut set: BTreeSet<usize> = seeds.into_iter().collect();
    let mut work: Vec<usize> = set.iter().copied().collect();
    while let Some(b) = work.pop() {
        for &p in &pred[b] {
            if set.insert(p) {
                work.push(p);
            }
        }
    }
    set
}

pub fn compute_reachability(cfg: &Cfg, sites: &BTreeSet<usize>) -> CpiReachability {
    let site_blocks: BTreeSet<usize> = sites.iter().filter_map(|&pc| cfg.block_of(pc)).collect();
    let block_reaches_site = backward_closure(cfg, site_blocks.iter().copied());
    let mut block_reaches = block_reaches_site.clone();
    let mut function_reaches = BTreeSet::new();
    loop {
        let mut grown = false;
        for (f, func) in cfg.functions.iter().enumerate() {
            if block_reaches.contains(&func.entry_block) && function_reaches.insert(f) {
                grown = true;
            }
        }
        let callers: Vec<usize> = cfg
            .call_edges
            .iter()
            .filter(|c| matches!(c.callee, Callee::Function(f) if function_reaches.contains(&f)))
            .filter_map(|c| cfg.block_of(c.site))
            .filter(|b| !block_reaches.contains(b))
            .collect();
        if !callers.is_empty() {
            grown = true;
            block_reaches = backward_closure(cfg, block_reaches.into_iter().chain(callers));
        }
        if !grown {
            break;
        }
    }
    CpiReachability {
        cpi_sites: sites.clone(),
        block_reaches,
        block_reaches_site,
        function_reaches,
    }
}
