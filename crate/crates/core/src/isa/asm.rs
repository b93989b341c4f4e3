//! Micro-assembler for test fixtures. The syntax is documented in `docs/asm.md`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{encode, AluOp, Class, Instruction, JumpCond, Op, Source, Width};
use crate::image::{hash_function, known_syscall, known_syscall_hash, ProgramImage, RodataSegment};
use crate::vm::MM_PROGRAM_START;

/// Section address of `.text` in linked fixtures.
pub const TEXT_ADDR: u64 = 0x120;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown syscall `{name}`")]
    UnknownSyscall { line: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelocKind {
    /// `lddw` of a rodata address; the immediate holds the rodata offset.
    Rodata,
    /// Call by hash to a syscall.
    Syscall(String),
    /// Call by hash to an internal function.
    Function(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relocation {
    pub slot: usize,
    pub kind: RelocKind,
}

/// Output of [`assemble`]: unlinked text plus everything a linker needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub text: Vec<u8>,
    pub labels: BTreeMap<String, usize>,
    /// Function symbols by start slot.
    pub functions: BTreeMap<usize, String>,
    pub entry: usize,
    pub rodata: Vec<u8>,
    pub rodata_labels: BTreeMap<String, usize>,
    pub relocations: Vec<Relocation>,
}

impl Assembly {
    pub fn text_vaddr(&self) -> u64 {
        TEXT_ADDR
    }

    /// Section address of the rodata blob, placed right after text.
    pub fn rodata_addr(&self) -> u64 {
        (TEXT_ADDR + self.text.len() as u64 + 7) & !7
    }

    /// Text with every relocation resolved, as the loader would produce it.
    pub fn linked_text(&self) -> Vec<u8> {
        let mut text = self.text.clone();
        for reloc in &self.relocations {
            if reloc.kind == RelocKind::Rodata {
                let off = reloc.slot * 8 + 4;
                let offset = u32::from_le_bytes(text[off..off + 4].try_into().unwrap()) as u64;
                let addr = MM_PROGRAM_START + self.rodata_addr() + offset;
                text[off..off + 4].copy_from_slice(&(addr as u32).to_le_bytes());
                text[off + 8..off + 12].copy_from_slice(&((addr >> 32) as u32).to_le_bytes());
            }
        }
        text
    }

    /// The loaded image this listing describes, without going through ELF.
    pub fn to_image(&self) -> ProgramImage {
        let mut image = ProgramImage::from_text(self.linked_text());
        image.text_vaddr = MM_PROGRAM_START + TEXT_ADDR;
        image.entry_offset = self.entry;
        image.symbols = self.functions.clone();
        if !self.rodata.is_empty() {
            image.rodata_segments.push(RodataSegment {
                vaddr: MM_PROGRAM_START + self.rodata_addr(),
                bytes: self.rodata.clone(),
            });
        }
        for reloc in &self.relocations {
            match &reloc.kind {
                RelocKind::Syscall(name) => {
                    let hash = known_syscall_hash(name).expect("checked at assembly");
                    image.syscall_names.insert(hash, name.clone());
                }
                RelocKind::Function(name) => {
                    let pc = self.labels[name];
                    image.function_registry.insert(hash_function(pc, name), pc);
                }
                RelocKind::Rodata => {}
            }
        }
        image
            .function_registry
            .insert(hash_function(self.entry, "entrypoint"), self.entry);
        image
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CallMode {
    Relative,
    Hashed,
}

struct Line<'a> {
    number: usize,
    mnemonic: &'a str,
    operands: Vec<&'a str>,
}

fn parse_err(line: usize, message: impl Into<String>) -> AsmError {
    AsmError::ParseError {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match c {
            '"' if prev != '\\' => in_string = !in_string,
            ';' if !in_string => return &line[..i],
            '/' if !in_string && line[i..].starts_with("//") => return &line[..i],
            _ => {}
        }
        prev = c;
    }
    line
}

fn parse_int(text: &str) -> Option<i128> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(&hex.replace('_', ""), 16).ok()?
    } else {
        body.replace('_', "").parse::<i128>().ok()?
    };
    Some(if neg { -value } else { value })
}

fn parse_reg(text: &str, line: usize) -> Result<u8, AsmError> {
    text.trim()
        .strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|&n| n <= 10)
        .ok_or_else(|| parse_err(line, format!("expected register, found `{text}`")))
}

fn parse_imm32(text: &str, line: usize) -> Result<i64, AsmError> {
    let value = parse_int(text)
        .ok_or_else(|| parse_err(line, format!("expected immediate, found `{text}`")))?;
    if value < i32::MIN as i128 || value > u32::MAX as i128 {
        return Err(parse_err(
            line,
            format!("immediate {value} does not fit in 32 bits"),
        ));
    }
    Ok(value as u32 as i32 as i64)
}

/// Parses `[rN]`, `[rN+off]` or `[rN-off]`.
fn parse_mem(text: &str, line: usize) -> Result<(u8, i16), AsmError> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| parse_err(line, format!("expected memory operand, found `{text}`")))?;
    let split = inner.find(['+', '-']);
    let (reg, off) = match split {
        Some(i) => (&inner[..i], parse_int(&inner[i..])),
        None => (inner, Some(0)),
    };
    let off = off
        .filter(|&o| o >= i16::MIN as i128 && o <= i16::MAX as i128)
        .ok_or_else(|| parse_err(line, format!("bad memory offset in `{text}`")))?;
    Ok((parse_reg(reg, line)?, off as i16))
}

fn parse_string_literal(text: &str, line: usize) -> Result<Vec<u8>, AsmError> {
    let body = text
        .trim()
        .strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .ok_or_else(|| parse_err(line, "expected quoted string"))?;
    let mut out = Vec::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('x') => {
                let hex: String = chars.by_ref().take(2).collect();
                let byte = u8::from_str_radix(&hex, 16)
                    .map_err(|_| parse_err(line, format!("bad escape \\x{hex}")))?;
                out.push(byte);
            }
            other => return Err(parse_err(line, format!("bad escape {other:?}"))),
        }
    }
    Ok(out)
}

fn alu_mnemonic(name: &str) -> Option<(AluOp, Class)> {
    let (base, class) = if let Some(b) = name.strip_suffix("64") {
        (b, Class::Alu64)
    } else {
        (name.strip_suffix("32")?, Class::Alu32)
    };
    let op = match base {
        "add" => AluOp::Add,
        "sub" => AluOp::Sub,
        "mul" => AluOp::Mul,
        "div" => AluOp::Div,
        "or" => AluOp::Or,
        "and" => AluOp::And,
        "lsh" => AluOp::Lsh,
        "rsh" => AluOp::Rsh,
        "neg" => AluOp::Neg,
        "mod" => AluOp::Mod,
        "xor" => AluOp::Xor,
        "mov" => AluOp::Mov,
        "arsh" => AluOp::Arsh,
        _ => return None,
    };
    Some((op, class))
}

fn jump_mnemonic(name: &str) -> Option<(JumpCond, Class)> {
    let (base, class) = match name.strip_suffix("32") {
        Some(b) => (b, Class::Jmp32),
        None => (name, Class::Jmp),
    };
    let cond = match base {
        "ja" if class == Class::Jmp => JumpCond::Always,
        "jeq" => JumpCond::Eq,
        "jgt" => JumpCond::Gt,
        "jge" => JumpCond::Ge,
        "jset" => JumpCond::Set,
        "jne" => JumpCond::Ne,
        "jsgt" => JumpCond::Sgt,
        "jsge" => JumpCond::Sge,
        "jlt" => JumpCond::Lt,
        "jle" => JumpCond::Le,
        "jslt" => JumpCond::Slt,
        "jsle" => JumpCond::Sle,
        _ => return None,
    };
    Some((cond, class))
}

fn mem_mnemonic(name: &str) -> Option<(Class, Width)> {
    let (class, rest) = if let Some(r) = name.strip_prefix("ldx") {
        (Class::Ldx, r)
    } else if let Some(r) = name.strip_prefix("stx") {
        (Class::Stx, r)
    } else {
        (Class::St, name.strip_prefix("st")?)
    };
    let width = match rest {
        "b" => Width::B,
        "h" => Width::H,
        "w" => Width::W,
        "dw" => Width::DW,
        _ => return None,
    };
    Some((class, width))
}

fn expect_operands(line: &Line, n: usize) -> Result<(), AsmError> {
    if line.operands.len() != n {
        return Err(parse_err(
            line.number,
            format!(
                "`{}` takes {n} operand(s), found {}",
                line.mnemonic,
                line.operands.len()
            ),
        ));
    }
    Ok(())
}

/// Assembles a listing into unlinked text plus label and relocation tables.
pub fn assemble(source: &str) -> Result<Assembly, AsmError> {
    let mut lines = Vec::new();
    let mut labels = BTreeMap::new();
    let mut functions = BTreeMap::new();
    let mut rodata = Vec::new();
    let mut rodata_labels = BTreeMap::new();
    let mut call_mode = CallMode::Relative;
    let mut entry_label: Option<(usize, String)> = None;
    let mut slot = 0usize;

    for (index, raw) in source.lines().enumerate() {
        let number = index + 1;
        let mut text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix(".rodata") {
            let rest = rest.trim_start();
            let (name, value) = rest
                .split_once(char::is_whitespace)
                .ok_or_else(|| parse_err(number, ".rodata needs a name and a value"))?;
            let value = value.trim();
            let bytes = match value.strip_prefix("hex:") {
                Some(hex_text) => hex::decode(hex_text.trim())
                    .map_err(|e| parse_err(number, format!("bad hex: {e}")))?,
                None => parse_string_literal(value, number)?,
            };
            if rodata_labels
                .insert(name.to_string(), rodata.len())
                .is_some()
            {
                return Err(parse_err(
                    number,
                    format!("duplicate rodata label `{name}`"),
                ));
            }
            rodata.extend_from_slice(&bytes);
            continue;
        }
        if let Some(rest) = text.strip_prefix(".func") {
            let name = rest.trim();
            if name.is_empty() {
                return Err(parse_err(number, ".func needs a name"));
            }
            if labels.insert(name.to_string(), slot).is_some() {
                return Err(parse_err(number, format!("duplicate label `{name}`")));
            }
            functions.insert(slot, name.to_string());
            continue;
        }
        if let Some(rest) = text.strip_prefix(".entry") {
            entry_label = Some((number, rest.trim().to_string()));
            continue;
        }
        if let Some(rest) = text.strip_prefix(".calls") {
            call_mode = match rest.trim() {
                "hashed" => CallMode::Hashed,
                "relative" => CallMode::Relative,
                other => return Err(parse_err(number, format!("unknown call mode `{other}`"))),
            };
            continue;
        }
        if text.starts_with('.') {
            return Err(parse_err(number, format!("unknown directive `{text}`")));
        }
        while let Some((label, rest)) = text.split_once(':') {
            let label = label.trim();
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_alphanumeric() || c == '_' || c == '.')
            {
                break;
            }
            if labels.insert(label.to_string(), slot).is_some() {
                return Err(parse_err(number, format!("duplicate label `{label}`")));
            }
            text = rest.trim();
        }
        if text.is_empty() {
            continue;
        }
        let (mnemonic, rest) = match text.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r.trim()),
            None => (text, ""),
        };
        let operands = if rest.is_empty() {
            Vec::new()
        } else {
            split_operands(rest)
        };
        slot += if mnemonic == "lddw" { 2 } else { 1 };
        lines.push((
            slot,
            Line {
                number,
                mnemonic,
                operands,
            },
            call_mode,
        ));
    }

    let mut text = Vec::with_capacity(slot * 8);
    let mut relocations = Vec::new();
    for (end_slot, line, mode) in &lines {
        let pc = text.len() / 8;
        let insn = assemble_line(line, pc, *mode, &labels, &rodata_labels, &mut relocations)?;
        debug_assert_eq!(pc + insn.size_slots(), *end_slot);
        let bytes = encode(&insn).map_err(|e| parse_err(line.number, e.to_string()))?;
        text.extend_from_slice(&bytes);
    }

    let entry = match entry_label {
        Some((number, name)) => *labels.get(&name).ok_or(AsmError::UnknownLabel {
            line: number,
            label: name.clone(),
        })?,
        None => labels.get("entrypoint").copied().unwrap_or(0),
    };

    Ok(Assembly {
        text,
        labels,
        functions,
        entry,
        rodata,
        rodata_labels,
        relocations,
    })
}

fn split_operands(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(text[start..].trim());
    out
}

fn jump_offset(
    target: &str,
    pc: usize,
    line: usize,
    labels: &BTreeMap<String, usize>,
) -> Result<i16, AsmError> {
    let delta = if target.starts_with(['+', '-']) {
        parse_int(target).ok_or_else(|| parse_err(line, format!("bad offset `{target}`")))?
    } else {
        let dest = labels.get(target).ok_or_else(|| AsmError::UnknownLabel {
            line,
            label: target.to_string(),
        })?;
        *dest as i128 - pc as i128 - 1
    };
    i16::try_from(delta).map_err(|_| parse_err(line, format!("jump to `{target}` out of range")))
}

fn assemble_line(
    line: &Line,
    pc: usize,
    mode: CallMode,
    labels: &BTreeMap<String, usize>,
    rodata_labels: &BTreeMap<String, usize>,
    relocations: &mut Vec<Relocation>,
) -> Result<Instruction, AsmError> {
    let n = line.number;
    let ops = &line.operands;
    let m = line.mnemonic;
    if m == "exit" {
        expect_operands(line, 0)?;
        return Ok(Instruction::exit());
    }
    if m == "lddw" {
        expect_operands(line, 2)?;
        let dst = parse_reg(ops[0], n)?;
        let value = match parse_int(ops[1]) {
            Some(v) => {
                if v < i64::MIN as i128 || v > u64::MAX as i128 {
                    return Err(parse_err(
                        n,
                        format!("immediate {v} does not fit in 64 bits"),
                    ));
                }
                v as u64 as i64
            }
            None => {
                let (name, add) = match ops[1].split_once('+') {
                    Some((name, add)) => (
                        name.trim(),
                        parse_int(add)
                            .ok_or_else(|| parse_err(n, format!("bad addend `{add}`")))?,
                    ),
                    None => (ops[1], 0),
                };
                let base = rodata_labels
                    .get(name)
                    .ok_or_else(|| AsmError::UnknownLabel {
                        line: n,
                        label: name.to_string(),
                    })?;
                relocations.push(Relocation {
                    slot: pc,
                    kind: RelocKind::Rodata,
                });
                (*base as i128 + add) as i64
            }
        };
        return Ok(Instruction::new(
            Class::LdImm64,
            Op::LdImm64,
            dst,
            0,
            0,
            value,
        ));
    }
    if m == "call" {
        expect_operands(line, 1)?;
        let target = ops[0];
        if let Some(name) = target.strip_prefix('$') {
            let hash = known_syscall_hash(name).ok_or_else(|| AsmError::UnknownSyscall {
                line: n,
                name: name.to_string(),
            })?;
            relocations.push(Relocation {
                slot: pc,
                kind: RelocKind::Syscall(name.to_string()),
            });
            return Ok(Instruction::new(
                Class::Call,
                Op::Call(Source::Imm),
                0,
                0,
                0,
                hash as i32 as i64,
            ));
        }
        if let Some(raw) = target.strip_prefix('#') {
            let hash = parse_int(raw)
                .filter(|&v| (0..=u32::MAX as i128).contains(&v))
                .ok_or_else(|| parse_err(n, format!("bad hash `{raw}`")))?;
            return Ok(Instruction::new(
                Class::Call,
                Op::Call(Source::Imm),
                0,
                0,
                0,
                hash as u32 as i32 as i64,
            ));
        }
        if target.starts_with(['+', '-']) {
            let delta = parse_imm32(target, n)?;
            return Ok(Instruction::call_relative(delta));
        }
        let dest = *labels.get(target).ok_or_else(|| AsmError::UnknownLabel {
            line: n,
            label: target.to_string(),
        })?;
        return Ok(match mode {
            CallMode::Relative => Instruction::call_relative(dest as i64 - pc as i64 - 1),
            CallMode::Hashed => {
                relocations.push(Relocation {
                    slot: pc,
                    kind: RelocKind::Function(target.to_string()),
                });
                let hash = hash_function(dest, target);
                Instruction::new(
                    Class::Call,
                    Op::Call(Source::Imm),
                    0,
                    0,
                    0,
                    hash as i32 as i64,
                )
            }
        });
    }
    if m == "callx" {
        expect_operands(line, 1)?;
        let reg = parse_reg(ops[0], n)?;
        return Ok(Instruction::new(
            Class::Call,
            Op::Call(Source::Reg),
            0,
            0,
            0,
            reg as i64,
        ));
    }
    if let Some(bits) = m.strip_prefix("le").or_else(|| m.strip_prefix("be")) {
        if let Ok(bits @ (16 | 32 | 64)) = bits.parse::<i64>() {
            expect_operands(line, 1)?;
            let op = if m.starts_with("le") {
                AluOp::Le
            } else {
                AluOp::Be
            };
            let dst = parse_reg(ops[0], n)?;
            return Ok(Instruction::new(
                Class::Alu32,
                Op::Alu(op, Source::Imm),
                dst,
                0,
                0,
                bits,
            ));
        }
    }
    if let Some((op, class)) = alu_mnemonic(m) {
        if op == AluOp::Neg {
            expect_operands(line, 1)?;
            let dst = parse_reg(ops[0], n)?;
            return Ok(Instruction::new(
                class,
                Op::Alu(op, Source::Imm),
                dst,
                0,
                0,
                0,
            ));
        }
        expect_operands(line, 2)?;
        let dst = parse_reg(ops[0], n)?;
        return Ok(if ops[1].starts_with('r') {
            let src = parse_reg(ops[1], n)?;
            Instruction::new(class, Op::Alu(op, Source::Reg), dst, src, 0, 0)
        } else {
            let imm = parse_imm32(ops[1], n)?;
            Instruction::new(class, Op::Alu(op, Source::Imm), dst, 0, 0, imm)
        });
    }
    if let Some((cond, class)) = jump_mnemonic(m) {
        if cond == JumpCond::Always {
            expect_operands(line, 1)?;
            let off = jump_offset(ops[0], pc, n, labels)?;
            return Ok(Instruction::new(
                class,
                Op::Jump(cond, Source::Imm),
                0,
                0,
                off,
                0,
            ));
        }
        expect_operands(line, 3)?;
        let dst = parse_reg(ops[0], n)?;
        let off = jump_offset(ops[2], pc, n, labels)?;
        return Ok(if ops[1].starts_with('r') {
            let src = parse_reg(ops[1], n)?;
            Instruction::new(class, Op::Jump(cond, Source::Reg), dst, src, off, 0)
        } else {
            let imm = parse_imm32(ops[1], n)?;
            Instruction::new(class, Op::Jump(cond, Source::Imm), dst, 0, off, imm)
        });
    }
    if let Some((class, width)) = mem_mnemonic(m) {
        expect_operands(line, 2)?;
        return Ok(match class {
            Class::Ldx => {
                let dst = parse_reg(ops[0], n)?;
                let (src, off) = parse_mem(ops[1], n)?;
                Instruction::new(class, Op::Mem(width), dst, src, off, 0)
            }
            Class::St => {
                let (dst, off) = parse_mem(ops[0], n)?;
                let imm = parse_imm32(ops[1], n)?;
                Instruction::new(class, Op::Mem(width), dst, 0, off, imm)
            }
            _ => {
                let (dst, off) = parse_mem(ops[0], n)?;
                let src = parse_reg(ops[1], n)?;
                Instruction::new(class, Op::Mem(width), dst, src, off, 0)
            }
        });
    }
    Err(parse_err(n, format!("unknown mnemonic `{m}`")))
}

fn alu_name(op: AluOp) -> &'static str {
    match op {
        AluOp::Add => "add",
        AluOp::Sub => "sub",
        AluOp::Mul => "mul",
        AluOp::Div => "div",
        AluOp::Or => "or",
        AluOp::And => "and",
        AluOp::Lsh => "lsh",
        AluOp::Rsh => "rsh",
        AluOp::Neg => "neg",
        AluOp::Mod => "mod",
        AluOp::Xor => "xor",
        AluOp::Mov => "mov",
        AluOp::Arsh => "arsh",
        AluOp::Le => "le",
        AluOp::Be => "be",
    }
}

fn jump_name(cond: JumpCond) -> &'static str {
    match cond {
        JumpCond::Always => "ja",
        JumpCond::Eq => "jeq",
        JumpCond::Gt => "jgt",
        JumpCond::Ge => "jge",
        JumpCond::Set => "jset",
        JumpCond::Ne => "jne",
        JumpCond::Sgt => "jsgt",
        JumpCond::Sge => "jsge",
        JumpCond::Lt => "jlt",
        JumpCond::Le => "jle",
        JumpCond::Slt => "jslt",
        JumpCond::Sle => "jsle",
    }
}

fn width_suffix(width: Width) -> &'static str {
    match width {
        Width::B => "b",
        Width::H => "h",
        Width::W => "w",
        Width::DW => "dw",
    }
}

fn mem_operand(reg: u8, off: i16) -> String {
    if off < 0 {
        format!("[r{reg}-{}]", -(off as i32))
    } else {
        format!("[r{reg}+{off}]")
    }
}

fn signed_delta(value: i64) -> String {
    if value < 0 {
        format!("{value}")
    } else {
        format!("+{value}")
    }
}

/// Renders an instruction in assembler syntax; jumps use raw offsets.
pub fn disassemble(insn: &Instruction, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let bits = |class| if class == Class::Alu64 { "64" } else { "32" };
    match insn.op {
        Op::Exit => write!(f, "exit"),
        Op::LdImm64 => write!(f, "lddw r{}, {:#x}", insn.dst, insn.imm as u64),
        Op::Alu(op @ (AluOp::Le | AluOp::Be), _) => {
            write!(f, "{}{} r{}", alu_name(op), insn.imm, insn.dst)
        }
        Op::Alu(AluOp::Neg, _) => write!(f, "neg{} r{}", bits(insn.class), insn.dst),
        Op::Alu(op, Source::Reg) => {
            write!(
                f,
                "{}{} r{}, r{}",
                alu_name(op),
                bits(insn.class),
                insn.dst,
                insn.src
            )
        }
        Op::Alu(op, Source::Imm) => {
            write!(
                f,
                "{}{} r{}, {}",
                alu_name(op),
                bits(insn.class),
                insn.dst,
                insn.imm
            )
        }
        Op::Jump(cond, source) => {
            let suffix = if insn.class == Class::Jmp32 { "32" } else { "" };
            let target = signed_delta(insn.offset as i64);
            match (cond, source) {
                (JumpCond::Always, _) => write!(f, "ja {target}"),
                (_, Source::Reg) => write!(
                    f,
                    "{}{suffix} r{}, r{}, {target}",
                    jump_name(cond),
                    insn.dst,
                    insn.src
                ),
                (_, Source::Imm) => write!(
                    f,
                    "{}{suffix} r{}, {}, {target}",
                    jump_name(cond),
                    insn.dst,
                    insn.imm
                ),
            }
        }
        Op::Mem(width) => match insn.class {
            Class::Ldx => write!(
                f,
                "ldx{} r{}, {}",
                width_suffix(width),
                insn.dst,
                mem_operand(insn.src, insn.offset)
            ),
            Class::St => write!(
                f,
                "st{} {}, {}",
                width_suffix(width),
                mem_operand(insn.dst, insn.offset),
                insn.imm
            ),
            _ => write!(
                f,
                "stx{} {}, r{}",
                width_suffix(width),
                mem_operand(insn.dst, insn.offset),
                insn.src
            ),
        },
        Op::Call(Source::Reg) => write!(f, "callx r{}", insn.imm),
        Op::Call(Source::Imm) if insn.src == 1 => write!(f, "call {}", signed_delta(insn.imm)),
        Op::Call(Source::Imm) => match known_syscall(insn.imm as u32) {
            Some(name) => write!(f, "call ${name}"),
            None => write!(f, "call #{:#x}", insn.imm as u32),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn exit_is_one_slot() {
        let asm = assemble("exit").unwrap();
        assert_eq!(asm.text, vec![0x95, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn mov_exit_is_two_slots() {
        assert_eq!(assemble("mov64 r0, 0\nexit").unwrap().text.len(), 16);
    }

    #[test]
    fn backward_branch_offset() {
        let src = "\
mov64 r0, 0
mov64 r1, 5
loop:
add64 r0, 2
sub64 r1, 1
jne r1, 0, loop
exit";
        let asm = assemble(src).unwrap();
        // Branch at slot 4, label at slot 2: displacement 2 - 4 - 1.
        let slot: [u8; 8] = asm.text[32..40].try_into().unwrap();
        assert_eq!(decode(&slot, None).unwrap().offset, -3);
        assert_eq!(asm.labels["loop"], 2);
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(
            assemble("exit\nja nowhere"),
            Err(AsmError::UnknownLabel {
                line: 2,
                label: "nowhere".into()
            })
        );
        assert_eq!(
            assemble("call $not_a_syscall"),
            Err(AsmError::UnknownSyscall {
                line: 1,
                name: "not_a_syscall".into()
            })
        );
        assert!(matches!(
            assemble("mov64 r0"),
            Err(AsmError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn rodata_and_lddw() {
        let src = ".rodata key hex:0102\n.rodata msg \"hi\\n\"\nlddw r1, msg\nexit";
        let asm = assemble(src).unwrap();
        assert_eq!(asm.rodata, vec![1, 2, b'h', b'i', b'\n']);
        assert_eq!(asm.rodata_labels["msg"], 2);
        let image = asm.to_image();
        let insn = image.instruction(0).unwrap();
        assert_eq!(insn.imm as u64, MM_PROGRAM_START + asm.rodata_addr() + 2);
        assert_eq!(image.read_program(insn.imm as u64, 3), Some(&b"hi\n"[..]));
    }

    #[test]
    fn hashed_calls_register_functions() {
        let src = ".calls hashed\n.func entrypoint\ncall helper\nexit\n.func helper\nexit";
        let asm = assemble(src).unwrap();
        let image = asm.to_image();
        let insn = image.instruction(0).unwrap();
        assert_eq!(
            image.resolve_call(0, &insn),
            crate::image::CallTarget::Internal(2)
        );
    }

    #[test]
    fn disassembly_reassembles() {
        let src = "\
mov64 r2, r1
add32 r3, -7
ldxdw r4, [r1-16]
stw [r10-8], 9
stxb [r2+3], r4
jsgt32 r3, r4, +1
neg64 r5
be16 r5
lddw r6, 0x1122334455667788
call $sol_log_
exit";
        let asm = assemble(src).unwrap();
        let image = asm.to_image();
        let mut listing = String::new();
        let mut pc = 0;
        while pc < image.slot_count() {
            let insn = image.instruction(pc).unwrap();
            listing.push_str(&format!("{insn}\n"));
            pc += insn.size_slots();
        }
        assert_eq!(assemble(&listing).unwrap().text, asm.text);
    }
}
