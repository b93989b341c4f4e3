//! Loaded SBF program images.
//!
//! [`load_elf`] parses a Solana shared object, applies the load-time
//! relocations and produces an immutable [`ProgramImage`].

mod elf;
mod syscall_table;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::isa::{self, DecodeError, Instruction, INSN_SIZE};

pub use elf::{load_elf, EM_BPF, EM_SBF};
pub use syscall_table::SYSCALLS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("malformed ELF: {0}")]
    MalformedElf(String),
    #[error("unsupported machine type {0}")]
    UnsupportedMachine(u16),
    #[error("relocation error: {0}")]
    RelocationError(String),
}

/// A contiguous read-only data segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RodataSegment {
    pub vaddr: u64,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl RodataSegment {
    pub fn end(&self) -> u64 {
        self.vaddr + self.bytes.len() as u64
    }
}

/// How a `call imm` instruction resolves.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CallTarget {
    /// Internal function starting at this instruction index.
    Internal(usize),
    Syscall(String),
    Unresolved(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramImage {
    pub text: Vec<u8>,
    pub text_vaddr: u64,
    pub rodata_segments: Vec<RodataSegment>,
    pub entry_offset: usize,
    /// Function-start instruction index to symbol name.
    pub symbols: BTreeMap<usize, String>,
    /// Relocation hash to syscall name.
    pub syscall_names: BTreeMap<u32, String>,
    /// Hash to instruction index for internal calls encoded by hash.
    pub function_registry: BTreeMap<u32, usize>,
}

/// murmur3_32 with seed 0, the hash used for syscall and function keys.
pub fn hash_symbol_name(name: &[u8]) -> u32 {
    murmur3::murmur3_32(&mut std::io::Cursor::new(name), 0).expect("in-memory read")
}

/// Hash under which an internal function at `pc` is registered.
pub fn hash_function(pc: usize, name: &str) -> u32 {
    if name == "entrypoint" {
        hash_symbol_name(b"entrypoint")
    } else {
        hash_symbol_name(&(pc as u64).to_le_bytes())
    }
}

/// Name of a known syscall by hash.
pub fn known_syscall(hash: u32) -> Option<&'static str> {
    SYSCALLS.iter().find(|(h, _)| *h == hash).map(|(_, n)| *n)
}

/// Hash of a known syscall by name.
pub fn known_syscall_hash(name: &str) -> Option<u32> {
    SYSCALLS.iter().find(|(_, n)| *n == name).map(|(h, _)| *h)
}

impl ProgramImage {
    /// Text-only image with no symbols, entry at slot 0, text at the program base.
    pub fn from_text(text: Vec<u8>) -> Self {
        ProgramImage {
            text,
            text_vaddr: crate::vm::MM_PROGRAM_START,
            rodata_segments: Vec::new(),
            entry_offset: 0,
            symbols: BTreeMap::new(),
            syscall_names: BTreeMap::new(),
            function_registry: BTreeMap::new(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.text.len() / INSN_SIZE
    }

    /// Decodes the instruction starting at slot `pc`.
    pub fn instruction(&self, pc: usize) -> Result<Instruction, DecodeError> {
        let start = pc * INSN_SIZE;
        let slot = self
            .text
            .get(start..start + INSN_SIZE)
            .ok_or(DecodeError::OutOfRange(pc))?;
        let next = self.text.get(start + INSN_SIZE..start + 2 * INSN_SIZE);
        isa::decode(
            slot.try_into().unwrap(),
            next.map(|n| n.try_into().unwrap()),
        )
    }

    /// Resolves a `call imm` at `pc`: src=1 is pc-relative, otherwise imm is a hash.
    pub fn resolve_call(&self, pc: usize, insn: &Instruction) -> CallTarget {
        if insn.src == 1 {
            let target = pc as i64 + insn.imm + 1;
            if target >= 0 && (target as usize) < self.slot_count() {
                return CallTarget::Internal(target as usize);
            }
            return CallTarget::Unresolved(insn.imm as u32);
        }
        let hash = insn.imm as u32;
        if let Some(&pc) = self.function_registry.get(&hash) {
            return CallTarget::Internal(pc);
        }
        if let Some(name) = self.syscall_names.get(&hash) {
            return CallTarget::Syscall(name.clone());
        }
        match known_syscall(hash) {
            Some(name) => CallTarget::Syscall(name.to_string()),
            None => CallTarget::Unresolved(hash),
        }
    }

    /// Reads read-only program memory (text or rodata) at a virtual address.
    pub fn read_program(&self, addr: u64, len: usize) -> Option<&[u8]> {
        let text_end = self.text_vaddr + self.text.len() as u64;
        if addr >= self.text_vaddr && addr + len as u64 <= text_end {
            let off = (addr - self.text_vaddr) as usize;
            return Some(&self.text[off..off + len]);
        }
        self.rodata_segments.iter().find_map(|seg| {
            if addr >= seg.vaddr && addr + len as u64 <= seg.end() {
                let off = (addr - seg.vaddr) as usize;
                Some(&seg.bytes[off..off + len])
            } else {
                None
            }
        })
    }

    /// Every maximal run of printable ASCII of at least `min_len` bytes in
    /// rodata, ordered by address.
    pub fn iter_strings(&self, min_len: usize) -> Vec<(u64, String)> {
        let min_len = min_len.max(1);
        let mut out = Vec::new();
        for seg in &self.rodata_segments {
            let mut start = None;
            for (i, &b) in seg.bytes.iter().chain(std::iter::once(&0u8)).enumerate() {
                let printable = (0x20..0x7f).contains(&b) || b == b'\t' || b == b'\n';
                match (printable && i < seg.bytes.len(), start) {
                    (true, None) => start = Some(i),
                    (false, Some(s)) => {
                        if i - s >= min_len {
                            let text = String::from_utf8_lossy(&seg.bytes[s..i]).into_owned();
                            out.push((seg.vaddr + s as u64, text));
                        }
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        out.sort_by_key(|(addr, _)| *addr);
        out
    }

    /// Name of the function starting at `pc`, if the symbol table has one.
    pub fn function_name(&self, pc: usize) -> Option<&str> {
        self.symbols.get(&pc).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_with_rodata(bytes: &[u8]) -> ProgramImage {
        let mut image = ProgramImage::from_text(vec![0x95, 0, 0, 0, 0, 0, 0, 0]);
        image.rodata_segments.push(RodataSegment {
            vaddr: 0x1_0000_1000,
            bytes: bytes.to_vec(),
        });
        image
    }

    #[test]
    fn strings_respect_min_len() {
        let image = image_with_rodata(b"ab\0cdef\0");
        let strings = image.iter_strings(4);
        assert_eq!(strings, vec![(0x1_0000_1003, "cdef".to_string())]);
    }

    #[test]
    fn strings_include_trailing_run() {
        let image = image_with_rodata(b"\x01AnchorError occurred");
        let strings = image.iter_strings(8);
        assert_eq!(strings.len(), 1);
        assert_eq!(strings[0].0, 0x1_0000_1001);
        assert!(strings[0].1.contains("AnchorError occurred"));
    }

    #[test]
    fn empty_rodata_has_no_strings() {
        let image = ProgramImage::from_text(vec![0x95, 0, 0, 0, 0, 0, 0, 0]);
        assert!(image.iter_strings(1).is_empty());
    }

    #[test]
    fn syscall_table_matches_hash_function() {
        for (hash, name) in SYSCALLS {
            assert_eq!(hash_symbol_name(name.as_bytes()), *hash, "{name}");
        }
    }

    #[test]
    fn syscall_hashes_match_ecosystem_constants() {
        // Values as they appear in deployed-program tooling.
        let expected = [
            ("sol_log_", 0x207559bd),
            ("sol_log_pubkey", 0x7ef088ca),
            ("sol_create_program_address", 0x9377323c),
            ("sol_try_find_program_address", 0x48504a38),
            ("sol_invoke_signed_c", 0xa22b9c85),
            ("sol_invoke_signed_rust", 0xd7449092),
            ("sol_panic_", 0x686093bb),
        ];
        for (name, hash) in expected {
            assert_eq!(known_syscall_hash(name), Some(hash), "{name}");
        }
    }

    #[test]
    fn relative_call_resolution() {
        let image = ProgramImage::from_text(vec![0; 8 * 4]);
        let call = Instruction::call_relative(2);
        assert_eq!(image.resolve_call(0, &call), CallTarget::Internal(3));
        let call = Instruction::call_relative(10);
        assert!(matches!(
            image.resolve_call(0, &call),
            CallTarget::Unresolved(_)
        ));
    }
}
