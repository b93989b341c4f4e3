//! Minimal ELF64 reader for SBF shared objects.
//!
//! Relocations are read from `SHT_REL` sections through their linked symbol
//! table, so both section-header-only objects and fully linked `.so` files load.

use std::collections::BTreeMap;

use super::{hash_function, hash_symbol_name, ImageError, ProgramImage, RodataSegment};
use crate::isa::INSN_SIZE;
use crate::vm::MM_PROGRAM_START;

pub const EM_BPF: u16 = 247;
pub const EM_SBF: u16 = 263;

const SHT_SYMTAB: u32 = 2;
const SHT_RELA: u32 = 4;
const SHT_NOBITS: u32 = 8;
const SHT_REL: u32 = 9;
const SHT_DYNSYM: u32 = 11;
const SHT_PROGBITS: u32 = 1;

const SHF_ALLOC: u64 = 0x2;
const SHF_EXECINSTR: u64 = 0x4;

const STT_FUNC: u8 = 2;

const R_BPF_NONE: u32 = 0;
const R_BPF_64_64: u32 = 1;
const R_BPF_64_RELATIVE: u32 = 8;
const R_BPF_64_32: u32 = 10;

fn malformed(msg: impl Into<String>) -> ImageError {
    ImageError::MalformedElf(msg.into())
}

fn reloc_err(msg: impl Into<String>) -> ImageError {
    ImageError::RelocationError(msg.into())
}

fn read_u16(b: &[u8], off: usize) -> Result<u16, ImageError> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| malformed(format!("truncated at {off:#x}")))
}

fn read_u32(b: &[u8], off: usize) -> Result<u32, ImageError> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| malformed(format!("truncated at {off:#x}")))
}

fn read_u64(b: &[u8], off: usize) -> Result<u64, ImageError> {
    b.get(off..off + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| malformed(format!("truncated at {off:#x}")))
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    kind: u32,
    flags: u64,
    addr: u64,
    offset: u64,
    size: u64,
    link: u32,
}

impl Section {
    fn file_range(&self) -> std::ops::Range<usize> {
        self.offset as usize..(self.offset + self.size) as usize
    }

    fn contains_vaddr(&self, vaddr: u64) -> bool {
        self.kind != SHT_NOBITS && vaddr >= self.addr && vaddr < self.addr + self.size
    }
}

#[derive(Debug, Clone)]
struct Symbol {
    name: String,
    info: u8,
    shndx: u16,
    value: u64,
}

impl Symbol {
    fn is_function(&self) -> bool {
        self.info & 0xf == STT_FUNC
    }
}

struct Elf<'a> {
    bytes: &'a [u8],
    entry: u64,
    sections: Vec<Section>,
}

fn cstr(bytes: &[u8], off: usize) -> Result<String, ImageError> {
    let tail = bytes
        .get(off..)
        .ok_or_else(|| malformed(format!("string offset {off:#x} out of range")))?;
    let end = tail
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| malformed("unterminated string"))?;
    Ok(String::from_utf8_lossy(&tail[..end]).into_owned())
}

impl<'a> Elf<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self, ImageError> {
        if bytes.len() < 64 || &bytes[..4] != b"\x7fELF" {
            return Err(malformed("bad magic or truncated header"));
        }
        if bytes[4] != 2 {
            return Err(malformed("not a 64-bit ELF"));
        }
        if bytes[5] != 1 {
            return Err(malformed("not little-endian"));
        }
        let machine = read_u16(bytes, 18)?;
        if machine != EM_BPF && machine != EM_SBF {
            return Err(ImageError::UnsupportedMachine(machine));
        }
        let entry = read_u64(bytes, 24)?;
        let shoff = read_u64(bytes, 40)? as usize;
        let shentsize = read_u16(bytes, 58)? as usize;
        let shnum = read_u16(bytes, 60)? as usize;
        let shstrndx = read_u16(bytes, 62)? as usize;
        if shnum > 0 && shentsize != 64 {
            return Err(malformed(format!("section header size {shentsize}")));
        }
        let mut raw = Vec::with_capacity(shnum);
        for i in 0..shnum {
            let base = shoff
                .checked_add(i * 64)
                .ok_or_else(|| malformed("section header offset overflow"))?;
            let section = Section {
                name: String::new(),
                kind: read_u32(bytes, base + 4)?,
                flags: read_u64(bytes, base + 8)?,
                addr: read_u64(bytes, base + 16)?,
                offset: read_u64(bytes, base + 24)?,
                size: read_u64(bytes, base + 32)?,
                link: read_u32(bytes, base + 40)?,
            };
            if section.kind != SHT_NOBITS
                && section
                    .offset
                    .checked_add(section.size)
                    .is_none_or(|end| end as usize > bytes.len())
            {
                return Err(malformed(format!("section {i} exceeds file")));
            }
            raw.push((read_u32(bytes, base)?, section));
        }
        let strtab = raw
            .get(shstrndx)
            .map(|(_, s)| s.file_range())
            .ok_or_else(|| malformed("missing section name table"))?;
        let sections = raw
            .into_iter()
            .map(|(name_off, mut s)| {
                s.name = cstr(&bytes[strtab.clone()], name_off as usize)?;
                Ok(s)
            })
            .collect::<Result<Vec<_>, ImageError>>()?;
        Ok(Elf {
            bytes,
            entry,
            sections,
        })
    }

    fn symbols(&self, index: usize) -> Result<Vec<Symbol>, ImageError> {
        let table = self
            .sections
            .get(index)
            .ok_or_else(|| malformed(format!("symbol table {index} missing")))?;
        let strings = self
            .sections
            .get(table.link as usize)
            .ok_or_else(|| malformed("symbol string table missing"))?;
        let strbytes = &self.bytes[strings.file_range()];
        let data = &self.bytes[table.file_range()];
        data.chunks_exact(24)
            .map(|ent| {
                Ok(Symbol {
                    name: cstr(strbytes, read_u32(ent, 0)? as usize)?,
                    info: ent[4],
                    shndx: read_u16(ent, 6)?,
                    value: read_u64(ent, 8)?,
                })
            })
            .collect()
    }

    fn file_offset(&self, vaddr: u64) -> Option<usize> {
        self.sections
            .iter()
            .find(|s| s.flags & SHF_ALLOC != 0 && s.contains_vaddr(vaddr))
            .map(|s| (s.offset + (vaddr - s.addr)) as usize)
    }
}

fn patch_u32(buf: &mut [u8], off: usize, value: u32) -> Result<(), ImageError> {
    buf.get_mut(off..off + 4)
        .ok_or_else(|| reloc_err(format!("patch offset {off:#x} out of range")))?
        .copy_from_slice(&value.to_le_bytes());
    Ok(())
}

/// Parses an SBF shared object and applies its load-time relocations.
pub fn load_elf(bytes: &[u8]) -> Result<ProgramImage, ImageError> {
    let elf = Elf::parse(bytes)?;
    let text_index = elf
        .sections
        .iter()
        .position(|s| s.name == ".text")
        .or_else(|| {
            elf.sections
                .iter()
                .position(|s| s.flags & SHF_EXECINSTR != 0 && s.kind == SHT_PROGBITS)
        })
        .ok_or_else(|| malformed("no text section"))?;
    let text_section = elf.sections[text_index].clone();
    if text_section.size % INSN_SIZE as u64 != 0 {
        return Err(malformed("text size is not a multiple of 8"));
    }
    let slot_count = (text_section.size / INSN_SIZE as u64) as usize;
    let text_range = text_section.file_range();

    let mut patched = bytes.to_vec();
    let mut syscall_names = BTreeMap::new();
    let mut function_registry = BTreeMap::new();

    if let Some(rel_section) = elf.sections.iter().find(|s| s.kind == SHT_RELA) {
        return Err(reloc_err(format!(
            "RELA relocations are not used by SBF ({})",
            rel_section.name
        )));
    }
    for rel_section in elf.sections.iter().filter(|s| s.kind == SHT_REL) {
        let symbols = if rel_section.link == 0 {
            Vec::new()
        } else {
            elf.symbols(rel_section.link as usize)?
        };
        for ent in bytes[rel_section.file_range()].chunks_exact(16) {
            let r_offset = read_u64(ent, 0)?;
            let r_info = read_u64(ent, 8)?;
            let r_type = (r_info & 0xffff_ffff) as u32;
            let r_sym = (r_info >> 32) as usize;
            if r_type == R_BPF_NONE {
                continue;
            }
            let off = elf
                .file_offset(r_offset)
                .ok_or_else(|| reloc_err(format!("offset {r_offset:#x} outside any section")))?;
            let in_text = text_range.contains(&off);
            let imm_off = off + 4;
            let symbol = |idx: usize| {
                symbols
                    .get(idx)
                    .ok_or_else(|| reloc_err(format!("symbol index {idx} out of range")))
            };
            match r_type {
                R_BPF_64_64 => {
                    if !in_text || off + 16 > text_range.end {
                        return Err(reloc_err(format!(
                            "R_BPF_64_64 at {r_offset:#x} not on lddw"
                        )));
                    }
                    let sym = symbol(r_sym)?;
                    let addend = read_u32(&patched, imm_off)? as u64;
                    let mut addr = sym.value.wrapping_add(addend);
                    if addr < MM_PROGRAM_START {
                        addr += MM_PROGRAM_START;
                    }
                    patch_u32(&mut patched, imm_off, addr as u32)?;
                    patch_u32(&mut patched, imm_off + INSN_SIZE, (addr >> 32) as u32)?;
                }
                R_BPF_64_RELATIVE => {
                    if in_text {
                        if off + 16 > text_range.end {
                            return Err(reloc_err(format!(
                                "relative reloc at {r_offset:#x} truncated"
                            )));
                        }
                        let lo = read_u32(&patched, imm_off)? as u64;
                        let hi = read_u32(&patched, imm_off + INSN_SIZE)? as u64;
                        let mut addr = (hi << 32) | lo;
                        if addr == 0 {
                            return Err(reloc_err(format!(
                                "null relative target at {r_offset:#x}"
                            )));
                        }
                        if addr < MM_PROGRAM_START {
                            addr += MM_PROGRAM_START;
                        }
                        patch_u32(&mut patched, imm_off, addr as u32)?;
                        patch_u32(&mut patched, imm_off + INSN_SIZE, (addr >> 32) as u32)?;
                    } else {
                        let mut addr = read_u64(&patched, off).map_err(|_| {
                            reloc_err(format!("relative reloc at {r_offset:#x} truncated"))
                        })?;
                        if addr < MM_PROGRAM_START {
                            addr += MM_PROGRAM_START;
                        }
                        patched[off..off + 8].copy_from_slice(&addr.to_le_bytes());
                    }
                }
                R_BPF_64_32 => {
                    if !in_text {
                        return Err(reloc_err(format!(
                            "call relocation at {r_offset:#x} outside text"
                        )));
                    }
                    let sym = symbol(r_sym)?;
                    let hash = if sym.is_function() && sym.value != 0 {
                        if !text_section.contains_vaddr(sym.value)
                            || (sym.value - text_section.addr) % INSN_SIZE as u64 != 0
                        {
                            return Err(reloc_err(format!(
                                "call target {} outside text",
                                sym.name
                            )));
                        }
                        let pc = ((sym.value - text_section.addr) / INSN_SIZE as u64) as usize;
                        let hash = hash_function(pc, &sym.name);
                        function_registry.insert(hash, pc);
                        hash
                    } else {
                        let hash = hash_symbol_name(sym.name.as_bytes());
                        syscall_names.insert(hash, sym.name.clone());
                        hash
                    };
                    patch_u32(&mut patched, imm_off, hash)?;
                }
                other => return Err(reloc_err(format!("unknown relocation type {other}"))),
            }
        }
    }

    let mut symbols = BTreeMap::new();
    let mut entry_symbol = None;
    for (i, section) in elf.sections.iter().enumerate() {
        if section.kind != SHT_SYMTAB && section.kind != SHT_DYNSYM {
            continue;
        }
        for sym in elf.symbols(i)? {
            if !sym.is_function() || sym.shndx == 0 || sym.name.is_empty() {
                continue;
            }
            if !text_section.contains_vaddr(sym.value) {
                continue;
            }
            let offset = sym.value - text_section.addr;
            if offset % INSN_SIZE as u64 != 0 {
                continue;
            }
            let pc = (offset / INSN_SIZE as u64) as usize;
            if sym.name == "entrypoint" {
                entry_symbol = Some(pc);
            }
            symbols.entry(pc).or_insert(sym.name);
        }
    }

    let entry_offset = match entry_symbol {
        Some(pc) => pc,
        None => {
            if !text_section.contains_vaddr(elf.entry)
                || (elf.entry - text_section.addr) % INSN_SIZE as u64 != 0
            {
                return Err(malformed(format!("entry {:#x} outside text", elf.entry)));
            }
            ((elf.entry - text_section.addr) / INSN_SIZE as u64) as usize
        }
    };
    if entry_offset >= slot_count {
        return Err(malformed("entry beyond text"));
    }
    function_registry.insert(hash_function(entry_offset, "entrypoint"), entry_offset);

    let text_vaddr = text_section.addr + MM_PROGRAM_START;
    let mut rodata_segments: Vec<RodataSegment> = elf
        .sections
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            *i != text_index
                && s.kind == SHT_PROGBITS
                && s.flags & SHF_ALLOC != 0
                && s.flags & SHF_EXECINSTR == 0
                && s.size > 0
        })
        .map(|(_, s)| RodataSegment {
            vaddr: s.addr + MM_PROGRAM_START,
            bytes: patched[s.file_range()].to_vec(),
        })
        .collect();
    rodata_segments.sort_by_key(|s| s.vaddr);
    let text_end = text_vaddr + text_section.size;
    for pair in rodata_segments.windows(2) {
        if pair[0].end() > pair[1].vaddr {
            return Err(malformed("overlapping read-only segments"));
        }
    }
    if rodata_segments
        .iter()
        .any(|s| s.vaddr < text_end && text_vaddr < s.end())
    {
        return Err(malformed("read-only segment overlaps text"));
    }

    Ok(ProgramImage {
        text: patched[text_range].to_vec(),
        text_vaddr,
        rodata_segments,
        entry_offset,
        symbols,
        syscall_names,
        function_registry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_bytes_are_malformed() {
        let bytes = [0x13u8, 0x37, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        assert!(matches!(load_elf(&bytes), Err(ImageError::MalformedElf(_))));
    }

    #[test]
    fn wrong_machine_is_rejected() {
        let mut bytes = vec![0u8; 64];
        bytes[..4].copy_from_slice(b"\x7fELF");
        bytes[4] = 2;
        bytes[5] = 1;
        bytes[18..20].copy_from_slice(&62u16.to_le_bytes());
        assert_eq!(load_elf(&bytes), Err(ImageError::UnsupportedMachine(62)));
    }

    #[test]
    fn truncated_section_table_is_malformed() {
        let mut bytes = vec![0u8; 64];
        bytes[..4].copy_from_slice(b"\x7fELF");
        bytes[4] = 2;
        bytes[5] = 1;
        bytes[18..20].copy_from_slice(&EM_BPF.to_le_bytes());
        bytes[40..48].copy_from_slice(&4096u64.to_le_bytes());
        bytes[58..60].copy_from_slice(&64u16.to_le_bytes());
        bytes[60..62].copy_from_slice(&3u16.to_le_bytes());
        assert!(matches!(load_elf(&bytes), Err(ImageError::MalformedElf(_))));
    }
}
