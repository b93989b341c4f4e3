//! Writes assembled listings out as minimal SBF shared objects.
//!
//! The output carries `.text`, `.rodata`, a symbol table and one `SHT_REL`
//! section, which is everything [`crate::image::load_elf`] consumes.
//! Relocated immediates are left as `-1` so loading must patch them.

use crate::isa::asm::{Assembly, RelocKind, TEXT_ADDR};

const R_BPF_64_64: u64 = 1;
const R_BPF_64_32: u64 = 10;

const SHT_PROGBITS: u32 = 1;
const SHT_SYMTAB: u32 = 2;
const SHT_STRTAB: u32 = 3;
const SHT_REL: u32 = 9;

const STB_GLOBAL: u8 = 1;
const STT_FUNC: u8 = 2;
const STT_SECTION: u8 = 3;

struct SectionHeader {
    name: u32,
    kind: u32,
    flags: u64,
    addr: u64,
    offset: u64,
    size: u64,
    link: u32,
    info: u32,
    align: u64,
    entsize: u64,
}

#[derive(Default)]
struct StrTab {
    bytes: Vec<u8>,
}

impl StrTab {
    fn new() -> Self {
        StrTab { bytes: vec![0] }
    }

    fn add(&mut self, s: &str) -> u32 {
        let off = self.bytes.len() as u32;
        self.bytes.extend_from_slice(s.as_bytes());
        self.bytes.push(0);
        off
    }
}

fn push_symbol(out: &mut Vec<u8>, name: u32, info: u8, shndx: u16, value: u64) {
    out.extend_from_slice(&name.to_le_bytes());
    out.push(info);
    out.push(0);
    out.extend_from_slice(&shndx.to_le_bytes());
    out.extend_from_slice(&value.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
}

fn pad_to(out: &mut Vec<u8>, offset: u64) {
    assert!(out.len() as u64 <= offset);
    out.resize(offset as usize, 0);
}

/// Links an assembly into ELF bytes.
pub fn link(asm: &Assembly) -> Vec<u8> {
    let has_rodata = !asm.rodata.is_empty();
    let text_index = 1u16;
    let rodata_index = 2u16;
    let symtab_index: u32 = if has_rodata { 3 } else { 2 };
    let strtab_index = symtab_index + 1;

    let mut text = asm.text.clone();
    let mut strtab = StrTab::new();
    let mut symbols = Vec::new();
    push_symbol(&mut symbols, 0, 0, 0, 0);
    let mut sym_count = 1u32;
    let rodata_symbol = if has_rodata {
        push_symbol(
            &mut symbols,
            0,
            STT_SECTION,
            rodata_index,
            asm.rodata_addr(),
        );
        sym_count += 1;
        Some(sym_count - 1)
    } else {
        None
    };
    let first_global = sym_count;
    let mut function_symbols = std::collections::BTreeMap::new();
    for (&pc, name) in &asm.functions {
        let name_off = strtab.add(name);
        push_symbol(
            &mut symbols,
            name_off,
            (STB_GLOBAL << 4) | STT_FUNC,
            text_index,
            TEXT_ADDR + pc as u64 * 8,
        );
        function_symbols.insert(name.clone(), sym_count);
        sym_count += 1;
    }
    let mut syscall_symbols = std::collections::BTreeMap::new();
    for reloc in &asm.relocations {
        if let RelocKind::Syscall(name) = &reloc.kind {
            if !syscall_symbols.contains_key(name) {
                let name_off = strtab.add(name);
                push_symbol(&mut symbols, name_off, STB_GLOBAL << 4, 0, 0);
                syscall_symbols.insert(name.clone(), sym_count);
                sym_count += 1;
            }
        }
    }
    for reloc in &asm.relocations {
        if let RelocKind::Function(name) = &reloc.kind {
            if !function_symbols.contains_key(name) {
                let pc = asm.labels[name];
                let name_off = strtab.add(name);
                push_symbol(
                    &mut symbols,
                    name_off,
                    (STB_GLOBAL << 4) | STT_FUNC,
                    text_index,
                    TEXT_ADDR + pc as u64 * 8,
                );
                function_symbols.insert(name.clone(), sym_count);
                sym_count += 1;
            }
        }
    }

    let mut rel = Vec::new();
    for reloc in &asm.relocations {
        let r_offset = TEXT_ADDR + reloc.slot as u64 * 8;
        let (sym, kind) = match &reloc.kind {
            RelocKind::Rodata => (
                rodata_symbol.expect("rodata reloc without rodata"),
                R_BPF_64_64,
            ),
            RelocKind::Syscall(name) => (syscall_symbols[name], R_BPF_64_32),
            RelocKind::Function(name) => (function_symbols[name], R_BPF_64_32),
        };
        if kind == R_BPF_64_32 {
            let imm = reloc.slot * 8 + 4;
            text[imm..imm + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        rel.extend_from_slice(&r_offset.to_le_bytes());
        rel.extend_from_slice(&(((sym as u64) << 32) | kind).to_le_bytes());
    }

    let mut shstrtab = StrTab::new();
    let mut headers = vec![SectionHeader {
        name: 0,
        kind: 0,
        flags: 0,
        addr: 0,
        offset: 0,
        size: 0,
        link: 0,
        info: 0,
        align: 0,
        entsize: 0,
    }];

    let mut out = vec![0u8; 64];
    // One PT_LOAD covering text and rodata.
    let phoff = 64u64;
    let load_end = if has_rodata {
        asm.rodata_addr() + asm.rodata.len() as u64
    } else {
        TEXT_ADDR + text.len() as u64
    };
    let mut phdr = Vec::new();
    phdr.extend_from_slice(&1u32.to_le_bytes());
    phdr.extend_from_slice(&5u32.to_le_bytes());
    phdr.extend_from_slice(&TEXT_ADDR.to_le_bytes());
    phdr.extend_from_slice(&TEXT_ADDR.to_le_bytes());
    phdr.extend_from_slice(&TEXT_ADDR.to_le_bytes());
    phdr.extend_from_slice(&(load_end - TEXT_ADDR).to_le_bytes());
    phdr.extend_from_slice(&(load_end - TEXT_ADDR).to_le_bytes());
    phdr.extend_from_slice(&0x1000u64.to_le_bytes());
    out.extend_from_slice(&phdr);

    pad_to(&mut out, TEXT_ADDR);
    out.extend_from_slice(&text);
    headers.push(SectionHeader {
        name: shstrtab.add(".text"),
        kind: SHT_PROGBITS,
        flags: 0x6,
        addr: TEXT_ADDR,
        offset: TEXT_ADDR,
        size: text.len() as u64,
        link: 0,
        info: 0,
        align: 8,
        entsize: 0,
    });
    if has_rodata {
        pad_to(&mut out, asm.rodata_addr());
        out.extend_from_slice(&asm.rodata);
        headers.push(SectionHeader {
            name: shstrtab.add(".rodata"),
            kind: SHT_PROGBITS,
            flags: 0x2,
            addr: asm.rodata_addr(),
            offset: asm.rodata_addr(),
            size: asm.rodata.len() as u64,
            link: 0,
            info: 0,
            align: 1,
            entsize: 0,
        });
    }

    let append = |out: &mut Vec<u8>, bytes: &[u8], align: u64| {
        let off = (out.len() as u64).div_ceil(align) * align;
        pad_to(out, off);
        out.extend_from_slice(bytes);
        off
    };

    let symtab_off = append(&mut out, &symbols, 8);
    headers.push(SectionHeader {
        name: shstrtab.add(".symtab"),
        kind: SHT_SYMTAB,
        flags: 0,
        addr: 0,
        offset: symtab_off,
        size: symbols.len() as u64,
        link: strtab_index,
        info: first_global,
        align: 8,
        entsize: 24,
    });
    let strtab_off = append(&mut out, &strtab.bytes, 1);
    headers.push(SectionHeader {
        name: shstrtab.add(".strtab"),
        kind: SHT_STRTAB,
        flags: 0,
        addr: 0,
        offset: strtab_off,
        size: strtab.bytes.len() as u64,
        link: 0,
        info: 0,
        align: 1,
        entsize: 0,
    });
    if !rel.is_empty() {
        let rel_off = append(&mut out, &rel, 8);
        headers.push(SectionHeader {
            name: shstrtab.add(".rel.dyn"),
            kind: SHT_REL,
            flags: 0,
            addr: 0,
            offset: rel_off,
            size: rel.len() as u64,
            link: symtab_index,
            info: 0,
            align: 8,
            entsize: 16,
        });
    }
    let shstrtab_name = shstrtab.add(".shstrtab");
    let shstrtab_off = append(&mut out, &shstrtab.bytes, 1);
    headers.push(SectionHeader {
        name: shstrtab_name,
        kind: SHT_STRTAB,
        flags: 0,
        addr: 0,
        offset: shstrtab_off,
        size: shstrtab.bytes.len() as u64,
        link: 0,
        info: 0,
        align: 1,
        entsize: 0,
    });

    let shoff = (out.len() as u64).div_ceil(8) * 8;
    pad_to(&mut out, shoff);
    for h in &headers {
        out.extend_from_slice(&h.name.to_le_bytes());
        out.extend_from_slice(&h.kind.to_le_bytes());
        out.extend_from_slice(&h.flags.to_le_bytes());
        out.extend_from_slice(&h.addr.to_le_bytes());
        out.extend_from_slice(&h.offset.to_le_bytes());
        out.extend_from_slice(&h.size.to_le_bytes());
        out.extend_from_slice(&h.link.to_le_bytes());
        out.extend_from_slice(&h.info.to_le_bytes());
        out.extend_from_slice(&h.align.to_le_bytes());
        out.extend_from_slice(&h.entsize.to_le_bytes());
    }

    let header = &mut out[..64];
    header[..4].copy_from_slice(b"\x7fELF");
    header[4] = 2;
    header[5] = 1;
    header[6] = 1;
    header[16..18].copy_from_slice(&3u16.to_le_bytes());
    header[18..20].copy_from_slice(&crate::image::EM_BPF.to_le_bytes());
    header[20..24].copy_from_slice(&1u32.to_le_bytes());
    header[24..32].copy_from_slice(&(TEXT_ADDR + asm.entry as u64 * 8).to_le_bytes());
    header[32..40].copy_from_slice(&phoff.to_le_bytes());
    header[40..48].copy_from_slice(&shoff.to_le_bytes());
    header[52..54].copy_from_slice(&64u16.to_le_bytes());
    header[54..56].copy_from_slice(&56u16.to_le_bytes());
    header[56..58].copy_from_slice(&1u16.to_le_bytes());
    header[58..60].copy_from_slice(&64u16.to_le_bytes());
    header[60..62].copy_from_slice(&(headers.len() as u16).to_le_bytes());
    header[62..64].copy_from_slice(&(headers.len() as u16 - 1).to_le_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{load_elf, CallTarget};
    use crate::isa::asm::assemble;

    const LISTING: &str = "\
.rodata greeting \"hello\\0\"
.rodata key hex:00112233
.calls hashed
.func entrypoint
lddw r1, greeting
mov64 r2, 5
call $sol_log_
call helper
exit
.func helper
lddw r0, key+2
exit";

    #[test]
    fn loaded_image_matches_direct_image() {
        let asm = assemble(LISTING).unwrap();
        let loaded = load_elf(&link(&asm)).unwrap();
        assert_eq!(loaded, asm.to_image());
        let call = loaded.instruction(3).unwrap();
        assert_eq!(
            loaded.resolve_call(3, &call),
            CallTarget::Syscall("sol_log_".into())
        );
        let call = loaded.instruction(4).unwrap();
        assert_eq!(loaded.resolve_call(4, &call), CallTarget::Internal(6));
    }

    #[test]
    fn text_only_program_has_entry_zero() {
        let asm = assemble("mov64 r0, 0\nexit").unwrap();
        let image = load_elf(&link(&asm)).unwrap();
        assert_eq!(image.entry_offset, 0);
        assert!(image.symbols.is_empty());
        assert!(image.rodata_segments.is_empty());
    }

    #[test]
    fn loading_is_deterministic() {
        let bytes = link(&assemble(LISTING).unwrap());
        assert_eq!(load_elf(&bytes).unwrap(), load_elf(&bytes).unwrap());
    }
}
