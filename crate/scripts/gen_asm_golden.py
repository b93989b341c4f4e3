#!/usr/bin/env python3
"""Regenerates the assembler golden files.

Each instruction is written twice: in the fixture dialect (docs/asm.md) and
in LLVM's BPF syntax. clang assembles the LLVM twin; its .text bytes become
the expected output for the fixture listing. Requires clang with the BPF
target and readelf.
"""

import pathlib
import re
import subprocess
import sys
import tempfile

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/golden"

# `mod`, `jset` and store-immediate are left out: clang 14's BPF assembler
# parses none of them.
ALU = [
    ("add", "+="), ("sub", "-="), ("mul", "*="), ("div", "/="), ("or", "|="),
    ("and", "&="), ("lsh", "<<="), ("rsh", ">>="), ("xor", "^="),
    ("mov", "="), ("arsh", "s>>="),
]
JMP = [
    ("jeq", "=="), ("jgt", ">"), ("jge", ">="), ("jne", "!="),
    ("jsgt", "s>"), ("jsge", "s>="), ("jlt", "<"), ("jle", "<="),
    ("jslt", "s<"), ("jsle", "s<="),
]
WIDTHS = [("b", "u8"), ("h", "u16"), ("w", "u32"), ("dw", "u64")]


def alu_pairs():
    for name, op in ALU:
        yield f"{name}64 r1, r2", f"r1 {op} r2"
        yield f"{name}64 r3, 7", f"r3 {op} 7"
        yield f"{name}32 r4, r5", f"w4 {op} w5"
        yield f"{name}32 r6, -3", f"w6 {op} -3"
    yield "neg64 r7", "r7 = -r7"
    yield "neg32 r8", "w8 = -w8"
    for bits in (16, 32, 64):
        yield f"le{bits} r1", f"r1 = le{bits} r1"
        yield f"be{bits} r2", f"r2 = be{bits} r2"


def jump_pairs():
    yield "ja +2", "goto +2"
    yield "ja -1", "goto -1"
    for name, op in JMP:
        yield f"{name} r1, r2, +1", f"if r1 {op} r2 goto +1"
        yield f"{name} r3, 9, -2", f"if r3 {op} 9 goto -2"
        yield f"{name}32 r4, r5, +3", f"if w4 {op} w5 goto +3"
        yield f"{name}32 r6, -7, +0", f"if w6 {op} -7 goto +0"


def mem_pairs():
    for suffix, ty in WIDTHS:
        reg = "r3" if suffix == "dw" else "w3"
        dst = "r0" if suffix == "dw" else "w0"
        yield f"ldx{suffix} r0, [r1+9]", f"{dst} = *({ty} *)(r1 + 9)"
        yield f"ldx{suffix} r2, [r10-16]", f"{'r2' if suffix == 'dw' else 'w2'} = *({ty} *)(r10 - 16)"
        yield f"stx{suffix} [r10-40], r3", f"*({ty} *)(r10 - 40) = {reg}"
    yield "lddw r0, 0x1122334455667788", "r0 = 0x1122334455667788 ll"
    yield "lddw r9, -1", "r9 = -1 ll"
    yield "exit", "exit"


GROUPS = {"alu": alu_pairs, "jump": jump_pairs, "mem": mem_pairs}


def clang_text(llvm_src: str) -> bytes:
    with tempfile.TemporaryDirectory() as d:
        src = pathlib.Path(d, "g.s")
        obj = pathlib.Path(d, "g.o")
        src.write_text(llvm_src)
        subprocess.run(
            ["clang", "-target", "bpf", "-mcpu=v3", "-c", str(src), "-o", str(obj)],
            check=True,
        )
        dump = subprocess.run(
            ["readelf", "-x", ".text", str(obj)], check=True, capture_output=True, text=True
        ).stdout
    out = bytearray()
    for line in dump.splitlines():
        m = re.match(r"\s+0x[0-9a-f]+ ((?:[0-9a-f]{2,8} ?){1,4})", line)
        if m:
            out += bytes.fromhex(m.group(1).replace(" ", ""))
    return bytes(out)


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    for group, pairs in GROUPS.items():
        pairs = list(pairs())
        ours = "".join(f"    {a}\n" for a, _ in pairs)
        llvm = "".join(f"{b}\n" for _, b in pairs)
        text = clang_text(llvm)
        (OUT / f"{group}.s").write_text(f"; expected bytes: {group}.hex (from {group}.llvm.s)\n" + ours)
        (OUT / f"{group}.llvm.s").write_text(llvm)
        hex_lines = [text[i : i + 8].hex() for i in range(0, len(text), 8)]
        (OUT / f"{group}.hex").write_text("\n".join(hex_lines) + "\n")
        print(f"{group}: {len(pairs)} instructions, {len(text) // 8} slots")
    return 0


if __name__ == "__main__":
    sys.exit(main())
