#!/usr/bin/env python3
"""Regenerate crates/core/src/image/syscall_table.rs.

Syscall call sites in SBF binaries carry murmur3_32(name, seed=0) of the
syscall symbol in their immediate. This script hashes the documented
Solana syscall names and prints the Rust table.
"""
import sys

NAMES = [
    "abort",
    "sol_panic_",
    "sol_log_",
    "sol_log_64_",
    "sol_log_compute_units_",
    "sol_log_pubkey",
    "sol_log_data",
    "sol_create_program_address",
    "sol_try_find_program_address",
    "sol_sha256",
    "sol_keccak256",
    "sol_blake3",
    "sol_secp256k1_recover",
    "sol_get_clock_sysvar",
    "sol_get_epoch_schedule_sysvar",
    "sol_get_fees_sysvar",
    "sol_get_rent_sysvar",
    "sol_memcpy_",
    "sol_memmove_",
    "sol_memcmp_",
    "sol_memset_",
    "sol_invoke_signed_c",
    "sol_invoke_signed_rust",
    "sol_alloc_free_",
    "sol_set_return_data",
    "sol_get_return_data",
    "sol_get_stack_height",
    "sol_get_processed_sibling_instruction",
    "sol_curve_validate_point",
    "sol_curve_group_op",
    "sol_alt_bn128_group_op",
    "sol_poseidon",
    "sol_remaining_compute_units",
]


def murmur3_32(data: bytes, seed: int = 0) -> int:
    c1, c2 = 0xCC9E2D51, 0x1B873593
    h = seed & 0xFFFFFFFF
    n = len(data) // 4
    for i in range(n):
        k = int.from_bytes(data[4 * i : 4 * i + 4], "little")
        k = (k * c1) & 0xFFFFFFFF
        k = ((k << 15) | (k >> 17)) & 0xFFFFFFFF
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
        h = ((h << 13) | (h >> 19)) & 0xFFFFFFFF
        h = (h * 5 + 0xE6546B64) & 0xFFFFFFFF
    tail = data[4 * n :]
    k = 0
    if len(tail) >= 3:
        k ^= tail[2] << 16
    if len(tail) >= 2:
        k ^= tail[1] << 8
    if len(tail) >= 1:
        k ^= tail[0]
        k = (k * c1) & 0xFFFFFFFF
        k = ((k << 15) | (k >> 17)) & 0xFFFFFFFF
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
    h ^= len(data)
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & 0xFFFFFFFF
    h ^= h >> 16
    return h


def main() -> None:
    out = sys.stdout
    out.write("// Generated by scripts/gen_syscall_table.py. Do not edit by hand.\n\n")
    out.write("/// `(murmur3_32(name), name)` for every known syscall, sorted by name.\n")
    out.write("pub const SYSCALLS: &[(u32, &str)] = &[\n")
    for name in sorted(NAMES):
        out.write(f"    (0x{murmur3_32(name.encode()):08x}, \"{name}\"),\n")
    out.write("];\n")


if __name__ == "__main__":
    main()
