//! Syscall classification shared by the concrete interpreter and the symbolic engine.

use serde::Serialize;

/// Calling convention of a cross-program-invocation syscall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Abi {
    C,
    Rust,
}

impl Abi {
    /// ABI of a CPI syscall, judged by its name.
    pub fn of_syscall(name: &str) -> Abi {
        if name.contains("rust") {
            Abi::Rust
        } else {
            Abi::C
        }
    }
}

/// Byte offset of the program id inside the Rust-ABI instruction structure.
pub const RUST_INSTRUCTION_PROGRAM_ID_OFFSET: u64 = 48;

pub const DEFAULT_CPI_SYSCALLS: [&str; 2] = ["sol_invoke_signed_c", "sol_invoke_signed_rust"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyscallKind {
    /// Logging and compute-unit reporting: no effect, returns 0.
    Log,
    Memcpy,
    Memmove,
    Memset,
    Memcmp,
    Abort,
    /// Hash of a byte-slice list; writes 32 derived bytes to `r3`.
    Hash,
    /// `sol_create_program_address`: 32 derived bytes to `r4`.
    CreatePda,
    /// `sol_try_find_program_address`: 32 derived bytes to `r4`, bump to `r5`.
    FindPda,
    Alloc,
    Invoke(Abi),
    Unknown,
}

pub fn classify(name: &str) -> SyscallKind {
    match name {
        "sol_log_"
        | "sol_log_64_"
        | "sol_log_pubkey"
        | "sol_log_compute_units_"
        | "sol_log_data" => SyscallKind::Log,
        "sol_memcpy_" => SyscallKind::Memcpy,
        "sol_memmove_" => SyscallKind::Memmove,
        "sol_memset_" => SyscallKind::Memset,
        "sol_memcmp_" => SyscallKind::Memcmp,
        "abort" | "sol_panic_" => SyscallKind::Abort,
        "sol_sha256" | "sol_keccak256" | "sol_blake3" => SyscallKind::Hash,
        "sol_create_program_address" => SyscallKind::CreatePda,
        "sol_try_find_program_address" => SyscallKind::FindPda,
        "sol_alloc_free_" => SyscallKind::Alloc,
        "sol_invoke_signed_c" | "sol_invoke_signed_rust" => {
            SyscallKind::Invoke(Abi::of_syscall(name))
        }
        _ => SyscallKind::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invoke_abis() {
        assert_eq!(classify("sol_invoke_signed_c"), SyscallKind::Invoke(Abi::C));
        assert_eq!(
            classify("sol_invoke_signed_rust"),
            SyscallKind::Invoke(Abi::Rust)
        );
        assert_eq!(classify("sol_get_clock_sysvar"), SyscallKind::Unknown);
    }
}
