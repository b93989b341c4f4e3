//! Bytecode-level scanner for arbitrary cross-program invocation in Solana
//! SBF programs.

pub mod cfg;
pub mod corpus;
pub mod detect;
pub mod explore;
pub mod image;
pub mod isa;
pub mod report;
pub mod solver;
pub mod sym;
pub mod syscalls;
pub mod vm;
