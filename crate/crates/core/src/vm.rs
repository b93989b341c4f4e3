//! Virtual memory map shared by the concrete interpreter and the symbolic engine.
//!
//! The layout follows the Solana SBF loader: each region lives at a fixed
//! 4 GiB-aligned base address.

/// Start of the program region (text and read-only data).
pub const MM_PROGRAM_START: u64 = 0x1_0000_0000;
/// Start of the stack region.
pub const MM_STACK_START: u64 = 0x2_0000_0000;
/// Start of the heap region.
pub const MM_HEAP_START: u64 = 0x3_0000_0000;
/// Start of the serialized program input.
pub const MM_INPUT_START: u64 = 0x4_0000_0000;

/// Bytes per call frame.
pub const STACK_FRAME_SIZE: u64 = 4096;
/// Maximum call depth, counting the entry frame.
pub const MAX_CALL_DEPTH: usize = 64;
/// Default heap size.
pub const HEAP_SIZE: u64 = 32 * 1024;

/// Frame pointer for a given call depth (0 = entry frame).
pub fn frame_pointer(depth: usize) -> u64 {
    MM_STACK_START + (depth as u64 + 1) * STACK_FRAME_SIZE
}

/// Whether `[addr, addr + len)` lies inside the frames allocated at `depth`.
pub fn stack_access_ok(addr: u64, len: u64, depth: usize) -> bool {
    let top = frame_pointer(depth);
    addr >= MM_STACK_START && addr.checked_add(len).is_some_and(|end| end <= top)
}

/// Whether `[addr, addr + len)` lies inside the heap.
pub fn heap_access_ok(addr: u64, len: u64) -> bool {
    addr >= MM_HEAP_START
        && addr
            .checked_add(len)
            .is_some_and(|end| end <= MM_HEAP_START + HEAP_SIZE)
}

/// Memory region an access falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Program,
    Stack,
    Heap,
    Input,
}

/// Classifies `[addr, addr + len)`; `None` if it is not wholly inside one
/// accessible region. `program` tells whether the range is readable program
/// memory (text or rodata).
pub fn classify_access(
    addr: u64,
    len: u64,
    depth: usize,
    input_len: u64,
    program: impl FnOnce(u64, u64) -> bool,
) -> Option<Region> {
    let end = addr.checked_add(len)?;
    match addr >> 32 {
        1 => program(addr, len).then_some(Region::Program),
        2 => stack_access_ok(addr, len, depth).then_some(Region::Stack),
        3 => heap_access_ok(addr, len).then_some(Region::Heap),
        4 => (end <= MM_INPUT_START + input_len).then_some(Region::Input),
        _ => None,
    }
}

/// Next heap allocation under the bump allocator: returns the new bump
/// position and the address handed out, or `None` when the heap is exhausted.
pub fn bump_alloc(pos: u64, size: u64) -> Option<(u64, u64)> {
    let start = pos.checked_add(7)? & !7;
    let end = start.checked_add(size)?;
    (end <= HEAP_SIZE).then_some((end, MM_HEAP_START + start))
}

/// Concrete value standing in for the `index`-th runtime-derived value
/// (hash outputs, unknown syscall results) under a given seed.
pub fn derived_value(seed: u64, index: u32, width_bits: u32) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    if width_bits >= 64 {
        z
    } else {
        z & ((1u64 << width_bits) - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_limits() {
        assert!(stack_access_ok(frame_pointer(0) - 8, 8, 0));
        assert!(!stack_access_ok(frame_pointer(0) - 4, 8, 0));
        assert!(stack_access_ok(frame_pointer(0), 8, 1));
        assert!(!stack_access_ok(MM_STACK_START - 1, 1, 3));
    }

    #[test]
    fn bump_allocation_aligns() {
        assert_eq!(bump_alloc(0, 3), Some((3, MM_HEAP_START)));
        assert_eq!(bump_alloc(3, 8), Some((16, MM_HEAP_START + 8)));
        assert_eq!(bump_alloc(0, HEAP_SIZE + 1), None);
    }

    #[test]
    fn regions() {
        let never = |_, _| false;
        assert_eq!(
            classify_access(MM_INPUT_START, 8, 0, 8, never),
            Some(Region::Input)
        );
        assert_eq!(classify_access(MM_INPUT_START + 1, 8, 0, 8, never), None);
        assert_eq!(
            classify_access(MM_HEAP_START, 8, 0, 0, never),
            Some(Region::Heap)
        );
        assert_eq!(classify_access(0, 8, 0, 0, never), None);
        assert_eq!(classify_access(u64::MAX - 2, 8, 0, 0, never), None);
    }
}
