//! Symbolic machine state for one execution path.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::expr::{Field, Origin, SymExpr};
use super::layout::InputLayout;
use crate::image::ProgramImage;
use crate::isa::FaultKind;
use crate::vm::{self, Region};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct AccountJournal {
    pub signer_checked: bool,
    pub key_checked: bool,
    pub owner_field_checked: bool,
    pub data_written: bool,
    /// Key or owner bytes were overwritten in memory (diagnostic only).
    pub metadata_written: bool,
}

impl AccountJournal {
    /// Whether any form of owner validation happened.
    pub fn owner_validated(&self) -> bool {
        self.key_checked || self.owner_field_checked || self.data_written
    }
}

#[derive(Debug, Clone)]
pub struct CallFrame {
    pub return_pc: usize,
    /// Start of the calling function.
    pub caller_function: usize,
    pub saved: [SymExpr; 4],
}

/// A logged store; syscall models log one byte per entry.
#[derive(Debug, Clone)]
pub struct SymWrite {
    pub addr: u64,
    pub width: u8,
    pub value: SymExpr,
}

/// Persistent singly-linked list, newest first.
#[derive(Debug, Clone, Default)]
pub struct WriteLog(Option<Arc<(SymWrite, WriteLog)>>);

impl WriteLog {
    pub fn push(&mut self, write: SymWrite) {
        let tail = std::mem::take(self);
        *self = WriteLog(Some(Arc::new((write, tail))));
    }

    /// Entries in program order.
    pub fn to_vec(&self) -> Vec<SymWrite> {
        let mut out = Vec::new();
        let mut cur = &self.0;
        while let Some(node) = cur {
            out.push(node.0.clone());
            cur = &node.1 .0;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapExceeded {
    Accounts(usize),
    DataLen(usize),
    InstructionData(usize),
}

impl std::fmt::Display for CapExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CapExceeded::Accounts(n) => write!(f, "account count {n} outside 1..={MAX_ACCOUNTS}"),
            CapExceeded::DataLen(n) => write!(f, "data length {n} above {MAX_DATA_LEN}"),
            CapExceeded::InstructionData(n) => {
                write!(f, "instruction data length {n} above {MAX_INSTR_DATA_LEN}")
            }
        }
    }
}

impl std::error::Error for CapExceeded {}

pub const MAX_ACCOUNTS: usize = 64;
pub const MAX_DATA_LEN: usize = 64 * 1024;
pub const MAX_INSTR_DATA_LEN: usize = 1232;

/// One symbolic execution path.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub pc: usize,
    pub regs: [SymExpr; 11],
    pub call_stack: Vec<CallFrame>,
    /// Start of the function currently executing.
    pub function: usize,
    memory: Arc<BTreeMap<u64, SymExpr>>,
    pub layout: Arc<InputLayout>,
    pub constraints: Vec<SymExpr>,
    pub journal: Vec<AccountJournal>,
    pub step_count: u64,
    pub fork_count: u64,
    pub heap_pos: u64,
    /// Next index for [`Origin::Derived`] values.
    pub derived_next: u32,
    /// When set, derived values are concrete under this seed.
    pub derived_seed: Option<u64>,
    pub writes: WriteLog,
    /// Traversal counts per back edge `(from_pc, to_pc)`.
    pub back_edges: BTreeMap<(usize, usize), u32>,
}

impl MachineState {
    pub fn depth(&self) -> usize {
        self.call_stack.len()
    }

    /// Reads one byte at a concrete address already checked for access.
    fn byte_at(&self, image: &ProgramImage, addr: u64, region: Region) -> SymExpr {
        if let Some(v) = self.memory.get(&addr) {
            return v.clone();
        }
        match region {
            Region::Program => {
                SymExpr::from_u64(8, image.read_program(addr, 1).map_or(0, |b| b[0]) as u64)
            }
            Region::Input => self
                .layout
                .byte((addr - vm::MM_INPUT_START) as usize)
                .expect("checked input access"),
            Region::Stack | Region::Heap => SymExpr::from_u64(8, 0),
        }
    }

    pub fn region(&self, image: &ProgramImage, addr: u64, len: u64) -> Result<Region, FaultKind> {
        vm::classify_access(
            addr,
            len,
            self.depth(),
            self.layout.total_len as u64,
            |a, l| image.read_program(a, l as usize).is_some(),
        )
        .ok_or(FaultKind::OutOfBounds)
    }

    /// Little-endian read of `len` bytes (1..=32) at a concrete address.
    pub fn read_mem(
        &self,
        image: &ProgramImage,
        addr: u64,
        len: usize,
    ) -> Result<SymExpr, FaultKind> {
        let bytes = self.read_bytes(image, addr, len)?;
        Ok(SymExpr::concat_le(&bytes))
    }

    pub fn read_bytes(
        &self,
        image: &ProgramImage,
        addr: u64,
        len: usize,
    ) -> Result<Vec<SymExpr>, FaultKind> {
        if len == 0 {
            return Ok(Vec::new());
        }
        let region = self.region(image, addr, len as u64)?;
        Ok((0..len as u64)
            .map(|i| self.byte_at(image, addr + i, region))
            .collect())
    }

    /// Checks that a range is writable.
    pub fn check_writable(
        &self,
        image: &ProgramImage,
        addr: u64,
        len: u64,
    ) -> Result<(), FaultKind> {
        if len == 0 {
            return Ok(());
        }
        match self.region(image, addr, len)? {
            Region::Program => Err(FaultKind::WriteToReadOnly),
            _ => Ok(()),
        }
    }

    fn store_bytes(&mut self, addr: u64, bytes: &[SymExpr]) {
        let memory = Arc::make_mut(&mut self.memory);
        for (i, b) in bytes.iter().enumerate() {
            memory.insert(addr + i as u64, b.clone());
        }
        self.note_input_write(addr, bytes.len() as u64);
    }

    fn note_input_write(&mut self, addr: u64, len: u64) {
        if addr < vm::MM_INPUT_START || len == 0 {
            return;
        }
        let start = (addr - vm::MM_INPUT_START) as usize;
        for off in start..start + len as usize {
            let Some(i) = self.layout.account_at(off) else {
                continue;
            };
            let a = self.layout.accounts[i];
            if a.data_range().contains(&off) {
                self.journal[i].data_written = true;
            } else if (a.key()..a.owner() + 32).contains(&off) {
                self.journal[i].metadata_written = true;
            }
        }
    }

    /// Program store of a `len`-byte value (len ≤ 8), logged as one entry.
    pub fn write_mem(
        &mut self,
        image: &ProgramImage,
        addr: u64,
        len: usize,
        value: &SymExpr,
    ) -> Result<(), FaultKind> {
        self.check_writable(image, addr, len as u64)?;
        let bytes: Vec<SymExpr> = (0..len as u16)
            .map(|i| value.extract(i * 8 + 7, i * 8))
            .collect();
        self.store_bytes(addr, &bytes);
        let stored = if value.width() as usize == len * 8 {
            value.clone()
        } else {
            value.extract(len as u16 * 8 - 1, 0)
        };
        self.writes.push(SymWrite {
            addr,
            width: len as u8,
            value: stored.zext(64),
        });
        Ok(())
    }

    /// Syscall-model store, logged byte by byte.
    pub fn write_bytes(
        &mut self,
        image: &ProgramImage,
        addr: u64,
        bytes: &[SymExpr],
    ) -> Result<(), FaultKind> {
        self.check_writable(image, addr, bytes.len() as u64)?;
        self.store_bytes(addr, bytes);
        for (i, b) in bytes.iter().enumerate() {
            self.writes.push(SymWrite {
                addr: addr + i as u64,
                width: 1,
                value: b.zext(64),
            });
        }
        Ok(())
    }

    /// A fresh runtime-derived value.
    pub fn fresh_derived(&mut self, width: u16) -> SymExpr {
        let index = self.derived_next;
        self.derived_next += 1;
        match self.derived_seed {
            Some(seed) => SymExpr::from_u64(width, vm::derived_value(seed, index, width as u32)),
            None => SymExpr::input(Origin::Derived(index), width),
        }
    }

    /// Records branch-condition provenance in the journal.
    pub fn note_branch(&mut self, cond: &SymExpr) {
        for origin in cond.origins() {
            if let Origin::AccountField { account, field } = origin {
                let Some(j) = self.journal.get_mut(*account as usize) else {
                    continue;
                };
                match field {
                    Field::IsSigner => j.signer_checked = true,
                    Field::KeyByte(_) => j.key_checked = true,
                    Field::OwnerByte(_) => j.owner_field_checked = true,
                    _ => {}
                }
            }
        }
    }

    /// Splits on `cond`: the first child assumes it, the second its negation.
    pub fn fork(&self, cond: &SymExpr) -> (MachineState, MachineState) {
        assert_eq!(cond.width(), 1, "branch condition must be width 1");
        let mut base = self.clone();
        base.note_branch(cond);
        base.fork_count += 1;
        let mut taken = base.clone();
        taken.constraints.push(cond.clone());
        base.constraints.push(cond.bool_not());
        (taken, base)
    }

    /// Adds an assumption without journaling (used for pointer concretization).
    pub fn assume(&mut self, cond: SymExpr) {
        if !cond.is_true() {
            self.constraints.push(cond);
        }
    }
}

/// Initial state: attacker-controlled input fields are symbols, runtime-owned
/// scalars (counts, lengths, markers) are constants.
pub fn init_state(
    image: &ProgramImage,
    account_count: usize,
    data_len_per_account: usize,
    instr_data_len: usize,
) -> Result<MachineState, CapExceeded> {
    init_state_with(
        image,
        InputLayout::new(
            check_caps(account_count, data_len_per_account, instr_data_len)?.0,
            data_len_per_account,
            instr_data_len,
        ),
    )
}

fn check_caps(
    accounts: usize,
    data_len: usize,
    instr_len: usize,
) -> Result<(usize, usize, usize), CapExceeded> {
    if accounts == 0 || accounts > MAX_ACCOUNTS {
        return Err(CapExceeded::Accounts(accounts));
    }
    if data_len > MAX_DATA_LEN {
        return Err(CapExceeded::DataLen(data_len));
    }
    if instr_len > MAX_INSTR_DATA_LEN {
        return Err(CapExceeded::InstructionData(instr_len));
    }
    Ok((accounts, data_len, instr_len))
}

/// Initial state over an explicit layout (possibly fully concrete).
pub fn init_state_with(
    image: &ProgramImage,
    layout: InputLayout,
) -> Result<MachineState, CapExceeded> {
    check_caps(
        layout.account_count(),
        layout.accounts.first().map_or(0, |a| a.data_len),
        layout.instr_data_len,
    )?;
    let zero = SymExpr::from_u64(64, 0);
    let mut regs: [SymExpr; 11] = std::array::from_fn(|_| zero.clone());
    regs[1] = SymExpr::from_u64(64, vm::MM_INPUT_START);
    regs[10] = SymExpr::from_u64(64, vm::frame_pointer(0));
    Ok(MachineState {
        pc: image.entry_offset,
        regs,
        call_stack: Vec::new(),
        function: image.entry_offset,
        memory: Arc::new(BTreeMap::new()),
        journal: vec![AccountJournal::default(); layout.account_count()],
        layout: Arc::new(layout),
        constraints: Vec::new(),
        step_count: 0,
        fork_count: 0,
        heap_pos: 0,
        derived_next: 0,
        derived_seed: None,
        writes: WriteLog::default(),
        back_edges: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sym::layout::OFF_IS_SIGNER;

    fn image() -> ProgramImage {
        ProgramImage::from_text(vec![0x95, 0, 0, 0, 0, 0, 0, 0])
    }

    #[test]
    fn initial_state_shape() {
        let img = image();
        let s = init_state(&img, 1, 8, 4).unwrap();
        assert_eq!(s.regs[1].as_u64(), Some(vm::MM_INPUT_START));
        assert_eq!(s.regs[10].as_u64(), Some(vm::frame_pointer(0)));
        assert!(s.constraints.is_empty());
        assert_eq!(s.journal, vec![AccountJournal::default()]);
        let key = s.layout.accounts[0].key() as u64;
        for i in 0..32u64 {
            let b = s.read_mem(&img, vm::MM_INPUT_START + key + i, 1).unwrap();
            assert_eq!(b.origins(), &[Origin::account(0, Field::KeyByte(i as u8))]);
        }
        assert!(matches!(
            init_state(&img, 0, 8, 4),
            Err(CapExceeded::Accounts(0))
        ));
    }

    #[test]
    fn signer_byte_of_second_account() {
        let img = image();
        let s = init_state(&img, 2, 8, 4).unwrap();
        let addr = vm::MM_INPUT_START + (s.layout.accounts[1].start + OFF_IS_SIGNER) as u64;
        let b = s.read_mem(&img, addr, 1).unwrap();
        assert_eq!(b, SymExpr::input(Origin::account(1, Field::IsSigner), 8));
    }

    #[test]
    fn data_write_sets_journal() {
        let img = image();
        let mut s = init_state(&img, 1, 8, 4).unwrap();
        let addr = vm::MM_INPUT_START + s.layout.accounts[0].data() as u64 + 5;
        s.write_mem(&img, addr, 1, &SymExpr::from_u64(64, 0x41))
            .unwrap();
        assert_eq!(s.read_mem(&img, addr, 1).unwrap().as_u64(), Some(0x41));
        assert!(s.journal[0].data_written);

        let mut t = init_state(&img, 1, 8, 4).unwrap();
        t.write_mem(&img, vm::frame_pointer(0) - 8, 8, &SymExpr::from_u64(64, 1))
            .unwrap();
        assert!(!t.journal[0].data_written);
    }

    #[test]
    fn copy_preserves_provenance() {
        let img = image();
        let mut s = init_state(&img, 2, 8, 4).unwrap();
        let key = vm::MM_INPUT_START + s.layout.accounts[1].key() as u64;
        let bytes = s.read_bytes(&img, key, 32).unwrap();
        let dst = vm::frame_pointer(0) - 32;
        s.write_bytes(&img, dst, &bytes).unwrap();
        let copied = s.read_mem(&img, dst, 32).unwrap();
        let expected: Vec<_> = (0..32)
            .map(|i| Origin::account(1, Field::KeyByte(i)))
            .collect();
        assert_eq!(copied.origins(), &expected[..]);
    }

    #[test]
    fn fork_journals_signer_checks() {
        let img = image();
        let s = init_state(&img, 1, 8, 4).unwrap();
        let signer = SymExpr::input(Origin::account(0, Field::IsSigner), 8);
        let (t, f) = s.fork(&signer.eq(&SymExpr::from_u64(8, 1)));
        assert!(t.journal[0].signer_checked && f.journal[0].signer_checked);
        assert_eq!(t.constraints.len(), 1);

        let ix = SymExpr::input(Origin::InstructionData(0), 8);
        let (t, _) = s.fork(&ix.eq(&SymExpr::from_u64(8, 1)));
        assert_eq!(t.journal, s.journal);
    }

    #[test]
    fn key_comparison_sets_key_checked() {
        let img = image();
        let s = init_state(&img, 2, 8, 4).unwrap();
        let key = s
            .read_mem(
                &img,
                vm::MM_INPUT_START + s.layout.accounts[1].key() as u64,
                32,
            )
            .unwrap();
        let constant = SymExpr::constant(256, ethnum::U256::from(0x1234u32));
        let (t, f) = s.fork(&key.eq(&constant));
        assert!(t.journal[1].key_checked && f.journal[1].key_checked);
        assert!(!t.journal[0].key_checked);
    }

    #[test]
    fn forks_are_isolated() {
        let img = image();
        let s = init_state(&img, 1, 8, 4).unwrap();
        let c = SymExpr::input(Origin::InstructionData(0), 8).eq(&SymExpr::from_u64(8, 0));
        let (mut a, b) = s.fork(&c);
        let addr = vm::frame_pointer(0) - 1;
        a.write_mem(&img, addr, 1, &SymExpr::from_u64(64, 9))
            .unwrap();
        assert_eq!(b.read_mem(&img, addr, 1).unwrap().as_u64(), Some(0));
        assert_eq!(a.writes.to_vec().len(), 1);
        assert!(b.writes.to_vec().is_empty());
    }
}
