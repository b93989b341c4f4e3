//! Serialized program-input layout (see `docs/input-abi.md`).

use std::sync::Arc;

use ethnum::U256;

use super::expr::{Field, Origin, SymExpr};

/// Realloc headroom appended after each account's data.
pub const MAX_PERMITTED_DATA_INCREASE: usize = 10 * 1024;
/// Duplicate marker value for a unique account.
pub const NON_DUP_MARKER: u8 = 0xff;

pub const OFF_DUP: usize = 0;
pub const OFF_IS_SIGNER: usize = 1;
pub const OFF_IS_WRITABLE: usize = 2;
pub const OFF_EXECUTABLE: usize = 3;
pub const OFF_KEY: usize = 8;
pub const OFF_OWNER: usize = 40;
pub const OFF_LAMPORTS: usize = 72;
pub const OFF_DATA_LEN: usize = 80;
pub const OFF_DATA: usize = 88;

/// Byte ranges of one serialized account, relative to the region start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccountLayout {
    pub start: usize,
    pub data_len: usize,
    pub rent_epoch: usize,
    pub end: usize,
}

impl AccountLayout {
    pub fn key(&self) -> usize {
        self.start + OFF_KEY
    }
    pub fn owner(&self) -> usize {
        self.start + OFF_OWNER
    }
    pub fn lamports(&self) -> usize {
        self.start + OFF_LAMPORTS
    }
    pub fn data(&self) -> usize {
        self.start + OFF_DATA
    }
    pub fn data_range(&self) -> std::ops::Range<usize> {
        self.data()..self.data() + self.data_len
    }
}

/// Cell classification of one input byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Const(u8),
    Sym(Origin),
    /// Byte `index` of a multi-byte symbol.
    Part(Origin, u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputLayout {
    pub accounts: Vec<AccountLayout>,
    pub instr_len_offset: usize,
    pub instr_data_offset: usize,
    pub instr_data_len: usize,
    pub program_id_offset: usize,
    pub total_len: usize,
    /// When set, every input byte is this concrete value instead of a symbol.
    pub concrete: Option<Arc<Vec<u8>>>,
}

impl InputLayout {
    pub fn new(account_count: usize, data_len: usize, instr_data_len: usize) -> Self {
        let mut accounts = Vec::with_capacity(account_count);
        let mut off = 8;
        for _ in 0..account_count {
            let start = off;
            let after_data = start + OFF_DATA + data_len + MAX_PERMITTED_DATA_INCREASE;
            let rent_epoch = after_data.div_ceil(8) * 8;
            let end = rent_epoch + 8;
            accounts.push(AccountLayout {
                start,
                data_len,
                rent_epoch,
                end,
            });
            off = end;
        }
        let instr_len_offset = off;
        let instr_data_offset = off + 8;
        let program_id_offset = instr_data_offset + instr_data_len;
        InputLayout {
            accounts,
            instr_len_offset,
            instr_data_offset,
            instr_data_len,
            program_id_offset,
            total_len: program_id_offset + 32,
            concrete: None,
        }
    }

    pub fn account_count(&self) -> usize {
        self.accounts.len()
    }

    /// Which account's record contains `offset`.
    pub fn account_at(&self, offset: usize) -> Option<usize> {
        let idx = self.accounts.partition_point(|a| a.end <= offset);
        (idx < self.accounts.len() && self.accounts[idx].start <= offset).then_some(idx)
    }

    /// Account whose data bytes contain `offset`.
    pub fn data_account_at(&self, offset: usize) -> Option<usize> {
        self.account_at(offset)
            .filter(|&i| self.accounts[i].data_range().contains(&offset))
    }

    pub fn cell(&self, offset: usize) -> Option<Cell> {
        if offset >= self.total_len {
            return None;
        }
        if offset < 8 {
            return Some(Cell::Const(le_byte(self.accounts.len() as u64, offset)));
        }
        if let Some(i) = self.account_at(offset) {
            let a = &self.accounts[i];
            let rel = offset - a.start;
            let acct = i as u8;
            let origin = |field| Origin::account(acct, field);
            return Some(match rel {
                OFF_DUP => Cell::Const(NON_DUP_MARKER),
                OFF_IS_SIGNER => Cell::Sym(origin(Field::IsSigner)),
                OFF_IS_WRITABLE => Cell::Sym(origin(Field::IsWritable)),
                OFF_EXECUTABLE => Cell::Sym(origin(Field::Executable)),
                4..=7 => Cell::Const(0),
                8..=39 => Cell::Sym(origin(Field::KeyByte((rel - OFF_KEY) as u8))),
                40..=71 => Cell::Sym(origin(Field::OwnerByte((rel - OFF_OWNER) as u8))),
                72..=79 => Cell::Part(origin(Field::Lamports), (rel - OFF_LAMPORTS) as u8),
                80..=87 => Cell::Const(le_byte(a.data_len as u64, rel - OFF_DATA_LEN)),
                _ if a.data_range().contains(&offset) => {
                    Cell::Sym(origin(Field::DataByte((offset - a.data()) as u32)))
                }
                _ if offset >= a.rent_epoch => Cell::Const(0),
                _ => Cell::Const(0),
            });
        }
        if offset < self.instr_data_offset {
            return Some(Cell::Const(le_byte(
                self.instr_data_len as u64,
                offset - self.instr_len_offset,
            )));
        }
        if offset < self.program_id_offset {
            return Some(Cell::Sym(Origin::InstructionData(
                (offset - self.instr_data_offset) as u32,
            )));
        }
        Some(Cell::Sym(Origin::ProgramId(
            (offset - self.program_id_offset) as u8,
        )))
    }

    /// Symbolic (or concrete, when [`Self::concrete`] is set) value of one byte.
    pub fn byte(&self, offset: usize) -> Option<SymExpr> {
        if let Some(bytes) = &self.concrete {
            return bytes.get(offset).map(|&b| SymExpr::from_u64(8, b as u64));
        }
        Some(match self.cell(offset)? {
            Cell::Const(b) => SymExpr::from_u64(8, b as u64),
            Cell::Sym(origin) => SymExpr::input(origin, 8),
            Cell::Part(origin, i) => {
                let lo = i as u16 * 8;
                SymExpr::input(origin, 64).extract(lo + 7, lo)
            }
        })
    }

    /// Width of the input symbol for an origin.
    pub fn origin_width(origin: &Origin) -> u16 {
        match origin {
            Origin::AccountField {
                field: Field::Lamports | Field::DataLen,
                ..
            } => 64,
            _ => 8,
        }
    }

    /// Serializes a concrete input given values for every symbol; missing values read 0.
    pub fn serialize(&self, value_of: &dyn Fn(&Origin) -> Option<U256>) -> Vec<u8> {
        (0..self.total_len)
            .map(|off| match self.cell(off).unwrap() {
                Cell::Const(b) => b,
                Cell::Sym(origin) => value_of(&origin).unwrap_or(U256::ZERO).as_u8(),
                Cell::Part(origin, i) => {
                    (value_of(&origin).unwrap_or(U256::ZERO) >> (i as u32 * 8)).as_u8()
                }
            })
            .collect()
    }

    /// Recovers the value of every symbol from serialized bytes.
    pub fn origin_value(&self, bytes: &[u8], origin: &Origin) -> Option<U256> {
        let read = |off: usize, n: usize| {
            let mut v = U256::ZERO;
            for i in (0..n).rev() {
                v = (v << 8) | U256::from(*bytes.get(off + i)?);
            }
            Some(v)
        };
        match *origin {
            Origin::AccountField { account, field } => {
                let a = self.accounts.get(account as usize)?;
                match field {
                    Field::IsSigner => read(a.start + OFF_IS_SIGNER, 1),
                    Field::IsWritable => read(a.start + OFF_IS_WRITABLE, 1),
                    Field::Executable => read(a.start + OFF_EXECUTABLE, 1),
                    Field::KeyByte(i) => read(a.key() + i as usize, 1),
                    Field::OwnerByte(i) => read(a.owner() + i as usize, 1),
                    Field::Lamports => read(a.lamports(), 8),
                    Field::DataLen => read(a.start + OFF_DATA_LEN, 8),
                    Field::DataByte(i) => read(a.data() + i as usize, 1),
                }
            }
            Origin::InstructionData(i) => read(self.instr_data_offset + i as usize, 1),
            Origin::ProgramId(i) => read(self.program_id_offset + i as usize, 1),
            Origin::Derived(_) => None,
        }
    }
}

fn le_byte(value: u64, index: usize) -> u8 {
    value.to_le_bytes()[index]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_account_offsets() {
        let layout = InputLayout::new(1, 16, 4);
        let a = layout.accounts[0];
        assert_eq!(a.start, 8);
        assert_eq!(a.key(), 16);
        assert_eq!(a.data(), 96);
        // 96 + 16 + 10240 = 10352, already aligned.
        assert_eq!(a.rent_epoch, 10352);
        assert_eq!(layout.instr_len_offset, 10360);
        assert_eq!(layout.instr_data_offset, 10368);
        assert_eq!(layout.program_id_offset, 10372);
        assert_eq!(layout.total_len, 10404);
    }

    #[test]
    fn unaligned_data_is_padded() {
        let layout = InputLayout::new(2, 3, 0);
        let a = layout.accounts[0];
        // 8 + 88 + 3 + 10240 = 10339, rounded up to 10344.
        assert_eq!(a.rent_epoch, 10344);
        assert_eq!(layout.accounts[1].start, 10352);
    }

    #[test]
    fn cells_carry_origins() {
        let layout = InputLayout::new(2, 8, 2);
        let b = layout.accounts[1];
        assert_eq!(
            layout.cell(b.start + OFF_IS_SIGNER),
            Some(Cell::Sym(Origin::account(1, Field::IsSigner)))
        );
        assert_eq!(
            layout.cell(b.key() + 31),
            Some(Cell::Sym(Origin::account(1, Field::KeyByte(31))))
        );
        assert_eq!(layout.cell(b.start), Some(Cell::Const(NON_DUP_MARKER)));
        assert_eq!(layout.cell(0), Some(Cell::Const(2)));
        assert_eq!(layout.cell(layout.instr_len_offset), Some(Cell::Const(2)));
        assert_eq!(layout.cell(layout.total_len), None);
    }

    #[test]
    fn serialize_round_trips_origins() {
        let layout = InputLayout::new(2, 4, 3);
        let value = |o: &Origin| {
            let h = format!("{o}")
                .bytes()
                .fold(7u64, |h, b| h.wrapping_mul(31) ^ b as u64);
            Some(U256::from(h))
        };
        let bytes = layout.serialize(&value);
        for off in 0..layout.total_len {
            if let Some(Cell::Sym(o) | Cell::Part(o, _)) = layout.cell(off) {
                let width = InputLayout::origin_width(&o);
                let expect = value(&o).unwrap() & super::super::expr::mask(width);
                assert_eq!(layout.origin_value(&bytes, &o), Some(expect), "{o}");
            }
        }
    }
}
