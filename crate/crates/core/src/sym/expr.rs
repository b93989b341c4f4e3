//! Bit-vector expressions with input provenance.

use std::fmt;
use std::sync::Arc;

use ethnum::U256;
use serde::Serialize;

/// Account field a symbol stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Field {
    IsSigner,
    IsWritable,
    Executable,
    KeyByte(u8),
    OwnerByte(u8),
    Lamports,
    DataLen,
    DataByte(u32),
}

/// Where a symbolic input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Origin {
    AccountField {
        account: u8,
        field: Field,
    },
    InstructionData(u32),
    ProgramId(u8),
    /// Runtime-derived value (hash or PDA output, unknown syscall result),
    /// numbered in order of creation along a path.
    Derived(u32),
}

impl Origin {
    pub fn account(account: u8, field: Field) -> Origin {
        Origin::AccountField { account, field }
    }

    /// Whether an attacker chooses this value freely.
    pub fn is_attacker_controlled(&self) -> bool {
        matches!(
            self,
            Origin::AccountField { .. } | Origin::InstructionData(_)
        )
    }

    pub fn account_index(&self) -> Option<u8> {
        match self {
            Origin::AccountField { account, .. } => Some(*account),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::AccountField { account, field } => match field {
                Field::IsSigner => write!(f, "acct{account}.is_signer"),
                Field::IsWritable => write!(f, "acct{account}.is_writable"),
                Field::Executable => write!(f, "acct{account}.executable"),
                Field::KeyByte(i) => write!(f, "acct{account}.key[{i}]"),
                Field::OwnerByte(i) => write!(f, "acct{account}.owner[{i}]"),
                Field::Lamports => write!(f, "acct{account}.lamports"),
                Field::DataLen => write!(f, "acct{account}.data_len"),
                Field::DataByte(i) => write!(f, "acct{account}.data[{i}]"),
            },
            Origin::InstructionData(i) => write!(f, "ix[{i}]"),
            Origin::ProgramId(i) => write!(f, "program_id[{i}]"),
            Origin::Derived(i) => write!(f, "derived{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    UDiv,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    ULt,
    ULe,
    SLt,
    SLe,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Kind {
    Const(U256),
    Input(Origin),
    Neg(SymExpr),
    Bin(BinOp, SymExpr, SymExpr),
    Cmp(CmpOp, SymExpr, SymExpr),
    ZExt(SymExpr),
    SExt(SymExpr),
    Extract {
        hi: u16,
        lo: u16,
        arg: SymExpr,
    },
    /// `hi` occupies the upper bits.
    Concat(SymExpr, SymExpr),
    Ite(SymExpr, SymExpr, SymExpr),
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub kind: Kind,
    pub width: u16,
    origins: Arc<[Origin]>,
}

/// Shared, immutable expression.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SymExpr(Arc<Node>);

pub const MAX_WIDTH: u16 = 256;

pub fn mask(width: u16) -> U256 {
    if width >= 256 {
        U256::MAX
    } else {
        (U256::ONE << width as u32) - U256::ONE
    }
}

fn merge_origins(a: &[Origin], b: &[Origin]) -> Arc<[Origin]> {
    if b.is_empty() || a == b {
        return a.into();
    }
    if a.is_empty() {
        return b.into();
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out.into()
}

fn to_signed(value: U256, width: u16) -> ethnum::I256 {
    let shift = 256 - width as u32;
    (value << shift).as_i256() >> shift
}

impl SymExpr {
    fn make(kind: Kind, width: u16, origins: Arc<[Origin]>) -> SymExpr {
        debug_assert!((1..=MAX_WIDTH).contains(&width));
        SymExpr(Arc::new(Node {
            kind,
            width,
            origins,
        }))
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn width(&self) -> u16 {
        self.0.width
    }

    /// Sorted, deduplicated origins of every input leaf.
    pub fn origins(&self) -> &[Origin] {
        &self.0.origins
    }

    pub fn ptr_eq(&self, other: &SymExpr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Stable identity for caches keyed by node.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn constant(width: u16, value: U256) -> SymExpr {
        SymExpr::make(Kind::Const(value & mask(width)), width, Arc::new([]))
    }

    pub fn from_u64(width: u16, value: u64) -> SymExpr {
        SymExpr::constant(width, U256::from(value))
    }

    pub fn bool(value: bool) -> SymExpr {
        SymExpr::from_u64(1, value as u64)
    }

    pub fn input(origin: Origin, width: u16) -> SymExpr {
        SymExpr::make(Kind::Input(origin), width, Arc::new([origin]))
    }

    pub fn as_const(&self) -> Option<U256> {
        match self.kind() {
            Kind::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        self.as_const().map(|v| v.as_u64())
    }

    pub fn is_const(&self) -> bool {
        matches!(self.kind(), Kind::Const(_))
    }

    pub fn is_true(&self) -> bool {
        self.as_const() == Some(U256::ONE) && self.width() == 1
    }

    pub fn is_false(&self) -> bool {
        self.as_const() == Some(U256::ZERO) && self.width() == 1
    }

    pub fn neg(&self) -> SymExpr {
        let w = self.width();
        if let Some(v) = self.as_const() {
            return SymExpr::constant(w, v.wrapping_neg());
        }
        if let Kind::Neg(inner) = self.kind() {
            return inner.clone();
        }
        SymExpr::make(Kind::Neg(self.clone()), w, self.0.origins.clone())
    }

    /// Bitwise complement.
    pub fn not(&self) -> SymExpr {
        self.xor(&SymExpr::constant(self.width(), mask(self.width())))
    }

    pub fn bin(op: BinOp, a: &SymExpr, b: &SymExpr) -> SymExpr {
        let w = a.width();
        assert_eq!(w, b.width(), "{op:?} operand widths differ");
        let m = mask(w);
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return SymExpr::constant(w, eval_bin(op, w, x, y));
        }
        let zero = U256::ZERO;
        match (op, a.as_const(), b.as_const()) {
            (BinOp::Add | BinOp::Or | BinOp::Xor, Some(c), _) if c == zero => return b.clone(),
            (
                BinOp::Add
                | BinOp::Sub
                | BinOp::Or
                | BinOp::Xor
                | BinOp::Shl
                | BinOp::LShr
                | BinOp::AShr,
                _,
                Some(c),
            ) if c == zero => return a.clone(),
            (BinOp::Mul | BinOp::And, Some(c), _) | (BinOp::Mul | BinOp::And, _, Some(c))
                if c == zero =>
            {
                return SymExpr::constant(w, zero)
            }
            (BinOp::Mul, Some(c), _) if c == U256::ONE => return b.clone(),
            (BinOp::Mul | BinOp::UDiv, _, Some(c)) if c == U256::ONE => return a.clone(),
            (BinOp::And, Some(c), _) if c == m => return b.clone(),
            (BinOp::And, _, Some(c)) if c == m => return a.clone(),
            (BinOp::Or, Some(c), _) | (BinOp::Or, _, Some(c)) if c == m => {
                return SymExpr::constant(w, m)
            }
            (BinOp::Shl | BinOp::LShr, _, Some(c)) if c >= U256::from(w) => {
                return SymExpr::constant(w, zero)
            }
            _ => {}
        }
        if matches!(op, BinOp::Xor | BinOp::Sub) && a == b {
            return SymExpr::constant(w, zero);
        }
        if matches!(op, BinOp::And | BinOp::Or) && a == b {
            return a.clone();
        }
        let origins = merge_origins(a.origins(), b.origins());
        SymExpr::make(Kind::Bin(op, a.clone(), b.clone()), w, origins)
    }

    pub fn add(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Add, self, o)
    }
    pub fn sub(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Sub, self, o)
    }
    pub fn mul(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Mul, self, o)
    }
    pub fn udiv(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::UDiv, self, o)
    }
    pub fn urem(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::URem, self, o)
    }
    pub fn and(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::And, self, o)
    }
    pub fn or(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Or, self, o)
    }
    pub fn xor(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Xor, self, o)
    }
    pub fn shl(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::Shl, self, o)
    }
    pub fn lshr(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::LShr, self, o)
    }
    pub fn ashr(&self, o: &SymExpr) -> SymExpr {
        SymExpr::bin(BinOp::AShr, self, o)
    }

    pub fn cmp(op: CmpOp, a: &SymExpr, b: &SymExpr) -> SymExpr {
        assert_eq!(a.width(), b.width(), "{op:?} operand widths differ");
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return SymExpr::bool(eval_cmp(op, a.width(), x, y));
        }
        if a == b {
            return SymExpr::bool(matches!(op, CmpOp::Eq | CmpOp::ULe | CmpOp::SLe));
        }
        if a.width() == 1 && matches!(op, CmpOp::Eq | CmpOp::Ne) {
            // Boolean equality against a constant reduces to the operand or its negation.
            let (sym, c) = match (a.as_const(), b.as_const()) {
                (Some(c), None) => (b, c),
                (None, Some(c)) => (a, c),
                _ => (a, U256::MAX),
            };
            if c != U256::MAX {
                let positive = (c == U256::ONE) == (op == CmpOp::Eq);
                return if positive { sym.clone() } else { sym.not() };
            }
        }
        let origins = merge_origins(a.origins(), b.origins());
        SymExpr::make(Kind::Cmp(op, a.clone(), b.clone()), 1, origins)
    }

    pub fn eq(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::Eq, self, o)
    }
    pub fn ne(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::Ne, self, o)
    }
    pub fn ult(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::ULt, self, o)
    }
    pub fn ule(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::ULe, self, o)
    }
    pub fn slt(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::SLt, self, o)
    }
    pub fn sle(&self, o: &SymExpr) -> SymExpr {
        SymExpr::cmp(CmpOp::SLe, self, o)
    }

    /// Boolean negation of a width-1 expression.
    pub fn bool_not(&self) -> SymExpr {
        assert_eq!(self.width(), 1);
        if let Kind::Bin(BinOp::Xor, a, b) = self.kind() {
            if b.is_true() {
                return a.clone();
            }
        }
        self.xor(&SymExpr::bool(true))
    }

    pub fn zext(&self, width: u16) -> SymExpr {
        let w = self.width();
        assert!(width >= w);
        if width == w {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            return SymExpr::constant(width, v);
        }
        if let Kind::ZExt(inner) = self.kind() {
            return inner.zext(width);
        }
        SymExpr::make(Kind::ZExt(self.clone()), width, self.0.origins.clone())
    }

    pub fn sext(&self, width: u16) -> SymExpr {
        let w = self.width();
        assert!(width >= w);
        if width == w {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            return SymExpr::constant(width, to_signed(v, w).as_u256());
        }
        SymExpr::make(Kind::SExt(self.clone()), width, self.0.origins.clone())
    }

    pub fn extract(&self, hi: u16, lo: u16) -> SymExpr {
        let w = self.width();
        assert!(hi >= lo && hi < w, "extract [{hi}:{lo}] of width {w}");
        let width = hi - lo + 1;
        if width == w {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            return SymExpr::constant(width, v >> lo as u32);
        }
        match self.kind() {
            Kind::Extract {
                lo: inner_lo, arg, ..
            } => {
                return arg.extract(hi + inner_lo, lo + inner_lo);
            }
            Kind::Concat(h, l) => {
                let lw = l.width();
                if hi < lw {
                    return l.extract(hi, lo);
                }
                if lo >= lw {
                    return h.extract(hi - lw, lo - lw);
                }
            }
            Kind::ZExt(inner) => {
                let iw = inner.width();
                if hi < iw {
                    return inner.extract(hi, lo);
                }
                if lo >= iw {
                    return SymExpr::constant(width, U256::ZERO);
                }
                return inner.extract(iw - 1, lo).zext(width);
            }
            Kind::Ite(c, a, b) if a.is_const() && b.is_const() => {
                return SymExpr::ite(c, &a.extract(hi, lo), &b.extract(hi, lo));
            }
            _ => {}
        }
        SymExpr::make(
            Kind::Extract {
                hi,
                lo,
                arg: self.clone(),
            },
            width,
            self.0.origins.clone(),
        )
    }

    /// `hi` becomes the upper bits of the result.
    pub fn concat(hi: &SymExpr, lo: &SymExpr) -> SymExpr {
        let width = hi.width() + lo.width();
        assert!(width <= MAX_WIDTH);
        if let (Some(h), Some(l)) = (hi.as_const(), lo.as_const()) {
            return SymExpr::constant(width, (h << lo.width() as u32) | l);
        }
        if hi.as_const() == Some(U256::ZERO) {
            return lo.zext(width);
        }
        if let (
            Kind::Extract {
                hi: h1,
                lo: l1,
                arg: a1,
            },
            Kind::Extract {
                hi: h2,
                lo: l2,
                arg: a2,
            },
        ) = (hi.kind(), lo.kind())
        {
            if a1 == a2 && *l1 == h2 + 1 {
                return a1.extract(*h1, *l2);
            }
        }
        if let Kind::Extract {
            hi: h1,
            lo: l1,
            arg,
        } = hi.kind()
        {
            if *l1 == lo.width() && *l1 > 0 && arg.extract(*l1 - 1, 0) == *lo {
                return arg.extract(*h1, 0);
            }
        }
        if let Kind::Concat(inner_hi, inner_lo) = lo.kind() {
            // Re-associate so adjacent extracts of one value can merge.
            let merged = SymExpr::concat(hi, inner_hi);
            if !matches!(merged.kind(), Kind::Concat(..)) {
                return SymExpr::concat(&merged, inner_lo);
            }
        }
        let origins = merge_origins(hi.origins(), lo.origins());
        SymExpr::make(Kind::Concat(hi.clone(), lo.clone()), width, origins)
    }

    /// Concatenates little-endian bytes (index 0 is least significant).
    pub fn concat_le(bytes: &[SymExpr]) -> SymExpr {
        let mut iter = bytes.iter();
        let mut acc = iter.next().expect("at least one byte").clone();
        for b in iter {
            acc = SymExpr::concat(b, &acc);
        }
        acc
    }

    pub fn ite(c: &SymExpr, a: &SymExpr, b: &SymExpr) -> SymExpr {
        assert_eq!(c.width(), 1);
        assert_eq!(a.width(), b.width());
        if c.is_true() {
            return a.clone();
        }
        if c.is_false() {
            return b.clone();
        }
        if a == b {
            return a.clone();
        }
        if a.width() == 1 && a.is_true() && b.is_false() {
            return c.clone();
        }
        let origins = merge_origins(&merge_origins(c.origins(), a.origins()), b.origins());
        SymExpr::make(
            Kind::Ite(c.clone(), a.clone(), b.clone()),
            a.width(),
            origins,
        )
    }

    /// Evaluates under an assignment of input values; unassigned inputs read as 0.
    pub fn eval(&self, env: &dyn Fn(&Origin) -> Option<U256>) -> U256 {
        let mut cache = std::collections::HashMap::new();
        self.eval_cached(env, &mut cache)
    }

    fn eval_cached(
        &self,
        env: &dyn Fn(&Origin) -> Option<U256>,
        cache: &mut std::collections::HashMap<usize, U256>,
    ) -> U256 {
        if let Some(v) = cache.get(&self.id()) {
            return *v;
        }
        let w = self.width();
        let value = match self.kind() {
            Kind::Const(v) => *v,
            Kind::Input(o) => env(o).unwrap_or(U256::ZERO) & mask(w),
            Kind::Neg(a) => a.eval_cached(env, cache).wrapping_neg() & mask(w),
            Kind::Bin(op, a, b) => {
                let x = a.eval_cached(env, cache);
                let y = b.eval_cached(env, cache);
                eval_bin(*op, w, x, y)
            }
            Kind::Cmp(op, a, b) => {
                let x = a.eval_cached(env, cache);
                let y = b.eval_cached(env, cache);
                U256::from(eval_cmp(*op, a.width(), x, y) as u8)
            }
            Kind::ZExt(a) => a.eval_cached(env, cache),
            Kind::SExt(a) => to_signed(a.eval_cached(env, cache), a.width()).as_u256() & mask(w),
            Kind::Extract { lo, arg, .. } => (arg.eval_cached(env, cache) >> *lo as u32) & mask(w),
            Kind::Concat(h, l) => {
                (h.eval_cached(env, cache) << l.width() as u32) | l.eval_cached(env, cache)
            }
            Kind::Ite(c, a, b) => {
                if c.eval_cached(env, cache) == U256::ONE {
                    a.eval_cached(env, cache)
                } else {
                    b.eval_cached(env, cache)
                }
            }
        };
        cache.insert(self.id(), value);
        value
    }

    /// Node count, counting shared subterms once.
    pub fn size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            stack.extend(e.children().into_iter().cloned());
        }
        seen.len()
    }

    pub fn children(&self) -> Vec<&SymExpr> {
        match self.kind() {
            Kind::Const(_) | Kind::Input(_) => vec![],
            Kind::Neg(a) | Kind::ZExt(a) | Kind::SExt(a) | Kind::Extract { arg: a, .. } => vec![a],
            Kind::Bin(_, a, b) | Kind::Cmp(_, a, b) | Kind::Concat(a, b) => vec![a, b],
            Kind::Ite(c, a, b) => vec![c, a, b],
        }
    }
}

/// Arithmetic on `width`-bit values with SMT-LIB semantics for division by zero.
pub fn eval_bin(op: BinOp, width: u16, x: U256, y: U256) -> U256 {
    let m = mask(width);
    let r = match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::UDiv => {
            if y == U256::ZERO {
                m
            } else {
                x / y
            }
        }
        BinOp::URem => {
            if y == U256::ZERO {
                x
            } else {
                x % y
            }
        }
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => {
            if y >= U256::from(width) {
                U256::ZERO
            } else {
                x << y.as_u32()
            }
        }
        BinOp::LShr => {
            if y >= U256::from(width) {
                U256::ZERO
            } else {
                x >> y.as_u32()
            }
        }
        BinOp::AShr => {
            let s = to_signed(x, width);
            let amount = if y >= U256::from(width) {
                width as u32 - 1
            } else {
                y.as_u32()
            };
            (s >> amount).as_u256()
        }
    };
    r & m
}

pub fn eval_cmp(op: CmpOp, width: u16, x: U256, y: U256) -> bool {
    match op {
        CmpOp::Eq => x == y,
        CmpOp::Ne => x != y,
        CmpOp::ULt => x < y,
        CmpOp::ULe => x <= y,
        CmpOp::SLt => to_signed(x, width) < to_signed(y, width),
        CmpOp::SLe => to_signed(x, width) <= to_signed(y, width),
    }
}

impl fmt::Debug for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Kind::Const(v) => write!(f, "{v:#x}:{}", self.width()),
            Kind::Input(o) => write!(f, "{o}"),
            Kind::Neg(a) => write!(f, "(neg {a})"),
            Kind::Bin(op, a, b) => write!(f, "({op:?} {a} {b})"),
            Kind::Cmp(op, a, b) => write!(f, "({op:?} {a} {b})"),
            Kind::ZExt(a) => write!(f, "(zext{} {a})", self.width()),
            Kind::SExt(a) => write!(f, "(sext{} {a})", self.width()),
            Kind::Extract { hi, lo, arg } => write!(f, "({arg})[{hi}:{lo}]"),
            Kind::Concat(h, l) => write!(f, "(concat {h} {l})"),
            Kind::Ite(c, a, b) => write!(f, "(ite {c} {a} {b})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn byte(i: u8) -> SymExpr {
        SymExpr::input(Origin::account(1, Field::KeyByte(i)), 8)
    }

    #[test]
    fn constant_folding() {
        let a = SymExpr::from_u64(32, 0xffff_ffff);
        let b = SymExpr::from_u64(32, 1);
        assert_eq!(a.add(&b).as_u64(), Some(0));
        assert_eq!(
            a.udiv(&SymExpr::from_u64(32, 0)).as_u64(),
            Some(0xffff_ffff)
        );
        assert_eq!(b.urem(&SymExpr::from_u64(32, 0)).as_u64(), Some(1));
        assert_eq!(SymExpr::from_u64(8, 0x80).sext(16).as_u64(), Some(0xff80));
    }

    #[test]
    fn extracts_of_one_value_recombine() {
        let lamports = SymExpr::input(Origin::account(0, Field::Lamports), 64);
        let bytes: Vec<_> = (0..8).map(|i| lamports.extract(i * 8 + 7, i * 8)).collect();
        assert_eq!(SymExpr::concat_le(&bytes), lamports);
    }

    #[test]
    fn origins_are_merged_and_sorted() {
        let bytes: Vec<_> = (0..32).rev().map(byte).collect();
        let key = SymExpr::concat_le(&bytes);
        assert_eq!(key.width(), 256);
        let expected: Vec<_> = (0..32)
            .map(|i| Origin::account(1, Field::KeyByte(i)))
            .collect();
        assert_eq!(key.origins(), &expected[..]);
    }

    #[test]
    fn byte_load_of_concat_selects_component() {
        let word = SymExpr::concat_le(&[byte(0), byte(1), byte(2), byte(3)]);
        assert_eq!(word.extract(15, 8), byte(1));
        assert_eq!(word.zext(64).extract(7, 0), byte(0));
    }

    #[test]
    fn eval_matches_folding() {
        let x = SymExpr::input(Origin::InstructionData(0), 8);
        let e = x
            .mul(&SymExpr::from_u64(8, 3))
            .sub(&SymExpr::from_u64(8, 7));
        let v = e.eval(&|_| Some(U256::from(100u8)));
        assert_eq!(v, U256::from((100u32 * 3 - 7) as u8));
        let c = e.ult(&SymExpr::from_u64(8, 10));
        assert_eq!(c.eval(&|_| Some(U256::from(100u8))), U256::ZERO);
    }

    #[test]
    fn bool_simplifications() {
        let x = SymExpr::input(Origin::InstructionData(0), 8);
        let c = x.eq(&SymExpr::from_u64(8, 1));
        assert_eq!(c.bool_not().bool_not(), c);
        assert_eq!(c.eq(&SymExpr::bool(true)), c);
        assert_eq!(
            SymExpr::ite(&c, &SymExpr::bool(true), &SymExpr::bool(false)),
            c
        );
    }
}
