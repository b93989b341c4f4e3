//! Bit-blasting of [`SymExpr`] constraints into CNF.

use std::collections::{BTreeMap, HashMap};

use batsat::{lbool, Callbacks, ClauseKind, Lit, SolverInterface, SolverOpts};
use ethnum::U256;

use crate::sym::{BinOp, CmpOp, Kind, Origin, SymExpr};

/// Stops the search after a number of conflicts.
#[derive(Default)]
pub struct Budget {
    pub limit: u64,
    pub conflicts: u64,
}

impl Callbacks for Budget {
    fn on_new_clause(&mut self, _c: &[Lit], kind: ClauseKind) {
        if kind == ClauseKind::Learnt {
            self.conflicts += 1;
        }
    }

    fn stop(&self) -> bool {
        self.conflicts >= self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bit {
    F,
    T,
    L(Lit),
}

impl std::ops::Not for Bit {
    type Output = Bit;
    fn not(self) -> Bit {
        match self {
            Bit::F => Bit::T,
            Bit::T => Bit::F,
            Bit::L(l) => Bit::L(!l),
        }
    }
}

impl Bit {
    fn from_bool(b: bool) -> Bit {
        if b {
            Bit::T
        } else {
            Bit::F
        }
    }
}

#[derive(Debug)]
pub struct Unsupported;

pub struct Blaster {
    sat: batsat::Solver<Budget>,
    cache: HashMap<usize, (SymExpr, Vec<Bit>)>,
    gates: HashMap<(u8, Bit, Bit), Bit>,
    inputs: BTreeMap<Origin, Vec<Bit>>,
    trivially_unsat: bool,
}

impl Blaster {
    pub fn new(conflict_limit: u64) -> Self {
        let opts = SolverOpts::default();
        Blaster {
            sat: batsat::Solver::new(
                opts,
                Budget {
                    limit: conflict_limit,
                    conflicts: 0,
                },
            ),
            cache: HashMap::new(),
            gates: HashMap::new(),
            inputs: BTreeMap::new(),
            trivially_unsat: false,
        }
    }

    fn fresh(&mut self) -> Lit {
        Lit::new(self.sat.new_var_default(), true)
    }

    fn clause(&mut self, bits: &[Bit]) {
        let mut lits = Vec::with_capacity(bits.len());
        for &b in bits {
            match b {
                Bit::T => return,
                Bit::F => {}
                Bit::L(l) => lits.push(l),
            }
        }
        if lits.is_empty() {
            self.trivially_unsat = true;
            return;
        }
        if !self.sat.add_clause_reuse(&mut lits) {
            self.trivially_unsat = true;
        }
    }

    fn and(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::F, _) | (_, Bit::F) => return Bit::F,
            (Bit::T, x) | (x, Bit::T) => return x,
            _ => {}
        }
        if a == b {
            return a;
        }
        if a == !b {
            return Bit::F;
        }
        let key = if a_key(a) <= a_key(b) {
            (0, a, b)
        } else {
            (0, b, a)
        };
        if let Some(&o) = self.gates.get(&key) {
            return o;
        }
        let o = Bit::L(self.fresh());
        self.clause(&[!o, a]);
        self.clause(&[!o, b]);
        self.clause(&[o, !a, !b]);
        self.gates.insert(key, o);
        o
    }

    fn or(&mut self, a: Bit, b: Bit) -> Bit {
        !self.and(!a, !b)
    }

    fn xor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::F, x) | (x, Bit::F) => return x,
            (Bit::T, x) | (x, Bit::T) => return !x,
            _ => {}
        }
        if a == b {
            return Bit::F;
        }
        if a == !b {
            return Bit::T;
        }
        let key = if a_key(a) <= a_key(b) {
            (1, a, b)
        } else {
            (1, b, a)
        };
        if let Some(&o) = self.gates.get(&key) {
            return o;
        }
        let o = Bit::L(self.fresh());
        self.clause(&[!o, a, b]);
        self.clause(&[!o, !a, !b]);
        self.clause(&[o, !a, b]);
        self.clause(&[o, a, !b]);
        self.gates.insert(key, o);
        o
    }

    fn mux(&mut self, c: Bit, t: Bit, e: Bit) -> Bit {
        match c {
            Bit::T => return t,
            Bit::F => return e,
            _ => {}
        }
        if t == e {
            return t;
        }
        match (t, e) {
            (Bit::T, Bit::F) => return c,
            (Bit::F, Bit::T) => return !c,
            (Bit::T, _) => return self.or(c, e),
            (Bit::F, _) => return self.and(!c, e),
            (_, Bit::T) => return self.or(!c, t),
            (_, Bit::F) => return self.and(c, t),
            _ => {}
        }
        let o = Bit::L(self.fresh());
        self.clause(&[!c, !t, o]);
        self.clause(&[!c, t, !o]);
        self.clause(&[c, !e, o]);
        self.clause(&[c, e, !o]);
        o
    }

    fn add_bits(&mut self, a: &[Bit], b: &[Bit], mut carry: Bit) -> (Vec<Bit>, Bit) {
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            let t = self.xor(x, y);
            out.push(self.xor(t, carry));
            let g = self.and(x, y);
            let p = self.and(t, carry);
            carry = self.or(g, p);
        }
        (out, carry)
    }

    fn sub_bits(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let nb: Vec<Bit> = b.iter().map(|&x| !x).collect();
        self.add_bits(a, &nb, Bit::T).0
    }

    fn mul_bits(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let w = a.len();
        let mut acc = vec![Bit::F; w];
        for i in 0..w {
            if b[i] == Bit::F {
                continue;
            }
            let mut partial = vec![Bit::F; w];
            for j in 0..w - i {
                partial[i + j] = self.and(a[j], b[i]);
            }
            acc = self.add_bits(&acc, &partial, Bit::F).0;
        }
        acc
    }

    /// Unsigned `a < b`.
    fn ult_bits(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        let mut lt = Bit::F;
        for (&x, &y) in a.iter().zip(b) {
            let differ = self.xor(x, y);
            lt = self.mux(differ, y, lt);
        }
        lt
    }

    fn eq_bits(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        let mut acc = Bit::T;
        for (&x, &y) in a.iter().zip(b) {
            let d = self.xor(x, y);
            acc = self.and(acc, !d);
        }
        acc
    }

    /// Restoring long division; yields SMT-LIB results for a zero divisor.
    fn divrem_bits(&mut self, a: &[Bit], b: &[Bit]) -> (Vec<Bit>, Vec<Bit>) {
        let w = a.len();
        let mut wide_b = b.to_vec();
        wide_b.push(Bit::F);
        let mut rem = vec![Bit::F; w + 1];
        let mut quot = vec![Bit::F; w];
        for i in (0..w).rev() {
            rem.pop();
            rem.insert(0, a[i]);
            let less = self.ult_bits(&rem, &wide_b);
            let diff = self.sub_bits(&rem, &wide_b);
            let ge = !less;
            for k in 0..=w {
                rem[k] = self.mux(ge, diff[k], rem[k]);
            }
            quot[i] = ge;
        }
        rem.pop();
        (quot, rem)
    }

    fn shift_bits(&mut self, op: BinOp, a: &[Bit], amount: &[Bit]) -> Vec<Bit> {
        let w = a.len();
        let fill = if op == BinOp::AShr { a[w - 1] } else { Bit::F };
        let mut cur = a.to_vec();
        let mut overflow = Bit::F;
        for (k, &bit) in amount.iter().enumerate() {
            let step = 1usize.checked_shl(k as u32).unwrap_or(usize::MAX);
            if step >= w {
                overflow = self.or(overflow, bit);
                continue;
            }
            let shifted: Vec<Bit> = (0..w)
                .map(|i| match op {
                    BinOp::Shl => {
                        if i >= step {
                            cur[i - step]
                        } else {
                            Bit::F
                        }
                    }
                    _ => {
                        if i + step < w {
                            cur[i + step]
                        } else {
                            fill
                        }
                    }
                })
                .collect();
            cur = (0..w).map(|i| self.mux(bit, shifted[i], cur[i])).collect();
        }
        cur.into_iter()
            .map(|b| self.mux(overflow, fill, b))
            .collect()
    }

    /// Encodes an expression; bits are least significant first.
    pub fn encode(&mut self, e: &SymExpr) -> Result<Vec<Bit>, Unsupported> {
        if let Some((_, bits)) = self.cache.get(&e.id()) {
            return Ok(bits.clone());
        }
        let w = e.width() as usize;
        let bits = match e.kind() {
            Kind::Const(v) => (0..w)
                .map(|i| Bit::from_bool((*v >> i as u32) & U256::ONE != U256::ZERO))
                .collect(),
            Kind::Input(origin) => {
                let mut bits = self.inputs.get(origin).cloned().unwrap_or_default();
                while bits.len() < w {
                    bits.push(Bit::L(self.fresh()));
                }
                self.inputs.insert(*origin, bits.clone());
                bits.truncate(w);
                bits
            }
            Kind::Neg(a) => {
                let a = self.encode(a)?;
                let zero = vec![Bit::F; w];
                self.sub_bits(&zero, &a)
            }
            Kind::Bin(op, a, b) => {
                if matches!(op, BinOp::Mul | BinOp::UDiv | BinOp::URem) && w > 64 {
                    return Err(Unsupported);
                }
                let x = self.encode(a)?;
                let y = self.encode(b)?;
                match op {
                    BinOp::Add => self.add_bits(&x, &y, Bit::F).0,
                    BinOp::Sub => self.sub_bits(&x, &y),
                    BinOp::Mul => self.mul_bits(&x, &y),
                    BinOp::UDiv => self.divrem_bits(&x, &y).0,
                    BinOp::URem => self.divrem_bits(&x, &y).1,
                    BinOp::And => (0..w).map(|i| self.and(x[i], y[i])).collect(),
                    BinOp::Or => (0..w).map(|i| self.or(x[i], y[i])).collect(),
                    BinOp::Xor => (0..w).map(|i| self.xor(x[i], y[i])).collect(),
                    BinOp::Shl | BinOp::LShr | BinOp::AShr => self.shift_bits(*op, &x, &y),
                }
            }
            Kind::Cmp(op, a, b) => {
                let x = self.encode(a)?;
                let y = self.encode(b)?;
                let bit = match op {
                    CmpOp::Eq => self.eq_bits(&x, &y),
                    CmpOp::Ne => !self.eq_bits(&x, &y),
                    CmpOp::ULt => self.ult_bits(&x, &y),
                    CmpOp::ULe => !self.ult_bits(&y, &x),
                    CmpOp::SLt | CmpOp::SLe => {
                        let mut sx = x.clone();
                        let mut sy = y.clone();
                        let top = sx.len() - 1;
                        sx[top] = !sx[top];
                        sy[top] = !sy[top];
                        if *op == CmpOp::SLt {
                            self.ult_bits(&sx, &sy)
                        } else {
                            !self.ult_bits(&sy, &sx)
                        }
                    }
                };
                vec![bit]
            }
            Kind::ZExt(a) => {
                let mut x = self.encode(a)?;
                x.resize(w, Bit::F);
                x
            }
            Kind::SExt(a) => {
                let mut x = self.encode(a)?;
                let sign = *x.last().unwrap();
                x.resize(w, sign);
                x
            }
            Kind::Extract { hi, lo, arg } => {
                let x = self.encode(arg)?;
                x[*lo as usize..=*hi as usize].to_vec()
            }
            Kind::Concat(h, l) => {
                let mut x = self.encode(l)?;
                x.extend(self.encode(h)?);
                x
            }
            Kind::Ite(c, a, b) => {
                let c = self.encode(c)?[0];
                let x = self.encode(a)?;
                let y = self.encode(b)?;
                (0..w).map(|i| self.mux(c, x[i], y[i])).collect()
            }
        };
        self.cache.insert(e.id(), (e.clone(), bits.clone()));
        Ok(bits)
    }

    /// Asserts a width-1 expression.
    pub fn assert_true(&mut self, e: &SymExpr) -> Result<(), Unsupported> {
        let bit = self.encode(e)?[0];
        self.clause(&[bit]);
        Ok(())
    }

    /// Forbids the current value of `bits` (a blocking clause).
    pub fn block(&mut self, bits: &[Bit], value: &[bool]) {
        let clause: Vec<Bit> = bits
            .iter()
            .zip(value)
            .map(|(&b, &v)| if v { !b } else { b })
            .collect();
        self.clause(&clause);
    }

    /// Runs the SAT search: `Some(true)` sat, `Some(false)` unsat, `None` budget.
    pub fn solve(&mut self) -> Option<bool> {
        if self.trivially_unsat {
            return Some(false);
        }
        let r = self.sat.solve_limited(&[]);
        if r == lbool::TRUE {
            Some(true)
        } else if r == lbool::FALSE {
            self.trivially_unsat = true;
            Some(false)
        } else {
            None
        }
    }

    pub fn bit_value(&self, b: Bit) -> bool {
        match b {
            Bit::T => true,
            Bit::F => false,
            Bit::L(l) => self.sat.value_lit(l) == lbool::TRUE,
        }
    }

    pub fn values(&self, bits: &[Bit]) -> Vec<bool> {
        bits.iter().map(|&b| self.bit_value(b)).collect()
    }

    /// Input assignment of the last satisfying model.
    pub fn input_values(&self) -> BTreeMap<Origin, U256> {
        self.inputs
            .iter()
            .map(|(origin, bits)| (*origin, bits_to_u256(&self.values(bits))))
            .collect()
    }
}

fn a_key(b: Bit) -> u64 {
    match b {
        Bit::F => 0,
        Bit::T => 1,
        Bit::L(l) => 2 + l.idx() as u64,
    }
}

pub fn bits_to_u256(bits: &[bool]) -> U256 {
    bits.iter().enumerate().fold(U256::ZERO, |acc, (i, &b)| {
        if b {
            acc | (U256::ONE << i as u32)
        } else {
            acc
        }
    })
}
