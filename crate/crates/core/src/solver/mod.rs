//! Satisfiability checks and value counting over path constraints.
//!
//! The backend bit-blasts [`SymExpr`] trees into CNF and runs a CDCL search
//! under a conflict budget.

mod blast;
pub mod smtlib;

use std::collections::{BTreeMap, BTreeSet};

use ethnum::U256;
use thiserror::Error;

use crate::sym::{Origin, SymExpr};
use blast::{bits_to_u256, Blaster};

pub const DEFAULT_CONFLICT_BUDGET: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownReason {
    Budget,
    UnsupportedOp,
}

impl std::fmt::Display for UnknownReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnknownReason::Budget => "budget",
            UnknownReason::UnsupportedOp => "unsupported-op",
        })
    }
}

/// Satisfying assignment of input symbols; absent symbols read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    values: BTreeMap<Origin, U256>,
}

impl Model {
    pub fn get(&self, origin: &Origin) -> Option<U256> {
        self.values.get(origin).copied()
    }

    pub fn eval(&self, e: &SymExpr) -> U256 {
        e.eval(&|o| self.get(o))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Origin, &U256)> {
        self.values.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Sat(Model),
    Unsat,
    Unknown(UnknownReason),
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }
}

/// Result of a distinct-value count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    /// All satisfiable values were enumerated.
    Exact(usize),
    /// At least `limit` values exist.
    Saturated,
    /// The search gave up after finding this many values.
    Unknown(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolverError {
    #[error("constraints are unsatisfiable")]
    NotSat,
    #[error("solver gave up: {0}")]
    Unknown(UnknownReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Solver {
    pub conflict_budget: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
        }
    }
}

impl Solver {
    pub fn with_budget(conflict_budget: u64) -> Self {
        Solver { conflict_budget }
    }

    fn load(&self, constraints: &[SymExpr]) -> Result<Blaster, UnknownReason> {
        let mut b = Blaster::new(self.conflict_budget);
        for c in constraints {
            debug_assert_eq!(c.width(), 1);
            b.assert_true(c).map_err(|_| UnknownReason::UnsupportedOp)?;
        }
        Ok(b)
    }

    pub fn check(&self, constraints: &[SymExpr]) -> Verdict {
        if constraints.iter().any(|c| c.is_false()) {
            return Verdict::Unsat;
        }
        let live: Vec<SymExpr> = constraints
            .iter()
            .filter(|c| !c.is_true())
            .cloned()
            .collect();
        if live.is_empty() {
            return Verdict::Sat(Model::default());
        }
        let mut b = match self.load(&live) {
            Ok(b) => b,
            Err(r) => return Verdict::Unknown(r),
        };
        match b.solve() {
            Some(true) => Verdict::Sat(Model {
                values: b.input_values(),
            }),
            Some(false) => Verdict::Unsat,
            None => Verdict::Unknown(UnknownReason::Budget),
        }
    }

    /// Checks `prefix ∧ extra` where `prefix` is already known satisfiable:
    /// only the constraints sharing symbols with `extra` are consulted.
    pub fn check_extension(&self, prefix: &[SymExpr], extra: &SymExpr) -> Verdict {
        if extra.is_true() {
            return Verdict::Sat(Model::default());
        }
        let mut set = slice(prefix, extra.origins());
        set.push(extra.clone());
        self.check(&set)
    }

    pub fn model_value(
        &self,
        constraints: &[SymExpr],
        expr: &SymExpr,
    ) -> Result<U256, SolverError> {
        if let Some(v) = expr.as_const() {
            return match self.check(constraints) {
                Verdict::Sat(_) => Ok(v),
                Verdict::Unsat => Err(SolverError::NotSat),
                Verdict::Unknown(r) => Err(SolverError::Unknown(r)),
            };
        }
        let mut b = self.load(constraints).map_err(SolverError::Unknown)?;
        let bits = b
            .encode(expr)
            .map_err(|_| SolverError::Unknown(UnknownReason::UnsupportedOp))?;
        match b.solve() {
            Some(true) => Ok(bits_to_u256(&b.values(&bits))),
            Some(false) => Err(SolverError::NotSat),
            None => Err(SolverError::Unknown(UnknownReason::Budget)),
        }
    }

    /// Enumerates up to `limit` distinct values of `expr` by model blocking.
    /// The flag reports whether enumeration is complete (`Some(true)`), hit
    /// the limit with more values possible (`Some(false)`), or gave up (`None`).
    pub fn enumerate(
        &self,
        constraints: &[SymExpr],
        expr: &SymExpr,
        limit: usize,
    ) -> (Vec<U256>, Option<bool>) {
        let mut found = Vec::new();
        let mut b = match self.load(constraints) {
            Ok(b) => b,
            Err(_) => return (found, None),
        };
        let bits = match b.encode(expr) {
            Ok(bits) => bits,
            Err(_) => return (found, None),
        };
        loop {
            match b.solve() {
                Some(true) => {
                    if found.len() == limit {
                        return (found, Some(false));
                    }
                    let value = b.values(&bits);
                    found.push(bits_to_u256(&value));
                    b.block(&bits, &value);
                }
                Some(false) => return (found, Some(true)),
                None => return (found, None),
            }
        }
    }

    pub fn count(&self, constraints: &[SymExpr], expr: &SymExpr, limit: usize) -> Count {
        let (values, complete) = self.enumerate(constraints, expr, limit);
        match complete {
            Some(true) if values.len() < limit => Count::Exact(values.len()),
            Some(_) => Count::Saturated,
            None => Count::Unknown(values.len()),
        }
    }

    /// Distinct satisfiable values of `expr`, saturating at `limit`; an
    /// inconclusive search also saturates.
    pub fn count_distinct(&self, constraints: &[SymExpr], expr: &SymExpr, limit: usize) -> usize {
        assert!(limit >= 1);
        match self.count(constraints, expr, limit) {
            Count::Exact(n) => n,
            Count::Saturated | Count::Unknown(_) => limit,
        }
    }
}

/// Constraints transitively sharing a symbol with `seeds`.
pub fn slice(constraints: &[SymExpr], seeds: &[Origin]) -> Vec<SymExpr> {
    let mut reached: BTreeSet<Origin> = seeds.iter().copied().collect();
    let mut taken = vec![false; constraints.len()];
    loop {
        let mut changed = false;
        for (i, c) in constraints.iter().enumerate() {
            if taken[i] || !c.origins().iter().any(|o| reached.contains(o)) {
                continue;
            }
            taken[i] = true;
            changed = true;
            reached.extend(c.origins().iter().copied());
        }
        if !changed {
            break;
        }
    }
    constraints
        .iter()
        .zip(taken)
        .filter(|(_, t)| *t)
        .map(|(c, _)| c.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sym::Field;

    fn x(width: u16) -> SymExpr {
        SymExpr::input(Origin::InstructionData(0), width)
    }

    fn c(width: u16, v: u64) -> SymExpr {
        SymExpr::from_u64(width, v)
    }

    #[test]
    fn empty_is_sat() {
        assert!(Solver::default().check(&[]).is_sat());
    }

    #[test]
    fn conflicting_equalities_are_unsat() {
        let s = Solver::default();
        assert!(s
            .check(&[x(64).eq(&c(64, 3)), x(64).eq(&c(64, 4))])
            .is_unsat());
    }

    #[test]
    fn odd_and_small() {
        let s = Solver::default();
        let cs = [x(64).and(&c(64, 1)).eq(&c(64, 1)), x(64).ule(&c(64, 9))];
        let Verdict::Sat(m) = s.check(&cs) else {
            panic!("expected sat")
        };
        let v = m.eval(&x(64)).as_u64();
        assert!(v % 2 == 1 && v <= 9, "{v}");
        for k in &cs {
            assert!(m.eval(k) == U256::ONE);
        }
    }

    #[test]
    fn model_value_of_pinned_symbol() {
        let s = Solver::default();
        assert_eq!(
            s.model_value(&[x(8).eq(&c(8, 7))], &x(8)),
            Ok(U256::from(7u8))
        );
        assert_eq!(
            s.model_value(&[SymExpr::bool(false)], &x(8)),
            Err(SolverError::NotSat)
        );
    }

    #[test]
    fn counts() {
        let s = Solver::default();
        assert_eq!(s.count_distinct(&[x(8).eq(&c(8, 5))], &x(8), 16), 1);
        assert_eq!(s.count_distinct(&[], &x(1), 16), 2);
        let aligned = x(64).urem(&c(64, 4)).eq(&c(64, 0));
        assert_eq!(s.count(&[aligned], &x(64), 16), Count::Saturated);
        assert_eq!(s.count(&[SymExpr::bool(false)], &x(8), 16), Count::Exact(0));
    }

    #[test]
    fn division_by_zero_follows_smtlib() {
        let s = Solver::default();
        let q = x(8).udiv(&c(8, 0));
        let r = x(8).urem(&c(8, 0));
        assert!(s.check(&[q.ne(&c(8, 0xff))]).is_unsat());
        assert!(s.check(&[r.ne(&x(8))]).is_unsat());
    }

    #[test]
    fn wide_key_equality() {
        let s = Solver::default();
        let key: Vec<SymExpr> = (0..32)
            .map(|i| SymExpr::input(Origin::account(1, Field::KeyByte(i)), 8))
            .collect();
        let key = SymExpr::concat_le(&key);
        let target = SymExpr::constant(256, U256::from(0x1234_5678u32) << 100);
        assert_eq!(s.count(&[key.eq(&target)], &key, 16), Count::Exact(1));
        assert_eq!(s.count(&[], &key, 16), Count::Saturated);
    }

    #[test]
    fn tiny_budget_reports_unknown_or_answer() {
        // 65521 * 65519
        let s = Solver::with_budget(1);
        let a = SymExpr::input(Origin::InstructionData(0), 32);
        let b = SymExpr::input(Origin::InstructionData(1), 32);
        let cs = [
            a.mul(&b).eq(&c(32, 4_292_870_399)),
            a.ugt_one(),
            b.ugt_one(),
            a.ult(&c(32, 65536)),
            b.ult(&c(32, 65536)),
        ];
        match s.check(&cs) {
            Verdict::Unknown(UnknownReason::Budget) => {}
            Verdict::Sat(m) => assert!(cs.iter().all(|k| m.eval(k) == U256::ONE)),
            Verdict::Unsat => panic!("instance is satisfiable"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slicing_follows_shared_symbols() {
        let a = SymExpr::input(Origin::InstructionData(0), 8);
        let b = SymExpr::input(Origin::InstructionData(1), 8);
        let d = SymExpr::input(Origin::InstructionData(2), 8);
        let cs = vec![a.eq(&b), b.ult(&c(8, 3)), d.eq(&c(8, 1))];
        let sl = slice(&cs, a.origins());
        assert_eq!(sl.len(), 2);
    }

    trait UgtOne {
        fn ugt_one(&self) -> SymExpr;
    }

    impl UgtOne for SymExpr {
        fn ugt_one(&self) -> SymExpr {
            SymExpr::from_u64(self.width(), 1).ult(self)
        }
    }
}
