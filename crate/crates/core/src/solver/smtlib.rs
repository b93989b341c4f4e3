//! SMT-LIB v2 rendering of constraint sets, for manual triage.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use crate::sym::{BinOp, CmpOp, Kind, Origin, SymExpr};

fn symbol(origin: &Origin) -> String {
    format!("|{origin}|")
}

fn collect_inputs(e: &SymExpr, out: &mut BTreeMap<Origin, u16>, seen: &mut HashMap<usize, ()>) {
    if seen.insert(e.id(), ()).is_some() {
        return;
    }
    if let Kind::Input(o) = e.kind() {
        let w = out.entry(*o).or_insert(0);
        *w = (*w).max(e.width());
    }
    for c in e.children() {
        collect_inputs(c, out, seen);
    }
}

fn render(e: &SymExpr, widths: &BTreeMap<Origin, u16>, out: &mut String) {
    let w = e.width();
    match e.kind() {
        Kind::Const(v) => {
            if w == 1 {
                out.push_str(if *v == 0 { "false" } else { "true" });
            } else {
                let _ = write!(out, "(_ bv{v} {w})");
            }
        }
        Kind::Input(o) => {
            let full = widths[o];
            let sym = symbol(o);
            let body = if w == full {
                sym
            } else {
                format!("((_ extract {} 0) {sym})", w - 1)
            };
            if w == 1 {
                let _ = write!(out, "(= {body} #b1)");
            } else {
                out.push_str(&body);
            }
        }
        Kind::Neg(a) => {
            if w == 1 {
                out.push_str("(= #b1 ");
                bits(e, widths, out);
                out.push(')');
            } else {
                wrap(out, "bvneg", &[a], widths);
            }
        }
        Kind::Bin(op, a, b) => {
            let name = match (op, w == 1) {
                (BinOp::And, true) => "and",
                (BinOp::Or, true) => "or",
                (BinOp::Xor, true) => "xor",
                (BinOp::Add, _) => "bvadd",
                (BinOp::Sub, _) => "bvsub",
                (BinOp::Mul, _) => "bvmul",
                (BinOp::UDiv, _) => "bvudiv",
                (BinOp::URem, _) => "bvurem",
                (BinOp::And, _) => "bvand",
                (BinOp::Or, _) => "bvor",
                (BinOp::Xor, _) => "bvxor",
                (BinOp::Shl, _) => "bvshl",
                (BinOp::LShr, _) => "bvlshr",
                (BinOp::AShr, _) => "bvashr",
            };
            if w == 1 && !matches!(op, BinOp::And | BinOp::Or | BinOp::Xor) {
                out.push_str("(= #b1 ");
                bits(e, widths, out);
                out.push(')');
            } else {
                wrap(out, name, &[a, b], widths);
            }
        }
        Kind::Cmp(op, a, b) => {
            let name = match op {
                CmpOp::Eq => "=",
                CmpOp::Ne => "distinct",
                CmpOp::ULt => "bvult",
                CmpOp::ULe => "bvule",
                CmpOp::SLt => "bvslt",
                CmpOp::SLe => "bvsle",
            };
            out.push('(');
            out.push_str(name);
            for x in [a, b] {
                out.push(' ');
                bits(x, widths, out);
            }
            out.push(')');
        }
        Kind::Ite(c, a, b) => {
            out.push_str("(ite ");
            render(c, widths, out);
            for x in [a, b] {
                out.push(' ');
                render(x, widths, out);
            }
            out.push(')');
        }
        Kind::ZExt(_) | Kind::SExt(_) | Kind::Extract { .. } | Kind::Concat(..) => {
            out.push_str("(= #b1 ");
            bits(e, widths, out);
            out.push(')');
        }
    }
}

fn wrap(out: &mut String, name: &str, args: &[&SymExpr], widths: &BTreeMap<Origin, u16>) {
    out.push('(');
    out.push_str(name);
    for a in args {
        out.push(' ');
        render(a, widths, out);
    }
    out.push(')');
}

/// Renders `e` as a bit-vector term, converting width-1 booleans.
fn bits(e: &SymExpr, widths: &BTreeMap<Origin, u16>, out: &mut String) {
    let w = e.width();
    if w == 1 {
        match e.kind() {
            Kind::Const(v) => {
                out.push_str(if *v == 0 { "#b0" } else { "#b1" });
                return;
            }
            Kind::Input(o) if widths[o] == 1 => {
                out.push_str(&symbol(o));
                return;
            }
            Kind::Input(o) => {
                let _ = write!(out, "((_ extract 0 0) {})", symbol(o));
                return;
            }
            Kind::Cmp(..) => {
                out.push_str("(ite ");
                render(e, widths, out);
                out.push_str(" #b1 #b0)");
                return;
            }
            _ => {}
        }
    }
    match e.kind() {
        Kind::ZExt(a) => {
            let _ = write!(out, "((_ zero_extend {}) ", w - a.width());
            bits(a, widths, out);
            out.push(')');
        }
        Kind::SExt(a) => {
            let _ = write!(out, "((_ sign_extend {}) ", w - a.width());
            bits(a, widths, out);
            out.push(')');
        }
        Kind::Extract { hi, lo, arg } => {
            let _ = write!(out, "((_ extract {hi} {lo}) ");
            bits(arg, widths, out);
            out.push(')');
        }
        Kind::Concat(h, l) => {
            out.push_str("(concat ");
            bits(h, widths, out);
            out.push(' ');
            bits(l, widths, out);
            out.push(')');
        }
        Kind::Ite(c, a, b) => {
            out.push_str("(ite ");
            render(c, widths, out);
            out.push(' ');
            bits(a, widths, out);
            out.push(' ');
            bits(b, widths, out);
            out.push(')');
        }
        Kind::Neg(a) => {
            out.push_str("(bvneg ");
            bits(a, widths, out);
            out.push(')');
        }
        Kind::Bin(op, a, b) => {
            let name = match op {
                BinOp::Add => "bvadd",
                BinOp::Sub => "bvsub",
                BinOp::Mul => "bvmul",
                BinOp::UDiv => "bvudiv",
                BinOp::URem => "bvurem",
                BinOp::And => "bvand",
                BinOp::Or => "bvor",
                BinOp::Xor => "bvxor",
                BinOp::Shl => "bvshl",
                BinOp::LShr => "bvlshr",
                BinOp::AShr => "bvashr",
            };
            let _ = write!(out, "({name} ");
            bits(a, widths, out);
            out.push(' ');
            bits(b, widths, out);
            out.push(')');
        }
        _ => render(e, widths, out),
    }
}

/// Full `(check-sat)` script asserting every constraint.
pub fn to_smtlib(constraints: &[SymExpr]) -> String {
    let mut widths = BTreeMap::new();
    let mut seen = HashMap::new();
    for c in constraints {
        collect_inputs(c, &mut widths, &mut seen);
    }
    let mut out = String::from("(set-logic QF_BV)\n");
    for (origin, w) in &widths {
        let _ = writeln!(out, "(declare-fun {} () (_ BitVec {w}))", symbol(origin));
    }
    for c in constraints {
        out.push_str("(assert ");
        render(c, &widths, &mut out);
        out.push_str(")\n");
    }
    out.push_str("(check-sat)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declares_and_asserts() {
        let x = SymExpr::input(Origin::InstructionData(3), 8);
        let c = x.zext(64).ult(&SymExpr::from_u64(64, 9));
        let s = to_smtlib(&[c]);
        assert!(s.contains("(declare-fun |ix[3]| () (_ BitVec 8))"), "{s}");
        assert!(s.contains("(bvult ((_ zero_extend 56) "), "{s}");
        assert_eq!(s.matches('(').count(), s.matches(')').count());
        assert!(s.ends_with("(check-sat)\n"));
    }
}
