mod common;

use ethnum::U256;
use proptest::prelude::*;

use cpiscan_core::isa::{decode, encode, legal_opcodes};
use cpiscan_core::solver::Solver;
use cpiscan_core::sym::{Origin, SymExpr};

use common::{codec_laws, fixture_image, micro_names, observation_set, solver_instances};

#[test]
fn pruning_preserves_observations_on_micro_corpus() {
    for name in micro_names() {
        let image = fixture_image(&name);
        assert_eq!(
            observation_set(&image, true),
            observation_set(&image, false),
            "{name}"
        );
    }
}

#[test]
fn pruning_preserves_observations_on_marketplace() {
    let image = fixture_image("marketplace");
    assert_eq!(
        observation_set(&image, true),
        observation_set(&image, false)
    );
}

#[test]
fn solver_agrees_with_brute_force() {
    solver_instances(200, 0x5017).unwrap();
}

#[test]
fn codec_round_trips_every_legal_opcode() {
    let n = codec_laws().unwrap();
    assert!(n >= legal_opcodes().len());
}

proptest! {
    #[test]
    fn decode_encode_round_trip(
        i in 0..legal_opcodes().len(),
        regs: u8,
        off: i16,
        imm: i32,
        hi: u32,
    ) {
        let op = legal_opcodes()[i];
        let mut slot = [op, regs, 0, 0, 0, 0, 0, 0];
        slot[2..4].copy_from_slice(&off.to_le_bytes());
        slot[4..8].copy_from_slice(&imm.to_le_bytes());
        let mut next = [0u8; 8];
        next[4..8].copy_from_slice(&hi.to_le_bytes());
        if let Ok(insn) = decode(&slot, Some(&next)) {
            let bytes = encode(&insn).unwrap();
            let first: [u8; 8] = bytes[..8].try_into().unwrap();
            let second = bytes.get(8..16).map(|s| <[u8; 8]>::try_from(s).unwrap());
            prop_assert_eq!(decode(&first, second.as_ref()).unwrap(), insn);
        }
    }

    #[test]
    fn enumerated_values_satisfy_the_constraints(lo: u8, span in 0u8..40, mask: u8) {
        let x = SymExpr::input(Origin::InstructionData(0), 8);
        let lo_c = SymExpr::from_u64(8, lo as u64);
        let hi_c = SymExpr::from_u64(8, lo.saturating_add(span) as u64);
        let cs = vec![lo_c.ule(&x), x.ule(&hi_c)];
        let t = x.and(&SymExpr::from_u64(8, mask as u64));
        let (values, complete) = Solver::default().enumerate(&cs, &t, 64);
        prop_assert_eq!(complete, Some(true));
        let expect: std::collections::BTreeSet<U256> = (lo..=lo.saturating_add(span))
            .map(|v| U256::from(v & mask))
            .collect();
        let got: std::collections::BTreeSet<U256> = values.into_iter().collect();
        prop_assert_eq!(got, expect);
    }
}
