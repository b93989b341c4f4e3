#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ethnum::U256;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpiscan_core::cfg::{build_cfg, compute_reachability, find_cpi_sites};
use cpiscan_core::corpus::{load_manifest, FixtureKind, FixtureManifest};
use cpiscan_core::explore::{explore, End, Exploration, ExplorationConfig, Explorer};
use cpiscan_core::image::{load_elf, ProgramImage};
use cpiscan_core::isa::interp::{interpret, ExecResult, Handlers, MemWrite, Outcome};
use cpiscan_core::isa::{decode, encode, legal_opcodes};
use cpiscan_core::solver::Solver;
use cpiscan_core::sym::layout::Cell;
use cpiscan_core::sym::{init_state_with, InputLayout, Origin, SymExpr};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn manifest() -> FixtureManifest {
    load_manifest(&corpus_dir()).expect("corpus manifest")
}

pub fn fixture_image(name: &str) -> ProgramImage {
    let m = manifest();
    let entry = m.get(name).unwrap_or_else(|| panic!("no fixture {name}"));
    let bytes = std::fs::read(corpus_dir().join(&entry.path)).unwrap();
    load_elf(&bytes).unwrap()
}

pub fn micro_names() -> Vec<String> {
    manifest()
        .fixtures
        .into_iter()
        .filter(|f| f.kind == FixtureKind::Micro)
        .map(|f| f.name)
        .collect()
}

pub const DIFF_BUDGET: u64 = 200_000;

/// 32-byte windows of the program's read-only data, so random keys sometimes
/// hit the constants a program compares against.
fn rodata_windows(image: &ProgramImage) -> Vec<[u8; 32]> {
    image
        .rodata_segments
        .iter()
        .flat_map(|s| s.bytes.windows(32).step_by(8))
        .map(|w| w.try_into().unwrap())
        .collect()
}

/// A random serialized input region with up to `max_accounts` accounts.
pub fn random_input(
    image: &ProgramImage,
    rng: &mut ChaCha8Rng,
    max_accounts: usize,
) -> InputLayout {
    let accounts = rng.gen_range(1..=max_accounts);
    let data_len = [0usize, 8, 16, 64][rng.gen_range(0..4)];
    let instr_len = [0usize, 4, 8, 16][rng.gen_range(0..4)];
    let mut layout = InputLayout::new(accounts, data_len, instr_len);
    let mut bytes = layout.serialize(&|_| None);
    for (off, b) in bytes.iter_mut().enumerate() {
        if let Some(Cell::Sym(_) | Cell::Part(..)) = layout.cell(off) {
            *b = rng.gen();
        }
    }
    let windows = rodata_windows(image);
    for a in &layout.accounts {
        bytes[a.start + 1] = if rng.gen_bool(0.8) {
            rng.gen_range(0..2)
        } else {
            rng.gen()
        };
        for field in [a.key(), a.owner()] {
            if !windows.is_empty() && rng.gen_bool(0.4) {
                let w = windows[rng.gen_range(0..windows.len())];
                bytes[field..field + 32].copy_from_slice(&w);
            }
        }
    }
    if instr_len > 0 && rng.gen_bool(0.8) {
        bytes[layout.instr_data_offset] = rng.gen_range(0..4);
    }
    layout.concrete = Some(Arc::new(bytes));
    layout
}

/// Runs the symbolic engine on a fully concrete input and reports the single
/// path in the reference interpreter's terms.
pub fn symbolic_concrete(image: &ProgramImage, layout: InputLayout, seed: u64) -> ExecResult {
    let cfg = build_cfg(image).unwrap();
    let config = ExplorationConfig {
        terminate_at_cpi: false,
        prune: false,
        loop_bound: u32::MAX,
        step_budget: DIFF_BUDGET,
        ..ExplorationConfig::default()
    };
    let sites = find_cpi_sites(&cfg, &config.cpi_syscalls);
    let reach = compute_reachability(&cfg, &sites);
    let mut state = init_state_with(image, layout).unwrap();
    state.derived_seed = Some(seed);
    let explorer = Explorer::new(image, &cfg, &reach, &config);
    let mut out = Exploration::default();
    let mut finished = explorer.run(vec![state], &mut out);
    assert_eq!(finished.len(), 1, "concrete input forked: {:?}", out.stats);
    let (state, end) = finished.pop().unwrap();
    let outcome = match end {
        End::Exit => Outcome::Exit,
        End::Abort => Outcome::Abort,
        End::Fault(kind, pc) => Outcome::Fault(kind, pc),
        End::StepBudget => Outcome::BudgetExhausted,
        other => panic!("concrete path ended with {other:?}"),
    };
    let concrete = |e: &SymExpr| e.as_u64().unwrap_or_else(|| panic!("symbolic value {e:?}"));
    ExecResult {
        r0_final: concrete(&state.regs[0]),
        steps: state.step_count,
        outcome,
        memory_writes: state
            .writes
            .to_vec()
            .into_iter()
            .map(|w| MemWrite {
                addr: w.addr,
                width: w.width,
                value: concrete(&w.value),
            })
            .collect(),
    }
}

/// Compares engine and interpreter over `runs` random inputs; returns the
/// first mismatch.
pub fn differential(
    image: &ProgramImage,
    runs: usize,
    max_accounts: usize,
    seed: u64,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..runs {
        let layout = random_input(image, &mut rng, max_accounts);
        let derived_seed: u64 = rng.gen();
        let bytes = layout.concrete.clone().unwrap();
        let expect = interpret(
            image,
            &bytes,
            &Handlers::with_seed(derived_seed),
            DIFF_BUDGET,
        );
        let got = symbolic_concrete(image, layout, derived_seed);
        if got.r0_final != expect.r0_final {
            return Err(format!(
                "run {run}: r0 {} vs {}",
                got.r0_final, expect.r0_final
            ));
        }
        if got.outcome != expect.outcome {
            return Err(format!(
                "run {run}: outcome {:?} vs {:?}",
                got.outcome, expect.outcome
            ));
        }
        if got.memory_writes != expect.memory_writes {
            return Err(format!(
                "run {run}: {} writes vs {}",
                got.memory_writes.len(),
                expect.memory_writes.len()
            ));
        }
    }
    Ok(())
}

/// Observations keyed by everything the oracle reads.
pub fn observation_set(image: &ProgramImage, prune: bool) -> BTreeSet<String> {
    let cfg = build_cfg(image).unwrap();
    let config = ExplorationConfig {
        prune,
        account_counts: (1..=3).collect(),
        data_len_per_account: 16,
        instr_data_len: 8,
        ..ExplorationConfig::default()
    };
    let sites = find_cpi_sites(&cfg, &config.cpi_syscalls);
    let reach = compute_reachability(&cfg, &sites);
    let ex = explore(image, &cfg, &reach, &config);
    assert!(!ex.stats.state_cap_hit && !ex.stats.timeout_hit);
    ex.observations
        .iter()
        .map(|o| {
            format!(
                "{}|{}|{:?}|{:?}|{:?}",
                o.callsite, o.account_count, o.target, o.constraints, o.journal
            )
        })
        .collect()
}

/// A random boolean constraint over two 8-bit inputs.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<SymExpr>, SymExpr) {
    let x = SymExpr::input(Origin::InstructionData(0), 8);
    let y = SymExpr::input(Origin::InstructionData(1), 8);
    fn term(rng: &mut ChaCha8Rng, x: &SymExpr, y: &SymExpr, depth: u32) -> SymExpr {
        if depth == 0 || rng.gen_bool(0.3) {
            return match rng.gen_range(0..3) {
                0 => x.clone(),
                1 => y.clone(),
                _ => SymExpr::from_u64(8, rng.gen::<u8>() as u64),
            };
        }
        let a = term(rng, x, y, depth - 1);
        let b = term(rng, x, y, depth - 1);
        match rng.gen_range(0..10) {
            0 => a.add(&b),
            1 => a.sub(&b),
            2 => a.mul(&b),
            3 => a.and(&b),
            4 => a.or(&b),
            5 => a.xor(&b),
            6 => a.udiv(&b),
            7 => a.urem(&b),
            8 => a.shl(&SymExpr::from_u64(8, rng.gen_range(0..8))),
            _ => a.lshr(&SymExpr::from_u64(8, rng.gen_range(0..8))),
        }
    }
    let n = rng.gen_range(1..=3);
    let constraints = (0..n)
        .map(|_| {
            let a = term(rng, &x, &y, 3);
            let b = term(rng, &x, &y, 2);
            match rng.gen_range(0..5) {
                0 => a.eq(&b),
                1 => a.ne(&b),
                2 => a.ult(&b),
                3 => a.ule(&b),
                _ => a.slt(&b),
            }
        })
        .collect();
    let target = term(rng, &x, &y, 2);
    (constraints, target)
}

/// Checks satisfiability and distinct-value count against all 65536 assignments.
pub fn check_against_brute_force(
    solver: &Solver,
    constraints: &[SymExpr],
    target: &SymExpr,
) -> Result<(), String> {
    let mut values = BTreeSet::new();
    for x in 0..=255u8 {
        for y in 0..=255u8 {
            let env = |o: &Origin| match o {
                Origin::InstructionData(0) => Some(U256::from(x)),
                Origin::InstructionData(1) => Some(U256::from(y)),
                _ => None,
            };
            if constraints.iter().all(|c| c.eval(&env) == U256::ONE) {
                values.insert(target.eval(&env));
            }
        }
    }
    let verdict = solver.check(constraints);
    if verdict.is_unsat() != values.is_empty() {
        return Err(format!(
            "verdict {verdict:?}, brute force finds {} values",
            values.len()
        ));
    }
    let limit = 257;
    let counted = solver.count_distinct(constraints, target, limit);
    if counted != values.len() {
        return Err(format!(
            "count_distinct {counted}, brute force {}",
            values.len()
        ));
    }
    Ok(())
}

pub fn solver_instances(n: usize, seed: u64) -> Result<(), String> {
    let solver = Solver::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let (cs, t) = random_instance(&mut rng);
        check_against_brute_force(&solver, &cs, &t).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(())
}

/// decode(encode(i)) == i for instructions built from every legal opcode
/// with varied register, offset, and immediate fields.
pub fn codec_laws() -> Result<usize, String> {
    let mut checked = 0;
    let offsets: [i16; 4] = [0, 1, -1, i16::MAX];
    let imms: [i32; 4] = [0, 7, -1, i32::MIN];
    for op in legal_opcodes() {
        let mut decoded_any = false;
        for regs in [0x21u8, 0x00, 0xa9, 0x3a] {
            for off in offsets {
                for imm in imms {
                    let mut slot = [op, regs, 0, 0, 0, 0, 0, 0];
                    slot[2..4].copy_from_slice(&off.to_le_bytes());
                    slot[4..8].copy_from_slice(&imm.to_le_bytes());
                    let next = [0, 0, 0, 0, 0x5a, 0, 0, 0];
                    let Ok(insn) = decode(&slot, Some(&next)) else {
                        continue;
                    };
                    decoded_any = true;
                    let bytes = encode(&insn).map_err(|e| format!("{op:#04x}: encode: {e}"))?;
                    let first: [u8; 8] = bytes[..8].try_into().unwrap();
                    let second = bytes.get(8..16).map(|s| <[u8; 8]>::try_from(s).unwrap());
                    let back = decode(&first, second.as_ref())
                        .map_err(|e| format!("{op:#04x}: re-decode: {e}"))?;
                    if back != insn {
                        return Err(format!("{op:#04x}: {insn:?} became {back:?}"));
                    }
                    checked += 1;
                }
            }
        }
        if !decoded_any {
            return Err(format!("{op:#04x} is legal but never decoded"));
        }
    }
    Ok(checked)
}
