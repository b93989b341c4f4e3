use super::*;
use crate::cfg::{build_cfg, compute_reachability, find_cpi_sites};
use crate::isa::asm::assemble;
use crate::sym::{init_state, Field};

struct Fixture {
    image: ProgramImage,
    cfg: Cfg,
    reach: CpiReachability,
}

fn fixture(src: &str) -> Fixture {
    let image = assemble(src).unwrap().to_image();
    let cfg = build_cfg(&image).unwrap();
    let sites = find_cpi_sites(&cfg, &DEFAULT_CPI_SYSCALLS);
    let reach = compute_reachability(&cfg, &sites);
    Fixture { image, cfg, reach }
}

fn config(accounts: usize) -> ExplorationConfig {
    ExplorationConfig {
        account_counts: vec![accounts],
        data_len_per_account: 0,
        instr_data_len: 8,
        ..ExplorationConfig::default()
    }
}

fn run(f: &Fixture, config: &ExplorationConfig) -> Exploration {
    explore(&f.image, &f.cfg, &f.reach, config)
}

/// Input-region offset of an account's key for `data_len = 0`.
fn key_offset(accounts: usize, account: usize) -> usize {
    InputLayout::new(accounts, 0, 8).accounts[account].key()
}

fn cpi_with_key_of(accounts: usize, account: usize, guard: &str) -> String {
    format!(
        "mov64 r6, r1\n{guard}\nmov64 r2, r6\nadd64 r2, {}\nstxdw [r10-40], r2\nmov64 r1, r10\nadd64 r1, -40\ncall $sol_invoke_signed_c\nmov64 r0, 0\nexit\n",
        key_offset(accounts, account)
    )
}

#[test]
fn exit_terminates_without_successors() {
    let f = fixture("mov64 r0, 0\nexit\n");
    let cfg = config(1);
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let s = init_state(&f.image, 1, 0, 8).unwrap();
    let s = match ex.step(s, &mut out).pop().unwrap() {
        Successor::Live(s) => s,
        Successor::Done(..) => panic!("mov terminated"),
    };
    let next = ex.step(s, &mut out);
    assert!(matches!(next.as_slice(), [Successor::Done(_, End::Exit)]));
}

#[test]
fn infeasible_arm_is_dropped() {
    // r2 is the low byte of instruction data; after `r2 &= 1`, `r2 > 1` is impossible.
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    let f = fixture(&format!(
        "ldxb r2, [r1+{ix}]\nand64 r2, 1\njgt r2, 1, +1\nexit\nexit\n"
    ));
    let cfg = config(1);
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let mut s = init_state(&f.image, 1, 0, 8).unwrap();
    for _ in 0..2 {
        s = match ex.step(s, &mut out).pop().unwrap() {
            Successor::Live(s) => s,
            Successor::Done(..) => panic!(),
        };
    }
    let next = ex.step(s, &mut out);
    assert_eq!(next.len(), 1);
    assert!(matches!(&next[0], Successor::Live(s) if s.pc == 3));
}

#[test]
fn no_cpi_means_pruned_and_no_observations() {
    let f = fixture("call $sol_log_\nmov64 r0, 0\nexit\n");
    let out = run(&f, &config(1));
    assert!(out.observations.is_empty());
    assert!(out.stats.states_pruned > 0);
}

#[test]
fn observation_target_comes_from_the_account_key() {
    let f = fixture(&cpi_with_key_of(2, 1, ""));
    let out = run(&f, &config(2));
    assert_eq!(out.observations.len(), 1);
    let obs = &out.observations[0];
    assert_eq!(obs.abi, Abi::C);
    let expected: BTreeSet<Origin> = (0..32)
        .map(|i| Origin::account(1, Field::KeyByte(i)))
        .collect();
    assert_eq!(obs.target_origins, expected);
    assert_eq!(obs.account_count, 2);
}

#[test]
fn rust_abi_reads_the_program_id_field() {
    let off = key_offset(1, 0);
    let src = format!(
        "mov64 r2, r1\nadd64 r2, {off}\nmov64 r1, r10\nadd64 r1, -80\nmov64 r3, r1\nadd64 r3, 48\n\
         mov64 r6, r1\nmov64 r1, r3\nmov64 r3, 32\ncall $sol_memcpy_\nmov64 r1, r6\n\
         call $sol_invoke_signed_rust\nexit\n"
    );
    let f = fixture(&src);
    let out = run(&f, &config(1));
    let obs = &out.observations[0];
    assert_eq!(obs.abi, Abi::Rust);
    assert_eq!(obs.target_origins.len(), 32);
    assert!(obs.target_origins.iter().all(|o| matches!(
        o,
        Origin::AccountField {
            account: 0,
            field: Field::KeyByte(_)
        }
    )));
}

#[test]
fn pda_target_has_no_attacker_origin() {
    let src = "\
mov64 r4, r10
add64 r4, -32
mov64 r5, r10
add64 r5, -40
call $sol_try_find_program_address
mov64 r2, r10
add64 r2, -32
stxdw [r10-80], r2
mov64 r1, r10
add64 r1, -80
call $sol_invoke_signed_c
exit
";
    let f = fixture(src);
    let out = run(&f, &config(1));
    let obs = &out.observations[0];
    assert!(!obs.target_origins.is_empty());
    assert!(obs
        .target_origins
        .iter()
        .all(|o| !o.is_attacker_controlled()));
}

#[test]
fn unknown_syscall_continues_and_is_recorded() {
    let f = fixture(&cpi_with_key_of(1, 0, "call $sol_get_clock_sysvar"));
    let out = run(&f, &config(1));
    assert_eq!(out.observations.len(), 1);
    assert!(out.stats.unknown_syscalls.contains("sol_get_clock_sysvar"));
}

#[test]
fn memcmp_of_equal_buffers_is_zero() {
    let src = "\
stdw [r10-8], 7
stdw [r10-16], 7
mov64 r1, r10
add64 r1, -8
mov64 r2, r10
add64 r2, -16
mov64 r3, 8
mov64 r4, r10
add64 r4, -24
call $sol_memcmp_
ldxw r0, [r10-24]
exit
";
    let f = fixture(src);
    let mut cfg = config(1);
    cfg.prune = false;
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let done = ex.run(vec![init_state(&f.image, 1, 0, 8).unwrap()], &mut out);
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].1, End::Exit);
    assert_eq!(done[0].0.regs[0].as_u64(), Some(0));
}

#[test]
fn signer_branch_is_journaled_on_the_observation() {
    let signer = InputLayout::new(2, 0, 8).accounts[0].start + 1;
    let guard = format!("ldxb r3, [r6+{signer}]\njeq r3, 0, quit");
    let src = cpi_with_key_of(2, 1, &guard) + "quit:\nmov64 r0, 1\nexit\n";
    let f = fixture(&src);
    let out = run(&f, &config(2));
    assert_eq!(out.observations.len(), 1);
    assert!(out.observations[0].journal[0].signer_checked);
}

#[test]
fn symbolic_pointer_within_fanout_forks() {
    // Load from the stack at an offset chosen by instruction data byte & 3.
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    let src = format!(
        "ldxb r2, [r1+{ix}]\nand64 r2, 3\nmov64 r3, r10\nsub64 r3, 8\nsub64 r3, r2\nldxb r0, [r3+0]\nexit\n"
    );
    let f = fixture(&src);
    let mut cfg = config(1);
    cfg.prune = false;
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let done = ex.run(vec![init_state(&f.image, 1, 0, 8).unwrap()], &mut out);
    assert_eq!(done.len(), 4);
    assert!(done.iter().all(|(_, e)| *e == End::Exit));

    let src = format!(
        "ldxb r2, [r1+{ix}]\nmov64 r3, r10\nsub64 r3, 256\nadd64 r3, r2\nldxb r0, [r3+0]\nexit\n"
    );
    let f = fixture(&src);
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let done = ex.run(vec![init_state(&f.image, 1, 0, 8).unwrap()], &mut out);
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].1, End::UnresolvedPointer(4));
}

#[test]
fn loop_bound_stops_symbolic_loops() {
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    let src =
        format!("ldxdw r2, [r1+{ix}]\nmov64 r0, 0\ntop:\nadd64 r0, 1\njlt r0, r2, top\nexit\n");
    let f = fixture(&src);
    let mut cfg = config(1);
    cfg.prune = false;
    cfg.loop_bound = 5;
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let done = ex.run(vec![init_state(&f.image, 1, 0, 8).unwrap()], &mut out);
    let exits = done.iter().filter(|(_, e)| *e == End::Exit).count();
    let bounded = done.iter().filter(|(_, e)| *e == End::LoopBound).count();
    assert_eq!(exits, 6);
    assert_eq!(bounded, 1);
}

#[test]
fn division_by_symbolic_zero_forks_a_fault() {
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    let f = fixture(&format!(
        "ldxb r2, [r1+{ix}]\nmov64 r0, 10\ndiv64 r0, r2\nexit\n"
    ));
    let mut cfg = config(1);
    cfg.prune = false;
    let ex = Explorer::new(&f.image, &f.cfg, &f.reach, &cfg);
    let mut out = Exploration::default();
    let done = ex.run(vec![init_state(&f.image, 1, 0, 8).unwrap()], &mut out);
    let ends: std::collections::HashSet<_> = done.iter().map(|(_, e)| *e).collect();
    assert_eq!(
        ends,
        std::collections::HashSet::from([End::Exit, End::Fault(FaultKind::DivisionByZero, 2)])
    );
}

fn guided() -> String {
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    format!(
        "
.entry main
.func main
    ldxb r2, [r1+{ix}]
    jeq r2, 0, skip
    call cpi
skip:
    call err
    exit
.func cpi
    call $sol_invoke_signed_c
    exit
.func err
    call $sol_log_
    exit
"
    )
}

#[test]
fn guidance_decisions() {
    let f = fixture(&guided());
    let mut s = init_state(&f.image, 1, 0, 8).unwrap();
    assert_eq!(
        should_continue(&s, &f.cfg, &f.reach),
        Decision::GuideToCallee
    );
    let cpi = *f.image.symbols.iter().find(|(_, n)| *n == "cpi").unwrap().0;
    let err = *f.image.symbols.iter().find(|(_, n)| *n == "err").unwrap().0;
    s.pc = cpi;
    assert_eq!(should_continue(&s, &f.cfg, &f.reach), Decision::GuideToSite);
    s.pc = err;
    assert_eq!(should_continue(&s, &f.cfg, &f.reach), Decision::Prune);
    // Called from before the CPI call, `err` must return to a caller that still reaches it.
    s.call_stack.push(crate::sym::CallFrame {
        return_pc: 1,
        caller_function: 0,
        saved: std::array::from_fn(|_| SymExpr::from_u64(64, 0)),
    });
    assert_eq!(
        should_continue(&s, &f.cfg, &f.reach),
        Decision::GuideToReturn
    );
}

#[test]
fn pruning_keeps_observations() {
    let f = fixture(&guided());
    let on = run(&f, &config(1));
    let mut off_cfg = config(1);
    off_cfg.prune = false;
    let off = run(&f, &off_cfg);
    let sites =
        |e: &Exploration| -> Vec<usize> { e.observations.iter().map(|o| o.callsite).collect() };
    assert_eq!(sites(&on), sites(&off));
    assert!(on.stats.states_pruned > 0);
    assert!(on.stats.steps < off.stats.steps);
}

#[test]
fn state_cap_is_respected() {
    let ix = InputLayout::new(1, 0, 8).instr_data_offset;
    let mut src = String::new();
    for i in 0..8 {
        src += &format!("ldxb r2, [r1+{}]\njeq r2, 0, +0\n", ix + i);
    }
    src += &cpi_with_key_of(1, 0, "");
    let f = fixture(&src);
    let mut cfg = config(1);
    cfg.max_states = 10;
    let out = run(&f, &cfg);
    assert!(out.stats.states_explored <= 10);
    assert!(out.stats.state_cap_hit);
}

#[test]
fn config_validation() {
    assert_eq!(ExplorationConfig::default().validate(), Ok(()));
    let c = ExplorationConfig {
        max_states: 0,
        ..ExplorationConfig::default()
    };
    assert_eq!(c.validate(), Err(ConfigError::Zero("max_states")));
    let mut c = ExplorationConfig::default();
    c.cpi_syscalls.clear();
    assert_eq!(c.validate(), Err(ConfigError::NoCpiSyscalls));
}
