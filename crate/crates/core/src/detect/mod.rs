//! The ACPI oracle: target extraction, whitelist classification, and the
//! signer/owner verdict.

pub mod anchor;

use std::collections::{BTreeMap, BTreeSet};

use ethnum::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explore::CpiObservation;
use crate::image::ProgramImage;
use crate::solver::{slice, Solver, Verdict};
use crate::sym::{Field, MachineState, Origin, SymExpr};
use crate::syscalls::{Abi, RUST_INSTRUCTION_PROGRAM_ID_OFFSET};

pub use anchor::{detect_anchor, AnchorReport, Fingerprint, FingerprintKind, FingerprintMatch};

pub const DEFAULT_WHITELIST_K: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbiParseFailure {
    #[error("instruction pointer in r1 is not a single concrete value")]
    InstructionPointer,
    #[error("program id pointer is not a single concrete value")]
    ProgramIdPointer,
    #[error("program id unreadable: {0}")]
    Unreadable(crate::isa::FaultKind),
}

/// Reads the 32-byte program id a CPI call is about to invoke. `resolve`
/// must return the unique feasible value of a symbolic pointer, if any.
pub fn extract_call_target(
    state: &MachineState,
    image: &ProgramImage,
    abi: Abi,
    mut resolve: impl FnMut(&SymExpr) -> Option<u64>,
) -> Result<SymExpr, AbiParseFailure> {
    let instruction = resolve(&state.regs[1]).ok_or(AbiParseFailure::InstructionPointer)?;
    let id_addr = match abi {
        Abi::C => {
            let ptr = state
                .read_mem(image, instruction, 8)
                .map_err(AbiParseFailure::Unreadable)?;
            resolve(&ptr).ok_or(AbiParseFailure::ProgramIdPointer)?
        }
        Abi::Rust => instruction.wrapping_add(RUST_INSTRUCTION_PROGRAM_ID_OFFSET),
    };
    state
        .read_mem(image, id_addr, 32)
        .map_err(AbiParseFailure::Unreadable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count")]
pub enum Classification {
    NotAttackerControlled,
    ConstantTrusted,
    Whitelisted(usize),
    Arbitrary,
}

/// Feasible values of one path's call target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetValues {
    /// No attacker-controlled input reaches the target.
    Fixed,
    /// Every feasible value (at most `k`).
    Values(BTreeSet<U256>),
    /// More than `k` values.
    Saturated,
    /// The solver gave up; the values found so far.
    Unknown(BTreeSet<U256>),
}

pub fn target_values(
    target: &SymExpr,
    constraints: &[SymExpr],
    solver: &Solver,
    k: usize,
) -> TargetValues {
    if !target.origins().iter().any(Origin::is_attacker_controlled) {
        return TargetValues::Fixed;
    }
    let relevant = slice(constraints, target.origins());
    let (values, complete) = solver.enumerate(&relevant, target, k + 1);
    let values: BTreeSet<U256> = values.into_iter().collect();
    match complete {
        Some(true) if values.len() <= k => TargetValues::Values(values),
        Some(_) => TargetValues::Saturated,
        None => TargetValues::Unknown(values),
    }
}

fn classify_set(values: &BTreeSet<U256>, unknown: bool, k: usize) -> Classification {
    match values.len() {
        n if n > k => Classification::Arbitrary,
        _ if unknown => Classification::Whitelisted(k),
        0 => Classification::NotAttackerControlled,
        1 => Classification::ConstantTrusted,
        n => Classification::Whitelisted(n),
    }
}

/// Classifies a call target by how many values it can take on the path.
pub fn classify_target(
    target: &SymExpr,
    constraints: &[SymExpr],
    solver: &Solver,
    k: usize,
) -> Classification {
    match target_values(target, constraints, solver, k) {
        TargetValues::Fixed => Classification::NotAttackerControlled,
        TargetValues::Values(v) => classify_set(&v, false, k),
        TargetValues::Saturated => Classification::Arbitrary,
        TargetValues::Unknown(v) => classify_set(&v, true, k),
    }
}

/// Classifies every observation. A path whose own target saturates is
/// arbitrary; otherwise the allowed set is the union over all bounded paths
/// reaching the same call site, so a whitelist enforced by branching counts
/// every allowed target.
pub fn classify_observations(
    observations: &[CpiObservation],
    solver: &Solver,
    k: usize,
) -> Vec<Classification> {
    let per_path: Vec<TargetValues> = observations
        .iter()
        .map(|o| match &o.target {
            Some(t) => target_values(t, &o.constraints, solver, k),
            None => TargetValues::Fixed,
        })
        .collect();
    let mut sites: BTreeMap<usize, (BTreeSet<U256>, bool)> = BTreeMap::new();
    for (o, v) in observations.iter().zip(&per_path) {
        let (set, unknown) = sites.entry(o.callsite).or_default();
        match v {
            TargetValues::Values(vals) => set.extend(vals),
            TargetValues::Unknown(vals) => {
                set.extend(vals);
                *unknown = true;
            }
            TargetValues::Fixed | TargetValues::Saturated => {}
        }
    }
    observations
        .iter()
        .zip(per_path)
        .map(|(o, v)| match v {
            TargetValues::Fixed => Classification::NotAttackerControlled,
            TargetValues::Saturated => Classification::Arbitrary,
            TargetValues::Values(vals) if vals.is_empty() => Classification::NotAttackerControlled,
            TargetValues::Values(_) | TargetValues::Unknown(_) => {
                let (set, unknown) = &sites[&o.callsite];
                classify_set(set, *unknown, k)
            }
        })
        .collect()
}

/// Accounts whose bytes feed `target`, with the number of target bytes each feeds.
pub fn contributing_accounts(target: &SymExpr) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    let bytes = target.width() / 8;
    for i in 0..bytes {
        let byte = target.extract(i * 8 + 7, i * 8);
        let accounts: BTreeSet<u8> = byte
            .origins()
            .iter()
            .filter(|o| o.is_attacker_controlled())
            .filter_map(Origin::account_index)
            .collect();
        for a in accounts {
            *counts.entry(a).or_default() += 1;
        }
    }
    counts
}

/// The account feeding the most target bytes; ties go to the lowest index.
pub fn source_account(contributors: &BTreeMap<u8, usize>) -> Option<u8> {
    contributors
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&a, _)| a)
}

/// A satisfying input for a finding's path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    /// Program id bytes in memory order, hex.
    pub target: String,
    /// Serialized program input region, hex.
    pub input: String,
    /// Values for runtime-derived results (hash and PDA outputs, unknown
    /// syscall returns), by creation index.
    pub derived: BTreeMap<u32, u64>,
}

impl Evidence {
    pub fn input_bytes(&self) -> Vec<u8> {
        hex::decode(&self.input).expect("evidence input is hex")
    }

    pub fn target_bytes(&self) -> Vec<u8> {
        hex::decode(&self.target).expect("evidence target is hex")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcpiFinding {
    pub callsite: usize,
    pub function: Option<String>,
    pub syscall: String,
    pub abi: Abi,
    pub account_count: usize,
    pub target_classification: Classification,
    pub source_account: Option<u8>,
    pub contributing_accounts: Vec<u8>,
    pub signer_check_absent: bool,
    pub source_owner_check_absent: bool,
    pub vulnerable: bool,
    pub evidence: Option<Evidence>,
    pub diagnostic: Option<String>,
}

impl AcpiFinding {
    /// The verdict equation over the stored flags.
    pub fn verdict_holds(&self) -> bool {
        self.vulnerable
            == (self.target_classification == Classification::Arbitrary
                && self.signer_check_absent
                && self.source_owner_check_absent)
    }
}

pub fn target_bytes_le(value: U256) -> Vec<u8> {
    value.to_le_bytes().to_vec()
}

/// Builds evidence from a model of the observation's path.
pub fn witness(obs: &CpiObservation, solver: &Solver) -> Option<Evidence> {
    let target = obs.target.as_ref()?;
    let model = match solver.check(&obs.constraints) {
        Verdict::Sat(m) => m,
        _ => return None,
    };
    let input = obs.layout.serialize(&|o| model.get(o));
    let derived = model
        .iter()
        .filter_map(|(o, v)| match o {
            Origin::Derived(i) => Some((*i, v.as_u64())),
            _ => None,
        })
        .collect();
    Some(Evidence {
        target: hex::encode(target_bytes_le(model.eval(target))),
        input: hex::encode(input),
        derived,
    })
}

/// Applies the signer and owner rules to one observation.
pub fn judge(
    obs: &CpiObservation,
    classification: Classification,
    solver: &Solver,
    function: Option<String>,
) -> AcpiFinding {
    let contributors = obs
        .target
        .as_ref()
        .map(contributing_accounts)
        .unwrap_or_default();
    let source = source_account(&contributors);
    let signer_check_absent = !obs.journal.iter().any(|j| j.signer_checked);
    let source_owner_check_absent = contributors.keys().all(|&a| {
        obs.journal
            .get(a as usize)
            .is_none_or(|j| !j.owner_validated())
    });
    let vulnerable = classification == Classification::Arbitrary
        && signer_check_absent
        && source_owner_check_absent;
    AcpiFinding {
        callsite: obs.callsite,
        function,
        syscall: obs.syscall.clone(),
        abi: obs.abi,
        account_count: obs.account_count,
        target_classification: classification,
        source_account: source,
        contributing_accounts: contributors.keys().copied().collect(),
        signer_check_absent,
        source_owner_check_absent,
        vulnerable,
        evidence: if vulnerable {
            witness(obs, solver)
        } else {
            None
        },
        diagnostic: obs.diagnostic.clone(),
    }
}

/// Classifies and judges one observation.
pub fn analyze(
    obs: &CpiObservation,
    solver: &Solver,
    k: usize,
    function: Option<String>,
) -> AcpiFinding {
    let classification = match &obs.target {
        Some(t) => classify_target(t, &obs.constraints, solver, k),
        None => Classification::NotAttackerControlled,
    };
    judge(obs, classification, solver, function)
}

/// Per-contract outcome over every observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ContractFlags {
    pub arbitrary_cpi: bool,
    pub missing_owner_check: bool,
    pub missing_signer_check: bool,
    pub vulnerable: bool,
}

impl ContractFlags {
    pub fn absorb(&mut self, f: &AcpiFinding) {
        if f.target_classification != Classification::Arbitrary {
            return;
        }
        self.arbitrary_cpi = true;
        self.missing_owner_check |= f.source_owner_check_absent;
        self.missing_signer_check |= f.signer_check_absent;
        self.vulnerable |= f.vulnerable;
    }
}

fn severity(f: &AcpiFinding) -> (bool, Classification, bool, bool) {
    (
        f.vulnerable,
        f.target_classification,
        f.source_owner_check_absent,
        f.signer_check_absent,
    )
}

/// One finding per call site: the most severe observation there, earliest first on ties.
pub fn aggregate(findings: Vec<AcpiFinding>) -> Vec<AcpiFinding> {
    let mut by_site: BTreeMap<usize, AcpiFinding> = BTreeMap::new();
    for f in findings {
        match by_site.get(&f.callsite) {
            Some(best) if severity(best) >= severity(&f) => {}
            _ => {
                by_site.insert(f.callsite, f);
            }
        }
    }
    by_site.into_values().collect()
}

/// Whether an origin is a key byte of `account`.
pub fn is_key_of(origin: &Origin, account: u8) -> bool {
    matches!(origin, Origin::AccountField { account: a, field: Field::KeyByte(_) } if *a == account)
}
