//! Guided symbolic exploration toward CPI call sites.

mod step;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::cfg::{Cfg, CpiReachability};
use crate::image::ProgramImage;
use crate::isa::FaultKind;
use crate::solver::Solver;
use crate::sym::{init_state, AccountJournal, InputLayout, MachineState, Origin, SymExpr};
use crate::syscalls::{Abi, DEFAULT_CPI_SYSCALLS};

pub use step::Successor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExplorationConfig {
    pub per_contract_timeout: Duration,
    /// Cap on states taken from the worklist, across the whole account sweep.
    pub max_states: usize,
    pub step_budget: u64,
    pub loop_bound: u32,
    pub account_counts: Vec<usize>,
    pub data_len_per_account: usize,
    pub instr_data_len: usize,
    pub pointer_fanout: usize,
    pub cpi_syscalls: Vec<String>,
    pub prune: bool,
    /// Stop a path at its first CPI. When off, CPI calls return 0 and the path continues.
    pub terminate_at_cpi: bool,
    pub conflict_budget: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            per_contract_timeout: Duration::from_secs(1800),
            max_states: 4096,
            step_budget: 200_000,
            loop_bound: 64,
            account_counts: (1..=8).collect(),
            data_len_per_account: 1024,
            instr_data_len: 256,
            pointer_fanout: 4,
            cpi_syscalls: DEFAULT_CPI_SYSCALLS.iter().map(|s| s.to_string()).collect(),
            prune: true,
            terminate_at_cpi: true,
            conflict_budget: crate::solver::DEFAULT_CONFLICT_BUDGET,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("timeout must be positive")]
    Timeout,
    #[error("no CPI syscall names configured")]
    NoCpiSyscalls,
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let caps = [
            ("max_states", self.max_states as u64),
            ("step_budget", self.step_budget),
            ("loop_bound", self.loop_bound as u64),
            ("pointer_fanout", self.pointer_fanout as u64),
            ("conflict_budget", self.conflict_budget),
        ];
        for (name, v) in caps {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.account_counts.is_empty() || self.account_counts.contains(&0) {
            return Err(ConfigError::Zero("account_counts"));
        }
        if self.per_contract_timeout.is_zero() {
            return Err(ConfigError::Timeout);
        }
        if self.cpi_syscalls.is_empty() {
            return Err(ConfigError::NoCpiSyscalls);
        }
        Ok(())
    }
}

/// A path reaching a CPI call, captured at the call.
#[derive(Debug, Clone)]
pub struct CpiObservation {
    pub callsite: usize,
    pub syscall: String,
    pub abi: Abi,
    /// The 32-byte program id about to be invoked, `None` when it could not be located.
    pub target: Option<SymExpr>,
    pub target_origins: BTreeSet<Origin>,
    pub diagnostic: Option<String>,
    pub constraints: Vec<SymExpr>,
    pub journal: Vec<AccountJournal>,
    pub account_count: usize,
    pub layout: Arc<InputLayout>,
}

/// Why a path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum End {
    Exit,
    Abort,
    Fault(FaultKind, usize),
    StepBudget,
    LoopBound,
    UnresolvedPointer(usize),
    Cpi,
    Pruned,
}

impl End {
    fn key(&self) -> String {
        match self {
            End::Exit => "exit".into(),
            End::Abort => "abort".into(),
            End::Fault(kind, _) => format!("fault:{kind}"),
            End::StepBudget => "step_budget".into(),
            End::LoopBound => "loop_bound".into(),
            End::UnresolvedPointer(_) => "unresolved_pointer".into(),
            End::Cpi => "cpi".into(),
            End::Pruned => "pruned".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExploreStats {
    pub states_explored: u64,
    pub states_pruned: u64,
    pub steps: u64,
    pub forks: u64,
    pub solver_queries: u64,
    pub solver_unknown: u64,
    pub timeout_hit: bool,
    pub state_cap_hit: bool,
    /// Path terminations by reason.
    pub terminations: BTreeMap<String, u64>,
    pub unknown_syscalls: BTreeSet<String>,
}

impl ExploreStats {
    fn end(&mut self, end: &End) {
        if *end == End::Pruned {
            self.states_pruned += 1;
        }
        *self.terminations.entry(end.key()).or_default() += 1;
    }

    pub fn faults(&self) -> u64 {
        self.terminations
            .iter()
            .filter(|(k, _)| k.starts_with("fault:"))
            .map(|(_, v)| v)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Decision {
    GuideToSite,
    GuideToCallee,
    GuideToReturn,
    Prune,
}

/// Guidance for a live state: a CPI site reachable in the current function,
/// through a callee, or after returning to a caller; otherwise prune.
pub fn should_continue(state: &MachineState, cfg: &Cfg, reach: &CpiReachability) -> Decision {
    let Some(block) = cfg.block_of(state.pc) else {
        return Decision::GuideToReturn;
    };
    if reach.block_reaches_site.contains(&block) {
        return Decision::GuideToSite;
    }
    if reach.block_reaches.contains(&block) {
        return Decision::GuideToCallee;
    }
    let caller_reaches = state.call_stack.iter().any(|frame| {
        cfg.block_of(frame.return_pc)
            .is_some_and(|b| reach.block_reaches.contains(&b))
    });
    if caller_reaches {
        Decision::GuideToReturn
    } else {
        Decision::Prune
    }
}

#[derive(Debug, Clone, Default)]
pub struct Exploration {
    pub observations: Vec<CpiObservation>,
    pub stats: ExploreStats,
}

pub struct Explorer<'a> {
    image: &'a ProgramImage,
    cfg: &'a Cfg,
    reach: &'a CpiReachability,
    config: &'a ExplorationConfig,
    solver: Solver,
    deadline: Instant,
}

/// Live states bucketed by guidance class, FIFO within a class.
#[derive(Default)]
struct Worklist {
    queues: [VecDeque<MachineState>; 3],
}

impl Worklist {
    fn push(&mut self, class: Decision, state: MachineState) {
        let i = match class {
            Decision::GuideToSite => 0,
            Decision::GuideToCallee => 1,
            _ => 2,
        };
        self.queues[i].push_back(state);
    }

    fn pop(&mut self) -> Option<MachineState> {
        self.queues.iter_mut().find_map(|q| q.pop_front())
    }
}

impl<'a> Explorer<'a> {
    pub fn new(
        image: &'a ProgramImage,
        cfg: &'a Cfg,
        reach: &'a CpiReachability,
        config: &'a ExplorationConfig,
    ) -> Self {
        Explorer {
            image,
            cfg,
            reach,
            config,
            solver: Solver::with_budget(config.conflict_budget),
            deadline: Instant::now() + config.per_contract_timeout,
        }
    }

    fn classify(&self, state: &MachineState) -> Decision {
        let d = should_continue(state, self.cfg, self.reach);
        if d == Decision::Prune && !self.config.prune {
            Decision::GuideToReturn
        } else {
            d
        }
    }

    fn at_block_start(&self, pc: usize) -> bool {
        self.cfg
            .block_of(pc)
            .is_some_and(|b| self.cfg.blocks[b].start == pc)
    }

    /// Explores from the given states; returns every finished path.
    pub fn run(
        &self,
        initial: Vec<MachineState>,
        out: &mut Exploration,
    ) -> Vec<(MachineState, End)> {
        let mut finished = Vec::new();
        let mut work = Worklist::default();
        for s in initial {
            match self.classify(&s) {
                Decision::Prune => {
                    out.stats.end(&End::Pruned);
                    finished.push((s, End::Pruned));
                }
                d => work.push(d, s),
            }
        }
        while let Some(mut state) = work.pop() {
            if out.stats.states_explored as usize >= self.config.max_states {
                out.stats.state_cap_hit = true;
                break;
            }
            if Instant::now() >= self.deadline {
                out.stats.timeout_hit = true;
                break;
            }
            out.stats.states_explored += 1;
            loop {
                if out.stats.steps % 1024 == 1023 && Instant::now() >= self.deadline {
                    out.stats.timeout_hit = true;
                    return finished;
                }
                out.stats.steps += 1;
                let mut next = self.step(state, out);
                if next.len() == 1 {
                    match next.pop().unwrap() {
                        Successor::Live(s) => {
                            if self.config.prune
                                && self.at_block_start(s.pc)
                                && self.classify(&s) == Decision::Prune
                            {
                                out.stats.end(&End::Pruned);
                                finished.push((s, End::Pruned));
                                break;
                            }
                            state = s;
                            continue;
                        }
                        Successor::Done(s, end) => {
                            out.stats.end(&end);
                            finished.push((s, end));
                            break;
                        }
                    }
                }
                for succ in next {
                    match succ {
                        Successor::Live(s) => match self.classify(&s) {
                            Decision::Prune => {
                                out.stats.end(&End::Pruned);
                                finished.push((s, End::Pruned));
                            }
                            d => work.push(d, s),
                        },
                        Successor::Done(s, end) => {
                            out.stats.end(&end);
                            finished.push((s, end));
                        }
                    }
                }
                break;
            }
        }
        finished
    }
}

/// Runs the account-count sweep and collects every CPI observation.
pub fn explore(
    image: &ProgramImage,
    cfg: &Cfg,
    reach: &CpiReachability,
    config: &ExplorationConfig,
) -> Exploration {
    let explorer = Explorer::new(image, cfg, reach, config);
    let mut out = Exploration::default();
    for &count in &config.account_counts {
        let state = match init_state(
            image,
            count,
            config.data_len_per_account,
            config.instr_data_len,
        ) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("skipping account count {count}: {e}");
                continue;
            }
        };
        explorer.run(vec![state], &mut out);
        if out.stats.timeout_hit || out.stats.state_cap_hit {
            break;
        }
    }
    log::debug!(
        "explored {} states, {} observations",
        out.stats.states_explored,
        out.observations.len()
    );
    out
}

#[cfg(test)]
mod tests;
