//! Per-contract scan reports, batch scanning and corpus summaries.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cfg::{build_cfg, compute_reachability, find_cpi_sites, CfgError};
use crate::detect::anchor::{default_fingerprints, detect_anchor, AnchorReport, Fingerprint};
use crate::detect::{
    aggregate, classify_observations, judge, AcpiFinding, ContractFlags, DEFAULT_WHITELIST_K,
};
use crate::explore::{explore, ExplorationConfig, ExploreStats};
use crate::image::{load_elf, ImageError};
use crate::solver::smtlib::to_smtlib;
use crate::solver::Solver;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub explore: ExplorationConfig,
    pub whitelist_k: usize,
    pub fingerprints: Vec<Fingerprint>,
    /// Skip exploration and report only the Anchor fingerprint result.
    pub anchor_only: bool,
    /// File extension picked up by directory scans.
    pub extension: String,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            explore: ExplorationConfig::default(),
            whitelist_k: DEFAULT_WHITELIST_K,
            fingerprints: default_fingerprints(),
            anchor_only: false,
            extension: "so".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnsupportedReason {
    MalformedElf,
    UnsupportedMachine,
    RelocationError,
    DecodeFailure,
    IndirectCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Status {
    Ok,
    Unsupported {
        reason: UnsupportedReason,
        detail: String,
    },
    Timeout,
}

impl Status {
    fn unsupported(reason: UnsupportedReason, detail: impl fmt::Display) -> Status {
        Status::Unsupported {
            reason,
            detail: detail.to_string(),
        }
    }
}

impl From<&ImageError> for UnsupportedReason {
    fn from(e: &ImageError) -> Self {
        match e {
            ImageError::MalformedElf(_) => UnsupportedReason::MalformedElf,
            ImageError::UnsupportedMachine(_) => UnsupportedReason::UnsupportedMachine,
            ImageError::RelocationError(_) => UnsupportedReason::RelocationError,
        }
    }
}

impl From<&CfgError> for UnsupportedReason {
    fn from(e: &CfgError) -> Self {
        match e {
            CfgError::DecodeFailure { .. } => UnsupportedReason::DecodeFailure,
            CfgError::IndirectCall { .. } => UnsupportedReason::IndirectCall,
        }
    }
}

/// The knobs a report was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigEcho {
    pub timeout_secs: u64,
    pub max_states: usize,
    pub step_budget: u64,
    pub loop_bound: u32,
    pub accounts_min: usize,
    pub accounts_max: usize,
    pub data_len_per_account: usize,
    pub instr_data_len: usize,
    pub pointer_fanout: usize,
    pub conflict_budget: u64,
    pub whitelist_k: usize,
    pub prune: bool,
    pub anchor_only: bool,
    pub cpi_syscalls: Vec<String>,
    pub fingerprint_count: usize,
}

impl From<&ScanConfig> for ConfigEcho {
    fn from(c: &ScanConfig) -> Self {
        let e = &c.explore;
        ConfigEcho {
            timeout_secs: e.per_contract_timeout.as_secs(),
            max_states: e.max_states,
            step_budget: e.step_budget,
            loop_bound: e.loop_bound,
            accounts_min: e.account_counts.iter().copied().min().unwrap_or(0),
            accounts_max: e.account_counts.iter().copied().max().unwrap_or(0),
            data_len_per_account: e.data_len_per_account,
            instr_data_len: e.instr_data_len,
            pointer_fanout: e.pointer_fanout,
            conflict_budget: e.conflict_budget,
            whitelist_k: c.whitelist_k,
            prune: e.prune,
            anchor_only: c.anchor_only,
            cpi_syscalls: e.cpi_syscalls.clone(),
            fingerprint_count: c.fingerprints.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub path: String,
    pub sha256: String,
    pub status: Status,
    /// Set when exploration stopped early (timeout or state cap); findings may be missing.
    pub incomplete: bool,
    pub anchor: AnchorReport,
    pub observations: usize,
    /// One entry per CPI call site.
    pub findings: Vec<AcpiFinding>,
    pub flags: ContractFlags,
    pub stats: ExploreStats,
    pub config: ConfigEcho,
}

impl ScanReport {
    pub fn vulnerable_findings(&self) -> usize {
        self.findings.iter().filter(|f| f.vulnerable).count()
    }
}

fn display_path(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Scans an in-memory binary; `path` is only recorded.
pub fn scan_bytes(path: &str, bytes: &[u8], config: &ScanConfig) -> ScanReport {
    let mut report = ScanReport {
        schema_version: SCHEMA_VERSION,
        path: path.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
        status: Status::Ok,
        incomplete: false,
        anchor: AnchorReport::default(),
        observations: 0,
        findings: Vec::new(),
        flags: ContractFlags::default(),
        stats: ExploreStats::default(),
        config: ConfigEcho::from(config),
    };
    let image = match load_elf(bytes) {
        Ok(image) => image,
        Err(e) => {
            log::info!("{path}: {e}");
            report.status = Status::unsupported((&e).into(), e);
            return report;
        }
    };
    report.anchor = detect_anchor(&image, &config.fingerprints);
    if config.anchor_only {
        return report;
    }
    let cfg = match build_cfg(&image) {
        Ok(cfg) => cfg,
        Err(e) => {
            log::info!("{path}: {e}");
            report.status = Status::unsupported((&e).into(), e);
            return report;
        }
    };
    let sites = find_cpi_sites(&cfg, &config.explore.cpi_syscalls);
    let reach = compute_reachability(&cfg, &sites);
    let exploration = explore(&image, &cfg, &reach, &config.explore);
    let solver = Solver::with_budget(config.explore.conflict_budget);
    if log::log_enabled!(log::Level::Trace) {
        for o in &exploration.observations {
            log::trace!(
                "path constraints at cpi {} ({} accounts):\n{}",
                o.callsite,
                o.account_count,
                to_smtlib(&o.constraints)
            );
        }
    }
    let classes = classify_observations(&exploration.observations, &solver, config.whitelist_k);
    let findings: Vec<AcpiFinding> = exploration
        .observations
        .iter()
        .zip(classes)
        .map(|(obs, class)| {
            let function = cfg
                .block_of(obs.callsite)
                .and_then(|b| cfg.functions.iter().find(|f| f.blocks.contains(&b)))
                .and_then(|f| f.name.clone());
            judge(obs, class, &solver, function)
        })
        .collect();
    for f in &findings {
        report.flags.absorb(f);
    }
    report.observations = exploration.observations.len();
    report.findings = aggregate(findings);
    report.incomplete = exploration.stats.timeout_hit || exploration.stats.state_cap_hit;
    if exploration.stats.timeout_hit {
        report.status = Status::Timeout;
    }
    report.stats = exploration.stats;
    report
}

pub fn scan_file(path: &Path, config: &ScanConfig) -> io::Result<ScanReport> {
    let bytes = fs::read(path)?;
    Ok(scan_bytes(&display_path(path), &bytes, config))
}

/// Contract-level counts over a batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub contracts_total: usize,
    pub contracts_unsupported: usize,
    pub contracts_timeout: usize,
    pub contracts_with_arbitrary_cpi: usize,
    pub contracts_missing_owner_checks: usize,
    pub contracts_missing_signer_checks: usize,
    pub contracts_vulnerable: usize,
    pub vulnerable_share: String,
    pub anchor_count: usize,
    pub anchor_share: String,
}

/// `num / den` rounded half-up to four decimal places.
pub fn render_share(num: usize, den: usize) -> String {
    if den == 0 {
        return "0.0000".into();
    }
    let scaled = (num as u128 * 20_000 / den as u128).div_ceil(2);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

impl Summary {
    pub fn from_reports(reports: &[ScanReport]) -> Summary {
        let mut s = Summary {
            schema_version: SCHEMA_VERSION,
            contracts_total: reports.len(),
            ..Summary::default()
        };
        for r in reports {
            match r.status {
                Status::Unsupported { .. } => s.contracts_unsupported += 1,
                Status::Timeout => s.contracts_timeout += 1,
                Status::Ok => {}
            }
            s.contracts_with_arbitrary_cpi += r.flags.arbitrary_cpi as usize;
            s.contracts_missing_owner_checks += r.flags.missing_owner_check as usize;
            s.contracts_missing_signer_checks += r.flags.missing_signer_check as usize;
            s.contracts_vulnerable += r.flags.vulnerable as usize;
            s.anchor_count += r.anchor.is_anchor as usize;
        }
        s.vulnerable_share = render_share(s.contracts_vulnerable, s.contracts_total);
        s.anchor_share = render_share(s.anchor_count, s.contracts_total);
        s
    }

    /// vulnerable <= min(owner, signer) <= arbitrary <= total.
    pub fn chain_holds(&self) -> bool {
        let min = self
            .contracts_missing_owner_checks
            .min(self.contracts_missing_signer_checks);
        self.contracts_vulnerable <= min
            && min <= self.contracts_with_arbitrary_cpi
            && self.contracts_with_arbitrary_cpi <= self.contracts_total
    }
}

fn collect_files(dir: &Path, extension: &str, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let kind = entry.file_type()?;
        if kind.is_dir() {
            collect_files(&path, extension, out)?;
        } else if kind.is_file() && path.extension().is_some_and(|e| e == extension) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `dir` (recursively) with the configured extension, sorted.
pub fn list_contracts(dir: &Path, extension: &str) -> io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    collect_files(dir, extension, &mut files)?;
    files.sort();
    Ok(files)
}

/// Scans a directory on `jobs` worker threads. A file that cannot be read is
/// logged and left out; it does not abort the batch.
pub fn scan_dir(
    dir: &Path,
    config: &ScanConfig,
    jobs: usize,
) -> io::Result<(Vec<ScanReport>, Summary)> {
    let files = list_contracts(dir, &config.extension)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(io::Error::other)?;
    let reports: Vec<ScanReport> = pool.install(|| {
        files
            .par_iter()
            .filter_map(|p| match scan_file(p, config) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("{}: {e}", p.display());
                    None
                }
            })
            .collect()
    });
    let summary = Summary::from_reports(&reports);
    Ok((reports, summary))
}

/// Canonical JSON: keys sorted, two-space indent, trailing newline.
pub fn emit_json<T: Serialize>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("report types serialize");
    let mut out = serde_json::to_vec_pretty(&tree).expect("json value serializes");
    out.push(b'\n');
    out
}

/// The batch document written by directory scans.
#[derive(Debug, Serialize)]
pub struct BatchOutput<'a> {
    pub schema_version: u32,
    pub reports: &'a [ScanReport],
    pub summary: &'a Summary,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::link::link;
    use crate::isa::asm::assemble;

    fn elf(src: &str) -> Vec<u8> {
        link(&assemble(src).unwrap())
    }

    #[test]
    fn share_rendering() {
        assert_eq!(render_share(14, 6324), "0.0022");
        assert_eq!(render_share(0, 0), "0.0000");
        assert_eq!(render_share(1, 1), "1.0000");
        assert_eq!(render_share(1, 3), "0.3333");
        assert_eq!(render_share(2, 3), "0.6667");
        assert_eq!(render_share(1, 20_000), "0.0001");
    }

    #[test]
    fn corrupt_file_is_unsupported() {
        let r = scan_bytes("x.so", b"not an elf", &ScanConfig::default());
        assert!(matches!(
            r.status,
            Status::Unsupported {
                reason: UnsupportedReason::MalformedElf,
                ..
            }
        ));
        assert_eq!(r.sha256, hex::encode(Sha256::digest(b"not an elf")));
    }

    #[test]
    fn emission_is_stable_and_sorted() {
        let bytes = elf("mov64 r0, 0\nexit\n");
        let config = ScanConfig::default();
        let a = emit_json(&scan_bytes("a.so", &bytes, &config));
        let b = emit_json(&scan_bytes("a.so", &bytes, &config));
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let anchor = text.find("\"anchor\"").unwrap();
        let config_key = text.find("\"config\"").unwrap();
        let status = text.find("\"status\"").unwrap();
        assert!(anchor < config_key && config_key < status);
    }

    #[test]
    fn empty_summary_is_zero() {
        let s = Summary::from_reports(&[]);
        assert_eq!(s.contracts_total, 0);
        assert_eq!(s.anchor_share, "0.0000");
        assert!(s.chain_holds());
    }

    #[test]
    fn anchor_only_skips_exploration() {
        let bytes = elf("mov64 r0, 0\nexit\n");
        let config = ScanConfig {
            anchor_only: true,
            ..ScanConfig::default()
        };
        let r = scan_bytes("a.so", &bytes, &config);
        assert_eq!(r.status, Status::Ok);
        assert_eq!(r.stats, ExploreStats::default());
    }
}
