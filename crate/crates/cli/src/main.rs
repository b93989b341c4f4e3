use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cpiscan_core::cfg::build_cfg;
use cpiscan_core::detect::anchor::{default_fingerprints, parse_fingerprints};
use cpiscan_core::detect::DEFAULT_WHITELIST_K;
use cpiscan_core::image::load_elf;
use cpiscan_core::report::{
    emit_json, scan_dir, scan_file, BatchOutput, ScanConfig, ScanReport, Status, Summary,
    SCHEMA_VERSION,
};

/// Scan Solana SBF programs for arbitrary cross-program invocation.
#[derive(Parser)]
#[command(name = "cpiscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan one program file or every `.so` file under a directory.
    Scan(ScanArgs),
}

#[derive(Args)]
struct ScanArgs {
    path: PathBuf,
    /// Per-contract exploration timeout.
    #[arg(long, env = "CPISCAN_TIMEOUT_SECS", default_value_t = 1800)]
    timeout_secs: u64,
    /// Cap on explored states per contract.
    #[arg(long, env = "CPISCAN_MAX_STATES")]
    max_states: Option<usize>,
    /// Account counts to try, inclusive: `1..8` or a single number.
    #[arg(long, env = "CPISCAN_ACCOUNTS", value_parser = parse_accounts)]
    accounts: Option<(usize, usize)>,
    /// Distinct targets tolerated before a CPI counts as arbitrary.
    #[arg(long, env = "CPISCAN_WHITELIST_K", default_value_t = DEFAULT_WHITELIST_K)]
    whitelist_k: usize,
    /// Write JSON to this file (`-` for stdout).
    #[arg(long, env = "CPISCAN_JSON")]
    json: Option<PathBuf>,
    /// Emit only the batch summary.
    #[arg(long, env = "CPISCAN_SUMMARY_ONLY")]
    summary_only: bool,
    /// Explore without CPI-reachability pruning (debugging).
    #[arg(long, env = "CPISCAN_NO_PRUNE")]
    no_prune: bool,
    /// Only fingerprint for Anchor; skip symbolic exploration.
    #[arg(long, env = "CPISCAN_ANCHOR_ONLY")]
    anchor_only: bool,
    /// Fingerprint file replacing the built-in list.
    #[arg(long, env = "CPISCAN_FINGERPRINTS")]
    fingerprints: Option<PathBuf>,
    /// Parallel scan workers for directories.
    #[arg(long, env = "CPISCAN_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Print the control-flow graph in DOT format instead of scanning.
    #[arg(long, env = "CPISCAN_DUMP_CFG")]
    dump_cfg: bool,
    /// Stream per-instruction trace lines and path constraints (SMT-LIB) to stderr.
    #[arg(long, env = "CPISCAN_TRACE")]
    trace: bool,
}

fn parse_accounts(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{t}` is not a number"))
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if lo == 0 || hi < lo {
        return Err(format!(
            "`{s}` is not a range min..max with 1 <= min <= max"
        ));
    }
    Ok((lo, hi))
}

fn scan_config(args: &ScanArgs) -> Result<ScanConfig> {
    let mut config = ScanConfig::default();
    config.explore.per_contract_timeout = Duration::from_secs(args.timeout_secs);
    if let Some(n) = args.max_states {
        config.explore.max_states = n;
    }
    if let Some((lo, hi)) = args.accounts {
        config.explore.account_counts = (lo..=hi).collect();
    }
    config.explore.prune = !args.no_prune;
    config.whitelist_k = args.whitelist_k;
    config.anchor_only = args.anchor_only;
    config.fingerprints = match &args.fingerprints {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_fingerprints(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => default_fingerprints(),
    };
    if args.whitelist_k == 0 {
        bail!("--whitelist-k must be at least 1");
    }
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    config.explore.validate()?;
    Ok(config)
}

fn write_output(target: &Path, bytes: &[u8]) -> Result<()> {
    if target == Path::new("-") {
        io::stdout().write_all(bytes)?;
    } else {
        fs::write(target, bytes).with_context(|| format!("writing {}", target.display()))?;
    }
    Ok(())
}

fn print_report(r: &ScanReport) {
    let status = match &r.status {
        Status::Ok if r.incomplete => "ok (incomplete)".to_string(),
        Status::Ok => "ok".to_string(),
        Status::Timeout => "timeout".to_string(),
        Status::Unsupported { reason, detail } => format!("unsupported: {reason:?}: {detail}"),
    };
    println!("{}: {status}", r.path);
    if r.anchor.is_anchor {
        println!(
            "  anchor ({} fingerprint matches)",
            r.anchor.matched_fingerprints.len()
        );
    }
    for f in &r.findings {
        let class = match f.target_classification {
            cpiscan_core::detect::Classification::Whitelisted(n) => format!("whitelisted({n})"),
            c => format!("{c:?}").to_lowercase(),
        };
        println!(
            "  cpi at {} in {}: {class}, source {}, signer check {}, owner check {}{}",
            f.callsite,
            f.function.as_deref().unwrap_or("?"),
            f.source_account
                .map_or_else(|| "-".to_string(), |a| format!("account {a}")),
            if f.signer_check_absent {
                "absent"
            } else {
                "present"
            },
            if f.source_owner_check_absent {
                "absent"
            } else {
                "present"
            },
            if f.vulnerable { "  VULNERABLE" } else { "" },
        );
    }
}

fn print_summary(s: &Summary) {
    println!("contracts:               {}", s.contracts_total);
    println!("  unsupported:           {}", s.contracts_unsupported);
    println!("  timed out:             {}", s.contracts_timeout);
    println!(
        "  arbitrary CPI:         {}",
        s.contracts_with_arbitrary_cpi
    );
    println!(
        "  missing owner checks:  {}",
        s.contracts_missing_owner_checks
    );
    println!(
        "  missing signer checks: {}",
        s.contracts_missing_signer_checks
    );
    println!(
        "  vulnerable:            {} ({})",
        s.contracts_vulnerable, s.vulnerable_share
    );
    println!(
        "  anchor:                {} ({})",
        s.anchor_count, s.anchor_share
    );
}

fn dump_cfg(path: &Path) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let image = load_elf(&bytes)?;
    let cfg = build_cfg(&image)?;
    print!("{}", cfg.to_dot(&image));
    Ok(())
}

fn run_scan(args: &ScanArgs) -> Result<bool> {
    let config = scan_config(args)?;
    if args.dump_cfg {
        dump_cfg(&args.path)?;
        return Ok(false);
    }
    let meta =
        fs::metadata(&args.path).with_context(|| format!("reading {}", args.path.display()))?;
    let (reports, summary, single) = if meta.is_dir() {
        let (reports, summary) = scan_dir(&args.path, &config, args.jobs)
            .with_context(|| format!("scanning {}", args.path.display()))?;
        (reports, summary, false)
    } else {
        let report = scan_file(&args.path, &config)
            .with_context(|| format!("reading {}", args.path.display()))?;
        let summary = Summary::from_reports(std::slice::from_ref(&report));
        (vec![report], summary, true)
    };
    let vulnerable = summary.contracts_vulnerable > 0;
    match &args.json {
        Some(target) => {
            let bytes = if args.summary_only {
                emit_json(&summary)
            } else if single {
                emit_json(&reports[0])
            } else {
                emit_json(&BatchOutput {
                    schema_version: SCHEMA_VERSION,
                    reports: &reports,
                    summary: &summary,
                })
            };
            write_output(target, &bytes)?;
        }
        None => {
            if !args.summary_only {
                reports.iter().for_each(print_report);
            }
            if args.summary_only || !single {
                print_summary(&summary);
            }
        }
    }
    Ok(vulnerable)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Scan(args) = &cli.command;
    let level = if args.trace { "trace" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CPISCAN_LOG", level))
        .format_timestamp(None)
        .init();
    match run_scan(args) {
        Ok(true) => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
