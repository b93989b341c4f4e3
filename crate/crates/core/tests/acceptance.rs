//! One line per acceptance criterion; the test fails if any line fails.

mod common;

use std::time::{Duration, Instant};

use cpiscan_core::corpus::{verify_fixtures, FixtureKind};
use cpiscan_core::detect::Classification;
use cpiscan_core::report::{
    emit_json, scan_dir, scan_file, BatchOutput, ScanConfig, ScanReport, SCHEMA_VERSION,
};

use common::{
    codec_laws, corpus_dir, differential, fixture_image, manifest, micro_names, observation_set,
    solver_instances,
};

const DIFFERENTIAL_RUNS: usize = 100;
const SOLVER_INSTANCES: usize = 500;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

fn run(
    name: &'static str,
    limit: Option<Duration>,
    check: impl FnOnce() -> Result<String, String>,
) -> Outcome {
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed();
    let over = limit.is_some_and(|l| elapsed > l);
    let (pass, mut detail) = match result {
        Ok(d) => (!over, d),
        Err(d) => (false, d),
    };
    if over {
        detail = format!("{detail}; over time limit");
    }
    Outcome {
        name,
        pass,
        detail,
        elapsed,
        limit,
    }
}

fn scan_fixture(name: &str) -> ScanReport {
    let m = manifest();
    let entry = m.get(name).unwrap();
    scan_file(&corpus_dir().join(&entry.path), &ScanConfig::default()).unwrap()
}

fn marketplace() -> Result<String, String> {
    let r = scan_fixture("marketplace");
    let bad: Vec<_> = r.findings.iter().filter(|f| f.vulnerable).collect();
    let [f] = bad.as_slice() else {
        return Err(format!("{} vulnerable findings", bad.len()));
    };
    let ok = f.function.as_deref() == Some("refresh_credit")
        && f.source_account == Some(1)
        && f.signer_check_absent
        && f.source_owner_check_absent
        && f.target_classification == Classification::Arbitrary;
    let detail = format!(
        "site {} in {:?}, source {:?}, signer absent {}, owner absent {}",
        f.callsite,
        f.function,
        f.source_account,
        f.signer_check_absent,
        f.source_owner_check_absent
    );
    ok.then_some(detail.clone()).ok_or(detail)
}

fn fixed_marketplace() -> Result<String, String> {
    let r = scan_fixture("marketplace_fixed");
    let vulnerable = r.vulnerable_findings();
    let site = r
        .findings
        .iter()
        .find(|f| f.function.as_deref() == Some("refresh_credit"))
        .ok_or("no finding at refresh_credit")?;
    let detail = format!(
        "{vulnerable} vulnerable, refresh_credit site {:?}",
        site.target_classification
    );
    (vulnerable == 0 && site.target_classification == Classification::ConstantTrusted)
        .then_some(detail.clone())
        .ok_or(detail)
}

fn level4() -> Result<String, String> {
    let r = scan_fixture("level4");
    let bad: Vec<_> = r.findings.iter().filter(|f| f.vulnerable).collect();
    let detail = format!(
        "{} vulnerable, sources {:?}",
        bad.len(),
        bad.iter().map(|f| f.source_account).collect::<Vec<_>>()
    );
    (bad.len() == 1 && bad[0].source_account == Some(5))
        .then_some(detail.clone())
        .ok_or(detail)
}

fn truth_table() -> Result<String, String> {
    let m = manifest();
    let mut micro = m.clone();
    micro.fixtures.retain(|f| f.kind == FixtureKind::Micro);
    let checks = verify_fixtures(&corpus_dir(), &micro, &ScanConfig::default());
    let failures: Vec<_> = checks
        .iter()
        .filter_map(|c| {
            c.result
                .as_ref()
                .err()
                .map(|e| format!("{}: {e:?}", c.name))
        })
        .collect();
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    let vulnerable: Vec<_> = checks
        .iter()
        .filter(|c| {
            c.report
                .as_ref()
                .is_some_and(|r| r.vulnerable_findings() > 0)
        })
        .map(|c| c.name.as_str())
        .collect();
    let detail = format!(
        "{} fixtures match; vulnerable: {vulnerable:?}",
        checks.len()
    );
    (checks.len() == 7 && vulnerable == ["unguarded"])
        .then_some(detail.clone())
        .ok_or(detail)
}

fn differential_all() -> Result<String, String> {
    let names = micro_names();
    for (i, name) in names.iter().enumerate() {
        differential(
            &fixture_image(name),
            DIFFERENTIAL_RUNS,
            3,
            0xacce + i as u64,
        )
        .map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!(
        "{} programs x {DIFFERENTIAL_RUNS} inputs",
        names.len()
    ))
}

fn pruning() -> Result<String, String> {
    let mut total = 0;
    for name in micro_names() {
        let image = fixture_image(&name);
        let on = observation_set(&image, true);
        let off = observation_set(&image, false);
        if on != off {
            return Err(format!(
                "{name}: {} observations pruned vs {} unpruned",
                on.len(),
                off.len()
            ));
        }
        total += on.len();
    }
    Ok(format!(
        "{total} observations equal with and without pruning"
    ))
}

fn solver() -> Result<String, String> {
    solver_instances(SOLVER_INSTANCES, 0xb17e)?;
    Ok(format!("{SOLVER_INSTANCES} instances agree"))
}

fn anchor() -> Result<String, String> {
    let m = manifest();
    let mut wrong = Vec::new();
    for entry in &m.fixtures {
        let r = scan_file(
            &corpus_dir().join(&entry.path),
            &ScanConfig {
                anchor_only: true,
                ..ScanConfig::default()
            },
        )
        .unwrap();
        let expect = entry.name == "anchor_hello";
        if r.anchor.is_anchor != expect || entry.expected.anchor != expect {
            wrong.push(entry.name.clone());
        }
    }
    let detail = format!("{} fixtures, misclassified {wrong:?}", m.fixtures.len());
    wrong.is_empty().then_some(detail.clone()).ok_or(detail)
}

fn summary_algebra() -> Result<String, String> {
    let config = ScanConfig::default();
    let dir = corpus_dir();
    let emit = |jobs| {
        let (reports, summary) = scan_dir(&dir, &config, jobs).unwrap();
        let bytes = emit_json(&BatchOutput {
            schema_version: SCHEMA_VERSION,
            reports: &reports,
            summary: &summary,
        });
        (summary, bytes)
    };
    let (summary, one) = emit(1);
    let (_, eight) = emit(8);
    let expected = manifest().expected_vulnerable();
    let detail = format!(
        "{} contracts, {} arbitrary >= {}/{} missing owner/signer >= {} vulnerable (manifest {expected}), jobs 1 vs 8 identical {}",
        summary.contracts_total,
        summary.contracts_with_arbitrary_cpi,
        summary.contracts_missing_owner_checks,
        summary.contracts_missing_signer_checks,
        summary.contracts_vulnerable,
        one == eight
    );
    (summary.chain_holds() && summary.contracts_vulnerable == expected && one == eight)
        .then_some(detail.clone())
        .ok_or(detail)
}

fn codec() -> Result<String, String> {
    codec_laws().map(|n| format!("{n} instructions round-trip"))
}

#[test]
fn acceptance() {
    let secs = |s| Some(Duration::from_secs(s));
    let outcomes = [
        run("marketplace detection", secs(60), marketplace),
        run("fixed marketplace negative", secs(60), fixed_marketplace),
        run("level-4 fixture", secs(60), level4),
        run("oracle truth table", secs(30), truth_table),
        run("differential equivalence", secs(300), differential_all),
        run("pruning soundness", secs(300), pruning),
        run("solver at 8-bit width", secs(300), solver),
        run("anchor discrimination", None, anchor),
        run("summary algebra", None, summary_algebra),
        run("codec laws", secs(10), codec),
    ];
    for o in &outcomes {
        let limit = o
            .limit
            .map_or_else(String::new, |l| format!(" / {}s", l.as_secs()));
        println!(
            "{} {:<28} {:>7.2}s{limit}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    let failed: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| o.name)
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
