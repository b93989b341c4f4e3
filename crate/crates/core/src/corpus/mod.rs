//! Fixture corpus: manifest, rebuild from assembly sources, and golden checks.

pub mod link;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detect::Classification;
use crate::isa::asm::{assemble, AsmError};
use crate::report::{scan_file, ScanConfig, ScanReport, Status};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedStatus {
    Ok,
    Unsupported,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expected {
    pub status: ExpectedStatus,
    /// Number of vulnerable per-site findings.
    pub vulnerable: usize,
    /// Source account of the first arbitrary-target finding.
    pub target_source_account: Option<u8>,
    pub anchor: bool,
    /// Per-site classifications in call-site order, when pinned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifications: Option<Vec<Classification>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    Contract,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub name: String,
    pub kind: FixtureKind,
    /// Binary path relative to the corpus directory.
    pub path: String,
    /// Assembly sources, concatenated in order, relative to the corpus directory.
    pub sources: Vec<String>,
    pub sha256: String,
    pub expected: Expected,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub notes: Vec<String>,
    pub fixtures: Vec<FixtureEntry>,
}

impl FixtureManifest {
    pub fn get(&self, name: &str) -> Option<&FixtureEntry> {
        self.fixtures.iter().find(|f| f.name == name)
    }

    pub fn expected_vulnerable(&self) -> usize {
        self.fixtures
            .iter()
            .filter(|f| f.expected.vulnerable > 0)
            .count()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{fixture}: {file}: {source}")]
    Assembly {
        fixture: String,
        file: String,
        source: AsmError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_manifest(corpus_dir: &Path) -> Result<FixtureManifest, CorpusError> {
    let path = corpus_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_manifest(corpus_dir: &Path, manifest: &FixtureManifest) -> Result<(), CorpusError> {
    let path = corpus_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Assembles and links one fixture from its sources.
pub fn build_fixture(corpus_dir: &Path, entry: &FixtureEntry) -> Result<Vec<u8>, CorpusError> {
    let mut source = String::new();
    // (first line, file) for mapping assembler errors back to a source file.
    let mut spans = Vec::new();
    for rel in &entry.sources {
        let path = corpus_dir.join(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        spans.push((source.lines().count() + 1, rel.clone()));
        source.push_str(&text);
        if !text.ends_with('\n') {
            source.push('\n');
        }
    }
    let asm = assemble(&source).map_err(|e| {
        let line = match &e {
            AsmError::ParseError { line, .. }
            | AsmError::UnknownLabel { line, .. }
            | AsmError::UnknownSyscall { line, .. } => *line,
        };
        let (start, file) = spans
            .iter()
            .rev()
            .find(|(start, _)| *start <= line)
            .cloned()
            .unwrap_or((1, String::new()));
        CorpusError::Assembly {
            fixture: entry.name.clone(),
            file: format!("{file} (line {})", line + 1 - start),
            source: e,
        }
    })?;
    Ok(link::link(&asm))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildOutcome {
    pub name: String,
    pub sha256: String,
    /// The rebuilt binary differs from the manifest hash.
    pub drift: bool,
}

/// Rebuilds every fixture into `out_dir` (same relative paths) and reports
/// drift against the manifest hashes.
pub fn build_fixtures(
    corpus_dir: &Path,
    manifest: &FixtureManifest,
    out_dir: &Path,
) -> Result<Vec<BuildOutcome>, CorpusError> {
    let mut out = Vec::new();
    for entry in &manifest.fixtures {
        let bytes = build_fixture(corpus_dir, entry)?;
        let dest = out_dir.join(&entry.path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&dest, &bytes).map_err(io_err(&dest))?;
        let sha256 = sha256_hex(&bytes);
        let drift = sha256 != entry.sha256;
        if drift {
            log::info!("{}: rebuilt binary differs from manifest hash", entry.name);
        }
        out.push(BuildOutcome {
            name: entry.name.clone(),
            sha256,
            drift,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureFailure {
    MissingFixture,
    HashMismatch {
        expected: String,
        actual: String,
    },
    /// Scan result differs from the manifest expectation.
    Expectation(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct FixtureCheck {
    pub name: String,
    pub report: Option<ScanReport>,
    pub result: Result<(), FixtureFailure>,
}

/// Differences between a scan report and a fixture expectation.
pub fn compare(expected: &Expected, report: &ScanReport) -> Vec<String> {
    let mut problems = Vec::new();
    let status = match report.status {
        Status::Ok => ExpectedStatus::Ok,
        Status::Unsupported { .. } => ExpectedStatus::Unsupported,
        Status::Timeout => ExpectedStatus::Timeout,
    };
    if status != expected.status {
        problems.push(format!("status {status:?}, expected {:?}", expected.status));
    }
    let vulnerable = report.vulnerable_findings();
    if vulnerable != expected.vulnerable {
        problems.push(format!(
            "{vulnerable} vulnerable findings, expected {}",
            expected.vulnerable
        ));
    }
    let source = report
        .findings
        .iter()
        .find(|f| f.target_classification == Classification::Arbitrary)
        .and_then(|f| f.source_account);
    if source != expected.target_source_account {
        problems.push(format!(
            "target source {source:?}, expected {:?}",
            expected.target_source_account
        ));
    }
    if report.anchor.is_anchor != expected.anchor {
        problems.push(format!(
            "is_anchor {}, expected {}",
            report.anchor.is_anchor, expected.anchor
        ));
    }
    if let Some(classes) = &expected.classifications {
        let got: Vec<Classification> = report
            .findings
            .iter()
            .map(|f| f.target_classification)
            .collect();
        if &got != classes {
            problems.push(format!("classifications {got:?}, expected {classes:?}"));
        }
    }
    problems
}

/// Checks every fixture's hash, then scans it and compares against the manifest.
pub fn verify_fixtures(
    corpus_dir: &Path,
    manifest: &FixtureManifest,
    config: &ScanConfig,
) -> Vec<FixtureCheck> {
    manifest
        .fixtures
        .iter()
        .map(|entry| {
            let path = corpus_dir.join(&entry.path);
            let check = |result, report| FixtureCheck {
                name: entry.name.clone(),
                report,
                result,
            };
            let Ok(bytes) = fs::read(&path) else {
                return check(Err(FixtureFailure::MissingFixture), None);
            };
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return check(
                    Err(FixtureFailure::HashMismatch {
                        expected: entry.sha256.clone(),
                        actual,
                    }),
                    None,
                );
            }
            match scan_file(&path, config) {
                Ok(report) => {
                    let problems = compare(&entry.expected, &report);
                    let result = if problems.is_empty() {
                        Ok(())
                    } else {
                        Err(FixtureFailure::Expectation(problems))
                    };
                    check(result, Some(report))
                }
                Err(_) => check(Err(FixtureFailure::MissingFixture), None),
            }
        })
        .collect()
}
