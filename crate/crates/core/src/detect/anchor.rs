//! Anchor framework fingerprinting from rodata.

use serde::Serialize;
use thiserror::Error;

use crate::image::ProgramImage;

/// The shipped fingerprint list.
pub const DEFAULT_FINGERPRINTS: &str = include_str!("../../data/anchor_fingerprints.tsv");

const MIN_STRING_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FingerprintKind {
    ErrorString,
    AbiMarker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub kind: FingerprintKind,
    pub pattern: Vec<u8>,
    pub comment: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("line {line}: expected kind<TAB>value<TAB>comment")]
    Shape { line: usize },
    #[error("line {line}: unknown kind `{kind}`")]
    Kind { line: usize, kind: String },
    #[error("line {line}: bad hex pattern")]
    Hex { line: usize },
}

/// Parses the `kind<TAB>hex-or-literal<TAB>comment` format; `#` starts a comment line.
pub fn parse_fingerprints(text: &str) -> Result<Vec<Fingerprint>, FingerprintError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut parts = raw.splitn(3, '\t');
        let (Some(kind), Some(value)) = (parts.next(), parts.next()) else {
            return Err(FingerprintError::Shape { line });
        };
        let comment = parts.next().unwrap_or("").to_string();
        let (kind, pattern) = match kind {
            "error-string" => (FingerprintKind::ErrorString, value.as_bytes().to_vec()),
            "abi-marker" => (
                FingerprintKind::AbiMarker,
                hex::decode(value).map_err(|_| FingerprintError::Hex { line })?,
            ),
            other => {
                return Err(FingerprintError::Kind {
                    line,
                    kind: other.to_string(),
                })
            }
        };
        if pattern.is_empty() {
            return Err(FingerprintError::Shape { line });
        }
        out.push(Fingerprint {
            kind,
            pattern,
            comment,
        });
    }
    Ok(out)
}

pub fn default_fingerprints() -> Vec<Fingerprint> {
    parse_fingerprints(DEFAULT_FINGERPRINTS).expect("shipped fingerprint file parses")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FingerprintMatch {
    pub kind: FingerprintKind,
    pub value: String,
    pub vaddr: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnchorReport {
    pub is_anchor: bool,
    pub matched_fingerprints: Vec<FingerprintMatch>,
}

fn find_all(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

/// Matches every fingerprint against rodata strings and bytes.
pub fn detect_anchor(image: &ProgramImage, fingerprints: &[Fingerprint]) -> AnchorReport {
    let strings = image.iter_strings(MIN_STRING_LEN);
    let mut matched = Vec::new();
    for fp in fingerprints {
        match fp.kind {
            FingerprintKind::ErrorString => {
                for (vaddr, text) in &strings {
                    for off in find_all(text.as_bytes(), &fp.pattern) {
                        matched.push(FingerprintMatch {
                            kind: fp.kind,
                            value: String::from_utf8_lossy(&fp.pattern).into_owned(),
                            vaddr: vaddr + off as u64,
                        });
                    }
                }
            }
            FingerprintKind::AbiMarker => {
                for seg in &image.rodata_segments {
                    for off in find_all(&seg.bytes, &fp.pattern) {
                        matched.push(FingerprintMatch {
                            kind: fp.kind,
                            value: hex::encode(&fp.pattern),
                            vaddr: seg.vaddr + off as u64,
                        });
                    }
                }
            }
        }
    }
    matched.sort();
    matched.dedup();
    AnchorReport {
        is_anchor: !matched.is_empty(),
        matched_fingerprints: matched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RodataSegment;
    use sha2::{Digest, Sha256};

    fn image(rodata: &[u8]) -> ProgramImage {
        let mut image = ProgramImage::from_text(vec![0x95, 0, 0, 0, 0, 0, 0, 0]);
        if !rodata.is_empty() {
            image.rodata_segments.push(RodataSegment {
                vaddr: 0x1_0000_2000,
                bytes: rodata.to_vec(),
            });
        }
        image
    }

    #[test]
    fn shipped_file_parses() {
        let fps = default_fingerprints();
        assert!(fps.iter().any(|f| f.kind == FingerprintKind::AbiMarker));
        assert!(fps.iter().all(|f| !f.comment.is_empty()));
    }

    #[test]
    fn idl_tag_is_the_hash_prefix() {
        let digest = Sha256::digest(b"anchor:idl");
        let tag = u64::from_be_bytes(digest[..8].try_into().unwrap());
        let fp = default_fingerprints()
            .into_iter()
            .find(|f| f.kind == FingerprintKind::AbiMarker)
            .unwrap();
        assert_eq!(fp.pattern, tag.to_le_bytes());
    }

    #[test]
    fn empty_rodata_is_not_anchor() {
        let r = detect_anchor(&image(&[]), &default_fingerprints());
        assert!(!r.is_anchor && r.matched_fingerprints.is_empty());
    }

    #[test]
    fn strings_inside_longer_runs_match() {
        let mut rodata = b"\x00\x01src/lib.rsAnchorError occurred. Error Code: x".to_vec();
        rodata.extend_from_slice(&[0, 0x40, 0xf4, 0xbc, 0x78, 0xa7, 0xe9, 0x69, 0x0a]);
        let r = detect_anchor(&image(&rodata), &default_fingerprints());
        assert!(r.is_anchor);
        let kinds: Vec<_> = r.matched_fingerprints.iter().map(|m| m.kind).collect();
        assert_eq!(
            kinds,
            [FingerprintKind::ErrorString, FingerprintKind::AbiMarker]
        );
        assert_eq!(r.matched_fingerprints[0].vaddr, 0x1_0000_2000 + 12);
    }

    #[test]
    fn native_strings_do_not_match() {
        let r = detect_anchor(
            &image(b"invalid instruction data\0account not owned by program\0"),
            &default_fingerprints(),
        );
        assert!(!r.is_anchor);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert_eq!(
            parse_fingerprints("bogus\tx\ty"),
            Err(FingerprintError::Kind {
                line: 1,
                kind: "bogus".into()
            })
        );
        assert_eq!(
            parse_fingerprints("abi-marker\tzz\tc"),
            Err(FingerprintError::Hex { line: 1 })
        );
        assert_eq!(
            parse_fingerprints("error-string"),
            Err(FingerprintError::Shape { line: 1 })
        );
    }
}
