//! Annotation readers and the code/aux label mapping.
//!
//! The binary reader follows the MIT annotation layout: a stream of
//! little-endian 16-bit words, each holding a 6-bit type code and a
//! 10-bit time increment, with the usual pseudo-annotations (SKIP for
//! long intervals, AUX for attached strings, NUM/SUB/CHN attribute
//! setters) and a zero word terminator. The text format is one
//! annotation per line: `<sample_index> <code> [aux...]`.
//!
//! Label mapping is dataset-specific: minute-wise records mark each
//! epoch with an `A`/`N` code, while sleep-staging records carry apnea
//! event tokens in the aux string.

use super::{AnnotationSet, ApneaClass, EpochLabel};
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    /// Binary MIT annotation file (e.g. `.apn`, `.st`).
    Wfdb,
    /// Plain-text export, one `<sample> <code> [aux]` per line.
    Text,
}

impl std::str::FromStr for AnnotationFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<AnnotationFormat> {
        match s {
            "wfdb" => Ok(AnnotationFormat::Wfdb),
            "text" => Ok(AnnotationFormat::Text),
            other => Err(Error::Config(format!(
                "unknown annotation format `{other}` (expected wfdb or text)"
            ))),
        }
    }
}

/// Annotation type codes and their display mnemonics.
const CODE_MNEMONICS: &[(u8, &str)] = &[
    (1, "N"),
    (2, "L"),
    (3, "R"),
    (4, "a"),
    (5, "V"),
    (6, "F"),
    (7, "J"),
    (8, "A"),
    (9, "S"),
    (10, "E"),
    (11, "j"),
    (12, "/"),
    (13, "Q"),
    (14, "~"),
    (16, "|"),
    (18, "s"),
    (19, "T"),
    (20, "*"),
    (21, "D"),
    (22, "\""),
    (23, "="),
    (24, "p"),
    (25, "B"),
    (26, "^"),
    (27, "t"),
    (28, "+"),
    (29, "u"),
    (30, "?"),
    (31, "!"),
    (32, "["),
    (33, "]"),
    (34, "e"),
    (35, "n"),
    (36, "@"),
    (37, "x"),
    (38, "f"),
    (39, "("),
    (40, ")"),
    (41, "r"),
];

pub fn mnemonic_for_code(code: u8) -> Option<&'static str> {
    CODE_MNEMONICS.iter().find(|(c, _)| *c == code).map(|(_, m)| *m)
}

pub fn code_for_mnemonic(m: &str) -> Option<u8> {
    CODE_MNEMONICS.iter().find(|(_, s)| *s == m).map(|(c, _)| *c)
}

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

/// One decoded annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnnotation {
    pub sample: u64,
    pub code: String,
    pub aux: String,
}

/// Decode a binary MIT annotation stream.
pub fn decode_wfdb_annotations(bytes: &[u8]) -> Result<Vec<RawAnnotation>> {
    let mut out: Vec<RawAnnotation> = Vec::new();
    let mut time: i64 = 0;
    let mut pending_skip: i64 = 0;
    let mut byte_pos = 0usize;
    let raw = bytes;
    loop {
        let word = match raw.get(byte_pos..byte_pos + 2) {
            Some(w) => u16::from_le_bytes([w[0], w[1]]),
            None => break, // missing terminator; accept what we have
        };
        byte_pos += 2;
        let code = (word >> 10) as u8;
        let delta = (word & 0x3FF) as i64;
        match code {
            0 => break,
            SKIP => {
                let hi = raw
                    .get(byte_pos..byte_pos + 2)
                    .ok_or_else(|| Error::Data("truncated SKIP interval".into()))?;
                let lo = raw
                    .get(byte_pos + 2..byte_pos + 4)
                    .ok_or_else(|| Error::Data("truncated SKIP interval".into()))?;
                byte_pos += 4;
                let hi = u16::from_le_bytes([hi[0], hi[1]]) as u32;
                let lo = u16::from_le_bytes([lo[0], lo[1]]) as u32;
                pending_skip += ((hi << 16) | lo) as i32 as i64;
            }
            AUX => {
                let count = delta as usize;
                let payload = raw
                    .get(byte_pos..byte_pos + count)
                    .ok_or_else(|| Error::Data("truncated aux payload".into()))?;
                // Pascal-style: a leading length byte, then the string.
                let text = if !payload.is_empty() && payload[0] as usize == count - 1 {
                    String::from_utf8_lossy(&payload[1..]).into_owned()
                } else {
                    String::from_utf8_lossy(payload).into_owned()
                };
                if let Some(last) = out.last_mut() {
                    last.aux = text.trim_end_matches('\0').trim().to_string();
                }
                byte_pos += count + (count & 1); // null pad to even
            }
            NUM | SUB | CHN => {} // attributes this pipeline does not use
            code => {
                time += delta + pending_skip;
                pending_skip = 0;
                let mnemonic = mnemonic_for_code(code)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("code{code}"));
                if time < 0 {
                    return Err(Error::Data(format!("negative annotation time {time}")));
                }
                out.push(RawAnnotation {
                    sample: time as u64,
                    code: mnemonic,
                    aux: String::new(),
                });
            }
        }
    }
    Ok(out)
}

/// Encode annotations into the binary MIT layout (fixtures and examples).
pub fn encode_wfdb_annotations(annotations: &[RawAnnotation]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut prev: u64 = 0;
    for a in annotations {
        let code = code_for_mnemonic(&a.code)
            .ok_or_else(|| Error::Data(format!("no annotation code for `{}`", a.code)))?;
        if a.sample < prev {
            return Err(Error::Data("annotations must be time-ordered".into()));
        }
        let delta = a.sample - prev;
        prev = a.sample;
        if delta > 0x3FF {
            out.extend_from_slice(&((SKIP as u16) << 10).to_le_bytes());
            let d = delta as u32;
            out.extend_from_slice(&((d >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((d & 0xFFFF) as u16).to_le_bytes());
            out.extend_from_slice(&((code as u16) << 10).to_le_bytes());
        } else {
            out.extend_from_slice(&(((code as u16) << 10) | delta as u16).to_le_bytes());
        }
        if !a.aux.is_empty() {
            let bytes = a.aux.as_bytes();
            let count = bytes.len() + 1; // leading length byte
            out.extend_from_slice(&((((AUX as u16) << 10) | count as u16).to_le_bytes()));
            out.push(bytes.len() as u8);
            out.extend_from_slice(bytes);
            if count % 2 == 1 {
                out.push(0);
            }
        }
    }
    out.extend_from_slice(&0u16.to_le_bytes());
    Ok(out)
}

/// Parse the text export: `<sample_index> <code> [aux...]` per line.
pub fn parse_text_annotations(text: &str) -> Result<Vec<RawAnnotation>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let sample: u64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad sample index", ln + 1)))?;
        let code = parts
            .next()
            .ok_or_else(|| Error::Data(format!("line {}: missing code", ln + 1)))?
            .to_string();
        let aux = parts.collect::<Vec<_>>().join(" ");
        out.push(RawAnnotation { sample, code, aux });
    }
    Ok(out)
}

/// How codes/aux strings map to the binary segment label.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelMap {
    /// Classify by the annotation code mnemonic.
    Codes {
        apnea: BTreeSet<String>,
        normal: BTreeSet<String>,
    },
    /// Apnea when any whitespace token of the aux string is in the set,
    /// normal otherwise.
    AuxTokens { apnea: BTreeSet<String> },
}

impl LabelMap {
    /// Minute-code convention: `A` marks apnea, `N` normal.
    pub fn minute_codes() -> LabelMap {
        LabelMap::Codes {
            apnea: BTreeSet::from(["A".to_string()]),
            normal: BTreeSet::from(["N".to_string()]),
        }
    }

    /// Sleep-staging convention: apnea/hypopnea event tokens in the aux
    /// string.
    pub fn aux_event_tokens() -> LabelMap {
        LabelMap::AuxTokens {
            apnea: ["H", "HA", "OA", "CA", "CAA", "X", "XA"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// `None` means the annotation is unmapped under this table.
    pub fn classify(&self, code: &str, aux: &str) -> Option<ApneaClass> {
        match self {
            LabelMap::Codes { apnea, normal } => {
                if apnea.contains(code) {
                    Some(ApneaClass::Apnea)
                } else if normal.contains(code) {
                    Some(ApneaClass::Normal)
                } else {
                    None
                }
            }
            LabelMap::AuxTokens { apnea } => {
                if aux.split_whitespace().any(|t| apnea.contains(t)) {
                    Some(ApneaClass::Apnea)
                } else {
                    Some(ApneaClass::Normal)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationConfig {
    /// Sampling rate of the record the annotation samples refer to.
    pub fs: f64,
    pub epoch_length_s: f64,
    pub label_map: LabelMap,
    /// Strict mode errors on unmapped annotations; lenient skips them.
    pub strict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationStats {
    pub skipped_unmapped: usize,
    pub skipped_duplicates: usize,
}

/// Read and classify annotations into per-epoch labels. The epoch index
/// is the annotation sample rounded to the nearest epoch boundary.
pub fn read_annotations(
    path: &Path,
    format: AnnotationFormat,
    cfg: &AnnotationConfig,
) -> Result<(AnnotationSet, AnnotationStats)> {
    let raw = match format {
        AnnotationFormat::Wfdb => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_wfdb_annotations(&bytes)?
        }
        AnnotationFormat::Text => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_text_annotations(&text)?
        }
    };
    classify_annotations(&raw, cfg)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn classify_annotations(
    raw: &[RawAnnotation],
    cfg: &AnnotationConfig,
) -> Result<(AnnotationSet, AnnotationStats)> {
    if raw.is_empty() {
        return Err(Error::Data("no labels".into()));
    }
    let samples_per_epoch = cfg.fs * cfg.epoch_length_s;
    let mut labels: Vec<EpochLabel> = Vec::new();
    let mut stats = AnnotationStats::default();
    for a in raw {
        let class = match cfg.label_map.classify(&a.code, &a.aux) {
            Some(c) => c,
            None if cfg.strict => {
                return Err(Error::Data(format!(
                    "unmapped annotation `{}` (aux `{}`) at sample {}",
                    a.code, a.aux, a.sample
                )))
            }
            None => {
                stats.skipped_unmapped += 1;
                continue;
            }
        };
        let epoch_index = (a.sample as f64 / samples_per_epoch).round() as usize;
        if let Some(last) = labels.last() {
            if epoch_index <= last.epoch_index {
                if cfg.strict {
                    return Err(Error::Data(format!(
                        "annotations collide on epoch {epoch_index}"
                    )));
                }
                stats.skipped_duplicates += 1;
                continue;
            }
        }
        labels.push(EpochLabel { epoch_index, class });
    }
    if labels.is_empty() {
        return Err(Error::Data("no labels".into()));
    }
    Ok((AnnotationSet::new(cfg.epoch_length_s, labels)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minute_cfg() -> AnnotationConfig {
        AnnotationConfig {
            fs: 100.0,
            epoch_length_s: 60.0,
            label_map: LabelMap::minute_codes(),
            strict: true,
        }
    }

    #[test]
    fn text_two_minutes() {
        let raw = parse_text_annotations("0 N\n6000 A\n").unwrap();
        let (set, _) = classify_annotations(&raw, &minute_cfg()).unwrap();
        assert_eq!(set.labels.len(), 2);
        assert_eq!(set.labels[0].epoch_index, 0);
        assert_eq!(set.labels[0].class, ApneaClass::Normal);
        assert_eq!(set.labels[1].epoch_index, 1);
        assert_eq!(set.labels[1].class, ApneaClass::Apnea);
    }

    #[test]
    fn empty_file_is_no_labels() {
        let raw = parse_text_annotations("").unwrap();
        let err = classify_annotations(&raw, &minute_cfg()).unwrap_err();
        assert!(err.to_string().contains("no labels"), "{err}");
    }

    #[test]
    fn aux_token_mapping() {
        let map = LabelMap::aux_event_tokens();
        assert_eq!(map.classify("\"", "3 OA"), Some(ApneaClass::Apnea));
        assert_eq!(map.classify("\"", "W"), Some(ApneaClass::Normal));
        assert_eq!(map.classify("\"", "2"), Some(ApneaClass::Normal));
        assert_eq!(map.classify("\"", "HA"), Some(ApneaClass::Apnea));
        // Token matching, not substring: `MT` is not an apnea mark.
        assert_eq!(map.classify("\"", "MT"), Some(ApneaClass::Normal));
    }

    #[test]
    fn strict_mode_rejects_unmapped_codes() {
        let raw = parse_text_annotations("0 V\n").unwrap();
        assert!(classify_annotations(&raw, &minute_cfg()).is_err());
        let mut lenient = minute_cfg();
        lenient.strict = false;
        let raw = parse_text_annotations("0 V\n6000 N\n").unwrap();
        let (set, stats) = classify_annotations(&raw, &lenient).unwrap();
        assert_eq!(set.labels.len(), 1);
        assert_eq!(stats.skipped_unmapped, 1);
    }

    #[test]
    fn binary_roundtrip_short_and_long_intervals() {
        let anns = vec![
            RawAnnotation {
                sample: 0,
                code: "N".into(),
                aux: String::new(),
            },
            RawAnnotation {
                sample: 500,
                code: "A".into(),
                aux: String::new(),
            },
            // Needs a SKIP word: delta > 1023.
            RawAnnotation {
                sample: 500 + 6000,
                code: "N".into(),
                aux: String::new(),
            },
            RawAnnotation {
                sample: 500 + 12_000,
                code: "\"".into(),
                aux: "2 OA".into(),
            },
        ];
        let bytes = encode_wfdb_annotations(&anns).unwrap();
        let decoded = decode_wfdb_annotations(&bytes).unwrap();
        assert_eq!(decoded, anns);
    }

    #[test]
    fn binary_minute_labels_end_to_end() {
        let anns: Vec<RawAnnotation> = (0..5)
            .map(|i| RawAnnotation {
                sample: i * 6000,
                code: if i % 2 == 0 { "N" } else { "A" }.into(),
                aux: String::new(),
            })
            .collect();
        let bytes = encode_wfdb_annotations(&anns).unwrap();
        let raw = decode_wfdb_annotations(&bytes).unwrap();
        let (set, _) = classify_annotations(&raw, &minute_cfg()).unwrap();
        assert_eq!(set.labels.len(), 5);
        for (i, l) in set.labels.iter().enumerate() {
            assert_eq!(l.epoch_index, i);
            assert_eq!(
                l.class,
                if i % 2 == 0 {
                    ApneaClass::Normal
                } else {
                    ApneaClass::Apnea
                }
            );
        }
    }

    #[test]
    fn aux_events_through_binary_layout() {
        let anns = vec![
            RawAnnotation {
                sample: 0,
                code: "\"".into(),
                aux: "W".into(),
            },
            RawAnnotation {
                sample: 7500,
                code: "\"".into(),
                aux: "3 OA".into(),
            },
        ];
        let bytes = encode_wfdb_annotations(&anns).unwrap();
        let raw = decode_wfdb_annotations(&bytes).unwrap();
        let cfg = AnnotationConfig {
            fs: 250.0,
            epoch_length_s: 30.0,
            label_map: LabelMap::aux_event_tokens(),
            strict: true,
        };
        let (set, _) = classify_annotations(&raw, &cfg).unwrap();
        assert_eq!(set.labels[0].class, ApneaClass::Normal);
        assert_eq!(set.labels[1].class, ApneaClass::Apnea);
        assert_eq!(set.labels[1].epoch_index, 1);
    }
}
