//! Record readers: WFDB signal formats 16 and 212, and a plain CSV
//! fallback.
//!
//! WFDB records are a `<record>.hea` header naming the signal file, its
//! format, gain and baseline; samples convert to physical units (mV) as
//! `(adc - baseline) / gain`. Format 16 is little-endian signed 16-bit;
//! format 212 packs two 12-bit two's-complement samples into three bytes.
//! The CSV fallback is a `fs=<Hz>` header row followed by one sample per
//! line, already in physical units.

use super::EcgRecord;
use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Wfdb16,
    Wfdb212,
    Csv,
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<RecordFormat> {
        match s {
            "wfdb16" => Ok(RecordFormat::Wfdb16),
            "wfdb212" => Ok(RecordFormat::Wfdb212),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown record format `{other}` (expected wfdb16, wfdb212 or csv)"
            ))),
        }
    }
}

/// One signal-specification line of a WFDB header.
#[derive(Debug, Clone)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u16,
    pub gain: f64,
    pub baseline: i32,
}

#[derive(Debug, Clone)]
pub struct WfdbHeader {
    pub record_name: String,
    pub fs: f64,
    pub n_samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
}

/// Parse a `.hea` file. Only the fields this crate needs are kept.
pub fn parse_header(path: &Path) -> Result<WfdbHeader> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("empty header {}", path.display())))?;
    let tokens: Vec<&str> = first.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(Error::Data(format!(
            "malformed header line `{first}` in {}",
            path.display()
        )));
    }
    let record_name = tokens[0].split('/').next().unwrap_or(tokens[0]).to_string();
    let n_sig: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Data(format!("bad signal count in {}", path.display())))?;
    if n_sig == 0 {
        return Err(Error::Data(format!("header {} has no signals", path.display())));
    }
    // fs may carry a counter frequency: `250/360(0)`.
    let fs = match tokens.get(2) {
        Some(t) => {
            let lead: String = t
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            lead.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad sampling rate `{t}` in {}", path.display())))?
        }
        None => 250.0,
    };
    if fs <= 0.0 {
        return Err(Error::Data(format!(
            "sampling rate {fs} in {} is not positive",
            path.display()
        )));
    }
    let n_samples = tokens.get(3).and_then(|t| t.parse::<usize>().ok());

    let mut signals = Vec::with_capacity(n_sig);
    for _ in 0..n_sig {
        let line = lines.next().ok_or_else(|| {
            Error::Data(format!(
                "header {} ends before {} signal lines",
                path.display(),
                n_sig
            ))
        })?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 2 {
            return Err(Error::Data(format!(
                "malformed signal line `{line}` in {}",
                path.display()
            )));
        }
        // Format may carry `xN`, `:skew`, `+offset` suffixes.
        let fmt_lead: String = t[1].chars().take_while(|c| c.is_ascii_digit()).collect();
        let format: u16 = fmt_lead
            .parse()
            .map_err(|_| Error::Data(format!("bad format `{}` in {}", t[1], path.display())))?;
        if t[1].contains('x') && !t[1].ends_with("x1") {
            return Err(Error::Data(format!(
                "multi-sample frames are not supported (`{}` in {})",
                t[1],
                path.display()
            )));
        }
        // Gain token: `gain(baseline)/units`; 0 or absent means 200.
        let (mut gain, mut baseline) = (200.0, None);
        if let Some(g) = t.get(2) {
            let no_units = g.split('/').next().unwrap_or(g);
            let (gain_part, base_part) = match no_units.find('(') {
                Some(open) => {
                    let close = no_units.rfind(')').ok_or_else(|| {
                        Error::Data(format!("unbalanced baseline in `{g}` in {}", path.display()))
                    })?;
                    (&no_units[..open], Some(&no_units[open + 1..close]))
                }
                None => (no_units, None),
            };
            let parsed: f64 = gain_part.parse().map_err(|_| {
                Error::Data(format!("bad gain `{g}` in {}", path.display()))
            })?;
            if parsed != 0.0 {
                gain = parsed;
            }
            if let Some(b) = base_part {
                baseline = Some(b.parse::<i32>().map_err(|_| {
                    Error::Data(format!("bad baseline `{g}` in {}", path.display()))
                })?);
            }
        }
        // Without an explicit baseline, the ADC zero (field 5) applies.
        let adc_zero: i32 = t.get(4).and_then(|v| v.parse().ok()).unwrap_or(0);
        signals.push(SignalSpec {
            file_name: t[0].to_string(),
            format,
            gain,
            baseline: baseline.unwrap_or(adc_zero),
        });
    }
    Ok(WfdbHeader {
        record_name,
        fs,
        n_samples,
        signals,
    })
}

/// Decode a stream of little-endian signed 16-bit samples.
pub fn decode_format16(bytes: &[u8]) -> Vec<i32> {
    bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
        .collect()
}

/// Decode packed 12-bit pairs: three bytes hold two two's-complement
/// samples.
pub fn decode_format212(bytes: &[u8]) -> Vec<i32> {
    let sign_extend = |v: i32| if v & 0x800 != 0 { v - 0x1000 } else { v };
    let mut out = Vec::with_capacity(bytes.len() / 3 * 2);
    let mut chunks = bytes.chunks_exact(3);
    for c in &mut chunks {
        let s0 = ((c[1] as i32 & 0x0F) << 8) | c[0] as i32;
        let s1 = ((c[1] as i32 & 0xF0) << 4) | c[2] as i32;
        out.push(sign_extend(s0));
        out.push(sign_extend(s1));
    }
    // A trailing 2-byte group can only hold one sample.
    let rem = chunks.remainder();
    if rem.len() == 2 {
        let s0 = ((rem[1] as i32 & 0x0F) << 8) | rem[0] as i32;
        out.push(sign_extend(s0));
    }
    out
}

/// Encode samples into format 212 (used by tests and the WFDB example).
pub fn encode_format212(samples: &[i32]) -> Result<Vec<u8>> {
    for &s in samples {
        if !(-2048..=2047).contains(&s) {
            return Err(Error::Data(format!("sample {s} outside 12-bit range")));
        }
    }
    let mut out = Vec::with_capacity(samples.len() / 2 * 3 + 3);
    for pair in samples.chunks(2) {
        let s0 = pair[0] & 0xFFF;
        let s1 = if pair.len() > 1 { pair[1] & 0xFFF } else { 0 };
        out.push((s0 & 0xFF) as u8);
        out.push((((s0 >> 8) & 0x0F) | ((s1 >> 8) & 0x0F) << 4) as u8);
        out.push((s1 & 0xFF) as u8);
    }
    Ok(out)
}

/// Read one channel of a record. For the WFDB formats `path` is the
/// `.hea` file (or its base path); for CSV it is the data file itself.
pub fn read_record_channel(path: &Path, format: RecordFormat, channel: usize) -> Result<EcgRecord> {
    match format {
        RecordFormat::Csv => read_csv(path),
        RecordFormat::Wfdb16 | RecordFormat::Wfdb212 => {
            let header_path = if path.extension().is_some_and(|e| e == "hea") {
                path.to_path_buf()
            } else {
                path.with_extension("hea")
            };
            let header = parse_header(&header_path)?;
            let expected = match format {
                RecordFormat::Wfdb16 => 16,
                RecordFormat::Wfdb212 => 212,
                RecordFormat::Csv => unreachable!(),
            };
            let spec = header.signals.get(channel).ok_or_else(|| {
                Error::Data(format!(
                    "record {} has {} signals, channel {channel} requested",
                    header.record_name,
                    header.signals.len()
                ))
            })?;
            if spec.format != expected {
                return Err(Error::Data(format!(
                    "record {} channel {channel} is format {}, expected {expected}",
                    header.record_name, spec.format
                )));
            }
            let data_path = header_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&spec.file_name);
            let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
            let stream = match format {
                RecordFormat::Wfdb16 => decode_format16(&bytes),
                RecordFormat::Wfdb212 => decode_format212(&bytes),
                RecordFormat::Csv => unreachable!(),
            };
            let n_sig = header.signals.len();
            let frames = stream.len() / n_sig;
            let frames = match header.n_samples {
                Some(n) if n > 0 && n <= frames => n,
                _ => frames,
            };
            if frames == 0 {
                return Err(Error::Data(format!(
                    "record {}: signal file {} holds no complete frame",
                    header.record_name,
                    data_path.display()
                )));
            }
            let samples: Vec<f64> = (0..frames)
                .map(|i| (stream[i * n_sig + channel] - spec.baseline) as f64 / spec.gain)
                .collect();
            EcgRecord::new(header.record_name, header.fs, samples)
        }
    }
}

/// Read channel 0 of a record.
pub fn read_record(path: &Path, format: RecordFormat) -> Result<EcgRecord> {
    read_record_channel(path, format, 0)
}

fn read_csv(path: &Path) -> Result<EcgRecord> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::Data(format!("empty csv record {}", path.display())))?;
    let fs: f64 = header
        .trim()
        .strip_prefix("fs=")
        .ok_or_else(|| {
            Error::Data(format!(
                "csv record {} must start with `fs=<Hz>`, got `{header}`",
                path.display()
            ))
        })?
        .parse()
        .map_err(|_| Error::Data(format!("bad sampling rate in {}", path.display())))?;
    let mut samples = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        samples.push(line.parse::<f64>().map_err(|_| {
            Error::Data(format!("bad sample `{line}` in {}", path.display()))
        })?);
    }
    let record_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".to_string());
    EcgRecord::new(record_id, fs, samples)
}

/// Write a record in the CSV layout `read_record` accepts. The shortest
/// round-trip float formatting keeps read(write(r)) the identity.
pub fn write_csv(record: &EcgRecord, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "fs={}", record.fs).map_err(|e| Error::io(path, e))?;
    for s in &record.samples {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a minimal WFDB header + signal file pair (tests and examples).
pub fn write_wfdb(
    dir: &Path,
    record_name: &str,
    fs: f64,
    format: u16,
    gain: f64,
    baseline: i32,
    adc_samples: &[i32],
) -> Result<PathBuf> {
    let hea = dir.join(format!("{record_name}.hea"));
    let dat_name = format!("{record_name}.dat");
    let header = format!(
        "{record_name} 1 {fs} {}\n{dat_name} {format} {gain}({baseline})/mV 16 {baseline} 0 0 0 ECG\n",
        adc_samples.len()
    );
    std::fs::write(&hea, header).map_err(|e| Error::io(&hea, e))?;
    let bytes = match format {
        16 => adc_samples
            .iter()
            .flat_map(|&s| (s as i16).to_le_bytes())
            .collect::<Vec<u8>>(),
        212 => encode_format212(adc_samples)?,
        other => return Err(Error::Config(format!("cannot write format {other}"))),
    };
    let dat = dir.join(&dat_name);
    std::fs::write(&dat, bytes).map_err(|e| Error::io(&dat, e))?;
    Ok(hea)
}
