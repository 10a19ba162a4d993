//! Prepared-dataset file.
//!
//! Binary container holding the preparation manifest (a JSON echo of the
//! configuration plus counts) and the per-bundle arrays. All integers and
//! floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CCDS"
//! 4       4     format version, u32 (currently 1)
//! 8       4     manifest length M, u32
//! 12      M     manifest, UTF-8 JSON
//! 12+M    8     bundle count N, u64
//! then, per bundle, in order:
//!         2     record id length L, u16
//!         L     record id, UTF-8
//!         4     epoch index, u32
//!         1     label (0 normal, 1 apnea), u8
//!         4     peak count in window, u32
//!         8     center-epoch heart rate (bpm), f64
//!         4     ecg length E, u32
//!         4     rri/rpe length R, u32
//!         8*E   ecg samples, f64
//!         8*R   rri values, f64
//!         8*R   rpe values, f64
//! ```

use super::segments::SegmentBundle;
use super::ApneaClass;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"CCDS";
pub const DATASET_VERSION: u32 = 1;

/// Counts gathered during preparation.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct DatasetCounts {
    pub labeled_epochs: usize,
    pub kept: usize,
    pub dropped_hr: usize,
    pub skipped_beyond_end: usize,
    pub skipped_annotations: usize,
}

/// Configuration echo + counts stored inside the file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub fs: f64,
    pub epoch_length_s: f64,
    pub context: usize,
    pub resample_per_epoch: usize,
    pub median_window: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    pub counts: DatasetCounts,
    pub records: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    pub bundles: Vec<SegmentBundle>,
}

impl PreparedDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(DATASET_MAGIC).map_err(io)?;
        w.write_all(&DATASET_VERSION.to_le_bytes()).map_err(io)?;
        let manifest = serde_json::to_string(&self.manifest)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        w.write_all(&(manifest.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(manifest.as_bytes()).map_err(io)?;
        w.write_all(&(self.bundles.len() as u64).to_le_bytes()).map_err(io)?;
        for b in &self.bundles {
            if b.rri.len() != b.rpe.len() {
                return Err(Error::Data(format!(
                    "bundle {}:{} has rri/rpe length mismatch",
                    b.record_id, b.epoch_index
                )));
            }
            let id = b.record_id.as_bytes();
            w.write_all(&(id.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(id).map_err(io)?;
            w.write_all(&(b.epoch_index as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&[b.label.index() as u8]).map_err(io)?;
            w.write_all(&(b.n_peaks as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&b.center_bpm.to_le_bytes()).map_err(io)?;
            w.write_all(&(b.ecg.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(b.rri.len() as u32).to_le_bytes()).map_err(io)?;
            for series in [&b.ecg, &b.rri, &b.rpe] {
                for v in series {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<PreparedDataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let trunc = || Error::Data(format!("truncated dataset {}", path.display()));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| trunc())?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Data(format!(
                "{} is not a prepared dataset (bad magic)",
                path.display()
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| trunc())?;
        let version = u32::from_le_bytes(b4);
        if version != DATASET_VERSION {
            return Err(Error::Data(format!("unsupported dataset version {version}")));
        }
        r.read_exact(&mut b4).map_err(|_| trunc())?;
        let mlen = u32::from_le_bytes(b4) as usize;
        let mut mbytes = vec![0u8; mlen];
        r.read_exact(&mut mbytes).map_err(|_| trunc())?;
        let manifest: DatasetManifest = serde_json::from_slice(&mbytes)
            .map_err(|e| Error::Data(format!("bad dataset manifest: {e}")))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| trunc())?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut bundles = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(|_| trunc())?;
            let id_len = u16::from_le_bytes(b2) as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id).map_err(|_| trunc())?;
            let record_id = String::from_utf8(id)
                .map_err(|_| Error::Data("non-UTF-8 record id".into()))?;
            r.read_exact(&mut b4).map_err(|_| trunc())?;
            let epoch_index = u32::from_le_bytes(b4) as usize;
            let mut b1 = [0u8; 1];
            r.read_exact(&mut b1).map_err(|_| trunc())?;
            let label = ApneaClass::from_index(b1[0] as usize)?;
            r.read_exact(&mut b4).map_err(|_| trunc())?;
            let n_peaks = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b8).map_err(|_| trunc())?;
            let center_bpm = f64::from_le_bytes(b8);
            r.read_exact(&mut b4).map_err(|_| trunc())?;
            let ecg_len = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b4).map_err(|_| trunc())?;
            let expert_len = u32::from_le_bytes(b4) as usize;
            let mut read_series = |len: usize| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(len);
                let mut buf = [0u8; 8];
                for _ in 0..len {
                    r.read_exact(&mut buf).map_err(|_| trunc())?;
                    out.push(f64::from_le_bytes(buf));
                }
                Ok(out)
            };
            let ecg = read_series(ecg_len)?;
            let rri = read_series(expert_len)?;
            let rpe = read_series(expert_len)?;
            bundles.push(SegmentBundle {
                record_id,
                epoch_index,
                label,
                ecg,
                rri,
                rpe,
                n_peaks,
                center_bpm,
            });
        }
        Ok(PreparedDataset { manifest, bundles })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synth::{make_synthetic_dataset, SyntheticConfig};

    #[test]
    fn roundtrip_preserves_manifest_and_bundles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ccds");
        let bundles = make_synthetic_dataset(6, 3, SyntheticConfig::default()).unwrap();
        let ds = PreparedDataset {
            manifest: DatasetManifest {
                fs: 100.0,
                epoch_length_s: 30.0,
                context: 0,
                resample_per_epoch: 90,
                median_window: 5,
                hr_min_bpm: 20.0,
                hr_max_bpm: 300.0,
                counts: DatasetCounts {
                    labeled_epochs: 6,
                    kept: 6,
                    ..Default::default()
                },
                records: vec!["synth".into()],
            },
            bundles,
        };
        ds.save(&path).unwrap();
        let back = PreparedDataset::load(&path).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.bundles, ds.bundles);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ccds");
        std::fs::write(&path, b"not a dataset").unwrap();
        assert!(PreparedDataset::load(&path).is_err());
    }
}
