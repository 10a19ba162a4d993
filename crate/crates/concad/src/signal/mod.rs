//! Signal ingestion and expert-feature derivation.
//!
//! WFDB-style records and annotations come in through [`io`] and
//! [`annotations`]; [`rpeaks`] locates R-peaks with an adaptive-threshold
//! detector; [`features`] turns peak trains into median-filtered,
//! cubic-resampled RRI/RPE series; [`segments`] assembles labeled windows
//! with adjacent context and applies the heart-rate sanity filter;
//! [`augment`] implements the batch-time augmentations; [`dataset`] is the
//! prepared-dataset file; [`synth`] generates synthetic ECG for tests and
//! desk-scale experiments.

pub mod annotations;
pub mod augment;
pub mod dataset;
pub mod features;
pub mod io;
pub mod rpeaks;
pub mod segments;
pub mod synth;

use crate::error::{Error, Result};

/// Binary segment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApneaClass {
    Normal,
    Apnea,
}

impl ApneaClass {
    pub fn index(self) -> usize {
        match self {
            ApneaClass::Normal => 0,
            ApneaClass::Apnea => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<ApneaClass> {
        match i {
            0 => Ok(ApneaClass::Normal),
            1 => Ok(ApneaClass::Apnea),
            _ => Err(Error::Data(format!("class index {i} out of range"))),
        }
    }
}

impl std::fmt::Display for ApneaClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApneaClass::Normal => write!(f, "normal"),
            ApneaClass::Apnea => write!(f, "apnea"),
        }
    }
}

/// A single-channel ECG record in physical units (mV).
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl EcgRecord {
    pub fn new(record_id: impl Into<String>, fs: f64, samples: Vec<f64>) -> Result<EcgRecord> {
        let record = EcgRecord {
            record_id: record_id.into(),
            fs,
            samples,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fs <= 0.0 || !self.fs.is_finite() {
            return Err(Error::Data(format!(
                "record {}: sampling rate {} is not positive",
                self.record_id, self.fs
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::Data(format!("record {}: no samples", self.record_id)));
        }
        if !self.samples.iter().all(|s| s.is_finite()) {
            return Err(Error::Data(format!(
                "record {}: non-finite sample",
                self.record_id
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// One labeled annotation epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochLabel {
    pub epoch_index: usize,
    pub class: ApneaClass,
}

/// Ordered per-epoch labels with the epoch duration they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub epoch_length_s: f64,
    pub labels: Vec<EpochLabel>,
}

impl AnnotationSet {
    pub fn new(epoch_length_s: f64, labels: Vec<EpochLabel>) -> Result<AnnotationSet> {
        if epoch_length_s <= 0.0 {
            return Err(Error::Data("epoch length must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("no labels".into()));
        }
        for pair in labels.windows(2) {
            if pair[1].epoch_index <= pair[0].epoch_index {
                return Err(Error::Data(format!(
                    "epoch indices not strictly increasing: {} then {}",
                    pair[0].epoch_index, pair[1].epoch_index
                )));
            }
        }
        Ok(AnnotationSet {
            epoch_length_s,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_validation() {
        assert!(EcgRecord::new("x", 100.0, vec![0.0, 1.0]).is_ok());
        assert!(EcgRecord::new("x", 0.0, vec![0.0]).is_err());
        assert!(EcgRecord::new("x", 100.0, vec![]).is_err());
        assert!(EcgRecord::new("x", 100.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn annotation_ordering_enforced() {
        let l = |i, c| EpochLabel {
            epoch_index: i,
            class: c,
        };
        assert!(AnnotationSet::new(
            60.0,
            vec![l(0, ApneaClass::Normal), l(1, ApneaClass::Apnea)]
        )
        .is_ok());
        assert!(AnnotationSet::new(
            60.0,
            vec![l(1, ApneaClass::Normal), l(1, ApneaClass::Apnea)]
        )
        .is_err());
        assert!(AnnotationSet::new(60.0, vec![]).is_err());
    }
}
