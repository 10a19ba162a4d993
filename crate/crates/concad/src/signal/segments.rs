//! Labeled segment assembly with adjacent context and the heart-rate
//! sanity filter.
//!
//! Each labeled epoch becomes one bundle: the ECG window of the epoch and
//! its `context` neighbors on each side (edges replicate so every labeled
//! epoch yields a bundle), plus RRI/RPE recomputed over the whole window
//! so interval continuity across epoch boundaries is kept.

use super::features::derive_rri_rpe;
use super::rpeaks::{detect_r_peaks_with, RPeakConfig};
use super::{AnnotationSet, ApneaClass, EcgRecord};
use crate::error::{Error, Result};

/// One labeled training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBundle {
    pub record_id: String,
    pub epoch_index: usize,
    pub label: ApneaClass,
    /// Raw ECG window at the record's sampling rate.
    pub ecg: Vec<f64>,
    /// Resampled RR intervals (seconds); empty when the window had too
    /// few peaks (such bundles are removed by the heart-rate filter).
    pub rri: Vec<f64>,
    /// Resampled R-peak amplitudes, same length as `rri`.
    pub rpe: Vec<f64>,
    /// Peaks detected in the full window.
    pub n_peaks: usize,
    /// Mean heart rate over the center epoch, beats per minute.
    pub center_bpm: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentConfig {
    /// Adjacent epochs on each side of the labeled epoch.
    pub context: usize,
    /// RRI/RPE points per epoch; the window gets `(2*context+1)` times
    /// this many.
    pub resample_per_epoch: usize,
    pub median_window: usize,
    pub rpeaks: RPeakConfig,
}

impl Default for SegmentConfig {
    fn default() -> SegmentConfig {
        SegmentConfig {
            context: 0,
            resample_per_epoch: 180,
            median_window: 5,
            rpeaks: RPeakConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SegmentStats {
    /// Labeled epochs whose data lies beyond the record end.
    pub skipped_beyond_end: usize,
}

/// Cut one bundle per labeled epoch. Edge epochs replicate their
/// neighbors, so the output count equals the labeled epoch count minus
/// only the epochs that fall past the record end.
pub fn segment_with_context(
    record: &EcgRecord,
    annotations: &AnnotationSet,
    cfg: &SegmentConfig,
) -> Result<(Vec<SegmentBundle>, SegmentStats)> {
    record.validate()?;
    let epoch_len = (annotations.epoch_length_s * record.fs).round() as usize;
    if epoch_len == 0 {
        return Err(Error::Data("epoch shorter than one sample".into()));
    }
    let n_full = record.samples.len() / epoch_len;
    if n_full == 0 {
        return Err(Error::Data(format!(
            "record {} shorter than one epoch",
            record.record_id
        )));
    }
    let window_epochs = 2 * cfg.context + 1;
    let resample_len = cfg.resample_per_epoch * window_epochs;
    let mut stats = SegmentStats::default();
    let mut bundles = Vec::with_capacity(annotations.labels.len());
    for label in &annotations.labels {
        let e = label.epoch_index;
        if e >= n_full {
            stats.skipped_beyond_end += 1;
            log::warn!(
                "record {}: epoch {e} lies beyond the record end ({n_full} full epochs)",
                record.record_id
            );
            continue;
        }
        let mut window = Vec::with_capacity(window_epochs * epoch_len);
        for j in (e as i64 - cfg.context as i64)..=(e as i64 + cfg.context as i64) {
            let j = j.clamp(0, n_full as i64 - 1) as usize;
            window.extend_from_slice(&record.samples[j * epoch_len..(j + 1) * epoch_len]);
        }
        let window_record = EcgRecord {
            record_id: format!("{}:{}", record.record_id, e),
            fs: record.fs,
            samples: window,
        };
        let peaks = detect_r_peaks_with(&window_record, &cfg.rpeaks)?;
        let center_lo = cfg.context * epoch_len;
        let center_hi = center_lo + epoch_len;
        let center_count = peaks
            .iter()
            .filter(|&&p| p >= center_lo && p < center_hi)
            .count();
        let center_bpm = center_count as f64 * 60.0 / annotations.epoch_length_s;
        let (rri, rpe) = match derive_rri_rpe(
            &window_record,
            &peaks,
            (0, window_record.samples.len()),
            resample_len,
            cfg.median_window,
        ) {
            Ok(pair) => pair,
            // Too few peaks: flag the bundle by leaving the expert
            // series empty; the heart-rate filter removes it.
            Err(Error::Data(_)) => (Vec::new(), Vec::new()),
            Err(e) => return Err(e),
        };
        bundles.push(SegmentBundle {
            record_id: record.record_id.clone(),
            epoch_index: e,
            label: label.class,
            ecg: window_record.samples,
            rri,
            rpe,
            n_peaks: peaks.len(),
            center_bpm,
        });
    }
    Ok((bundles, stats))
}

#[derive(Debug, Clone)]
pub struct HrFilter {
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Minimum peaks in the whole window (cubic resampling needs 4).
    pub min_peaks: usize,
}

impl Default for HrFilter {
    fn default() -> HrFilter {
        HrFilter {
            min_bpm: 20.0,
            max_bpm: 300.0,
            min_peaks: 4,
        }
    }
}

/// Drop segments with an implausible heart rate or too few peaks for the
/// expert features. Returns the kept bundles and the dropped count.
pub fn filter_unreasonable_hr(
    bundles: Vec<SegmentBundle>,
    filter: &HrFilter,
) -> (Vec<SegmentBundle>, usize) {
    let before = bundles.len();
    let kept: Vec<SegmentBundle> = bundles
        .into_iter()
        .filter(|b| {
            b.n_peaks >= filter.min_peaks
                && !b.rri.is_empty()
                && b.center_bpm >= filter.min_bpm
                && b.center_bpm <= filter.max_bpm
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
