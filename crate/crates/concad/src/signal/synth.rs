//! Synthetic ECG-like signals: Gaussian pulse trains with optional RR
//! jitter and additive noise, and a labeled two-class dataset whose
//! classes differ by simulated heart rate. The dataset is built through
//! the real peak-detection and feature pipeline, so it exercises the same
//! code paths as record data.

use super::features::derive_rri_rpe;
use super::rpeaks::detect_r_peaks;
use super::segments::SegmentBundle;
use super::{ApneaClass, EcgRecord};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct PulseTrainSpec {
    pub fs: f64,
    pub duration_s: f64,
    pub bpm: f64,
    pub amplitude: f64,
    /// Gaussian pulse sigma in seconds.
    pub width_s: f64,
    /// RR jitter as a fraction of the nominal interval (needs an rng).
    pub rr_jitter_frac: f64,
    /// Signal-to-noise ratio of added white noise (needs an rng).
    pub snr_db: Option<f64>,
}

impl Default for PulseTrainSpec {
    fn default() -> PulseTrainSpec {
        PulseTrainSpec {
            fs: 100.0,
            duration_s: 60.0,
            bpm: 60.0,
            amplitude: 1.0,
            width_s: 0.012,
            rr_jitter_frac: 0.0,
            snr_db: None,
        }
    }
}

/// Generate the pulse train plus the true pulse-center sample indices.
/// Jitter and noise are only applied when an rng is supplied.
pub fn gaussian_pulse_train(
    spec: &PulseTrainSpec,
    mut rng: Option<&mut RngStream>,
) -> (Vec<f64>, Vec<usize>) {
    let n = (spec.duration_s * spec.fs).round() as usize;
    let mut samples = vec![0.0; n];
    let rr = 60.0 / spec.bpm * spec.fs;
    let sigma = spec.width_s * spec.fs;
    let support = (4.0 * sigma).ceil() as i64;
    let mut centers = Vec::new();
    let mut t = rr / 2.0;
    while t < n as f64 - rr / 2.0 + 1.0 {
        let jitter = match (&mut rng, spec.rr_jitter_frac) {
            (Some(r), j) if j > 0.0 => (r.uniform() * 2.0 - 1.0) * j * rr,
            _ => 0.0,
        };
        let center = t + jitter;
        let ci = center.round() as i64;
        if ci >= 0 && (ci as usize) < n {
            centers.push(ci as usize);
            for di in -support..=support {
                let i = ci + di;
                if i >= 0 && (i as usize) < n {
                    let d = i as f64 - center;
                    samples[i as usize] +=
                        spec.amplitude * (-0.5 * (d / sigma) * (d / sigma)).exp();
                }
            }
        }
        t += rr;
    }
    if let (Some(r), Some(snr_db)) = (rng, spec.snr_db) {
        let power = samples.iter().map(|s| s * s).sum::<f64>() / n as f64;
        let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for s in samples.iter_mut() {
            *s += noise_std * r.normal();
        }
    }
    (samples, centers)
}

/// Configuration for the two-class synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub fs: f64,
    pub epoch_s: f64,
    pub bpm_normal: f64,
    pub bpm_apnea: f64,
    /// Uniform per-bundle heart-rate spread around the class center.
    pub bpm_spread: f64,
    pub rr_jitter_frac: f64,
    pub snr_db: f64,
    pub resample_per_epoch: usize,
    pub median_window: usize,
}

impl Default for SyntheticConfig {
    fn default() -> SyntheticConfig {
        SyntheticConfig {
            fs: 100.0,
            epoch_s: 30.0,
            bpm_normal: 50.0,
            bpm_apnea: 90.0,
            bpm_spread: 8.0,
            rr_jitter_frac: 0.04,
            snr_db: 15.0,
            resample_per_epoch: 90,
            median_window: 5,
        }
    }
}

/// Build `n` labeled bundles (classes alternate) through the real
/// detection and feature pipeline.
pub fn make_synthetic_dataset(
    n: usize,
    seed: u64,
    cfg: SyntheticConfig,
) -> Result<Vec<SegmentBundle>> {
    let master = RngStream::new(seed);
    let mut bundles = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = master.derive(i as u64);
        let class = if i % 2 == 0 {
            ApneaClass::Normal
        } else {
            ApneaClass::Apnea
        };
        let center_bpm = match class {
            ApneaClass::Normal => cfg.bpm_normal,
            ApneaClass::Apnea => cfg.bpm_apnea,
        };
        let bpm = center_bpm + (rng.uniform() * 2.0 - 1.0) * cfg.bpm_spread;
        let spec = PulseTrainSpec {
            fs: cfg.fs,
            duration_s: cfg.epoch_s,
            bpm,
            rr_jitter_frac: cfg.rr_jitter_frac,
            snr_db: Some(cfg.snr_db),
            ..Default::default()
        };
        let (samples, _) = gaussian_pulse_train(&spec, Some(&mut rng));
        let record = EcgRecord::new(format!("synth{i:04}"), cfg.fs, samples)?;
        let peaks = detect_r_peaks(&record)?;
        if peaks.len() < 4 {
            return Err(Error::Data(format!(
                "synthetic bundle {i}: only {} peaks detected",
                peaks.len()
            )));
        }
        let (rri, rpe) = derive_rri_rpe(
            &record,
            &peaks,
            (0, record.samples.len()),
            cfg.resample_per_epoch,
            cfg.median_window,
        )?;
        let epoch_peaks = peaks.len();
        bundles.push(SegmentBundle {
            record_id: record.record_id.clone(),
            epoch_index: i,
            label: class,
            center_bpm: epoch_peaks as f64 * 60.0 / cfg.epoch_s,
            n_peaks: epoch_peaks,
            ecg: record.samples,
            rri,
            rpe,
        });
    }
    Ok(bundles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_count_matches_rate() {
        let spec = PulseTrainSpec {
            duration_s: 60.0,
            bpm: 60.0,
            ..Default::default()
        };
        let (samples, centers) = gaussian_pulse_train(&spec, None);
        assert_eq!(samples.len(), 6000);
        assert_eq!(centers.len(), 60);
        // Deterministic without an rng.
        let (again, centers2) = gaussian_pulse_train(&spec, None);
        assert_eq!(samples, again);
        assert_eq!(centers, centers2);
    }

    #[test]
    fn snr_scales_noise() {
        let base = PulseTrainSpec {
            duration_s: 30.0,
            ..Default::default()
        };
        let (clean, _) = gaussian_pulse_train(&base, None);
        let spec = PulseTrainSpec {
            snr_db: Some(10.0),
            ..base
        };
        let mut rng = RngStream::new(5);
        let (noisy, _) = gaussian_pulse_train(&spec, Some(&mut rng));
        let noise_power = clean
            .iter()
            .zip(&noisy)
            .map(|(c, n)| (n - c) * (n - c))
            .sum::<f64>()
            / clean.len() as f64;
        let signal_power = clean.iter().map(|s| s * s).sum::<f64>() / clean.len() as f64;
        let snr = 10.0 * (signal_power / noise_power).log10();
        assert!((snr - 10.0).abs() < 1.0, "measured snr {snr}");
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let a = make_synthetic_dataset(10, 99, SyntheticConfig::default()).unwrap();
        let b = make_synthetic_dataset(10, 99, SyntheticConfig::default()).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.ecg, y.ecg);
            assert_eq!(x.rri, y.rri);
            assert_eq!(x.label, y.label);
        }
        let apnea = a.iter().filter(|b| b.label == ApneaClass::Apnea).count();
        assert_eq!(apnea, 5);
        for bundle in &a {
            assert_eq!(bundle.rri.len(), 90);
            assert_eq!(bundle.rpe.len(), 90);
            assert_eq!(bundle.ecg.len(), 3000);
            assert!(bundle.rri.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn classes_differ_in_mean_rri() {
        let bundles = make_synthetic_dataset(20, 7, SyntheticConfig::default()).unwrap();
        let mean_rri = |class: ApneaClass| {
            let vals: Vec<f64> = bundles
                .iter()
                .filter(|b| b.label == class)
                .flat_map(|b| b.rri.iter().copied())
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let normal = mean_rri(ApneaClass::Normal);
        let apnea = mean_rri(ApneaClass::Apnea);
        assert!(
            normal > apnea + 0.2,
            "slow class rri {normal} vs fast class {apnea}"
        );
    }
}
