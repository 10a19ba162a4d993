//! Cross-validation fold plans and label-fraction subsetting.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::segments::SegmentBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldMode {
    /// Shuffle segments and split evenly (fold sizes differ by <= 1).
    SegmentLevel,
    /// Keep each recording's segments in one fold.
    RecordingLevel,
}

impl std::str::FromStr for FoldMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<FoldMode> {
        match s {
            "segment" => Ok(FoldMode::SegmentLevel),
            "recording" => Ok(FoldMode::RecordingLevel),
            other => Err(Error::Config(format!(
                "unknown fold mode `{other}` (expected segment or recording)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub mode: FoldMode,
    pub seed: u64,
}

impl FoldPlan {
    /// Train/eval index split for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let eval = self.folds[fold].clone();
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        (train, eval)
    }
}

/// Deterministic k-fold partition of the bundle indices.
pub fn kfold_split(
    bundles: &[SegmentBundle],
    k: usize,
    mode: FoldMode,
    seed: u64,
) -> Result<FoldPlan> {
    let n = bundles.len();
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds {n} bundles")));
    }
    let mut rng = RngStream::new(seed);
    let folds = match mode {
        FoldMode::SegmentLevel => {
            let mut indices: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut indices);
            // First n % k folds get one extra element.
            let base = n / k;
            let extra = n % k;
            let mut folds = Vec::with_capacity(k);
            let mut cursor = 0;
            for f in 0..k {
                let size = base + usize::from(f < extra);
                folds.push(indices[cursor..cursor + size].to_vec());
                cursor += size;
            }
            folds
        }
        FoldMode::RecordingLevel => {
            let mut records: Vec<&str> = Vec::new();
            for b in bundles {
                if !records.contains(&b.record_id.as_str()) {
                    records.push(&b.record_id);
                }
            }
            if records.len() < k {
                return Err(Error::Config(format!(
                    "recording-level folds need >= {k} recordings, found {}",
                    records.len()
                )));
            }
            let mut order: Vec<usize> = (0..records.len()).collect();
            rng.shuffle(&mut order);
            // Round-robin records into folds to balance counts.
            let mut fold_of_record = vec![0usize; records.len()];
            for (pos, &r) in order.iter().enumerate() {
                fold_of_record[r] = pos % k;
            }
            let mut folds = vec![Vec::new(); k];
            for (i, b) in bundles.iter().enumerate() {
                let r = records.iter().position(|x| *x == b.record_id).unwrap();
                folds[fold_of_record[r]].push(i);
            }
            folds
        }
    };
    Ok(FoldPlan { folds, mode, seed })
}

/// Deterministic subset of the bundle indices at `fraction`, optionally
/// stratified by class (at least one instance per present class).
pub fn subset_indices(
    labels: &[usize],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if fraction == 1.0 {
        return Ok((0..labels.len()).collect());
    }
    let mut rng = RngStream::new(seed);
    let mut chosen = Vec::new();
    if stratified {
        for class in 0..2 {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            rng.shuffle(&mut members);
            let mut take = (fraction * members.len() as f64).round() as usize;
            if take == 0 {
                take = 1;
                log::warn!(
                    "fraction {fraction} would empty class {class}; keeping one instance"
                );
            }
            chosen.extend_from_slice(&members[..take.min(members.len())]);
        }
    } else {
        let mut indices: Vec<usize> = (0..labels.len()).collect();
        rng.shuffle(&mut indices);
        let take = ((fraction * labels.len() as f64).round() as usize).max(1);
        chosen.extend_from_slice(&indices[..take.min(indices.len())]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Convenience wrapper returning cloned bundles.
pub fn subset_fraction(
    bundles: &[SegmentBundle],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Vec<SegmentBundle>> {
    let labels: Vec<usize> = bundles.iter().map(|b| b.label.index()).collect();
    Ok(subset_indices(&labels, fraction, seed, stratified)?
        .into_iter()
        .map(|i| bundles[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::ApneaClass;

    fn dummy_bundles(n: usize, records: usize) -> Vec<SegmentBundle> {
        (0..n)
            .map(|i| SegmentBundle {
                record_id: format!("rec{}", i % records),
                epoch_index: i,
                label: if i % 3 == 0 {
                    ApneaClass::Apnea
                } else {
                    ApneaClass::Normal
                },
                ecg: vec![0.0; 4],
                rri: vec![1.0; 2],
                rpe: vec![1.0; 2],
                n_peaks: 5,
                center_bpm: 60.0,
            })
            .collect()
    }

    #[test]
    fn hundred_segments_ten_folds_of_ten() {
        let bundles = dummy_bundles(100, 10);
        let plan = kfold_split(&bundles, 10, FoldMode::SegmentLevel, 7).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for f in &plan.folds {
            assert_eq!(f.len(), 10);
        }
    }

    #[test]
    fn folds_partition_the_index_set() {
        let bundles = dummy_bundles(53, 7);
        for mode in [FoldMode::SegmentLevel, FoldMode::RecordingLevel] {
            let plan = kfold_split(&bundles, 5, mode, 3).unwrap();
            let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..53).collect::<Vec<_>>(), "{mode:?}");
            if mode == FoldMode::SegmentLevel {
                for f in &plan.folds {
                    assert!(f.len() == 10 || f.len() == 11);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let bundles = dummy_bundles(40, 4);
        let a = kfold_split(&bundles, 4, FoldMode::SegmentLevel, 11).unwrap();
        let b = kfold_split(&bundles, 4, FoldMode::SegmentLevel, 11).unwrap();
        assert_eq!(a, b);
        let c = kfold_split(&bundles, 4, FoldMode::SegmentLevel, 12).unwrap();
        assert_ne!(a.folds, c.folds);
    }

    #[test]
    fn recording_level_keeps_records_together() {
        let bundles = dummy_bundles(60, 6);
        let plan = kfold_split(&bundles, 3, FoldMode::RecordingLevel, 5).unwrap();
        for fold in &plan.folds {
            let mut records: Vec<&str> =
                fold.iter().map(|&i| bundles[i].record_id.as_str()).collect();
            records.sort_unstable();
            records.dedup();
            // All bundles of a record are in exactly one fold.
            for r in records {
                let total = bundles.iter().filter(|b| b.record_id == r).count();
                let here = fold.iter().filter(|&&i| bundles[i].record_id == r).count();
                assert_eq!(total, here);
            }
        }
    }

    #[test]
    fn k_bounds_checked() {
        let bundles = dummy_bundles(5, 2);
        assert!(kfold_split(&bundles, 1, FoldMode::SegmentLevel, 0).is_err());
        assert!(kfold_split(&bundles, 6, FoldMode::SegmentLevel, 0).is_err());
        assert!(kfold_split(&bundles, 3, FoldMode::RecordingLevel, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let bundles = dummy_bundles(20, 4);
        let plan = kfold_split(&bundles, 4, FoldMode::SegmentLevel, 1).unwrap();
        let (train, eval) = plan.split(2);
        assert_eq!(train.len() + eval.len(), 20);
        for e in &eval {
            assert!(!train.contains(e));
        }
    }

    #[test]
    fn subset_full_fraction_is_identity() {
        let labels = vec![0, 1, 0, 1, 0];
        assert_eq!(
            subset_indices(&labels, 1.0, 9, true).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn stratified_subset_preserves_class_ratio() {
        // 600 of class 0, 400 of class 1 at fraction 0.1 -> 60/40.
        let labels: Vec<usize> = std::iter::repeat(0)
            .take(600)
            .chain(std::iter::repeat(1).take(400))
            .collect();
        let chosen = subset_indices(&labels, 0.1, 4, true).unwrap();
        let c0 = chosen.iter().filter(|&&i| labels[i] == 0).count();
        let c1 = chosen.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((c0, c1), (60, 40));
    }

    #[test]
    fn tiny_fraction_keeps_one_per_class() {
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let chosen = subset_indices(&labels, 0.01, 4, true).unwrap();
        assert!(chosen.iter().any(|&i| labels[i] == 0));
        assert!(chosen.iter().any(|&i| labels[i] == 1));
    }

    #[test]
    fn subset_is_deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let a = subset_indices(&labels, 0.25, 2, true).unwrap();
        let b = subset_indices(&labels, 0.25, 2, true).unwrap();
        assert_eq!(a, b);
    }
}
