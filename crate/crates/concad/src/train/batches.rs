//! Batch construction.
//!
//! Train mode shuffles the bundle order with an epoch-derived stream and
//! extends every batch of B originals with B augmented views (labels
//! duplicated), so the contrastive term always sees fresh positives.
//! Eval mode partitions the input order deterministically with no
//! augmentation.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::augment::{augment, AugmentationSpec};
use crate::signal::segments::SegmentBundle;
use crate::tensor::Mode;

/// One planned batch: indices of the originals it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
}

/// Plan the batch composition for one epoch. The rng drives only the
/// shuffle; augmentation draws happen at materialization time.
pub fn plan_batches(
    n_bundles: usize,
    batch_size: usize,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<BatchPlan> {
    if n_bundles == 0 {
        return Err(Error::Data("no bundles to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if batch_size > n_bundles {
        log::warn!(
            "batch size {batch_size} exceeds dataset size {n_bundles}; using one smaller batch"
        );
    }
    let mut order: Vec<usize> = (0..n_bundles).collect();
    if mode == Mode::Train {
        rng.shuffle(&mut order);
    }
    Ok(BatchPlan {
        batches: order.chunks(batch_size).map(<[usize]>::to_vec).collect(),
    })
}

/// Materialize one planned batch. Train mode appends one augmented view
/// per original when a spec is given.
pub fn materialize_batch(
    bundles: &[SegmentBundle],
    batch: &[usize],
    aug: Option<&AugmentationSpec>,
    rng: &mut RngStream,
) -> Result<Vec<SegmentBundle>> {
    let mut out: Vec<SegmentBundle> = batch.iter().map(|&i| bundles[i].clone()).collect();
    if let Some(spec) = aug {
        for &i in batch {
            out.push(augment(&bundles[i], spec, rng)?);
        }
    }
    Ok(out)
}

/// Convenience wrapper producing fully materialized batches for one
/// epoch.
pub fn make_batches(
    bundles: &[SegmentBundle],
    batch_size: usize,
    aug: Option<&AugmentationSpec>,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Vec<Vec<SegmentBundle>>> {
    let plan = plan_batches(bundles.len(), batch_size, mode, rng)?;
    let aug = if mode == Mode::Train { aug } else { None };
    plan.batches
        .iter()
        .map(|batch| materialize_batch(bundles, batch, aug, rng))
        .collect()
}
