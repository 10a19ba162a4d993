//! Training: configuration, the epoch loop with the two-stage learning
//! rate, per-epoch logging, checkpointing, and the evaluation entry
//! points.

pub mod batches;
pub mod embeddings;
pub mod folds;
pub mod manifest;
pub mod metrics;

pub use batches::{make_batches, materialize_batch, plan_batches};
pub use embeddings::export_embeddings;
pub use folds::{kfold_split, subset_fraction, subset_indices, FoldMode, FoldPlan};
pub use manifest::{load_manifest, ExperimentManifest};
pub use metrics::{evaluate, metrics_from_confusion, metrics_from_predictions, MetricsReport};

use crate::error::{Error, Result};
use crate::losses::{cross_entropy, hybrid, supervised_contrastive};
use crate::model::{ConcadModel, ModelInput, ParamGroup, Standardizer};
use crate::rng::RngStream;
use crate::signal::augment::AugmentationSpec;
use crate::signal::segments::SegmentBundle;
use crate::tensor::optim::{amsgrad_step, AmsGradConfig};
use crate::tensor::{Mode, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Originals per batch (augmentation doubles the instance count).
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    /// Epoch (0-based) at which the rate drops to `lr_after`.
    pub drop_epoch: usize,
    /// Cross-entropy weight in the hybrid objective.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// L2 coefficient on extractor convolution kernels.
    pub l2_coeff: f64,
    pub augment: Option<AugmentationSpec>,
    pub seed: u64,
    /// Context width the dataset was prepared with (echoed for
    /// provenance).
    pub context: usize,
    /// Evaluate every this many epochs (0 = only at the end).
    pub eval_every: usize,
    /// Train with cross-entropy alone: no projection head, no
    /// contrastive term.
    pub ce_only: bool,
    /// Use the self-inclusive contrastive variant.
    pub sc_include_anchor: bool,
    pub class_weights: Option<[f64; 2]>,
}

impl TrainConfig {
    /// Defaults for everything an experiment may omit; `epochs`,
    /// `lambda` and `tau` have no defaults and must be given.
    pub fn new(epochs: usize, lambda: f64, tau: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            epochs,
            lr_initial: 0.005,
            lr_after: 0.001,
            drop_epoch: 200,
            lambda,
            tau,
            l2_coeff: 1e-4,
            augment: Some(AugmentationSpec::default()),
            seed: 0,
            context: 0,
            eval_every: 0,
            ce_only: false,
            sc_include_anchor: false,
            class_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be >= 2 (the contrastive term needs pairs)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, lr) in [("lr_initial", self.lr_initial), ("lr_after", self.lr_after)] {
            if lr <= 0.0 || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.l2_coeff < 0.0 {
            return Err(Error::Config("l2_coeff must be >= 0".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if self.ce_only && self.lambda != 1.0 {
            return Err(Error::Config("ce_only training requires lambda = 1".into()));
        }
        Ok(())
    }
}

/// Exact two-stage schedule.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch < cfg.drop_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_after
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_hybrid: f64,
    pub mean_ce: f64,
    pub mean_sc: f64,
    pub lr: f64,
    pub degenerate_batches: usize,
    pub eval: Option<MetricsReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    /// Best eval epoch and its report, when eval data was given.
    pub best: Option<(usize, MetricsReport)>,
    pub final_eval: Option<MetricsReport>,
}

/// Where checkpoints go and what metadata they carry.
#[derive(Debug, Clone)]
pub struct CheckpointSpec<'a> {
    pub dir: &'a Path,
    pub meta: serde_json::Value,
}

/// Train in place. Fits the standardizer on `bundles`, then runs
/// `cfg.epochs` epochs of shuffled, augmented batches under the hybrid
/// objective with AMSGrad updates (extractor kernels carry the L2
/// penalty). Evaluation runs on `eval_bundles` at the configured cadence
/// and always after the last epoch; the best checkpoint (by eval macro
/// F1) and the final checkpoint are written when `checkpoints` is given.
pub fn train(
    model: &mut ConcadModel,
    bundles: &[SegmentBundle],
    eval_bundles: Option<&[SegmentBundle]>,
    cfg: &TrainConfig,
    checkpoints: Option<&CheckpointSpec>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bundles.is_empty() {
        return Err(Error::Data("no training bundles".into()));
    }
    model.standardizer = Standardizer::fit(bundles)?;
    let master = RngStream::new(cfg.seed);
    let mut logs: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, MetricsReport)> = None;

    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        let lr = learning_rate(cfg, epoch);
        let optim = AmsGradConfig::with_lr(lr);
        let mut rng = master.derive(epoch as u64);
        let plan = plan_batches(bundles.len(), cfg.batch_size, Mode::Train, &mut rng)?;

        let mut sum_hybrid = 0.0;
        let mut sum_ce = 0.0;
        let mut sum_sc = 0.0;
        let mut n_inst = 0usize;
        let mut degenerate_batches = 0usize;

        for (batch_id, batch) in plan.batches.iter().enumerate() {
            let instances = materialize_batch(bundles, batch, cfg.augment.as_ref(), &mut rng)?;
            let refs: Vec<&SegmentBundle> = instances.iter().collect();
            let input = ModelInput::from_bundles(&refs, &model.standardizer, &model.config)?;
            model.zero_grads();
            let (out, cache) = model.forward(&input, Mode::Train, Some(&mut rng), !cfg.ce_only)?;

            let ce = cross_entropy(&out.probs, &input.labels, cfg.class_weights)?;
            let (sc_value, grad_z) = if cfg.ce_only {
                (0.0, None)
            } else {
                let z = out.z.as_ref().expect("projection ran");
                let sc =
                    supervised_contrastive(z, &input.labels, cfg.tau, cfg.sc_include_anchor)?;
                if sc.degenerate {
                    degenerate_batches += 1;
                }
                let scaled = Tensor::from_vec(
                    sc.grad_z.shape(),
                    sc.grad_z
                        .data()
                        .iter()
                        .map(|g| g * (1.0 - cfg.lambda))
                        .collect(),
                )?;
                (sc.value, Some(scaled))
            };
            let loss = hybrid(ce.value, sc_value, cfg.lambda);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} batch {batch_id}: ce {} sc {sc_value}",
                    ce.value
                )));
            }
            let grad_probs = Tensor::from_vec(
                ce.grad_probs.shape(),
                ce.grad_probs
                    .data()
                    .iter()
                    .map(|g| g * cfg.lambda)
                    .collect(),
            )?;
            model.backward(&cache, &grad_probs, grad_z.as_ref())?;
            model.apply_batch_stats(&cache);

            let mut step_err = None;
            model.visit_params_mut(&mut |name, group, p| {
                if step_err.is_some() {
                    return;
                }
                // Cross-entropy-only training has no projection head in
                // its trainable set.
                if cfg.ce_only && group == ParamGroup::Projection {
                    return;
                }
                let wd = if group == ParamGroup::ExtractorKernel {
                    cfg.l2_coeff
                } else {
                    0.0
                };
                if let Err(e) = amsgrad_step(p, &optim, wd) {
                    step_err = Some(Error::Numeric(format!("{name}: {e}")));
                }
            });
            if let Some(e) = step_err {
                return Err(e);
            }

            let k = input.batch_size();
            sum_hybrid += loss * k as f64;
            sum_ce += ce.value * k as f64;
            sum_sc += sc_value * k as f64;
            n_inst += k;
        }

        let scheduled =
            cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let eval_report = match eval_bundles {
            Some(ev) if scheduled => {
                let report = evaluate(model, ev, cfg.batch_size)?;
                let better = best
                    .as_ref()
                    .map_or(true, |(_, b)| report.macro_f1 > b.macro_f1);
                if better {
                    best = Some((epoch, report.clone()));
                    if let Some(ck) = checkpoints {
                        let mut meta = ck.meta.clone();
                        if let Some(obj) = meta.as_object_mut() {
                            obj.insert("epoch".into(), serde_json::json!(epoch));
                            obj.insert(
                                "eval_macro_f1".into(),
                                serde_json::json!(report.macro_f1),
                            );
                        }
                        model.save(&ck.dir.join("best.ckpt"), &meta)?;
                    }
                }
                Some(report)
            }
            _ => None,
        };

        logs.push(EpochLog {
            epoch,
            mean_hybrid: sum_hybrid / n_inst as f64,
            mean_ce: sum_ce / n_inst as f64,
            mean_sc: sum_sc / n_inst as f64,
            lr,
            degenerate_batches,
            eval: eval_report,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }

    if let Some(ck) = checkpoints {
        let mut meta = ck.meta.clone();
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("epoch".into(), serde_json::json!(cfg.epochs - 1));
        }
        model.save(&ck.dir.join("final.ckpt"), &meta)?;
    }
    let final_eval = logs.last().and_then(|l| l.eval.clone());
    Ok(TrainOutcome {
        logs,
        best,
        final_eval,
    })
}

/// Write per-epoch logs as CSV. Wall time stays out of the metrics JSON
/// so result files are byte-reproducible; it lives here instead.
pub fn write_epoch_csv(logs: &[EpochLog], path: &Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "epoch,mean_hybrid,mean_ce,mean_sc,lr,degenerate_batches,eval_accuracy,eval_macro_f1,wall_time_s"
    )
    .map_err(|e| Error::io(path, e))?;
    for l in logs {
        let (acc, f1) = l.eval.as_ref().map_or((String::new(), String::new()), |m| {
            (m.accuracy.to_string(), m.macro_f1.to_string())
        });
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            l.epoch,
            l.mean_hybrid,
            l.mean_ce,
            l.mean_sc,
            l.lr,
            l.degenerate_batches,
            acc,
            f1,
            l.wall_time_s
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::signal::synth::{make_synthetic_dataset, SyntheticConfig};

    fn quick_config(epochs: usize, lambda: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            eval_every: 0,
            seed: 7,
            ..TrainConfig::new(epochs, lambda, 0.1)
        }
    }

    #[test]
    fn learning_rate_schedule_is_exact() {
        let mut cfg = TrainConfig::new(300, 0.5, 0.1);
        cfg.drop_epoch = 200;
        for e in 0..300 {
            let lr = learning_rate(&cfg, e);
            assert_eq!(lr, if e < 200 { 0.005 } else { 0.001 });
        }
    }

    #[test]
    fn config_validation() {
        assert!(quick_config(1, 0.5).validate().is_ok());
        assert!(TrainConfig {
            batch_size: 1,
            ..quick_config(1, 0.5)
        }
        .validate()
        .is_err());
        assert!(quick_config(0, 0.5).validate().is_err());
        assert!(quick_config(1, 1.5).validate().is_err());
        assert!(TrainConfig {
            ce_only: true,
            ..quick_config(1, 0.5)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn lambda_one_matches_ce_only_epoch_one() {
        let bundles = make_synthetic_dataset(16, 3, SyntheticConfig::default()).unwrap();
        let model_cfg = ModelConfig::synthetic();

        let mut m1 = ConcadModel::init(&model_cfg, &mut RngStream::new(1)).unwrap();
        let out1 = train(&mut m1, &bundles, None, &quick_config(1, 1.0), None).unwrap();

        let mut m2 = ConcadModel::init(&model_cfg, &mut RngStream::new(1)).unwrap();
        let cfg2 = TrainConfig {
            ce_only: true,
            ..quick_config(1, 1.0)
        };
        let out2 = train(&mut m2, &bundles, None, &cfg2, None).unwrap();

        assert_eq!(out1.logs[0].mean_ce, out2.logs[0].mean_ce);
        assert_eq!(out1.logs[0].mean_hybrid, out2.logs[0].mean_hybrid);
    }

    #[test]
    fn training_is_deterministic() {
        let bundles = make_synthetic_dataset(12, 4, SyntheticConfig::default()).unwrap();
        let model_cfg = ModelConfig::synthetic();
        let run = || {
            let mut m = ConcadModel::init(&model_cfg, &mut RngStream::new(5)).unwrap();
            let out = train(&mut m, &bundles, None, &quick_config(2, 0.5), None).unwrap();
            let mut params = Vec::new();
            m.visit_params(&mut |_, _, p| params.extend_from_slice(p.value.data()));
            (
                out.logs
                    .iter()
                    .map(|l| (l.mean_hybrid, l.mean_ce, l.mean_sc))
                    .collect::<Vec<_>>(),
                params,
            )
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let bundles = make_synthetic_dataset(24, 6, SyntheticConfig::default()).unwrap();
        let model_cfg = ModelConfig::synthetic();
        let mut m = ConcadModel::init(&model_cfg, &mut RngStream::new(2)).unwrap();
        let out = train(&mut m, &bundles, None, &quick_config(6, 0.5), None).unwrap();
        let first = out.logs.first().unwrap().mean_hybrid;
        let last = out.logs.last().unwrap().mean_hybrid;
        assert!(last < first, "hybrid loss should fall: {first} -> {last}");
    }
}
