//! Command-line interface.
//!
//! One command per process: `prepare` turns a record directory into a
//! prepared-dataset file, `train`/`crossval`/`subset-train` run
//! experiments from a manifest, `eval` scores a checkpoint,
//! `export-embeddings` dumps fused context vectors, `gradcheck` sweeps
//! the full model against finite differences, and `selftest` runs the
//! built-in verification battery.
//!
//! Exit codes: 0 ok, 1 usage/config, 2 data error, 3 numeric failure.

use crate::error::{Error, Result};
use crate::model::{ConcadModel, ModelConfig};
use crate::rng::RngStream;
use crate::signal::annotations::{AnnotationConfig, AnnotationFormat, LabelMap};
use crate::signal::dataset::{DatasetCounts, DatasetManifest, PreparedDataset};
use crate::signal::io::{read_record_channel, RecordFormat};
use crate::signal::rpeaks::RPeakConfig;
use crate::signal::segments::{
    filter_unreasonable_hr, segment_with_context, HrFilter, SegmentBundle, SegmentConfig,
};
use crate::train::manifest::{load_manifest, sha256_hex, ExperimentManifest};
use crate::train::{
    evaluate, export_embeddings, kfold_split, subset_indices, train, write_epoch_csv,
    CheckpointSpec, FoldMode, MetricsReport, TrainOutcome,
};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "concad",
    version,
    about = "Sleep-apnea segment classification from single-lead ECG: cross-attention fusion of deep and expert features under a hybrid cross-entropy + contrastive objective"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read records + annotations and write a prepared-dataset file.
    Prepare(PrepareArgs),
    /// Train a model from an experiment manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared dataset.
    Eval(EvalArgs),
    /// K-fold cross-validation from an experiment manifest.
    Crossval(CrossvalArgs),
    /// Train on a label fraction, evaluate on the full eval set.
    SubsetTrain(SubsetArgs),
    /// Export fused context vectors to CSV.
    ExportEmbeddings(ExportArgs),
    /// Full-model finite-difference gradient check.
    Gradcheck(GradcheckArgs),
    /// Run the built-in verification battery.
    Selftest,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Directory of records (<record>.hea/.dat plus .apn/.st, or CSV).
    #[arg(long, env = "CONCAD_DATA_DIR")]
    data_dir: PathBuf,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Signal format: wfdb16, wfdb212 or csv.
    #[arg(long, default_value = "wfdb16")]
    format: String,
    /// Annotation format: wfdb or text.
    #[arg(long, default_value = "wfdb")]
    ann_format: String,
    /// Label mapping: `minute` (A/N codes) or `aux` (event tokens).
    #[arg(long, default_value = "minute")]
    label_map: String,
    /// Epoch length in seconds.
    #[arg(long, default_value_t = 60.0)]
    epoch_length: f64,
    /// Adjacent epochs on each side of the labeled epoch.
    #[arg(long, default_value_t = 0)]
    context: usize,
    /// RRI/RPE points per epoch.
    #[arg(long, default_value_t = 180)]
    resample: usize,
    /// Channel index inside multi-signal records.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Comma-separated record names (default: every record found).
    #[arg(long)]
    records: Option<String>,
    /// Skip unmapped annotations instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long, default_value_t = 20.0)]
    min_bpm: f64,
    #[arg(long, default_value_t = 300.0)]
    max_bpm: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints, metrics and logs.
    #[arg(long)]
    out: PathBuf,
    /// Override the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared dataset to score.
    #[arg(long)]
    data: PathBuf,
    /// Metrics JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// `segment` or `recording`.
    #[arg(long, default_value = "segment")]
    fold_mode: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SubsetArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training-label fraction in (0, 1].
    #[arg(long)]
    fraction: f64,
    /// Number of seeds to average over (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Architecture config TOML (default: the built-in toy stack).
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 99)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print help/version on stdout with exit 0.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::SubsetTrain(args) => cmd_subset(args),
        Command::ExportEmbeddings(args) => cmd_export(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Selftest => cmd_selftest(),
    }
}

// ---------------------------------------------------------------------------
// prepare

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let format: RecordFormat = args.format.parse()?;
    let ann_format: AnnotationFormat = args.ann_format.parse()?;
    let label_map = match args.label_map.as_str() {
        "minute" => LabelMap::minute_codes(),
        "aux" => LabelMap::aux_event_tokens(),
        other => {
            return Err(Error::Config(format!(
                "unknown label map `{other}` (expected minute or aux)"
            )))
        }
    };
    let wanted: Option<Vec<String>> = args
        .records
        .as_ref()
        .map(|s| s.split(',').map(|r| r.trim().to_string()).collect());

    let records = discover_records(&args.data_dir, format, wanted.as_deref())?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no records found in {}",
            args.data_dir.display()
        )));
    }

    let seg_cfg = SegmentConfig {
        context: args.context,
        resample_per_epoch: args.resample,
        median_window: 5,
        rpeaks: RPeakConfig::default(),
    };
    let hr = HrFilter {
        min_bpm: args.min_bpm,
        max_bpm: args.max_bpm,
        min_peaks: 4,
    };

    let mut all_bundles: Vec<SegmentBundle> = Vec::new();
    let mut counts = DatasetCounts::default();
    let mut record_names = Vec::new();
    let mut fs = 0.0;
    for (record_path, ann_path) in &records {
        let record = read_record_channel(record_path, format, args.channel)?;
        fs = record.fs;
        let ann_cfg = AnnotationConfig {
            fs: record.fs,
            epoch_length_s: args.epoch_length,
            label_map: label_map.clone(),
            strict: !args.lenient,
        };
        let (annotations, ann_stats) = crate::signal::annotations::read_annotations(
            ann_path, ann_format, &ann_cfg,
        )?;
        counts.skipped_annotations += ann_stats.skipped_unmapped + ann_stats.skipped_duplicates;
        counts.labeled_epochs += annotations.len();
        let (bundles, stats) = segment_with_context(&record, &annotations, &seg_cfg)?;
        counts.skipped_beyond_end += stats.skipped_beyond_end;
        let (kept, dropped) = filter_unreasonable_hr(bundles, &hr);
        counts.dropped_hr += dropped;
        counts.kept += kept.len();
        all_bundles.extend(kept);
        record_names.push(record.record_id.clone());
        log::info!("prepared {}", record.record_id);
    }

    let dataset = PreparedDataset {
        manifest: DatasetManifest {
            fs,
            epoch_length_s: args.epoch_length,
            context: args.context,
            resample_per_epoch: args.resample,
            median_window: 5,
            hr_min_bpm: args.min_bpm,
            hr_max_bpm: args.max_bpm,
            counts: counts.clone(),
            records: record_names,
        },
        bundles: all_bundles,
    };
    dataset.save(&args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out.display().to_string(),
            "records": dataset.manifest.records.len(),
            "labeled_epochs": counts.labeled_epochs,
            "kept": counts.kept,
            "dropped_hr": counts.dropped_hr,
            "skipped_beyond_end": counts.skipped_beyond_end,
            "skipped_annotations": counts.skipped_annotations,
        })
    );
    Ok(())
}

/// Pair each record file with its annotation file.
fn discover_records(
    dir: &Path,
    format: RecordFormat,
    wanted: Option<&[String]>,
) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let record_ext = match format {
        RecordFormat::Csv => "csv",
        _ => "hea",
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().map_or(true, |e| e != record_ext) {
            continue;
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(w) = wanted {
            if !w.iter().any(|x| *x == stem) {
                continue;
            }
        }
        let ann = ["apn", "st", "ann", "txt"]
            .iter()
            .map(|ext| path.with_extension(ext))
            .find(|p| p.exists());
        match ann {
            Some(ann) => out.push((path, ann)),
            None => log::warn!("record {stem} has no annotation file, skipping"),
        }
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------------------
// train

fn load_experiment_data(
    manifest: &ExperimentManifest,
) -> Result<(PreparedDataset, Option<PreparedDataset>)> {
    let train_ds = PreparedDataset::load(&manifest.dataset)?;
    let eval_ds = manifest
        .eval_dataset
        .as_ref()
        .map(|p| PreparedDataset::load(p))
        .transpose()?;
    Ok((train_ds, eval_ds))
}

fn run_manifest_training(
    manifest: &ExperimentManifest,
    train_bundles: &[SegmentBundle],
    eval_bundles: Option<&[SegmentBundle]>,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(ConcadModel, TrainOutcome)> {
    let mut cfg = manifest.train.clone();
    cfg.seed = seed;
    let mut model = ConcadModel::init(&manifest.model_config, &mut RngStream::new(seed))?;
    let meta = serde_json::json!({
        "config_hash": manifest.config_hash,
        "seed": seed,
    });
    let ck = out_dir.map(|dir| CheckpointSpec { dir, meta });
    let outcome = train(&mut model, train_bundles, eval_bundles, &cfg, ck.as_ref())?;
    Ok((model, outcome))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut manifest = load_manifest(&args.manifest)?;
    let (train_ds, eval_ds) = load_experiment_data(&manifest)?;
    manifest.train.context = train_ds.manifest.context;
    let seed = args.seed.unwrap_or(manifest.train.seed);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (model, outcome) = run_manifest_training(
        &manifest,
        &train_ds.bundles,
        eval_ds.as_ref().map(|d| d.bundles.as_slice()),
        seed,
        Some(&args.out),
    )?;
    let train_metrics = evaluate(&model, &train_ds.bundles, manifest.train.batch_size)?;

    write_epoch_csv(&outcome.logs, &args.out.join("epochs.csv"))?;
    let result = serde_json::json!({
        "config_hash": manifest.config_hash,
        "seed": seed,
        "manifest": manifest.raw_text,
        "dataset_counts": train_ds.manifest.counts,
        "train_metrics": train_metrics,
        "final_eval": outcome.final_eval,
        "best": outcome.best.as_ref().map(|(epoch, m)| serde_json::json!({
            "epoch": epoch,
            "metrics": m,
        })),
    });
    let metrics_path = args.out.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&result).unwrap())
        .map_err(|e| Error::io(&metrics_path, e))?;
    println!("{}", summary_line(&train_metrics, outcome.final_eval.as_ref()));
    Ok(())
}

fn summary_line(train: &MetricsReport, eval: Option<&MetricsReport>) -> String {
    match eval {
        Some(e) => format!(
            "train accuracy {:.4} macro-F1 {:.4} | eval accuracy {:.4} macro-F1 {:.4}",
            train.accuracy, train.macro_f1, e.accuracy, e.macro_f1
        ),
        None => format!(
            "train accuracy {:.4} macro-F1 {:.4}",
            train.accuracy, train.macro_f1
        ),
    }
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, meta) = ConcadModel::load(&args.checkpoint)?;
    let data = PreparedDataset::load(&args.data)?;
    let report = evaluate(&model, &data.bundles, args.batch_size)?;
    let result = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "checkpoint_meta": meta,
        "metrics": report,
    });
    let text = serde_json::to_string_pretty(&result).unwrap();
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// crossval

fn cmd_crossval(args: CrossvalArgs) -> Result<()> {
    let mut manifest = load_manifest(&args.manifest)?;
    let (train_ds, _) = load_experiment_data(&manifest)?;
    manifest.train.context = train_ds.manifest.context;
    let seed = args.seed.unwrap_or(manifest.train.seed);
    let mode: FoldMode = args.fold_mode.parse()?;
    let plan = kfold_split(&train_ds.bundles, args.folds, mode, seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut fold_reports: Vec<MetricsReport> = Vec::new();
    for fold in 0..args.folds {
        let (train_idx, eval_idx) = plan.split(fold);
        let train_bundles: Vec<SegmentBundle> =
            train_idx.iter().map(|&i| train_ds.bundles[i].clone()).collect();
        let eval_bundles: Vec<SegmentBundle> =
            eval_idx.iter().map(|&i| train_ds.bundles[i].clone()).collect();
        let fold_seed = RngStream::new(seed).derive(fold as u64).seed();
        let (model, _) =
            run_manifest_training(&manifest, &train_bundles, None, fold_seed, None)?;
        let report = evaluate(&model, &eval_bundles, manifest.train.batch_size)?;
        log::info!(
            "fold {fold}: accuracy {:.4} macro-F1 {:.4}",
            report.accuracy,
            report.macro_f1
        );
        fold_reports.push(report);
    }
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| {
        fold_reports.iter().map(|r| f(r)).sum::<f64>() / fold_reports.len() as f64
    };
    let std = |f: &dyn Fn(&MetricsReport) -> f64| {
        let m = mean(f);
        (fold_reports.iter().map(|r| (f(r) - m) * (f(r) - m)).sum::<f64>()
            / fold_reports.len() as f64)
            .sqrt()
    };
    let acc: &dyn Fn(&MetricsReport) -> f64 = &|r| r.accuracy;
    let f1: &dyn Fn(&MetricsReport) -> f64 = &|r| r.macro_f1;
    let result = serde_json::json!({
        "config_hash": manifest.config_hash,
        "seed": seed,
        "manifest": manifest.raw_text,
        "folds": args.folds,
        "fold_mode": args.fold_mode,
        "per_fold": fold_reports,
        "mean_accuracy": mean(acc),
        "std_accuracy": std(acc),
        "mean_macro_f1": mean(f1),
        "std_macro_f1": std(f1),
    });
    let path = args.out.join("crossval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    println!(
        "crossval: mean accuracy {:.4} mean macro-F1 {:.4}",
        mean(acc),
        mean(f1)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// subset-train

fn cmd_subset(args: SubsetArgs) -> Result<()> {
    let mut manifest = load_manifest(&args.manifest)?;
    let (train_ds, eval_ds) = load_experiment_data(&manifest)?;
    manifest.train.context = train_ds.manifest.context;
    let eval_ds = eval_ds.ok_or_else(|| {
        Error::Config("subset-train needs eval_dataset in the manifest".into())
    })?;
    let base_seed = args.seed.unwrap_or(manifest.train.seed);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let labels: Vec<usize> = train_ds.bundles.iter().map(|b| b.label.index()).collect();
    let mut reports: Vec<MetricsReport> = Vec::new();
    for s in 0..args.seeds {
        let seed = base_seed + s;
        let idx = subset_indices(&labels, args.fraction, seed, true)?;
        let subset: Vec<SegmentBundle> =
            idx.iter().map(|&i| train_ds.bundles[i].clone()).collect();
        let (model, _) = run_manifest_training(&manifest, &subset, None, seed, None)?;
        let report = evaluate(&model, &eval_ds.bundles, manifest.train.batch_size)?;
        log::info!(
            "seed {seed}: {} training bundles, eval macro-F1 {:.4}",
            subset.len(),
            report.macro_f1
        );
        reports.push(report);
    }
    let mean_f1 = reports.iter().map(|r| r.macro_f1).sum::<f64>() / reports.len() as f64;
    let mean_acc = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    let result = serde_json::json!({
        "config_hash": manifest.config_hash,
        "seed": base_seed,
        "seeds": args.seeds,
        "fraction": args.fraction,
        "manifest": manifest.raw_text,
        "per_seed": reports,
        "mean_accuracy": mean_acc,
        "mean_macro_f1": mean_f1,
    });
    let path = args.out.join("subset.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    println!(
        "subset fraction {}: mean accuracy {:.4} mean macro-F1 {:.4}",
        args.fraction, mean_acc, mean_f1
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// export-embeddings / gradcheck / selftest

fn cmd_export(args: ExportArgs) -> Result<()> {
    let (model, _) = ConcadModel::load(&args.checkpoint)?;
    let data = PreparedDataset::load(&args.data)?;
    export_embeddings(&model, &data.bundles, &args.out, args.batch_size)?;
    println!(
        "wrote {} embeddings ({} dims) to {}",
        data.bundles.len(),
        model.config.attention_dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let config = match &args.model_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ModelConfig::from_toml_str(&text)?
        }
        None => ModelConfig::toy(),
    };
    let err = crate::selftest::full_model_gradient_check(
        &config,
        args.lambda,
        args.tau,
        args.batch,
        args.seed,
    )?;
    println!(
        "full-model gradient check: max relative error {err:.3e} (threshold {:.1e})",
        args.threshold
    );
    if err < args.threshold {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {err:.3e} >= {:.1e}",
            args.threshold
        )))
    }
}

fn cmd_selftest() -> Result<()> {
    let (passed, failed) = crate::selftest::run_all(|name, err| match err {
        None => println!("PASS {name}"),
        Some(e) => println!("FAIL {name}: {e}"),
    });
    println!("{passed} passed, {failed} failed");
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{failed} self-test checks failed")))
    }
}

// ---------------------------------------------------------------------------
// config hashing helper re-export for result assembly elsewhere

pub use crate::train::manifest::sha256_hex as config_hash;
