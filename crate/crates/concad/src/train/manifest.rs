//! Experiment manifests.
//!
//! Every training run is described by a TOML file so experiments diff
//! and archive cleanly; the raw text is echoed verbatim into the results
//! next to its SHA-256 so any output is reproducible from its manifest
//! alone.
//!
//! ```toml
//! [data]
//! dataset = "prepared/train.ccds"
//! eval_dataset = "prepared/test.ccds"   # optional
//!
//! [model]
//! config = "configs/model.toml"         # or: builtin = "synthetic"
//!
//! [train]
//! epochs = 50        # mandatory
//! lambda = 0.5       # mandatory
//! tau = 0.1          # mandatory
//! batch_size = 64
//! lr_initial = 0.005
//! lr_after = 0.001
//! drop_epoch = 200
//! l2_coeff = 1e-4
//! seed = 42
//! eval_every = 5
//! ce_only = false
//! sc_include_anchor = false
//!
//! [train.augment]                        # omit to disable augmentation
//! ops = ["time_shift", "reverse"]
//! max_shift_fraction = 0.1
//! ```

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::signal::augment::{AugmentOp, AugmentationSpec};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
struct ManifestToml {
    data: DataToml,
    model: ModelToml,
    train: TrainToml,
}

#[derive(Debug, Clone, Deserialize)]
struct DataToml {
    dataset: PathBuf,
    eval_dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
struct ModelToml {
    config: Option<PathBuf>,
    builtin: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct TrainToml {
    // No defaults for these three: a manifest must pin them.
    epochs: usize,
    lambda: f64,
    tau: f64,
    #[serde(default = "d_batch")]
    batch_size: usize,
    #[serde(default = "d_lr_initial")]
    lr_initial: f64,
    #[serde(default = "d_lr_after")]
    lr_after: f64,
    #[serde(default = "d_drop_epoch")]
    drop_epoch: usize,
    #[serde(default = "d_l2")]
    l2_coeff: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    eval_every: usize,
    #[serde(default)]
    ce_only: bool,
    #[serde(default)]
    sc_include_anchor: bool,
    #[serde(default)]
    class_weights: Option<[f64; 2]>,
    augment: Option<AugmentToml>,
}

#[derive(Debug, Clone, Deserialize)]
struct AugmentToml {
    ops: Vec<String>,
    #[serde(default = "d_shift")]
    max_shift_fraction: f64,
}

fn d_batch() -> usize {
    64
}
fn d_lr_initial() -> f64 {
    0.005
}
fn d_lr_after() -> f64 {
    0.001
}
fn d_drop_epoch() -> usize {
    200
}
fn d_l2() -> f64 {
    1e-4
}
fn d_shift() -> f64 {
    0.1
}

/// A fully resolved experiment: datasets, architecture and training
/// configuration, plus the verbatim manifest text and its hash.
#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub dataset: PathBuf,
    pub eval_dataset: Option<PathBuf>,
    pub model_config: ModelConfig,
    pub train: TrainConfig,
    pub raw_text: String,
    pub config_hash: String,
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Load and resolve a manifest. Relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    let raw_text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: ManifestToml = toml::from_str(&raw_text)
        .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let model_config = match (&parsed.model.config, &parsed.model.builtin) {
        (Some(p), None) => {
            let cfg_path = resolve(p);
            let text =
                std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
            ModelConfig::from_toml_str(&text)?
        }
        (None, Some(name)) => match name.as_str() {
            "synthetic" => ModelConfig::synthetic(),
            "toy" => ModelConfig::toy(),
            "apnea-ecg" => ModelConfig::apnea_ecg(0),
            "apnea-ecg-context2" => ModelConfig::apnea_ecg(2),
            "mit-psg-context2" => ModelConfig::mit_psg(2),
            other => {
                return Err(Error::Config(format!(
                    "unknown builtin model `{other}` (synthetic, toy, apnea-ecg, apnea-ecg-context2, mit-psg-context2)"
                )))
            }
        },
        _ => {
            return Err(Error::Config(
                "manifest [model] needs exactly one of `config` or `builtin`".into(),
            ))
        }
    };

    let augment = match &parsed.train.augment {
        None => None,
        Some(a) => {
            let ops: Result<Vec<AugmentOp>> = a.ops.iter().map(|s| s.parse()).collect();
            Some(AugmentationSpec {
                ops: ops?,
                max_shift_fraction: a.max_shift_fraction,
            })
        }
    };
    let train = TrainConfig {
        batch_size: parsed.train.batch_size,
        epochs: parsed.train.epochs,
        lr_initial: parsed.train.lr_initial,
        lr_after: parsed.train.lr_after,
        drop_epoch: parsed.train.drop_epoch,
        lambda: parsed.train.lambda,
        tau: parsed.train.tau,
        l2_coeff: parsed.train.l2_coeff,
        augment,
        seed: parsed.train.seed,
        context: 0, // filled from the dataset manifest at load time
        eval_every: parsed.train.eval_every,
        ce_only: parsed.train.ce_only,
        sc_include_anchor: parsed.train.sc_include_anchor,
        class_weights: parsed.train.class_weights,
    };
    train.validate()?;
    Ok(ExperimentManifest {
        dataset: resolve(&parsed.data.dataset),
        eval_dataset: parsed.data.eval_dataset.as_deref().map(resolve),
        model_config,
        train,
        config_hash: sha256_hex(&raw_text),
        raw_text,
    })
}
