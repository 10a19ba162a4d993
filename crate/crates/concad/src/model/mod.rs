//! The full network: three extractors, cross attention, projection and
//! classifier heads, plus input standardization and checkpointing.

pub mod attention;
pub mod config;
pub mod extractor;
pub mod heads;

pub use attention::{AttentionOutput, CrossAttention};
pub use config::{ConvBlockSpec, ExtractorSpec, ModelConfig};
pub use extractor::{Extractor, ParamKind};
pub use heads::{Classifier, DenseLayer, ProjectionHead};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::segments::SegmentBundle;
use crate::tensor::checkpoint::{load_checkpoint, save_checkpoint};
use crate::tensor::{Mode, Parameter, Tensor};
use std::path::Path;

/// Optimizer grouping: only extractor convolution kernels take the L2
/// penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    ExtractorKernel,
    ExtractorOther,
    Attention,
    Projection,
    Classifier,
}

/// Per-modality z-score statistics, estimated on the training set and
/// applied to every input before the extractors.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub ecg: (f64, f64),
    pub rri: (f64, f64),
    pub rpe: (f64, f64),
}

impl Standardizer {
    pub fn identity() -> Standardizer {
        Standardizer {
            ecg: (0.0, 1.0),
            rri: (0.0, 1.0),
            rpe: (0.0, 1.0),
        }
    }

    /// Pooled mean/std per modality over a set of bundles. A degenerate
    /// (constant) modality falls back to unit scale.
    pub fn fit(bundles: &[SegmentBundle]) -> Result<Standardizer> {
        if bundles.is_empty() {
            return Err(Error::Data("standardizer: no bundles".into()));
        }
        let stats = |values: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
            let mut n = 0.0;
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for v in values {
                n += 1.0;
                let d = v - mean;
                mean += d / n;
                m2 += d * (v - mean);
            }
            let var = if n > 1.0 { m2 / n } else { 0.0 };
            let std = var.sqrt();
            (mean, if std < 1e-12 { 1.0 } else { std })
        };
        Ok(Standardizer {
            ecg: stats(&mut bundles.iter().flat_map(|b| b.ecg.iter().copied())),
            rri: stats(&mut bundles.iter().flat_map(|b| b.rri.iter().copied())),
            rpe: stats(&mut bundles.iter().flat_map(|b| b.rpe.iter().copied())),
        })
    }

    fn apply(values: &[f64], (mean, std): (f64, f64)) -> Vec<f64> {
        values.iter().map(|v| (v - mean) / std).collect()
    }
}

/// A batch of standardized input tensors.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub ecg: Tensor,
    pub rri: Tensor,
    pub rpe: Tensor,
    pub labels: Vec<usize>,
}

impl ModelInput {
    pub fn from_bundles(
        bundles: &[&SegmentBundle],
        standardizer: &Standardizer,
        config: &ModelConfig,
    ) -> Result<ModelInput> {
        if bundles.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let n = bundles.len();
        let mut ecg = Vec::with_capacity(n * config.ecg_len);
        let mut rri = Vec::with_capacity(n * config.rri_len);
        let mut rpe = Vec::with_capacity(n * config.rri_len);
        let mut labels = Vec::with_capacity(n);
        for b in bundles {
            if b.ecg.len() != config.ecg_len
                || b.rri.len() != config.rri_len
                || b.rpe.len() != config.rri_len
            {
                return Err(Error::Data(format!(
                    "bundle {}:{} has lengths ecg {} / rri {} / rpe {}, model expects {} / {} / {}",
                    b.record_id,
                    b.epoch_index,
                    b.ecg.len(),
                    b.rri.len(),
                    b.rpe.len(),
                    config.ecg_len,
                    config.rri_len,
                    config.rri_len,
                )));
            }
            ecg.extend(Standardizer::apply(&b.ecg, standardizer.ecg));
            rri.extend(Standardizer::apply(&b.rri, standardizer.rri));
            rpe.extend(Standardizer::apply(&b.rpe, standardizer.rpe));
            labels.push(b.label.index());
        }
        Ok(ModelInput {
            ecg: Tensor::from_vec(&[n, config.ecg_len, 1], ecg)?,
            rri: Tensor::from_vec(&[n, config.rri_len, 1], rri)?,
            rpe: Tensor::from_vec(&[n, config.rri_len, 1], rpe)?,
            labels,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.ecg.dim(0)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Unit-norm projections, present when the projection head ran.
    pub z: Option<Tensor>,
    /// `[batch, 2]` class probabilities.
    pub probs: Tensor,
    pub attention: AttentionOutput,
}

pub struct ModelCache {
    ecg: extractor::ExtractorCache,
    rri: extractor::ExtractorCache,
    rpe: extractor::ExtractorCache,
    attention: attention::AttentionCache,
    projection: Option<heads::ProjectionCache>,
    classifier: heads::ClassifierCache,
}

#[derive(Debug, Clone)]
pub struct ConcadModel {
    pub config: ModelConfig,
    pub ecg: Extractor,
    pub rri: Extractor,
    pub rpe: Extractor,
    pub attention: CrossAttention,
    pub projection: ProjectionHead,
    pub classifier: Classifier,
    pub standardizer: Standardizer,
}

impl ConcadModel {
    /// He-normal weights, zero biases, unit batch-norm scale.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<ConcadModel> {
        config.validate()?;
        let ecg = Extractor::init(&config.ecg, rng)?;
        let rri = Extractor::init(&config.rri, rng)?;
        let rpe = Extractor::init(&config.rpe, rng)?;
        let dims = [
            config.ecg.output_shape(config.ecg_len)?,
            config.rri.output_shape(config.rri_len)?,
            config.rpe.output_shape(config.rri_len)?,
        ];
        let attention = CrossAttention::init(dims, config.attention_dim, rng)?;
        let projection = ProjectionHead::init(config.attention_dim, config.proj_dim, rng)?;
        let classifier =
            Classifier::init(config.attention_dim, &config.clf_hidden, config.n_classes, rng)?;
        Ok(ConcadModel {
            config: config.clone(),
            ecg,
            rri,
            rpe,
            attention,
            projection,
            classifier,
            standardizer: Standardizer::identity(),
        })
    }

    /// Full forward pass. `with_projection` selects whether the
    /// contrastive projection head runs (training) or is skipped
    /// (prediction).
    pub fn forward(
        &self,
        input: &ModelInput,
        mode: Mode,
        mut rng: Option<&mut RngStream>,
        with_projection: bool,
    ) -> Result<(ForwardOutput, ModelCache)> {
        let (x_ecg, ecg_cache) = self.ecg.forward(&input.ecg, mode, rng.as_deref_mut())?;
        let (x_rri, rri_cache) = self.rri.forward(&input.rri, mode, rng.as_deref_mut())?;
        let (x_rpe, rpe_cache) = self.rpe.forward(&input.rpe, mode, rng.as_deref_mut())?;
        let (att_out, att_cache) = self.attention.forward([&x_ecg, &x_rri, &x_rpe])?;
        let (z, proj_cache) = if with_projection {
            let (z, c) = self.projection.forward(&att_out.context)?;
            (Some(z), Some(c))
        } else {
            (None, None)
        };
        let (probs, clf_cache) = self.classifier.forward(&att_out.context)?;
        Ok((
            ForwardOutput {
                z,
                probs,
                attention: att_out,
            },
            ModelCache {
                ecg: ecg_cache,
                rri: rri_cache,
                rpe: rpe_cache,
                attention: att_cache,
                projection: proj_cache,
                classifier: clf_cache,
            },
        ))
    }

    /// Backward pass from loss gradients on the probabilities and (when
    /// the projection ran) on the projections. Accumulates parameter
    /// gradients.
    pub fn backward(
        &mut self,
        cache: &ModelCache,
        grad_probs: &Tensor,
        grad_z: Option<&Tensor>,
    ) -> Result<()> {
        let mut d_context = self.classifier.backward(&cache.classifier, grad_probs)?;
        if let Some(gz) = grad_z {
            let proj_cache = cache.projection.as_ref().ok_or_else(|| {
                Error::Config(
                    "backward received grad_z but the projection head did not run".into(),
                )
            })?;
            let d_from_proj = self.projection.backward(proj_cache, gz)?;
            for (a, b) in d_context.data_mut().iter_mut().zip(d_from_proj.data()) {
                *a += b;
            }
        }
        let [d_ecg, d_rri, d_rpe] = self.attention.backward(&cache.attention, &d_context)?;
        self.ecg.backward(&cache.ecg, &d_ecg)?;
        self.rri.backward(&cache.rri, &d_rri)?;
        self.rpe.backward(&cache.rpe, &d_rpe)?;
        Ok(())
    }

    /// Store batch-norm statistics gathered by a train-mode forward.
    pub fn apply_batch_stats(&mut self, cache: &ModelCache) {
        self.ecg.apply_batch_stats(&cache.ecg);
        self.rri.apply_batch_stats(&cache.rri);
        self.rpe.apply_batch_stats(&cache.rpe);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, p| p.zero_grad());
    }

    pub fn visit_params(&self, f: &mut impl FnMut(String, ParamGroup, &Parameter)) {
        let mut g = |prefix: &str, ex: &Extractor| {
            ex.visit_params(prefix, &mut |name, p| {
                let group = if name.ends_with("conv.kernel") {
                    ParamGroup::ExtractorKernel
                } else {
                    ParamGroup::ExtractorOther
                };
                f(name, group, p);
            });
        };
        g("extractor.ecg", &self.ecg);
        g("extractor.rri", &self.rri);
        g("extractor.rpe", &self.rpe);
        self.attention
            .visit_params(&mut |name, p| f(name, ParamGroup::Attention, p));
        f(
            "projection.weight".to_string(),
            ParamGroup::Projection,
            &self.projection.layer.weight,
        );
        f(
            "projection.bias".to_string(),
            ParamGroup::Projection,
            &self.projection.layer.bias,
        );
        for (i, layer) in self.classifier.layers.iter().enumerate() {
            f(
                format!("classifier.layer{i}.weight"),
                ParamGroup::Classifier,
                &layer.weight,
            );
            f(
                format!("classifier.layer{i}.bias"),
                ParamGroup::Classifier,
                &layer.bias,
            );
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(String, ParamGroup, &mut Parameter)) {
        let mut g = |prefix: &str, ex: &mut Extractor| {
            ex.visit_params_mut(prefix, &mut |name, kind, p| {
                let group = match kind {
                    ParamKind::ConvKernel => ParamGroup::ExtractorKernel,
                    ParamKind::Other => ParamGroup::ExtractorOther,
                };
                f(name, group, p);
            });
        };
        g("extractor.ecg", &mut self.ecg);
        g("extractor.rri", &mut self.rri);
        g("extractor.rpe", &mut self.rpe);
        self.attention
            .visit_params_mut(&mut |name, p| f(name, ParamGroup::Attention, p));
        f(
            "projection.weight".to_string(),
            ParamGroup::Projection,
            &mut self.projection.layer.weight,
        );
        f(
            "projection.bias".to_string(),
            ParamGroup::Projection,
            &mut self.projection.layer.bias,
        );
        for (i, layer) in self.classifier.layers.iter_mut().enumerate() {
            f(
                format!("classifier.layer{i}.weight"),
                ParamGroup::Classifier,
                &mut layer.weight,
            );
            f(
                format!("classifier.layer{i}.bias"),
                ParamGroup::Classifier,
                &mut layer.bias,
            );
        }
    }

    /// Trainable parameter count; prediction drops the projection head.
    pub fn param_count(&self, include_projection: bool) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, group, p| {
            if include_projection || group != ParamGroup::Projection {
                count += p.len();
            }
        });
        count
    }

    // -- persistence ---------------------------------------------------

    /// Non-trainable state tensors: batch-norm running statistics and the
    /// standardizer, by name.
    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (prefix, ex) in [
            ("extractor.ecg", &self.ecg),
            ("extractor.rri", &self.rri),
            ("extractor.rpe", &self.rpe),
        ] {
            for (i, b) in ex.blocks.iter().enumerate() {
                out.push((
                    format!("{prefix}.block{i}.bn.running_mean"),
                    Tensor::from_vec(&[b.bn.running_mean.len()], b.bn.running_mean.clone())
                        .unwrap(),
                ));
                out.push((
                    format!("{prefix}.block{i}.bn.running_var"),
                    Tensor::from_vec(&[b.bn.running_var.len()], b.bn.running_var.clone()).unwrap(),
                ));
            }
        }
        for (name, (mean, std)) in [
            ("standardizer.ecg", self.standardizer.ecg),
            ("standardizer.rri", self.standardizer.rri),
            ("standardizer.rpe", self.standardizer.rpe),
        ] {
            out.push((
                name.to_string(),
                Tensor::from_vec(&[2], vec![mean, std]).unwrap(),
            ));
        }
        out
    }

    /// Write a checkpoint: every parameter tensor in visit order, then the
    /// state tensors. The metadata embeds the architecture config so the
    /// model can be rebuilt from the file alone; `extra_meta` fields are
    /// merged in.
    pub fn save(&self, path: &Path, extra_meta: &serde_json::Value) -> Result<()> {
        let mut named: Vec<(String, Tensor)> = Vec::new();
        self.visit_params(&mut |name, _, p| named.push((name, p.value.clone())));
        named.extend(self.state_tensors());
        let mut meta = serde_json::json!({
            "model_config": self.config.to_toml_string(),
        });
        if let (Some(obj), Some(extra)) = (meta.as_object_mut(), extra_meta.as_object()) {
            for (k, v) in extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_checkpoint(path, &meta.to_string(), &refs)
    }

    /// Rebuild a model from a checkpoint written by [`ConcadModel::save`].
    pub fn load(path: &Path) -> Result<(ConcadModel, serde_json::Value)> {
        let (meta_str, tensors) = load_checkpoint(path)?;
        let meta: serde_json::Value = serde_json::from_str(&meta_str)
            .map_err(|e| Error::Data(format!("checkpoint metadata is not JSON: {e}")))?;
        let config_toml = meta
            .get("model_config")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Data("checkpoint metadata lacks model_config".into()))?;
        let config = ModelConfig::from_toml_str(config_toml)?;
        let mut model = ConcadModel::init(&config, &mut RngStream::new(0))?;

        let map: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut missing: Vec<String> = Vec::new();
        model.visit_params_mut(&mut |name, _, p| match map.get(&name) {
            Some(t) if t.shape() == p.value.shape() => {
                p.value = t.clone();
            }
            Some(t) => missing.push(format!(
                "{name} (shape {:?} vs {:?})",
                t.shape(),
                p.value.shape()
            )),
            None => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "checkpoint {} does not match the model: {}",
                path.display(),
                missing.join(", ")
            )));
        }
        for (prefix, ex) in [
            ("extractor.ecg", &mut model.ecg),
            ("extractor.rri", &mut model.rri),
            ("extractor.rpe", &mut model.rpe),
        ] {
            for (i, b) in ex.blocks.iter_mut().enumerate() {
                for (field, target) in [
                    ("running_mean", &mut b.bn.running_mean),
                    ("running_var", &mut b.bn.running_var),
                ] {
                    let name = format!("{prefix}.block{i}.bn.{field}");
                    let t = map
                        .get(&name)
                        .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
                    *target = t.data().to_vec();
                }
            }
        }
        for (name, target) in [
            ("standardizer.ecg", &mut model.standardizer.ecg),
            ("standardizer.rri", &mut model.standardizer.rri),
            ("standardizer.rpe", &mut model.standardizer.rpe),
        ] {
            let t = map
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
            *target = (t.data()[0], t.data()[1]);
        }
        Ok((model, meta))
    }
}

/// Run the full network on a batch of bundles.
pub fn model_forward(
    model: &ConcadModel,
    bundles: &[&SegmentBundle],
    mode: Mode,
    rng: Option<&mut RngStream>,
    with_projection: bool,
) -> Result<(ForwardOutput, ModelCache, ModelInput)> {
    let input = ModelInput::from_bundles(bundles, &model.standardizer, &model.config)?;
    let (out, cache) = model.forward(&input, mode, rng, with_projection)?;
    Ok((out, cache, input))
}
