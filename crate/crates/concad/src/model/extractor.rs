//! Per-modality feature extractor: a stack of convolution blocks.
//!
//! Each block is Conv -> BatchNorm -> ReLU, optionally followed by
//! MaxPool and Dropout; the final block carries neither. Forward passes
//! never mutate the extractor: batch-norm running-statistics updates are
//! collected in the cache and applied by the caller after the step.

use super::config::ExtractorSpec;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::init::he_normal_init;
use crate::tensor::ops::{
    batchnorm1d, batchnorm1d_backward, conv1d, conv1d_backward, dropout, dropout_backward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, BatchNormState, BatchNormUpdate,
};
use crate::tensor::{Mode, Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub kernel: Parameter,
    pub bias: Parameter,
    pub gamma: Parameter,
    pub beta: Parameter,
    pub bn: BatchNormState,
    pub stride: usize,
    pub pool: Option<usize>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct Extractor {
    pub spec: ExtractorSpec,
    pub blocks: Vec<ConvBlock>,
}

struct BlockCache {
    input: Tensor,
    bn_cache: crate::tensor::ops::BatchNormCache,
    bn_update: Option<BatchNormUpdate>,
    pre_relu: Tensor,
    post_relu_shape: Vec<usize>,
    pool_argmax: Option<Vec<usize>>,
    dropout_mask: Option<Vec<f64>>,
}

pub struct ExtractorCache {
    blocks: Vec<BlockCache>,
}

impl Extractor {
    pub fn init(spec: &ExtractorSpec, rng: &mut RngStream) -> Result<Extractor> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut in_ch = 1usize;
        for b in &spec.blocks {
            let fan_in = b.kernel * in_ch;
            blocks.push(ConvBlock {
                kernel: Parameter::new(he_normal_init(
                    &[b.kernel, in_ch, b.filters],
                    fan_in,
                    rng,
                )?),
                bias: Parameter::new(Tensor::zeros(&[b.filters])),
                gamma: Parameter::new(Tensor::filled(&[b.filters], 1.0)),
                beta: Parameter::new(Tensor::zeros(&[b.filters])),
                bn: BatchNormState::new(b.filters),
                stride: b.stride,
                pool: b.pool,
                dropout: b.dropout,
            });
            in_ch = b.filters;
        }
        Ok(Extractor {
            spec: spec.clone(),
            blocks,
        })
    }

    /// Forward through the stack. Train mode needs an rng when any block
    /// has dropout.
    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        mut rng: Option<&mut RngStream>,
    ) -> Result<(Tensor, ExtractorCache)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let block_input = x;
            let conv_out = conv1d(&block_input, &block.kernel.value, &block.bias.value, block.stride)?;
            let (bn_out, bn_cache, bn_update) =
                batchnorm1d(&conv_out, &block.gamma.value, &block.beta.value, &block.bn, mode)?;
            let act = relu(&bn_out);
            let post_relu_shape = act.shape().to_vec();
            let (pooled, pool_argmax) = match block.pool {
                Some(p) => {
                    let (o, a) = maxpool1d(&act, p)?;
                    (o, Some(a))
                }
                None => (act.clone(), None),
            };
            let (dropped, dropout_mask) = if block.dropout > 0.0 {
                dropout(&pooled, block.dropout, mode, rng.as_deref_mut())?
            } else {
                (pooled, None)
            };
            caches.push(BlockCache {
                input: block_input,
                bn_cache,
                bn_update,
                pre_relu: bn_out,
                post_relu_shape,
                pool_argmax,
                dropout_mask,
            });
            x = dropped;
        }
        Ok((x, ExtractorCache { blocks: caches }))
    }

    /// Backward through the stack, accumulating parameter gradients.
    /// Returns the gradient with respect to the extractor input.
    pub fn backward(&mut self, cache: &ExtractorCache, grad_out: &Tensor) -> Result<Tensor> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::shape(
                "extractor_backward",
                "cache does not match block count".to_string(),
            ));
        }
        let mut g = grad_out.clone();
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            if let Some(mask) = &bc.dropout_mask {
                g = dropout_backward(mask, &g)?;
            }
            if let Some(argmax) = &bc.pool_argmax {
                g = maxpool1d_backward(argmax, &bc.post_relu_shape, &g)?;
            }
            g = relu_backward(&bc.pre_relu, &g)?;
            let (d_bn_in, d_gamma, d_beta) = batchnorm1d_backward(&bc.bn_cache, &block.gamma.value, &g)?;
            block.gamma.value.accumulate_grad(d_gamma.data());
            block.beta.value.accumulate_grad(d_beta.data());
            let (d_in, d_kernel, d_bias) =
                conv1d_backward(&bc.input, &block.kernel.value, block.stride, &d_bn_in)?;
            block.kernel.value.accumulate_grad(d_kernel.data());
            block.bias.value.accumulate_grad(d_bias.data());
            g = d_in;
        }
        Ok(g)
    }

    /// Store the batch statistics collected by a train-mode forward.
    pub fn apply_batch_stats(&mut self, cache: &ExtractorCache) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let Some(u) = &bc.bn_update {
                block.bn.running_mean.clone_from(&u.running_mean);
                block.bn.running_var.clone_from(&u.running_var);
            }
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut impl FnMut(String, &Parameter)) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("{prefix}.block{i}.conv.kernel"), &b.kernel);
            f(format!("{prefix}.block{i}.conv.bias"), &b.bias);
            f(format!("{prefix}.block{i}.bn.gamma"), &b.gamma);
            f(format!("{prefix}.block{i}.bn.beta"), &b.beta);
        }
    }

    pub fn visit_params_mut(
        &mut self,
        prefix: &str,
        f: &mut impl FnMut(String, ParamKind, &mut Parameter),
    ) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(
                format!("{prefix}.block{i}.conv.kernel"),
                ParamKind::ConvKernel,
                &mut b.kernel,
            );
            f(
                format!("{prefix}.block{i}.conv.bias"),
                ParamKind::Other,
                &mut b.bias,
            );
            f(format!("{prefix}.block{i}.bn.gamma"), ParamKind::Other, &mut b.gamma);
            f(format!("{prefix}.block{i}.bn.beta"), ParamKind::Other, &mut b.beta);
        }
    }
}

/// Distinguishes convolution kernels (which take the extractor L2
/// penalty) from normalization and bias parameters (which do not).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvKernel,
    Other,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::tensor::gradcheck::grad_check;

    #[test]
    fn constant_input_gives_time_constant_output() {
        // All-zero input with zero conv bias: after batch norm (infer,
        // fresh stats) and ReLU the output depends only on the channel.
        let cfg = ModelConfig::toy();
        let mut rng = RngStream::new(3);
        let ex = Extractor::init(&cfg.ecg, &mut rng).unwrap();
        let input = Tensor::zeros(&[2, cfg.ecg_len, 1]);
        let (out, _) = ex.forward(&input, Mode::Infer, None).unwrap();
        let (m, n) = cfg.ecg.output_shape(cfg.ecg_len).unwrap();
        assert_eq!(out.shape(), &[2, m, n]);
        for bi in 0..2 {
            for ci in 0..n {
                let first = out.data()[(bi * m) * n + ci];
                for t in 1..m {
                    assert!((out.data()[(bi * m + t) * n + ci] - first).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_shape_matches_spec_recurrence() {
        let cfg = ModelConfig::synthetic();
        let mut rng = RngStream::new(5);
        let ex = Extractor::init(&cfg.ecg, &mut rng).unwrap();
        let input = Tensor::zeros(&[1, cfg.ecg_len, 1]);
        let (out, _) = ex.forward(&input, Mode::Infer, None).unwrap();
        let (m, n) = cfg.ecg.output_shape(cfg.ecg_len).unwrap();
        assert_eq!(out.shape(), &[1, m, n]);
    }

    #[test]
    fn two_block_gradients_match_finite_differences() {
        // Train-mode forward with deterministic dropout masks (the rng is
        // re-seeded inside the closure on every evaluation).
        let spec = ExtractorSpec::parse("ConvBlock(2,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(3,2,1)")
            .unwrap();
        let mut rng = RngStream::new(21);
        let mut ex = Extractor::init(&spec, &mut rng).unwrap();
        let input = Tensor::from_vec(&[2, 12, 1], (0..24).map(|_| rng.normal()).collect()).unwrap();
        let (out, cache) = ex
            .forward(&input, Mode::Train, Some(&mut RngStream::new(777)))
            .unwrap();
        let fold: Vec<f64> = (0..out.len()).map(|_| rng.normal()).collect();
        let fold_t = Tensor::from_vec(out.shape(), fold.clone()).unwrap();
        let d_input = ex.backward(&cache, &fold_t).unwrap();

        let err = grad_check(
            &mut |p: &Tensor, _| {
                let (o, _) = ex.forward(p, Mode::Train, Some(&mut RngStream::new(777)))?;
                Ok((
                    o.data().iter().zip(&fold).map(|(a, b)| a * b).sum(),
                    Some(d_input.clone()),
                ))
            },
            &input,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "extractor input grad err {err}");

        // And one parameter tensor: the first conv kernel.
        let kernel0 = ex.blocks[0].kernel.value.clone();
        let d_kernel0 = Tensor::from_vec(
            kernel0.shape(),
            ex.blocks[0].kernel.value.grad().unwrap().to_vec(),
        )
        .unwrap();
        let err = grad_check(
            &mut |p: &Tensor, _| {
                let mut probe = ex.clone();
                probe.blocks[0].kernel.value = p.clone();
                let (o, _) = probe.forward(&input, Mode::Train, Some(&mut RngStream::new(777)))?;
                Ok((
                    o.data().iter().zip(&fold).map(|(a, b)| a * b).sum(),
                    Some(d_kernel0.clone()),
                ))
            },
            &kernel0,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "extractor kernel grad err {err}");
    }

    #[test]
    fn train_mode_without_rng_fails_when_dropout_present() {
        let cfg = ModelConfig::toy();
        let mut rng = RngStream::new(3);
        let ex = Extractor::init(&cfg.ecg, &mut rng).unwrap();
        let input = Tensor::zeros(&[1, cfg.ecg_len, 1]);
        assert!(ex.forward(&input, Mode::Train, None).is_err());
    }
}
