//! Projection and classifier heads on the fused context vector.
//!
//! The projection head is a single dense layer whose output is scaled to
//! the unit hypersphere; it exists only for the contrastive term and is
//! dropped at prediction time. The classifier is a dense stack with ReLU
//! between layers and a softmax over the two classes at the end.

use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::init::he_normal_init;
use crate::tensor::ops::{
    dense, dense_backward, l2_normalize, l2_normalize_backward, relu, relu_backward, softmax,
    softmax_backward,
};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl DenseLayer {
    pub fn init(n_in: usize, n_out: usize, rng: &mut RngStream) -> Result<DenseLayer> {
        Ok(DenseLayer {
            weight: Parameter::new(he_normal_init(&[n_in, n_out], n_in, rng)?),
            bias: Parameter::new(Tensor::zeros(&[n_out])),
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        dense(input, &self.weight.value, &self.bias.value)
    }

    /// Accumulates weight/bias grads; returns the input gradient.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (dx, dw, db) = dense_backward(input, &self.weight.value, grad_out)?;
        self.weight.value.accumulate_grad(dw.data());
        self.bias.value.accumulate_grad(db.data());
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub layer: DenseLayer,
}

pub struct ProjectionCache {
    input: Tensor,
    pre_norm: Tensor,
}

impl ProjectionHead {
    pub fn init(k: usize, proj_dim: usize, rng: &mut RngStream) -> Result<ProjectionHead> {
        Ok(ProjectionHead {
            layer: DenseLayer::init(k, proj_dim, rng)?,
        })
    }

    pub fn forward(&self, context: &Tensor) -> Result<(Tensor, ProjectionCache)> {
        let pre_norm = self.layer.forward(context)?;
        let z = l2_normalize(&pre_norm, 1)?;
        Ok((
            z,
            ProjectionCache {
                input: context.clone(),
                pre_norm,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ProjectionCache, grad_z: &Tensor) -> Result<Tensor> {
        let d_pre = l2_normalize_backward(&cache.pre_norm, grad_z, 1)?;
        self.layer.backward(&cache.input, &d_pre)
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    /// Hidden layers (ReLU after each) followed by the output layer.
    pub layers: Vec<DenseLayer>,
}

pub struct ClassifierCache {
    /// Input to each dense layer.
    inputs: Vec<Tensor>,
    /// Pre-ReLU activations of the hidden layers.
    pre_relu: Vec<Tensor>,
    probs: Tensor,
}

impl Classifier {
    pub fn init(k: usize, hidden: &[usize], n_classes: usize, rng: &mut RngStream) -> Result<Classifier> {
        let mut layers = Vec::new();
        let mut n_in = k;
        for &h in hidden {
            layers.push(DenseLayer::init(n_in, h, rng)?);
            n_in = h;
        }
        layers.push(DenseLayer::init(n_in, n_classes, rng)?);
        Ok(Classifier { layers })
    }

    pub fn forward(&self, context: &Tensor) -> Result<(Tensor, ClassifierCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_relu = Vec::new();
        let mut x = context.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let out = layer.forward(&x)?;
            if i + 1 < self.layers.len() {
                pre_relu.push(out.clone());
                x = relu(&out);
            } else {
                x = out;
            }
        }
        let probs = softmax(&x, 1)?;
        Ok((
            probs.clone(),
            ClassifierCache {
                inputs,
                pre_relu,
                probs,
            },
        ))
    }

    /// Backward from the gradient on the probabilities.
    pub fn backward(&mut self, cache: &ClassifierCache, grad_probs: &Tensor) -> Result<Tensor> {
        let mut g = softmax_backward(&cache.probs, grad_probs, 1)?;
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = relu_backward(&cache.pre_relu[i], &g)?;
            }
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;

    #[test]
    fn projection_rows_are_unit_norm() {
        let mut rng = RngStream::new(71);
        let head = ProjectionHead::init(6, 4, &mut rng).unwrap();
        let input = Tensor::from_vec(&[5, 6], (0..30).map(|_| rng.normal()).collect()).unwrap();
        let (z, _) = head.forward(&input).unwrap();
        for bi in 0..5 {
            let norm: f64 = z.data()[bi * 4..(bi + 1) * 4]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "row {bi} norm {norm}");
        }
    }

    #[test]
    fn classifier_rows_sum_to_one() {
        let mut rng = RngStream::new(72);
        let clf = Classifier::init(6, &[8], 2, &mut rng).unwrap();
        let input = Tensor::from_vec(&[4, 6], (0..24).map(|_| rng.normal()).collect()).unwrap();
        let (probs, _) = clf.forward(&input).unwrap();
        for bi in 0..4 {
            let sum: f64 = probs.data()[bi * 2..(bi + 1) * 2].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for p in &probs.data()[bi * 2..(bi + 1) * 2] {
                assert!(*p > 0.0 && *p < 1.0);
            }
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = RngStream::new(73);
        let mut proj = ProjectionHead::init(5, 3, &mut rng).unwrap();
        let mut clf = Classifier::init(5, &[4], 2, &mut rng).unwrap();
        let input = Tensor::from_vec(&[3, 5], (0..15).map(|_| rng.normal()).collect()).unwrap();

        let fold_z: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let (z, zcache) = proj.forward(&input).unwrap();
        let fold_zt = Tensor::from_vec(z.shape(), fold_z.clone()).unwrap();
        let d_in_proj = proj.backward(&zcache, &fold_zt).unwrap();
        let err = grad_check(
            &mut |p: &Tensor, _| {
                let (z, _) = proj.forward(p)?;
                Ok((
                    z.data().iter().zip(&fold_z).map(|(a, b)| a * b).sum(),
                    Some(d_in_proj.clone()),
                ))
            },
            &input,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "projection input grad err {err}");

        let fold_p: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (probs, ccache) = clf.forward(&input).unwrap();
        let fold_pt = Tensor::from_vec(probs.shape(), fold_p.clone()).unwrap();
        let d_in_clf = clf.backward(&ccache, &fold_pt).unwrap();
        let err = grad_check(
            &mut |p: &Tensor, _| {
                let (probs, _) = clf.forward(p)?;
                Ok((
                    probs.data().iter().zip(&fold_p).map(|(a, b)| a * b).sum(),
                    Some(d_in_clf.clone()),
                ))
            },
            &input,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "classifier input grad err {err}");
    }
}
