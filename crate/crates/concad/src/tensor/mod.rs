//! Dense f64 tensors and trainable parameters.
//!
//! The engine is deliberately minimal: row-major `Vec<f64>` storage,
//! explicit shapes, hand-derived backward kernels per layer (see [`ops`]),
//! and no computation graph. The network is a fixed DAG, so each layer's
//! backward is called explicitly in reverse order by the model code.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod optim;

use crate::error::{Error, Result};

/// Forward-pass mode. Training enables dropout masks and batch statistics;
/// inference is a pure deterministic function of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Dense multi-dimensional array of f64 in row-major order, with an
/// optional same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated zero-filled on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Accumulate into the gradient buffer.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        let buf = self.grad_mut();
        for (b, gi) in buf.iter_mut().zip(g) {
            *b += gi;
        }
    }

    /// Every value finite, or a numeric error naming the context.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!(
                "non-finite value in {context} (shape {:?})",
                self.shape
            )))
        }
    }
}

/// Trainable tensor plus AMSGrad optimizer state.
///
/// The gradient lives on `value`; `first_moment`, `second_moment` and the
/// running elementwise maximum of the second moment share its shape. The
/// maximum never decreases across steps.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
    pub(crate) second_moment_max: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Parameter {
        let n = value.len();
        Parameter {
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            second_moment_max: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn second_moment_max(&self) -> &[f64] {
        &self.second_moment_max
    }

    pub fn zero_grad(&mut self) {
        self.value.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut t = Tensor::zeros(&[2, 2]);
        assert!(t.grad().is_none());
        t.grad_mut()[3] = 1.5;
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0, 1.5]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let mut t = Tensor::zeros(&[2]);
        assert!(t.ensure_finite("test").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(t.ensure_finite("test").is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(3.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s.data()[0], 3.0);
    }
}
