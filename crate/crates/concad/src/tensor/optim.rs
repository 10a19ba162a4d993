//! AMSGrad parameter updates.
//!
//! Bias-corrected variant: the running elementwise maximum of the second
//! moment is taken before the update and then bias-corrected, so the
//! effective step size never grows from a shrinking second moment. An
//! optional L2 penalty is folded into the gradient (`g += 2 * wd * theta`)
//! for the parameter groups the caller selects.

use super::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AmsGradConfig {
    pub fn with_lr(lr: f64) -> AmsGradConfig {
        AmsGradConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "amsgrad: betas must be in [0, 1), got {} / {}",
                self.beta1, self.beta2
            )));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("amsgrad: bad lr {}", self.lr)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("amsgrad: epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// One AMSGrad step on a single parameter. `weight_decay_l2 > 0` adds the
/// L2 term to the gradient before the moment updates.
pub fn amsgrad_step(
    param: &mut Parameter,
    cfg: &AmsGradConfig,
    weight_decay_l2: f64,
) -> Result<()> {
    cfg.validate()?;
    let n = param.value.len();
    if param.value.grad().is_none() {
        return Err(Error::Numeric(
            "amsgrad_step: parameter has no gradient".into(),
        ));
    }
    param.step += 1;
    let t = param.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let theta = param.value.data()[i];
        let mut g = param.value.grad().unwrap()[i];
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "amsgrad_step: non-finite gradient at index {i}"
            )));
        }
        if weight_decay_l2 > 0.0 {
            g += 2.0 * weight_decay_l2 * theta;
        }
        let m = cfg.beta1 * param.first_moment[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * param.second_moment[i] + (1.0 - cfg.beta2) * g * g;
        param.first_moment[i] = m;
        param.second_moment[i] = v;
        if v > param.second_moment_max[i] {
            param.second_moment_max[i] = v;
        }
        let m_hat = m / bc1;
        let v_hat = param.second_moment_max[i] / bc2;
        let next = theta - cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        if !next.is_finite() {
            return Err(Error::Numeric(format!(
                "amsgrad_step: non-finite parameter at index {i}"
            )));
        }
        param.value.data_mut()[i] = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> Parameter {
        Parameter::new(Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // m_hat = 1, v_hat = 1 after bias correction, so the update is
        // -lr / (1 + eps).
        let mut p = scalar_param(0.0);
        p.value.grad_mut()[0] = 1.0;
        let cfg = AmsGradConfig::with_lr(0.005);
        amsgrad_step(&mut p, &cfg, 0.0).unwrap();
        assert!((p.value.data()[0] + 0.005).abs() < 1e-8, "{}", p.value.data()[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = scalar_param(1.25);
        for _ in 0..10 {
            p.value.grad_mut().iter_mut().for_each(|g| *g = 0.0);
            amsgrad_step(&mut p, &AmsGradConfig::with_lr(0.005), 0.0).unwrap();
        }
        assert_eq!(p.value.data()[0], 1.25);
    }

    #[test]
    fn minimizes_quadratic() {
        // f(theta) = theta^2 from theta=1 at lr 0.005.
        let mut p = scalar_param(1.0);
        let cfg = AmsGradConfig::with_lr(0.005);
        for _ in 0..2000 {
            p.zero_grad();
            let theta = p.value.data()[0];
            p.value.grad_mut()[0] = 2.0 * theta;
            amsgrad_step(&mut p, &cfg, 0.0).unwrap();
        }
        assert!(p.value.data()[0].abs() < 0.01, "{}", p.value.data()[0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_param(0.0);
        assert!(amsgrad_step(&mut p, &AmsGradConfig::with_lr(0.01), 0.0).is_err());
    }

    #[test]
    fn second_moment_max_never_decreases() {
        let mut p = scalar_param(0.0);
        let cfg = AmsGradConfig::with_lr(0.01);
        let grads = [1.0, 5.0, 0.1, 0.0, -3.0, 0.01];
        let mut last = 0.0;
        for g in grads {
            p.zero_grad();
            p.value.grad_mut()[0] = g;
            amsgrad_step(&mut p, &cfg, 0.0).unwrap();
            let vhat = p.second_moment_max()[0];
            assert!(vhat >= last, "vhat decreased: {vhat} < {last}");
            last = vhat;
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = scalar_param(1.0);
        let cfg = AmsGradConfig::with_lr(0.01);
        for _ in 0..500 {
            p.zero_grad();
            p.value.grad_mut()[0] = 0.0; // decay term only
            amsgrad_step(&mut p, &cfg, 0.1).unwrap();
        }
        assert!(p.value.data()[0].abs() < 0.5, "{}", p.value.data()[0]);
    }
}
