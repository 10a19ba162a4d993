//! Central finite-difference gradient verification.

use super::Tensor;
use crate::error::{Error, Result};

/// Default relative step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the analytic gradient of a scalar-valued function against
/// central finite differences at `point`, returning the maximum relative
/// error over all coordinates.
///
/// The closure receives the evaluation point and a flag saying whether the
/// analytic gradient is needed; it must return the value, plus the
/// gradient whenever the flag is set. It must be deterministic at the
/// point (run dropout in infer mode or re-seed its rng on every call).
pub fn grad_check<F>(f: &mut F, point: &Tensor, step: f64) -> Result<f64>
where
    F: FnMut(&Tensor, bool) -> Result<(f64, Option<Tensor>)>,
{
    let (v0, grad) = f(point, true)?;
    if !v0.is_finite() {
        return Err(Error::Numeric("grad_check: non-finite value at point".into()));
    }
    let grad = grad.ok_or_else(|| {
        Error::Numeric("grad_check: closure did not return an analytic gradient".into())
    })?;
    if grad.shape() != point.shape() {
        return Err(Error::shape(
            "grad_check",
            format!("gradient {:?} vs point {:?}", grad.shape(), point.shape()),
        ));
    }
    let mut x = point.clone();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = step * orig.abs().max(1.0);
        x.data_mut()[i] = orig + h;
        let (vp, _) = f(&x, false)?;
        x.data_mut()[i] = orig - h;
        let (vm, _) = f(&x, false)?;
        x.data_mut()[i] = orig;
        if !vp.is_finite() || !vm.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite value near coordinate {i}"
            )));
        }
        let fd = (vp - vm) / (2.0 * h);
        let err = relative_error(fd, grad.data()[i]);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let point = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            &mut |x: &Tensor, _| {
                let v = x.data().iter().map(|v| v * v).sum();
                let g = Tensor::from_vec(&[2], x.data().iter().map(|v| 2.0 * v).collect())?;
                Ok((v, Some(g)))
            },
            &point,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn relu_sum_matches_subgradient_away_from_zero() {
        let point = Tensor::from_vec(&[4], vec![-1.5, 0.3, 2.0, -0.2]).unwrap();
        let err = grad_check(
            &mut |x: &Tensor, _| {
                let v = x.data().iter().map(|v| v.max(0.0)).sum();
                let g = Tensor::from_vec(
                    &[4],
                    x.data().iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect(),
                )?;
                Ok((v, Some(g)))
            },
            &point,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let point = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let err = grad_check(
            &mut |x: &Tensor, _| {
                Ok((x.data()[0] * x.data()[0], Some(Tensor::from_vec(&[1], vec![5.0])?)))
            },
            &point,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err > 0.5, "should flag the wrong gradient, err {err}");
    }

    #[test]
    fn rejects_non_finite_values() {
        let point = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let res = grad_check(
            &mut |_: &Tensor, _| Ok((f64::NAN, Some(Tensor::zeros(&[1])))),
            &point,
            DEFAULT_FD_STEP,
        );
        assert!(res.is_err());
    }
}
