//! Layer forward/backward kernels.
//!
//! Conventions, fixed across the crate:
//!
//! - Activations are `[batch, time, channels]`, row-major.
//! - Convolution is cross-correlation (no kernel flip) with valid padding:
//!   `time_out = (time - k) / stride + 1`.
//! - Max-pool windows are non-overlapping; a trailing remainder of the
//!   time axis is dropped; gradient goes to the first maximal element.
//! - Dropout is inverted: survivors are scaled by `1/(1-rate)` at train
//!   time so inference is the identity.
//! - Batch norm normalizes per channel over batch and time with the
//!   biased batch variance; running statistics use momentum blending
//!   `running = momentum * running + (1 - momentum) * batch`.
//!
//! Every forward that training needs returns the cache its backward
//! consumes. Forwards never mutate shared state: batch-norm returns its
//! running-statistics update for the caller to apply explicitly.

use super::{Mode, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

// ---------------------------------------------------------------------------
// conv1d

/// `input [batch, time, ch_in]`, `kernel [k, ch_in, ch_out]`, `bias [ch_out]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::Config("conv1d: stride must be >= 1".into()));
    }
    if input.rank() != 3 || kernel.rank() != 3 || bias.rank() != 1 {
        return Err(Error::shape(
            "conv1d",
            format!(
                "expected input rank 3, kernel rank 3, bias rank 1; got {:?} {:?} {:?}",
                input.shape(),
                kernel.shape(),
                bias.shape()
            ),
        ));
    }
    let (b, t, cin) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, kcin, cout) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    if kcin != cin {
        return Err(Error::shape(
            "conv1d",
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if bias.dim(0) != cout {
        return Err(Error::shape(
            "conv1d",
            format!("bias length {} != {} output channels", bias.dim(0), cout),
        ));
    }
    if t < k {
        return Err(Error::shape(
            "conv1d",
            format!("time axis {t} shorter than kernel {k}"),
        ));
    }
    let t_out = (t - k) / stride + 1;
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![0.0; b * t_out * cout];
    for bi in 0..b {
        for to in 0..t_out {
            let o_base = (bi * t_out + to) * cout;
            out[o_base..o_base + cout].copy_from_slice(bias.data());
            let t0 = to * stride;
            for dt in 0..k {
                let i_base = (bi * t + t0 + dt) * cin;
                for ci in 0..cin {
                    let xv = x[i_base + ci];
                    let w_base = (dt * cin + ci) * cout;
                    for co in 0..cout {
                        out[o_base + co] += xv * w[w_base + co];
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(&[b, t_out, cout], out)?;
    out.ensure_finite("conv1d output")?;
    Ok(out)
}

/// Gradients for input, kernel and bias given `grad_out [batch, t_out, ch_out]`.
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, t, cin) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, _, cout) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    let t_out = (t - k) / stride + 1;
    if grad_out.shape() != [b, t_out, cout] {
        return Err(Error::shape(
            "conv1d_backward",
            format!(
                "grad_out shape {:?} != [{b}, {t_out}, {cout}]",
                grad_out.shape()
            ),
        ));
    }
    let x = input.data();
    let w = kernel.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for bi in 0..b {
        for to in 0..t_out {
            let o_base = (bi * t_out + to) * cout;
            for co in 0..cout {
                db[co] += g[o_base + co];
            }
            let t0 = to * stride;
            for dt in 0..k {
                let i_base = (bi * t + t0 + dt) * cin;
                for ci in 0..cin {
                    let xv = x[i_base + ci];
                    let w_base = (dt * cin + ci) * cout;
                    let mut acc = 0.0;
                    for co in 0..cout {
                        let gv = g[o_base + co];
                        acc += gv * w[w_base + co];
                        dw[w_base + co] += gv * xv;
                    }
                    dx[i_base + ci] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(kernel.shape(), dw)?,
        Tensor::from_vec(&[cout], db)?,
    ))
}

// ---------------------------------------------------------------------------
// batch norm

/// Running statistics of a batch-norm layer. `running_var` stores the
/// biased batch variance, matching what normalization uses.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> BatchNormState {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Momentum-blended statistics produced by a train-mode forward; the
/// caller stores them back into [`BatchNormState`] after the step.
#[derive(Debug, Clone)]
pub struct BatchNormUpdate {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    /// x - mean, per element (train mode only).
    centered: Vec<f64>,
    /// 1 / sqrt(var + eps) per channel.
    inv_std: Vec<f64>,
    /// Elements per channel (batch * time).
    n: usize,
    shape: Vec<usize>,
}

/// Normalize `input [batch, time, ch]` per channel. Train mode uses batch
/// statistics and returns the running-stats update; infer mode is a
/// deterministic affine map built from the stored running statistics.
pub fn batchnorm1d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache, Option<BatchNormUpdate>)> {
    if input.rank() != 3 {
        return Err(Error::shape(
            "batchnorm1d",
            format!("expected [batch, time, ch], got {:?}", input.shape()),
        ));
    }
    let (b, t, c) = (input.dim(0), input.dim(1), input.dim(2));
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm1d",
            format!(
                "gamma {:?} / beta {:?} must be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if state.eps <= 0.0 {
        return Err(Error::Config("batchnorm1d: epsilon must be > 0".into()));
    }
    let n = b * t;
    let x = input.data();
    let mut out = vec![0.0; x.len()];

    match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::shape(
                    "batchnorm1d",
                    format!("train mode needs batch*time > 1 per channel, got {n}"),
                ));
            }
            let mut mean = vec![0.0; c];
            for row in 0..n {
                for ci in 0..c {
                    mean[ci] += x[row * c + ci];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; c];
            let mut centered = vec![0.0; x.len()];
            for row in 0..n {
                for ci in 0..c {
                    let d = x[row * c + ci] - mean[ci];
                    centered[row * c + ci] = d;
                    var[ci] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
            for row in 0..n {
                for ci in 0..c {
                    out[row * c + ci] =
                        gamma.data()[ci] * centered[row * c + ci] * inv_std[ci] + beta.data()[ci];
                }
            }
            let m = state.momentum;
            let update = BatchNormUpdate {
                running_mean: state
                    .running_mean
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| m * r + (1.0 - m) * b)
                    .collect(),
                running_var: state
                    .running_var
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| m * r + (1.0 - m) * b)
                    .collect(),
            };
            let out = Tensor::from_vec(input.shape(), out)?;
            out.ensure_finite("batchnorm1d output")?;
            Ok((
                out,
                BatchNormCache {
                    mode,
                    centered,
                    inv_std,
                    n,
                    shape: input.shape().to_vec(),
                },
                Some(update),
            ))
        }
        Mode::Infer => {
            let inv_std: Vec<f64> = state
                .running_var
                .iter()
                .map(|v| 1.0 / (v + state.eps).sqrt())
                .collect();
            for row in 0..n {
                for ci in 0..c {
                    out[row * c + ci] = gamma.data()[ci]
                        * (x[row * c + ci] - state.running_mean[ci])
                        * inv_std[ci]
                        + beta.data()[ci];
                }
            }
            let out = Tensor::from_vec(input.shape(), out)?;
            out.ensure_finite("batchnorm1d output")?;
            Ok((
                out,
                BatchNormCache {
                    mode,
                    centered: Vec::new(),
                    inv_std,
                    n,
                    shape: input.shape().to_vec(),
                },
                None,
            ))
        }
    }
}

/// Gradients for input, gamma and beta.
pub fn batchnorm1d_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = *cache.shape.last().unwrap();
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::shape(
            "batchnorm1d_backward",
            format!("grad_out {:?} != input {:?}", grad_out.shape(), cache.shape),
        ));
    }
    let g = grad_out.data();
    let n = cache.n;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; g.len()];

    match cache.mode {
        Mode::Train => {
            // Standard train-mode backward through mean and variance.
            let mut sum_g = vec![0.0; c]; // sum of dxhat per channel
            let mut sum_g_xhat = vec![0.0; c]; // sum of dxhat * xhat
            for row in 0..n {
                for ci in 0..c {
                    let idx = row * c + ci;
                    let xhat = cache.centered[idx] * cache.inv_std[ci];
                    dgamma[ci] += g[idx] * xhat;
                    dbeta[ci] += g[idx];
                    let dxhat = g[idx] * gamma.data()[ci];
                    sum_g[ci] += dxhat;
                    sum_g_xhat[ci] += dxhat * xhat;
                }
            }
            let nf = n as f64;
            for row in 0..n {
                for ci in 0..c {
                    let idx = row * c + ci;
                    let xhat = cache.centered[idx] * cache.inv_std[ci];
                    let dxhat = g[idx] * gamma.data()[ci];
                    dx[idx] = cache.inv_std[ci] / nf
                        * (nf * dxhat - sum_g[ci] - xhat * sum_g_xhat[ci]);
                }
            }
        }
        Mode::Infer => {
            // Affine in x; dgamma/dbeta are not meaningful without the
            // normalized activations cached, so only dx is produced here
            // (infer mode never trains).
            for row in 0..n {
                for ci in 0..c {
                    let idx = row * c + ci;
                    dx[idx] = g[idx] * gamma.data()[ci] * cache.inv_std[ci];
                    dbeta[ci] += g[idx];
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&cache.shape, dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// max pool

/// Non-overlapping max pool over the time axis of `[batch, time, ch]`.
/// Returns output and the flat input index of each window maximum
/// (first occurrence on ties).
pub fn maxpool1d(input: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    if pool == 0 {
        return Err(Error::Config("maxpool1d: pool must be >= 1".into()));
    }
    if input.rank() != 3 {
        return Err(Error::shape(
            "maxpool1d",
            format!("expected [batch, time, ch], got {:?}", input.shape()),
        ));
    }
    let (b, t, c) = (input.dim(0), input.dim(1), input.dim(2));
    if t < pool {
        return Err(Error::shape(
            "maxpool1d",
            format!("time axis {t} shorter than pool {pool}"),
        ));
    }
    let t_out = t / pool;
    let x = input.data();
    let mut out = vec![0.0; b * t_out * c];
    let mut argmax = vec![0usize; out.len()];
    for bi in 0..b {
        for to in 0..t_out {
            for ci in 0..c {
                let mut best_idx = (bi * t + to * pool) * c + ci;
                let mut best = x[best_idx];
                for dt in 1..pool {
                    let idx = (bi * t + to * pool + dt) * c + ci;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                let o = (bi * t_out + to) * c + ci;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(&[b, t_out, c], out)?, argmax))
}

pub fn maxpool1d_backward(
    argmax: &[usize],
    input_shape: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool1d_backward",
            format!("grad_out has {} values, argmax {}", grad_out.len(), argmax.len()),
        ));
    }
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (o, &src) in argmax.iter().enumerate() {
        dx[src] += grad_out.data()[o];
    }
    Tensor::from_vec(input_shape, dx)
}

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout. Train mode zeroes each element with probability
/// `rate` and scales survivors by `1/(1-rate)`; infer mode is the
/// identity. The returned mask holds the applied per-element factor.
pub fn dropout(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: Option<&mut RngStream>,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout: rate must be in [0, 1), got {rate}"
        )));
    }
    match mode {
        Mode::Infer => Ok((input.clone(), None)),
        Mode::Train => {
            if rate == 0.0 {
                return Ok((input.clone(), Some(vec![1.0; input.len()])));
            }
            let rng = rng.ok_or_else(|| {
                Error::Config("dropout: train mode requires an rng stream".into())
            })?;
            let scale = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..input.len())
                .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
                .collect();
            let data: Vec<f64> = input
                .data()
                .iter()
                .zip(&mask)
                .map(|(x, m)| x * m)
                .collect();
            Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
        }
    }
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Result<Tensor> {
    if mask.len() != grad_out.len() {
        return Err(Error::shape(
            "dropout_backward",
            format!("mask {} vs grad {}", mask.len(), grad_out.len()),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(g, m)| g * m)
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

// ---------------------------------------------------------------------------
// dense

/// Affine map: `input [batch, n] x weight [n, m] + bias [m]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 {
        return Err(Error::shape(
            "dense",
            format!(
                "expected input [b, n], weight [n, m], bias [m]; got {:?} {:?} {:?}",
                input.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let (b, n) = (input.dim(0), input.dim(1));
    let (wn, m) = (weight.dim(0), weight.dim(1));
    if n != wn || bias.dim(0) != m {
        return Err(Error::shape(
            "dense",
            format!(
                "inner dims disagree: input [{b}, {n}], weight [{wn}, {m}], bias [{}]",
                bias.dim(0)
            ),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; b * m];
    for bi in 0..b {
        let o_base = bi * m;
        out[o_base..o_base + m].copy_from_slice(bias.data());
        for ni in 0..n {
            let xv = x[bi * n + ni];
            let w_base = ni * m;
            for mi in 0..m {
                out[o_base + mi] += xv * w[w_base + mi];
            }
        }
    }
    let out = Tensor::from_vec(&[b, m], out)?;
    out.ensure_finite("dense output")?;
    Ok(out)
}

pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, n) = (input.dim(0), input.dim(1));
    let m = weight.dim(1);
    if grad_out.shape() != [b, m] {
        return Err(Error::shape(
            "dense_backward",
            format!("grad_out {:?} != [{b}, {m}]", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; b * n];
    let mut dw = vec![0.0; n * m];
    let mut db = vec![0.0; m];
    for bi in 0..b {
        for mi in 0..m {
            db[mi] += g[bi * m + mi];
        }
        for ni in 0..n {
            let xv = x[bi * n + ni];
            let mut acc = 0.0;
            for mi in 0..m {
                let gv = g[bi * m + mi];
                acc += gv * w[ni * m + mi];
                dw[ni * m + mi] += gv * xv;
            }
            dx[bi * n + ni] = acc;
        }
    }
    Ok((
        Tensor::from_vec(&[b, n], dx)?,
        Tensor::from_vec(&[n, m], dw)?,
        Tensor::from_vec(&[m], db)?,
    ))
}

// ---------------------------------------------------------------------------
// activations

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

/// Subgradient convention: zero at exactly zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Iterate lanes along `axis`: calls `f(base_offset, stride)` once per lane.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, len);
        }
    }
}

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= input.rank() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} out of range for {:?}", input.shape()),
        ));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for_each_lane(input.shape(), axis, |base, stride, len| {
        let mut max = f64::NEG_INFINITY;
        for j in 0..len {
            max = max.max(x[base + j * stride]);
        }
        let mut sum = 0.0;
        for j in 0..len {
            let e = (x[base + j * stride] - max).exp();
            out[base + j * stride] = e;
            sum += e;
        }
        for j in 0..len {
            out[base + j * stride] /= sum;
        }
    });
    let out = Tensor::from_vec(input.shape(), out)?;
    out.ensure_finite("softmax output")?;
    Ok(out)
}

/// Backward through softmax given its output: `dx = s * (g - <g, s>)` per lane.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?} vs {:?}", output.shape(), grad_out.shape()),
        ));
    }
    let s = output.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; s.len()];
    for_each_lane(output.shape(), axis, |base, stride, len| {
        let mut dot = 0.0;
        for j in 0..len {
            dot += s[base + j * stride] * g[base + j * stride];
        }
        for j in 0..len {
            let idx = base + j * stride;
            dx[idx] = s[idx] * (g[idx] - dot);
        }
    });
    Tensor::from_vec(output.shape(), dx)
}

/// Norm below which a lane counts as the zero vector (an error state).
pub const L2_NORM_FLOOR: f64 = 1e-30;

/// Scale each lane along `axis` to unit Euclidean norm.
pub fn l2_normalize(input: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= input.rank() {
        return Err(Error::shape(
            "l2_normalize",
            format!("axis {axis} out of range for {:?}", input.shape()),
        ));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let mut zero_lane = false;
    for_each_lane(input.shape(), axis, |base, stride, len| {
        let mut sq = 0.0;
        for j in 0..len {
            sq += x[base + j * stride] * x[base + j * stride];
        }
        let norm = sq.sqrt();
        if norm < L2_NORM_FLOOR {
            zero_lane = true;
            return;
        }
        for j in 0..len {
            out[base + j * stride] = x[base + j * stride] / norm;
        }
    });
    if zero_lane {
        return Err(Error::Numeric(
            "l2_normalize: zero vector has no direction".into(),
        ));
    }
    Tensor::from_vec(input.shape(), out)
}

/// Backward through l2_normalize: `dx = (g - y <y, g>) / ||x||` per lane.
pub fn l2_normalize_backward(input: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "l2_normalize_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut zero_lane = false;
    for_each_lane(input.shape(), axis, |base, stride, len| {
        let mut sq = 0.0;
        for j in 0..len {
            sq += x[base + j * stride] * x[base + j * stride];
        }
        let norm = sq.sqrt();
        if norm < L2_NORM_FLOOR {
            zero_lane = true;
            return;
        }
        let mut dot = 0.0;
        for j in 0..len {
            dot += x[base + j * stride] / norm * g[base + j * stride];
        }
        for j in 0..len {
            let idx = base + j * stride;
            dx[idx] = (g[idx] - x[idx] / norm * dot) / norm;
        }
    });
    if zero_lane {
        return Err(Error::Numeric(
            "l2_normalize_backward: zero vector".into(),
        ));
    }
    Tensor::from_vec(input.shape(), dx)
}
