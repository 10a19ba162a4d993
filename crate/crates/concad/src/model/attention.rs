//! Cross attention over the three modality embeddings.
//!
//! Each extractor output `x' in [batch, m_i, n_i]` is reduced to a shared
//! k-vector by a bilinear form `x'' = u^T x' V` (time pooling by `u`,
//! channel mixing by `V`). A per-modality scalar score `w . x'' + b`
//! feeds a three-way softmax, and the context vector is the resulting
//! convex combination of the three `x''`.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::init::he_normal_init;
use crate::tensor::ops::{softmax, softmax_backward};
use crate::tensor::{Parameter, Tensor};

pub const MODALITIES: usize = 3;

#[derive(Debug, Clone)]
pub struct CrossAttention {
    /// Time-pooling vector per modality, length m_i.
    pub u: [Parameter; MODALITIES],
    /// Channel projection per modality, n_i x k.
    pub v: [Parameter; MODALITIES],
    /// Score vector per modality, length k.
    pub w: [Parameter; MODALITIES],
    /// Score offset per modality.
    pub b: [Parameter; MODALITIES],
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[batch, 3]`, rows on the simplex.
    pub alpha: Tensor,
    /// `[batch, k]` fused context vectors.
    pub context: Tensor,
    /// Per-modality `[batch, k]` projections.
    pub per_modality: [Tensor; MODALITIES],
}

pub struct AttentionCache {
    inputs: [Tensor; MODALITIES],
    /// Time-pooled rows `r = u^T x'`, `[batch, n_i]`.
    pooled: [Tensor; MODALITIES],
    projected: [Tensor; MODALITIES],
    alpha: Tensor,
}

impl CrossAttention {
    /// `dims[i] = (m_i, n_i)` per modality, `k` the shared width.
    pub fn init(dims: [(usize, usize); MODALITIES], k: usize, rng: &mut RngStream) -> Result<CrossAttention> {
        if k == 0 {
            return Err(Error::Config("attention dim must be >= 1".into()));
        }
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut w = Vec::new();
        let mut b = Vec::new();
        for &(m, n) in &dims {
            if m == 0 || n == 0 {
                return Err(Error::Config(format!(
                    "attention input dims must be positive, got ({m}, {n})"
                )));
            }
            u.push(Parameter::new(he_normal_init(&[m], m, rng)?));
            v.push(Parameter::new(he_normal_init(&[n, k], n, rng)?));
            w.push(Parameter::new(he_normal_init(&[k], k, rng)?));
            b.push(Parameter::new(Tensor::zeros(&[1])));
        }
        let arr = |mut xs: Vec<Parameter>| -> [Parameter; MODALITIES] {
            let c = xs.pop().unwrap();
            let bq = xs.pop().unwrap();
            let a = xs.pop().unwrap();
            [a, bq, c]
        };
        Ok(CrossAttention {
            u: arr(u),
            v: arr(v),
            w: arr(w),
            b: arr(b),
            k,
        })
    }

    /// `xs[i]` shaped `[batch, m_i, n_i]`, all with the same batch size.
    pub fn forward(&self, xs: [&Tensor; MODALITIES]) -> Result<(AttentionOutput, AttentionCache)> {
        let batch = xs[0].dim(0);
        for (i, x) in xs.iter().enumerate() {
            if x.rank() != 3 || x.dim(0) != batch {
                return Err(Error::shape(
                    "cross_attention",
                    format!("modality {i} has shape {:?}", x.shape()),
                ));
            }
            if x.dim(1) != self.u[i].value.dim(0) || x.dim(2) != self.v[i].value.dim(0) {
                return Err(Error::shape(
                    "cross_attention",
                    format!(
                        "modality {i}: input [{}, {}] does not match u[{}] / V[{}, {}]",
                        x.dim(1),
                        x.dim(2),
                        self.u[i].value.dim(0),
                        self.v[i].value.dim(0),
                        self.k
                    ),
                ));
            }
        }
        let k = self.k;
        let mut pooled: Vec<Tensor> = Vec::with_capacity(MODALITIES);
        let mut projected: Vec<Tensor> = Vec::with_capacity(MODALITIES);
        let mut logits = vec![0.0; batch * MODALITIES];
        for i in 0..MODALITIES {
            let x = xs[i];
            let (m, n) = (x.dim(1), x.dim(2));
            let u = self.u[i].value.data();
            let v = self.v[i].value.data();
            let w = self.w[i].value.data();
            let b0 = self.b[i].value.data()[0];
            let mut r = vec![0.0; batch * n];
            let mut p = vec![0.0; batch * k];
            for bi in 0..batch {
                for ti in 0..m {
                    let uv = u[ti];
                    let base = (bi * m + ti) * n;
                    for ni in 0..n {
                        r[bi * n + ni] += uv * x.data()[base + ni];
                    }
                }
                for ni in 0..n {
                    let rv = r[bi * n + ni];
                    let v_base = ni * k;
                    for ki in 0..k {
                        p[bi * k + ki] += rv * v[v_base + ki];
                    }
                }
                let mut score = b0;
                for ki in 0..k {
                    score += w[ki] * p[bi * k + ki];
                }
                logits[bi * MODALITIES + i] = score;
            }
            pooled.push(Tensor::from_vec(&[batch, n], r)?);
            projected.push(Tensor::from_vec(&[batch, k], p)?);
        }
        let logits = Tensor::from_vec(&[batch, MODALITIES], logits)?;
        let alpha = softmax(&logits, 1)?;
        let mut context = vec![0.0; batch * k];
        for bi in 0..batch {
            for (i, proj) in projected.iter().enumerate() {
                let a = alpha.data()[bi * MODALITIES + i];
                for ki in 0..k {
                    context[bi * k + ki] += a * proj.data()[bi * k + ki];
                }
            }
        }
        let context = Tensor::from_vec(&[batch, k], context)?;
        context.ensure_finite("cross_attention context")?;
        let as_array = |xs: &[Tensor]| -> [Tensor; MODALITIES] {
            [xs[0].clone(), xs[1].clone(), xs[2].clone()]
        };
        Ok((
            AttentionOutput {
                alpha: alpha.clone(),
                context,
                per_modality: as_array(&projected),
            },
            AttentionCache {
                inputs: [xs[0].clone(), xs[1].clone(), xs[2].clone()],
                pooled: as_array(&pooled),
                projected: as_array(&projected),
                alpha,
            },
        ))
    }

    /// Backward from the context gradient; accumulates parameter grads and
    /// returns per-modality input gradients.
    pub fn backward(
        &mut self,
        cache: &AttentionCache,
        grad_context: &Tensor,
    ) -> Result<[Tensor; MODALITIES]> {
        let batch = cache.alpha.dim(0);
        let k = self.k;
        if grad_context.shape() != [batch, k] {
            return Err(Error::shape(
                "cross_attention_backward",
                format!("grad_context {:?} != [{batch}, {k}]", grad_context.shape()),
            ));
        }
        // d alpha_i = <d context, x''_i>, then back through the softmax.
        let mut d_alpha = vec![0.0; batch * MODALITIES];
        for bi in 0..batch {
            for i in 0..MODALITIES {
                let p = cache.projected[i].data();
                let mut dot = 0.0;
                for ki in 0..k {
                    dot += grad_context.data()[bi * k + ki] * p[bi * k + ki];
                }
                d_alpha[bi * MODALITIES + i] = dot;
            }
        }
        let d_alpha = Tensor::from_vec(&[batch, MODALITIES], d_alpha)?;
        let d_logits = softmax_backward(&cache.alpha, &d_alpha, 1)?;

        let mut d_inputs: Vec<Tensor> = Vec::with_capacity(MODALITIES);
        for i in 0..MODALITIES {
            let x = &cache.inputs[i];
            let (m, n) = (x.dim(1), x.dim(2));
            let u = self.u[i].value.data();
            let v = self.v[i].value.data();
            let w = self.w[i].value.data();
            let r = cache.pooled[i].data();
            let p = cache.projected[i].data();
            let alpha = cache.alpha.data();

            let mut d_u = vec![0.0; m];
            let mut d_v = vec![0.0; n * k];
            let mut d_w = vec![0.0; k];
            let mut d_b = 0.0;
            let mut d_x = vec![0.0; batch * m * n];
            for bi in 0..batch {
                let dl = d_logits.data()[bi * MODALITIES + i];
                d_b += dl;
                // d x''_i = alpha_i * d context + d logit_i * w.
                let mut d_p = vec![0.0; k];
                let a = alpha[bi * MODALITIES + i];
                for ki in 0..k {
                    d_p[ki] = a * grad_context.data()[bi * k + ki] + dl * w[ki];
                    d_w[ki] += dl * p[bi * k + ki];
                }
                // Through the channel projection: d r = V d x'', dV += r (x) d x''.
                let mut d_r = vec![0.0; n];
                for ni in 0..n {
                    let rv = r[bi * n + ni];
                    let v_base = ni * k;
                    let mut acc = 0.0;
                    for ki in 0..k {
                        acc += v[v_base + ki] * d_p[ki];
                        d_v[v_base + ki] += rv * d_p[ki];
                    }
                    d_r[ni] = acc;
                }
                // Through the time pooling: du += X d_r, dX = u (x) d_r.
                for ti in 0..m {
                    let base = (bi * m + ti) * n;
                    let uv = u[ti];
                    let mut acc = 0.0;
                    for ni in 0..n {
                        acc += x.data()[base + ni] * d_r[ni];
                        d_x[base + ni] = uv * d_r[ni];
                    }
                    d_u[ti] += acc;
                }
            }
            self.u[i].value.accumulate_grad(&d_u);
            self.v[i].value.accumulate_grad(&d_v);
            self.w[i].value.accumulate_grad(&d_w);
            self.b[i].value.accumulate_grad(&[d_b]);
            d_inputs.push(Tensor::from_vec(&[batch, m, n], d_x)?);
        }
        Ok([
            d_inputs[0].clone(),
            d_inputs[1].clone(),
            d_inputs[2].clone(),
        ])
    }

    pub fn visit_params(&self, f: &mut impl FnMut(String, &Parameter)) {
        for (i, name) in ["ecg", "rri", "rpe"].iter().enumerate() {
            f(format!("attention.{name}.u"), &self.u[i]);
            f(format!("attention.{name}.v"), &self.v[i]);
            f(format!("attention.{name}.w"), &self.w[i]);
            f(format!("attention.{name}.b"), &self.b[i]);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(String, &mut Parameter)) {
        for (i, name) in ["ecg", "rri", "rpe"].iter().enumerate() {
            f(format!("attention.{name}.u"), &mut self.u[i]);
            f(format!("attention.{name}.v"), &mut self.v[i]);
            f(format!("attention.{name}.w"), &mut self.w[i]);
            f(format!("attention.{name}.b"), &mut self.b[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;

    fn small_attention(rng: &mut RngStream) -> (CrossAttention, [Tensor; 3]) {
        let dims = [(3, 2), (2, 2), (4, 3)];
        let att = CrossAttention::init(dims, 2, rng).unwrap();
        let batch = 2;
        let mk = |m: usize, n: usize, rng: &mut RngStream| {
            Tensor::from_vec(&[batch, m, n], (0..batch * m * n).map(|_| rng.normal()).collect())
                .unwrap()
        };
        let xs = [mk(3, 2, rng), mk(2, 2, rng), mk(4, 3, rng)];
        (att, xs)
    }

    #[test]
    fn zero_scores_give_uniform_alpha_and_mean_context() {
        let mut rng = RngStream::new(61);
        let (mut att, xs) = small_attention(&mut rng);
        for i in 0..3 {
            att.w[i].value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            att.b[i].value.data_mut()[0] = 0.0;
        }
        let (out, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for a in out.alpha.data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        for bi in 0..2 {
            for ki in 0..2 {
                let mean = (out.per_modality[0].data()[bi * 2 + ki]
                    + out.per_modality[1].data()[bi * 2 + ki]
                    + out.per_modality[2].data()[bi * 2 + ki])
                    / 3.0;
                assert!((out.context.data()[bi * 2 + ki] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_two_offset_gives_half_quarter_quarter() {
        let mut rng = RngStream::new(62);
        let (mut att, xs) = small_attention(&mut rng);
        for i in 0..3 {
            att.w[i].value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            att.b[i].value.data_mut()[0] = if i == 0 { 2.0f64.ln() } else { 0.0 };
        }
        let (out, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for bi in 0..2 {
            let row = &out.alpha.data()[bi * 3..(bi + 1) * 3];
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[1] - 0.25).abs() < 1e-12);
            assert!((row[2] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn large_offset_selects_single_modality() {
        let mut rng = RngStream::new(63);
        let (mut att, xs) = small_attention(&mut rng);
        for i in 0..3 {
            att.w[i].value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            att.b[i].value.data_mut()[0] = if i == 1 { 50.0 } else { 0.0 };
        }
        let (out, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for bi in 0..2 {
            let row = &out.alpha.data()[bi * 3..(bi + 1) * 3];
            assert!((row[1] - 1.0).abs() < 1e-9);
            assert!(row[0] < 1e-9 && row[2] < 1e-9);
        }
    }

    #[test]
    fn shifting_all_offsets_leaves_alpha_unchanged() {
        let mut rng = RngStream::new(64);
        let (mut att, xs) = small_attention(&mut rng);
        let (before, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for i in 0..3 {
            att.b[i].value.data_mut()[0] += 17.25;
        }
        let (after, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for (a, b) in before.alpha.data().iter().zip(after.alpha.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    /// Scalar-loop re-derivation of the whole attention output.
    fn naive_context(att: &CrossAttention, xs: [&Tensor; 3], bi: usize) -> Vec<f64> {
        let k = att.k;
        let mut proj = vec![vec![0.0; k]; 3];
        let mut scores = vec![0.0; 3];
        for i in 0..3 {
            let x = xs[i];
            let (m, n) = (x.dim(1), x.dim(2));
            for ki in 0..k {
                let mut acc = 0.0;
                for ti in 0..m {
                    for ni in 0..n {
                        acc += att.u[i].value.data()[ti]
                            * x.data()[(bi * m + ti) * n + ni]
                            * att.v[i].value.data()[ni * k + ki];
                    }
                }
                proj[i][ki] = acc;
            }
            scores[i] = att.b[i].value.data()[0]
                + (0..k).map(|ki| att.w[i].value.data()[ki] * proj[i][ki]).sum::<f64>();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mut c = vec![0.0; k];
        for i in 0..3 {
            for ki in 0..k {
                c[ki] += exps[i] / sum * proj[i][ki];
            }
        }
        c
    }

    #[test]
    fn matches_naive_loop_and_finite_differences() {
        let mut rng = RngStream::new(65);
        let (mut att, xs) = small_attention(&mut rng);
        let (out, cache) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
        for bi in 0..2 {
            let naive = naive_context(&att, [&xs[0], &xs[1], &xs[2]], bi);
            for ki in 0..2 {
                assert!(
                    (out.context.data()[bi * 2 + ki] - naive[ki]).abs() < 1e-12,
                    "batch {bi} dim {ki}"
                );
            }
        }

        // Gradient of a fixed folding of the context w.r.t. one input and
        // every parameter family.
        let fold: Vec<f64> = (0..out.context.len()).map(|_| rng.normal()).collect();
        let fold_t = Tensor::from_vec(out.context.shape(), fold.clone()).unwrap();
        let d_inputs = att.backward(&cache, &fold_t).unwrap();

        let value = |att: &CrossAttention, xs: [&Tensor; 3]| -> f64 {
            let (o, _) = att.forward(xs).unwrap();
            o.context.data().iter().zip(&fold).map(|(a, b)| a * b).sum()
        };

        for i in 0..3 {
            let err = grad_check(
                &mut |p: &Tensor, _| {
                    let mut probe = [xs[0].clone(), xs[1].clone(), xs[2].clone()];
                    probe[i] = p.clone();
                    Ok((
                        value(&att, [&probe[0], &probe[1], &probe[2]]),
                        Some(d_inputs[i].clone()),
                    ))
                },
                &xs[i],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "input {i} grad err {err}");
        }

        for i in 0..3 {
            for which in 0..4 {
                let (point, grad) = {
                    let p = match which {
                        0 => &att.u[i],
                        1 => &att.v[i],
                        2 => &att.w[i],
                        _ => &att.b[i],
                    };
                    (
                        p.value.clone(),
                        Tensor::from_vec(p.value.shape(), p.value.grad().unwrap().to_vec())
                            .unwrap(),
                    )
                };
                let err = grad_check(
                    &mut |p: &Tensor, _| {
                        let mut probe = att.clone();
                        match which {
                            0 => probe.u[i].value = p.clone(),
                            1 => probe.v[i].value = p.clone(),
                            2 => probe.w[i].value = p.clone(),
                            _ => probe.b[i].value = p.clone(),
                        }
                        Ok((value(&probe, [&xs[0], &xs[1], &xs[2]]), Some(grad.clone())))
                    },
                    &point,
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-6, "modality {i} param {which} grad err {err}");
            }
        }
    }

    #[test]
    fn context_stays_in_convex_hull() {
        let mut rng = RngStream::new(66);
        for _ in 0..50 {
            let (att, xs) = small_attention(&mut rng);
            let (out, _) = att.forward([&xs[0], &xs[1], &xs[2]]).unwrap();
            for bi in 0..2 {
                let row = &out.alpha.data()[bi * 3..(bi + 1) * 3];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for a in row {
                    assert!(*a > 0.0 && *a < 1.0);
                }
            }
        }
    }
}
