//! Training objectives: cross-entropy, supervised contrastive, and their
//! hybrid combination.
//!
//! The contrastive term operates on L2-normalized projections. For an
//! anchor `i`, the positives are the other batch rows with the same label;
//! each positive contributes `-log softmax_over_non_anchors(sim/tau)` and
//! the anchor averages its positives. Anchors with no positive are
//! skipped, and the total is the mean over contributing anchors. Setting
//! `include_anchor` switches to the variant where the anchor's own
//! self-similarity joins the positive set and the log is taken of the
//! ratio of summed exponentials, normalized by the same-label count and
//! summed over anchors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the cross-entropy term; `1 - lambda` weights the
    /// contrastive term.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Optional per-class weights for cross-entropy.
    pub class_weights: Option<[f64; 2]>,
    /// Use the self-inclusive contrastive variant.
    pub sc_include_anchor: bool,
}

impl LossConfig {
    pub fn new(lambda: f64, tau: f64) -> LossConfig {
        LossConfig {
            lambda,
            tau,
            class_weights: None,
            sc_include_anchor: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Probabilities are clamped at this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub value: f64,
    /// Gradient with respect to the probabilities, `[N, 2]`.
    pub grad_probs: Tensor,
}

/// Mean over the batch of `-log p(true class)`, optionally class-weighted.
pub fn cross_entropy(
    probs: &Tensor,
    labels: &[usize],
    weights: Option<[f64; 2]>,
) -> Result<CrossEntropyOutput> {
    if probs.rank() != 2 || probs.dim(1) != 2 {
        return Err(Error::shape(
            "cross_entropy",
            format!("expected probs [N, 2], got {:?}", probs.shape()),
        ));
    }
    let n = probs.dim(0);
    if n == 0 {
        return Err(Error::Data("cross_entropy: empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Data(format!("cross_entropy: label {y} out of range")));
        }
        let w = weights.map_or(1.0, |ws| ws[y]);
        let p = probs.data()[i * 2 + y];
        if p.max(PROB_FLOOR) == PROB_FLOOR {
            value += w * -(PROB_FLOOR.ln());
            // Clamped: the loss is locally constant in p.
        } else {
            value += w * -(p.ln());
            grad[i * 2 + y] = -w / (p * n as f64);
        }
    }
    value /= n as f64;
    if !value.is_finite() {
        return Err(Error::Numeric("cross_entropy: non-finite loss".into()));
    }
    Ok(CrossEntropyOutput {
        value,
        grad_probs: Tensor::from_vec(probs.shape(), grad)?,
    })
}

/// Cosine similarity of two vectors; errors on a zero vector.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(
            "cosine_similarity",
            format!("{} vs {}", u.len(), v.len()),
        ));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine_similarity: zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub value: f64,
    /// Gradient with respect to the projections, `[N, d]`.
    pub grad_z: Tensor,
    /// True when no anchor had a positive (value is 0 in that case).
    pub degenerate: bool,
    /// Number of anchors that contributed a term.
    pub contributing: usize,
}

/// Supervised contrastive loss over a batch of projections.
///
/// Rows are expected on the unit hypersphere (asserted loosely; the
/// similarity is a full cosine, so gradients stay exact for slightly
/// off-sphere points such as finite-difference probes).
pub fn supervised_contrastive(
    z: &Tensor,
    labels: &[usize],
    tau: f64,
    include_anchor: bool,
) -> Result<ContrastiveOutput> {
    if z.rank() != 2 {
        return Err(Error::shape(
            "supervised_contrastive",
            format!("expected [N, d], got {:?}", z.shape()),
        ));
    }
    let (n, d) = (z.dim(0), z.dim(1));
    if n < 2 {
        return Err(Error::Data(format!(
            "supervised_contrastive: batch of {n} has no pairs"
        )));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "supervised_contrastive",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    if tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let x = z.data();
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let sq: f64 = x[i * d..(i + 1) * d].iter().map(|v| v * v).sum();
        norms[i] = sq.sqrt();
        if norms[i] < 1e-30 {
            return Err(Error::Numeric(
                "supervised_contrastive: zero projection row".into(),
            ));
        }
        if (norms[i] - 1.0).abs() > 1e-3 {
            return Err(Error::Numeric(format!(
                "supervised_contrastive: row {i} is not unit norm ({})",
                norms[i]
            )));
        }
    }
    // Pairwise cosine similarities.
    let mut cos = vec![0.0; n * n];
    for i in 0..n {
        cos[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let dot: f64 = (0..d).map(|k| x[i * d + k] * x[j * d + k]).sum();
            let c = dot / (norms[i] * norms[j]);
            cos[i * n + j] = c;
            cos[j * n + i] = c;
        }
    }

    // dL/d(cos_ij) for every ordered pair (i, j), i != j. When the anchor
    // is included, the (i, i) coefficient multiplies a similarity whose
    // z-gradient is identically zero, so it can be ignored.
    let mut coeff = vec![0.0; n * n];
    let mut value = 0.0;
    let mut contributing = 0usize;

    if include_anchor {
        for i in 0..n {
            let same: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i]).collect();
            let n_same = same.len() as f64;
            // Log-sum-exp over the positive set (anchor included) and over
            // all non-anchors, stabilized by the global max.
            let s = |j: usize| cos[i * n + j] / tau;
            let m_num = same.iter().map(|&j| s(j)).fold(f64::NEG_INFINITY, f64::max);
            let num: f64 = same.iter().map(|&j| (s(j) - m_num).exp()).sum();
            let m_den = (0..n)
                .filter(|&j| j != i)
                .map(s)
                .fold(f64::NEG_INFINITY, f64::max);
            let den: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (s(j) - m_den).exp())
                .sum();
            value += -(1.0 / n_same) * ((m_num + num.ln()) - (m_den + den.ln()));
            contributing += 1;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut c = 0.0;
                if labels[j] == labels[i] {
                    c -= (s(j) - m_num).exp() / num / n_same;
                }
                c += (s(j) - m_den).exp() / den / n_same;
                coeff[i * n + j] = c / tau;
            }
        }
    } else {
        // Pass 1: find contributing anchors.
        let positives: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && labels[j] == labels[i])
                    .collect()
            })
            .collect();
        contributing = positives.iter().filter(|p| !p.is_empty()).count();
        if contributing == 0 {
            return Ok(ContrastiveOutput {
                value: 0.0,
                grad_z: Tensor::zeros(z.shape()),
                degenerate: true,
                contributing: 0,
            });
        }
        let m = contributing as f64;
        for i in 0..n {
            if positives[i].is_empty() {
                continue;
            }
            let s = |j: usize| cos[i * n + j] / tau;
            let m_den = (0..n)
                .filter(|&j| j != i)
                .map(s)
                .fold(f64::NEG_INFINITY, f64::max);
            let den: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (s(j) - m_den).exp())
                .sum();
            let lse = m_den + den.ln();
            let p_count = positives[i].len() as f64;
            let mut anchor_loss = 0.0;
            for &p in &positives[i] {
                anchor_loss += -(s(p) - lse);
            }
            value += anchor_loss / p_count / m;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let q = (s(j) - m_den).exp() / den; // softmax over non-anchors
                let pos_share = if labels[j] == labels[i] { 1.0 / p_count } else { 0.0 };
                coeff[i * n + j] = (q - pos_share) / (m * tau);
            }
        }
    }

    // Chain through the cosine to z. For unit-ish rows:
    // d cos(z_i, z_j) / d z_i = (z_j/|z_j| - cos * z_i/|z_i|) / |z_i|.
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = coeff[i * n + j];
            if c == 0.0 {
                continue;
            }
            let cij = cos[i * n + j];
            for k in 0..d {
                let zi = x[i * d + k] / norms[i];
                let zj = x[j * d + k] / norms[j];
                grad[i * d + k] += c * (zj - cij * zi) / norms[i];
                grad[j * d + k] += c * (zi - cij * zj) / norms[j];
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::Numeric("supervised_contrastive: non-finite loss".into()));
    }
    Ok(ContrastiveOutput {
        value,
        grad_z: Tensor::from_vec(z.shape(), grad)?,
        degenerate: false,
        contributing,
    })
}

/// `lambda * ce + (1 - lambda) * sc`.
pub fn hybrid(ce: f64, sc: f64, lambda: f64) -> f64 {
    lambda * ce + (1.0 - lambda) * sc
}

/// Convex combination of two gradients over the same variable.
pub fn hybrid_grad(grad_ce: &[f64], grad_sc: &[f64], lambda: f64) -> Vec<f64> {
    grad_ce
        .iter()
        .zip(grad_sc)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::gradcheck::grad_check;
    use crate::tensor::ops::l2_normalize;

    #[test]
    fn cross_entropy_hand_values() {
        let probs = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let out = cross_entropy(&probs, &[0], None).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);
        let out = cross_entropy(&probs, &[1], None).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);

        let probs = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let out = cross_entropy(&probs, &[0], None).unwrap();
        assert_eq!(out.value, 0.0);

        let probs = Tensor::from_vec(&[2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let out = cross_entropy(&probs, &[0, 1], None).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((out.value - expected).abs() < 1e-12);
        assert!((out.value - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_empty_batch() {
        let probs = Tensor::zeros(&[0, 2]);
        assert!(cross_entropy(&probs, &[], None).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let probs = Tensor::from_vec(&[2, 2], vec![0.7, 0.3, 0.4, 0.6]).unwrap();
        let labels = [0usize, 1];
        let out = cross_entropy(&probs, &labels, Some([1.0, 2.0])).unwrap();
        let err = grad_check(
            &mut |p: &Tensor, _| {
                let o = cross_entropy(p, &labels, Some([1.0, 2.0]))?;
                Ok((o.value, Some(out.grad_probs.clone())))
            },
            &probs,
            1e-7,
        )
        .unwrap();
        assert!(err < 1e-6, "ce grad err {err}");
    }

    #[test]
    fn cosine_similarity_basics() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]).unwrap().abs() < 1e-12);
        assert!((cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn contrastive_aligned_pair_is_zero() {
        // Two identical same-label rows: the positive term equals the
        // whole denominator.
        let z = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = supervised_contrastive(&z, &[1, 1], 1.0, false).unwrap();
        assert!(out.value.abs() < 1e-12, "{}", out.value);
        assert!(!out.degenerate);
    }

    #[test]
    fn contrastive_no_positives_is_degenerate_zero() {
        let z = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = supervised_contrastive(&z, &[0, 1], 0.5, false).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.degenerate);
        assert!(out.grad_z.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn contrastive_orthonormal_batch_closed_form() {
        // Orthonormal rows make every off-diagonal similarity zero, so
        // each anchor contributes log(3) regardless of tau.
        let z = Tensor::from_vec(
            &[4, 4],
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let out = supervised_contrastive(&z, &[0, 0, 1, 1], 0.5, false).unwrap();
        assert!((out.value - 3.0f64.ln()).abs() < 1e-12, "{}", out.value);
        assert_eq!(out.contributing, 4);
    }

    /// Independent oracle: direct transcription of the per-anchor formula
    /// with explicit loops and no stabilization tricks.
    fn naive_supervised_contrastive(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
        let (n, d) = (z.dim(0), z.dim(1));
        let row = |i: usize| &z.data()[i * d..(i + 1) * d];
        let mut total = 0.0;
        let mut anchors = 0usize;
        for i in 0..n {
            let positives: Vec<usize> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if positives.is_empty() {
                continue;
            }
            anchors += 1;
            let mut den = 0.0;
            for k in 0..n {
                if k != i {
                    den += (cosine_similarity(row(i), row(k)).unwrap() / tau).exp();
                }
            }
            let mut anchor = 0.0;
            for &p in &positives {
                let num = (cosine_similarity(row(i), row(p)).unwrap() / tau).exp();
                anchor += -(num / den).ln();
            }
            total += anchor / positives.len() as f64;
        }
        total / anchors as f64
    }

    #[test]
    fn contrastive_matches_naive_loop_oracle() {
        let mut rng = RngStream::new(2211);
        for case in 0..5 {
            let n = 4 + case;
            let raw = Tensor::from_vec(&[n, 3], (0..n * 3).map(|_| rng.normal()).collect()).unwrap();
            let z = l2_normalize(&raw, 1).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            for tau in [1.0, 0.5, 0.1] {
                let fast = supervised_contrastive(&z, &labels, tau, false).unwrap();
                let slow = naive_supervised_contrastive(&z, &labels, tau);
                assert!(
                    (fast.value - slow).abs() < 1e-10,
                    "tau {tau}: {} vs {slow}",
                    fast.value
                );
            }
        }
    }

    #[test]
    fn contrastive_per_anchor_terms_keep_total_nonnegative() {
        // Each log argument is one summand of its denominator, so every
        // per-anchor term is >= 0 and so is the total.
        let mut rng = RngStream::new(404);
        for _ in 0..20 {
            let raw = Tensor::from_vec(&[6, 4], (0..24).map(|_| rng.normal()).collect()).unwrap();
            let z = l2_normalize(&raw, 1).unwrap();
            let labels: Vec<usize> = (0..6).map(|_| rng.uniform_usize(2)).collect();
            let out = supervised_contrastive(&z, &labels, 0.3, false).unwrap();
            assert!(out.value >= -1e-12, "{}", out.value);
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(31337);
        for n in [4usize, 8] {
            let raw = Tensor::from_vec(&[n, 4], (0..n * 4).map(|_| rng.normal()).collect()).unwrap();
            let z = l2_normalize(&raw, 1).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            for include_anchor in [false, true] {
                let out = supervised_contrastive(&z, &labels, 0.5, include_anchor).unwrap();
                let err = grad_check(
                    &mut |p: &Tensor, _| {
                        let o = supervised_contrastive(p, &labels, 0.5, include_anchor)?;
                        Ok((o.value, Some(out.grad_z.clone())))
                    },
                    &z,
                    1e-6,
                )
                .unwrap();
                assert!(
                    err < 1e-6,
                    "sc grad err {err} (n={n}, include_anchor={include_anchor})"
                );
            }
        }
    }

    #[test]
    fn lower_temperature_widens_separated_vs_mixed_gap() {
        // Fixed pair of batches: one well separated by label, one mixed.
        let sep = l2_normalize(
            &Tensor::from_vec(
                &[4, 2],
                vec![1.0, 0.05, 1.0, -0.05, -1.0, 0.05, -1.0, -0.05],
            )
            .unwrap(),
            1,
        )
        .unwrap();
        let mixed = l2_normalize(
            &Tensor::from_vec(&[4, 2], vec![1.0, 0.1, -1.0, 0.1, 1.0, -0.1, -1.0, -0.1]).unwrap(),
            1,
        )
        .unwrap();
        let labels = [0usize, 0, 1, 1];
        let mut last_gap = f64::NEG_INFINITY;
        for tau in [1.0, 0.5, 0.1] {
            let ls = supervised_contrastive(&sep, &labels, tau, false).unwrap().value;
            let lm = supervised_contrastive(&mixed, &labels, tau, false).unwrap().value;
            let gap = lm - ls;
            assert!(gap > last_gap, "gap not increasing at tau {tau}: {gap} <= {last_gap}");
            last_gap = gap;
        }
    }

    #[test]
    fn hybrid_identities() {
        assert_eq!(hybrid(0.6, 0.4, 1.0), 0.6);
        assert_eq!(hybrid(0.6, 0.4, 0.0), 0.4);
        assert!((hybrid(0.6, 0.4, 0.5) - 0.5).abs() < 1e-15);

        let gce = [1.0, 2.0];
        let gsc = [3.0, -4.0];
        assert_eq!(hybrid_grad(&gce, &gsc, 1.0), vec![1.0, 2.0]);
        assert_eq!(hybrid_grad(&gce, &gsc, 0.0), vec![3.0, -4.0]);
        let g = hybrid_grad(&gce, &gsc, 0.25);
        assert!((g[0] - (0.25 + 2.25)).abs() < 1e-15);
        assert!((g[1] - (0.5 - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::new(0.5, 0.1).validate().is_ok());
        assert!(LossConfig::new(1.5, 0.1).validate().is_err());
        assert!(LossConfig::new(0.5, 0.0).validate().is_err());
    }
}
