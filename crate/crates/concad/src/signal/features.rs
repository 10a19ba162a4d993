//! Expert-feature derivation: RR intervals and the R-peak envelope,
//! median-filtered and cubic-resampled onto a fixed-length uniform grid.

use super::EcgRecord;
use crate::error::{Error, Result};

/// Median filter with replicate edge handling. The window must be odd.
pub fn median_filter(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "median filter window must be odd, got {window}"
        )));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let half = (window / 2) as isize;
    let n = values.len() as isize;
    let mut out = Vec::with_capacity(values.len());
    let mut buf = Vec::with_capacity(window);
    for i in 0..n {
        buf.clear();
        for d in -half..=half {
            let j = (i + d).clamp(0, n - 1) as usize;
            buf.push(values[j]);
        }
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(buf[window / 2]);
    }
    Ok(out)
}

/// Cubic interpolation through strictly increasing knots.
///
/// Four or more knots use a not-a-knot cubic spline (which reproduces
/// cubic polynomials exactly); three knots fall back to the unique
/// parabola, two to the straight line. Evaluation clamps the query into
/// the knot span, so out-of-range points take the boundary values.
#[derive(Debug, Clone)]
pub struct CubicInterpolator {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (spline case only).
    m: Vec<f64>,
}

impl CubicInterpolator {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<CubicInterpolator> {
        if xs.len() != ys.len() {
            return Err(Error::shape(
                "cubic_interpolator",
                format!("{} xs vs {} ys", xs.len(), ys.len()),
            ));
        }
        if xs.len() < 2 {
            return Err(Error::Data("interpolation needs at least 2 knots".into()));
        }
        for pair in xs.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Data(format!(
                    "knots must be strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        let n = xs.len();
        let m = if n >= 4 {
            not_a_knot_second_derivatives(xs, ys)?
        } else {
            vec![0.0; n]
        };
        Ok(CubicInterpolator {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        if n == 2 {
            let t = (x - self.xs[0]) / (self.xs[1] - self.xs[0]);
            return self.ys[0] + t * (self.ys[1] - self.ys[0]);
        }
        if n == 3 {
            // Lagrange parabola.
            let (x0, x1, x2) = (self.xs[0], self.xs[1], self.xs[2]);
            let (y0, y1, y2) = (self.ys[0], self.ys[1], self.ys[2]);
            return y0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
                + y1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
                + y2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
        }
        // Locate the interval via binary search.
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.xs[hi] - self.xs[lo];
        let a = (self.xs[hi] - x) / h;
        let b = (x - self.xs[lo]) / h;
        a * self.ys[lo]
            + b * self.ys[hi]
            + ((a * a * a - a) * self.m[lo] + (b * b * b - b) * self.m[hi]) * h * h / 6.0
    }
}

/// Second derivatives for the not-a-knot spline: the interior continuity
/// rows plus third-derivative continuity at the second and second-to-last
/// knots, folded into a tridiagonal system over the interior unknowns.
fn not_a_knot_second_derivatives(xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let r = |i: usize| {
        6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1])
    };
    // Unknowns M_1..M_{n-2}.
    let k = n - 2;
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for (row, i) in (1..n - 1).enumerate() {
        sub[row] = h[i - 1];
        diag[row] = 2.0 * (h[i - 1] + h[i]);
        sup[row] = h[i];
        rhs[row] = r(i);
    }
    // Fold M_0 = (1 + h0/h1) M_1 - (h0/h1) M_2 into the first row.
    let q0 = h[0] / h[1];
    diag[0] += h[0] * (1.0 + q0);
    if k > 1 {
        sup[0] -= h[0] * q0;
    } else {
        // n == 3 is handled by the parabola path; n == 4 still has k == 2.
        return Err(Error::Data("not-a-knot needs at least 4 knots".into()));
    }
    // Fold M_{n-1} = (1 + h_{n-2}/h_{n-3}) M_{n-2} - (h_{n-2}/h_{n-3}) M_{n-3}.
    let q1 = h[n - 2] / h[n - 3];
    diag[k - 1] += h[n - 2] * (1.0 + q1);
    sub[k - 1] -= h[n - 2] * q1;

    // Thomas elimination.
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..k {
        let denom = diag[i] - sub[i] * c[i - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric("singular spline system".into()));
        }
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut interior = vec![0.0; k];
    interior[k - 1] = d[k - 1];
    for i in (0..k - 1).rev() {
        interior[i] = d[i] - c[i] * interior[i + 1];
    }

    let mut m = vec![0.0; n];
    m[1..n - 1].copy_from_slice(&interior);
    m[0] = (1.0 + q0) * m[1] - q0 * m[2];
    m[n - 1] = (1.0 + q1) * m[n - 2] - q1 * m[n - 3];
    Ok(m)
}

/// Resample `(xs, ys)` onto `count` uniform points spanning `[x0, x1]`.
pub fn resample_cubic(xs: &[f64], ys: &[f64], x0: f64, x1: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Config("resample count must be >= 2".into()));
    }
    let interp = CubicInterpolator::new(xs, ys)?;
    let step = (x1 - x0) / (count - 1) as f64;
    Ok((0..count).map(|i| interp.eval(x0 + step * i as f64)).collect())
}

/// Raw RR intervals in seconds from strictly increasing peak indices.
pub fn raw_rri(peaks: &[usize], fs: f64) -> Vec<f64> {
    peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / fs)
        .collect()
}

/// Interpolated RRI values below this floor are clamped, keeping every
/// derived interval positive.
pub const RRI_FLOOR_S: f64 = 1e-3;

/// Derive the resampled RRI and RPE series over `window` (sample index
/// range). RRI knots sit at the later peak of each pair, RPE knots at
/// every peak; both are median-filtered before cubic resampling.
pub fn derive_rri_rpe(
    record: &EcgRecord,
    peaks: &[usize],
    window: (usize, usize),
    resample_len: usize,
    median_window: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (start, end) = window;
    if end <= start || end > record.samples.len() {
        return Err(Error::Data(format!(
            "bad feature window [{start}, {end}) for {} samples",
            record.samples.len()
        )));
    }
    let inside: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&p| p >= start && p < end)
        .collect();
    if inside.len() < 4 {
        return Err(Error::Data(format!(
            "only {} peaks inside the window; cubic resampling needs 4",
            inside.len()
        )));
    }
    let rri_vals = median_filter(&raw_rri(&inside, record.fs), median_window)?;
    let rri_xs: Vec<f64> = inside[1..].iter().map(|&p| p as f64).collect();
    let rpe_vals = median_filter(
        &inside.iter().map(|&p| record.samples[p]).collect::<Vec<_>>(),
        median_window,
    )?;
    let rpe_xs: Vec<f64> = inside.iter().map(|&p| p as f64).collect();

    let mut rri = resample_cubic(&rri_xs, &rri_vals, start as f64, (end - 1) as f64, resample_len)?;
    for v in rri.iter_mut() {
        if *v < RRI_FLOOR_S {
            *v = RRI_FLOOR_S;
        }
    }
    let rpe = resample_cubic(&rpe_xs, &rpe_vals, start as f64, (end - 1) as f64, resample_len)?;
    Ok((rri, rpe))
}
