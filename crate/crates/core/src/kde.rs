//! One-dimensional Gaussian kernel density estimation over anomaly scores.
//!
//! `f(s) = 1/(n h) * sum_i phi((s - s_i) / h)` with the fully normalized
//! standard normal kernel `phi`, so every estimate integrates to one.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z * FRAC_1_SQRT_2)
}

/// A Gaussian KDE: sample points plus a fixed bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl DensityEstimate {
    pub fn new(samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("density estimate needs at least one sample"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("bandwidth must be a positive finite number"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("KDE samples"));
        }
        Ok(Self { samples, bandwidth })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at a single point.
    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self.samples.iter().map(|s| normal_pdf((x - s) / h)).sum();
        sum / (self.samples.len() as f64 * h)
    }

    pub fn pdf_at(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&x| self.pdf(x)).collect()
    }

    /// Exact CDF of the kernel mixture, `mean_i Phi((x - s_i) / h)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        self.samples.iter().map(|s| normal_cdf((x - s) / h)).sum::<f64>() / self.samples.len() as f64
    }

    /// Gradient of `sum_k upstream[k] * pdf(points[k])` with respect to each
    /// sample, evaluation points held fixed.
    pub fn pdf_grad_wrt_samples(&self, points: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if points.len() != upstream.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: upstream.len(),
            });
        }
        let h = self.bandwidth;
        // d/ds_i phi((x - s_i)/h) / (n h) = phi(u) * u / (n h^2)
        let scale = 1.0 / (self.samples.len() as f64 * h * h);
        Ok(self
            .samples
            .iter()
            .map(|&s| {
                let acc: f64 = points
                    .iter()
                    .zip(upstream)
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(&x, &w)| {
                        let u = (x - s) / h;
                        w * u * normal_pdf(u)
                    })
                    .sum();
                acc * scale
            })
            .collect())
    }

    /// Density at `lo + k * step` for `k in 0..count`.
    pub fn pdf_uniform(&self, lo: f64, step: f64, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        let mut row = vec![0.0; count];
        for &s in &self.samples {
            kernel_row(s, lo, step, self.bandwidth, &mut row);
            out.iter_mut().zip(&row).for_each(|(o, k)| *o += k);
        }
        let norm = INV_SQRT_2PI / (self.samples.len() as f64 * self.bandwidth);
        out.iter_mut().for_each(|o| *o *= norm);
        out
    }

    /// `sum_k weights[k] * pdf(lo + k * step)` together with its gradient
    /// with respect to each sample.
    pub fn weighted_uniform(&self, lo: f64, step: f64, weights: &[f64]) -> (f64, Vec<f64>) {
        let h = self.bandwidth;
        let n = self.samples.len() as f64;
        let mut row = vec![0.0; weights.len()];
        let mut value = 0.0;
        let grads = self
            .samples
            .iter()
            .map(|&s| {
                kernel_row(s, lo, step, h, &mut row);
                let (mut v, mut g) = (0.0, 0.0);
                for (k, (&phi, &w)) in row.iter().zip(weights).enumerate() {
                    if phi == 0.0 {
                        continue;
                    }
                    let u = (lo + k as f64 * step - s) / h;
                    v += w * phi;
                    g += w * u * phi;
                }
                value += v;
                g * INV_SQRT_2PI / (n * h * h)
            })
            .collect();
        (value * INV_SQRT_2PI / (n * h), grads)
    }
}

/// Nodes between exact re-evaluations in [`kernel_row`].
const ANCHOR_EVERY: usize = 32;

/// Unnormalized kernel `exp(-u^2 / 2)` with `u = (lo + k * step - s) / h`,
/// filled by a multiplicative recurrence running outward from the node
/// nearest `s`, re-anchored on an exact value every few nodes.
fn kernel_row(s: f64, lo: f64, step: f64, h: f64, out: &mut [f64]) {
    let count = out.len();
    if count == 0 {
        return;
    }
    let d = step / h;
    let m = if step > 0.0 {
        ((s - lo) / step).round().clamp(0.0, (count - 1) as f64) as usize
    } else {
        0
    };
    let q = (-d * d).exp();
    let u_at = |k: usize| (lo + k as f64 * step - s) / h;
    // Forward: phi(u + d) = phi(u) * exp(-u d - d^2 / 2).
    let mut k = m;
    while k < count {
        let u = u_at(k);
        let (mut val, mut ratio) = ((-0.5 * u * u).exp(), (-u * d - 0.5 * d * d).exp());
        let end = (k + ANCHOR_EVERY).min(count);
        out[k] = val;
        for o in &mut out[k + 1..end] {
            val *= ratio;
            ratio *= q;
            *o = val;
        }
        if val == 0.0 {
            out[end..].fill(0.0);
            break;
        }
        k = end;
    }
    // Backward: phi(u - d) = phi(u) * exp(u d - d^2 / 2).
    let mut k = m;
    while k > 0 {
        let u = u_at(k);
        let (mut val, mut ratio) = ((-0.5 * u * u).exp(), (u * d - 0.5 * d * d).exp());
        let start = k.saturating_sub(ANCHOR_EVERY);
        for o in out[start..k].iter_mut().rev() {
            val *= ratio;
            ratio *= q;
            *o = val;
        }
        if val == 0.0 {
            out[..start].fill(0.0);
            break;
        }
        k = start;
    }
}

/// Uniform grid `lo, lo + spacing, ..., hi` with `intervals + 1` points.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrid {
    pub points: Vec<f64>,
    pub spacing: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ScoreGrid {
    pub fn uniform(lo: f64, hi: f64, intervals: usize) -> Result<Self> {
        if intervals < 1 {
            return Err(invalid("grid needs at least one interval"));
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("grid bounds"));
        }
        if hi <= lo {
            return Err(Error::DegenerateBatch);
        }
        let spacing = (hi - lo) / intervals as f64;
        let mut points: Vec<f64> = (0..=intervals).map(|k| lo + k as f64 * spacing).collect();
        points[intervals] = hi;
        Ok(Self {
            points,
            spacing,
            lo,
            hi,
        })
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    /// Same resolution, widened by `margin` on both sides.
    pub fn extended(&self, margin: f64) -> Result<Self> {
        Self::uniform(self.lo - margin, self.hi + margin, self.intervals())
    }

    /// Trapezoid weights: `spacing` inside, `spacing / 2` at both ends.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut w = vec![self.spacing; n];
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        w
    }
}

/// Arithmetic grid spanning the combined range of both score sets.
pub fn make_grid(s_n: &[f64], s_a: &[f64], intervals: usize) -> Result<ScoreGrid> {
    if intervals < 2 {
        return Err(invalid("grid resolution N must be at least 2"));
    }
    let (lo, hi) = combined_range(s_n, s_a)?;
    ScoreGrid::uniform(lo, hi, intervals)
}

/// `(min, max)` over the union of both score sets.
pub fn combined_range(s_n: &[f64], s_a: &[f64]) -> Result<(f64, f64)> {
    if s_n.is_empty() && s_a.is_empty() {
        return Err(invalid("no scores to build a grid from"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in s_n.iter().chain(s_a) {
        if !s.is_finite() {
            return Err(Error::NonFinite("scores"));
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((lo, hi))
}
