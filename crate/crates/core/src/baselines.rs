//! The five decoupled baseline losses (Minus, Inverse, Hinge, Deviation,
//! Ordinal) and the pair construction Ordinal needs.
//!
//! All losses use mean reductions: per sample for Minus, Inverse and
//! Deviation, per cross pair for Hinge, per pair for Ordinal.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autonn::Matrix;
use crate::error::{invalid, Error, Result};
use crate::overlap::{LossValue, ScoreBatch};

/// Pole regularizer of the Inverse loss.
pub const INVERSE_EPS: f64 = 1e-6;

/// Where the Deviation loss takes its z-score reference moments from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationReference {
    /// Fresh standard-normal draws per batch.
    #[default]
    Prior,
    /// Mean and standard deviation of the batch's own scores.
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub bnd: f64,
    pub margin: f64,
    /// Ordinal targets for (normal, normal), (anomaly, normal) and
    /// (anomaly, anomaly) pairs.
    pub ordinal_targets: [f64; 3],
    pub deviation_draws: usize,
    pub deviation_reference: DeviationReference,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bnd: 5.0,
            margin: 5.0,
            ordinal_targets: [0.0, 4.0, 8.0],
            deviation_draws: 5000,
            deviation_reference: DeviationReference::Prior,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bnd > 0.0 && self.bnd.is_finite()) {
            return Err(invalid("BND must be positive"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(invalid("margin M must be positive"));
        }
        if self.ordinal_targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("ordinal targets"));
        }
        if self.deviation_reference == DeviationReference::Prior && self.deviation_draws < 2 {
            return Err(invalid("deviation_draws must be at least 2"));
        }
        Ok(())
    }
}

/// Subgradient of `|x|`, zero at the kink.
fn abs_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn parts(value: f64, mut grad_n: Vec<f64>, grad_a: Vec<f64>) -> LossValue {
    grad_n.extend(grad_a);
    LossValue {
        value,
        score_grads: grad_n,
    }
}

/// `mean |s_n| + mean max(0, BND - |s_a|)`.
pub fn minus_loss(batch: &ScoreBatch, cfg: &BaselineConfig) -> Result<LossValue> {
    let (nn, na) = (batch.s_n.len() as f64, batch.s_a.len() as f64);
    let mut value = batch.s_n.iter().map(|s| s.abs()).sum::<f64>() / nn;
    let grad_n = batch.s_n.iter().map(|&s| abs_grad(s) / nn).collect();
    let mut grad_a = Vec::with_capacity(batch.s_a.len());
    for &s in &batch.s_a {
        let gap = cfg.bnd - s.abs();
        if gap > 0.0 {
            value += gap / na;
            grad_a.push(-abs_grad(s) / na);
        } else {
            grad_a.push(0.0);
        }
    }
    Ok(parts(value, grad_n, grad_a))
}

/// `mean |s_n| + mean 1/(|s_a| + eps)`.
pub fn inverse_loss(batch: &ScoreBatch) -> Result<LossValue> {
    let (nn, na) = (batch.s_n.len() as f64, batch.s_a.len() as f64);
    let mut value = batch.s_n.iter().map(|s| s.abs()).sum::<f64>() / nn;
    let grad_n = batch.s_n.iter().map(|&s| abs_grad(s) / nn).collect();
    let grad_a = batch
        .s_a
        .iter()
        .map(|&s| {
            let d = s.abs() + INVERSE_EPS;
            value += 1.0 / (d * na);
            -abs_grad(s) / (d * d * na)
        })
        .collect();
    Ok(parts(value, grad_n, grad_a))
}

/// Mean over all cross pairs of `max(0, M + s_n - s_a)`.
pub fn hinge_loss(batch: &ScoreBatch, cfg: &BaselineConfig) -> Result<LossValue> {
    let pairs = (batch.s_n.len() * batch.s_a.len()) as f64;
    let mut value = 0.0;
    let mut grad_n = vec![0.0; batch.s_n.len()];
    let mut grad_a = vec![0.0; batch.s_a.len()];
    for (i, &n) in batch.s_n.iter().enumerate() {
        for (j, &a) in batch.s_a.iter().enumerate() {
            let v = cfg.margin + n - a;
            if v > 0.0 {
                value += v;
                grad_n[i] += 1.0 / pairs;
                grad_a[j] -= 1.0 / pairs;
            }
        }
    }
    Ok(parts(value / pairs, grad_n, grad_a))
}

/// Reference `(mean, std)` for the Deviation z-scores.
pub fn deviation_reference(batch: &ScoreBatch, cfg: &BaselineConfig, rng: &mut crate::Rng) -> Result<(f64, f64)> {
    let values: Vec<f64> = match cfg.deviation_reference {
        DeviationReference::Prior => (0..cfg.deviation_draws)
            .map(|_| StandardNormal.sample(rng))
            .collect(),
        DeviationReference::Batch => batch.s_n.iter().chain(&batch.s_a).copied().collect(),
    };
    crate::overlap::sample_moments(&values, "deviation reference")
}

/// Deviation loss with a freshly drawn reference.
pub fn deviation_loss(batch: &ScoreBatch, cfg: &BaselineConfig, rng: &mut crate::Rng) -> Result<LossValue> {
    let (mu, sigma) = deviation_reference(batch, cfg, rng)?;
    deviation_loss_with(batch, cfg, mu, sigma)
}

/// `mean |z_n| + mean max(0, M - z_a)` with `z = (s - mu) / sigma`; the
/// reference moments are constants.
pub fn deviation_loss_with(batch: &ScoreBatch, cfg: &BaselineConfig, mu: f64, sigma: f64) -> Result<LossValue> {
    if !(sigma > 0.0) {
        return Err(Error::ZeroVariance("deviation reference"));
    }
    let (nn, na) = (batch.s_n.len() as f64, batch.s_a.len() as f64);
    let mut value = 0.0;
    let grad_n = batch
        .s_n
        .iter()
        .map(|&s| {
            let z = (s - mu) / sigma;
            value += z.abs() / nn;
            abs_grad(z) / (sigma * nn)
        })
        .collect();
    let grad_a = batch
        .s_a
        .iter()
        .map(|&s| {
            let gap = cfg.margin - (s - mu) / sigma;
            if gap > 0.0 {
                value += gap / na;
                -1.0 / (sigma * na)
            } else {
                0.0
            }
        })
        .collect();
    Ok(parts(value, grad_n, grad_a))
}

/// Concatenated feature pairs with their ordinal targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub features: Matrix,
    pub targets: Vec<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Draws `pairs_per_type` pairs of each kind, (n, n), (a, n) and (a, a), with
/// replacement. A pair's features are its two rows side by side.
pub fn build_pairs(
    x_n: &Matrix,
    x_a: &Matrix,
    pairs_per_type: usize,
    cfg: &BaselineConfig,
    rng: &mut crate::Rng,
) -> Result<PairBatch> {
    if x_n.rows() == 0 {
        return Err(Error::EmptyClass("unlabeled"));
    }
    if x_a.rows() == 0 {
        return Err(Error::EmptyClass("labeled anomaly"));
    }
    if pairs_per_type == 0 {
        return Err(invalid("pairs_per_type must be positive"));
    }
    x_a.check_cols(x_n.cols())?;
    let d = x_n.cols();
    let mut values = Vec::with_capacity(3 * pairs_per_type * 2 * d);
    let mut targets = Vec::with_capacity(3 * pairs_per_type);
    let kinds = [(x_n, x_n), (x_a, x_n), (x_a, x_a)];
    for (kind, (left, right)) in kinds.iter().enumerate() {
        for _ in 0..pairs_per_type {
            let i = rng.random_range(0..left.rows());
            let j = rng.random_range(0..right.rows());
            values.extend_from_slice(left.row(i));
            values.extend_from_slice(right.row(j));
            targets.push(cfg.ordinal_targets[kind]);
        }
    }
    Ok(PairBatch {
        features: Matrix::new(targets.len(), 2 * d, values)?,
        targets,
    })
}

/// Mean absolute deviation of pair scores from their targets.
pub fn ordinal_loss(pair_scores: &[f64], pair_targets: &[f64]) -> Result<LossValue> {
    if pair_scores.len() != pair_targets.len() {
        return Err(Error::DimensionMismatch {
            expected: pair_targets.len(),
            got: pair_scores.len(),
        });
    }
    if pair_scores.is_empty() {
        return Err(invalid("no pairs"));
    }
    let n = pair_scores.len() as f64;
    let mut value = 0.0;
    let score_grads = pair_scores
        .iter()
        .zip(pair_targets)
        .map(|(s, t)| {
            value += (s - t).abs() / n;
            abs_grad(s - t) / n
        })
        .collect();
    Ok(LossValue { value, score_grads })
}
