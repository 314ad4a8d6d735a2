//! The overlap loss family.
//!
//! The main loss estimates both score densities with a Gaussian KDE, finds a
//! point `c` where they cross, and returns
//! `O = 1 - F_n(c) + F_a(c)`: the mass of unlabeled scores above `c` plus the
//! mass of anomaly scores below it. Each CDF is a trapezoid sum from a fixed
//! lower limit up to `c`, clamped to `[0, 1]`, so `O` lies in `[0, 2]`; it is
//! near 0 for separated, correctly ordered scores and near 2 when the order is
//! reversed.
//!
//! Also here: the geometric overlap `int min(f_n, f_a)` ("arbitrary"), the
//! pairwise ranking hinge, their sum ("combined"), and a Gaussian variant that
//! uses the closed-form intersection of two normals.
//!
//! Gradients flow through the KDE sample dependence only. The intersection
//! point, the grid nodes, the integration bounds and the trapezoid width are
//! constants for backprop; every function that needs them has a `*_with`
//! form taking them explicitly so callers can freeze them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kde::{self, normal_cdf, normal_pdf, DensityEstimate, ScoreGrid};

/// How an intersection point is picked when the densities cross more than
/// once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One candidate drawn uniformly per evaluation.
    #[default]
    Random,
    /// Average the overlap over every candidate.
    Ensemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlapLossConfig {
    /// Grid resolution `N` (number of intervals).
    pub grid_points: usize,
    pub bandwidth: f64,
    pub strategy: Strategy,
    /// Grid extension on each side, in multiples of the bandwidth. Also the
    /// distance below the smallest score where the CDF integration starts.
    pub extension_width: f64,
}

impl Default for OverlapLossConfig {
    fn default() -> Self {
        Self {
            grid_points: 1000,
            bandwidth: 1.0,
            strategy: Strategy::Random,
            extension_width: 3.0,
        }
    }
}

impl OverlapLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(invalid("bandwidth must be positive"));
        }
        if !(self.extension_width >= 0.0 && self.extension_width.is_finite()) {
            return Err(invalid("extension_width must be non-negative"));
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        self.extension_width * self.bandwidth
    }
}

/// Scores of one mini-batch, unlabeled side and labeled-anomaly side.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub s_n: Vec<f64>,
    pub s_a: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(s_n: Vec<f64>, s_a: Vec<f64>) -> Result<Self> {
        if s_n.is_empty() || s_a.is_empty() {
            return Err(invalid("both sides of a score batch must be non-empty"));
        }
        if s_n.iter().chain(&s_a).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self { s_n, s_a })
    }

    /// Splits a concatenated score vector: the first `n_unlabeled` entries
    /// are the unlabeled side.
    pub fn split(scores: &[f64], n_unlabeled: usize) -> Result<Self> {
        if n_unlabeled > scores.len() {
            return Err(invalid("split point beyond score vector"));
        }
        Self::new(scores[..n_unlabeled].to_vec(), scores[n_unlabeled..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.s_n.len() + self.s_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn swapped(&self) -> Self {
        Self {
            s_n: self.s_a.clone(),
            s_a: self.s_n.clone(),
        }
    }

    pub fn range(&self) -> (f64, f64) {
        // Non-empty and finite by construction.
        kde::combined_range(&self.s_n, &self.s_a).expect("validated batch")
    }
}

/// A loss value with its gradient per score, unlabeled side first.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub score_grads: Vec<f64>,
}

impl LossValue {
    fn from_parts(value: f64, grad_n: Vec<f64>, grad_a: Vec<f64>) -> Self {
        let mut score_grads = grad_n;
        score_grads.extend(grad_a);
        Self { value, score_grads }
    }

    pub(crate) fn add(mut self, other: &LossValue) -> Self {
        self.value += other.value;
        for (a, b) in self.score_grads.iter_mut().zip(&other.score_grads) {
            *a += b;
        }
        self
    }
}

/// Outcome of the sign-change scan.
#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionResult {
    /// Grid x-values right after each sign change of `f_a - f_n`, ascending.
    pub candidates: Vec<f64>,
    /// The randomly chosen candidate, or the first one under
    /// [`Strategy::Ensemble`].
    pub chosen_c: f64,
    pub strategy: Strategy,
    /// Whether the scan had to widen the grid.
    pub extended: bool,
    /// Whether no sign change existed even on the widened grid and the point
    /// of smallest density gap was used instead.
    pub fallback: bool,
    /// Resolution and range of the base grid.
    pub grid: ScoreGrid,
}

impl IntersectionResult {
    /// Points the overlap is evaluated at under the chosen strategy.
    pub fn evaluation_points(&self) -> Vec<f64> {
        match self.strategy {
            Strategy::Random => vec![self.chosen_c],
            Strategy::Ensemble => self.candidates.clone(),
        }
    }
}

/// Closed-form crossing point of `N(mu_n, sigma_n^2)` and `N(mu_a, sigma_a^2)`.
///
/// Of the two roots of the log-density equality, this returns the one that
/// tends to the midpoint of the means as the deviations become equal (the
/// root between the means whenever one exists). Equal deviations (within
/// `1e-12`) return the midpoint directly. The root is evaluated in whichever
/// of the two algebraically equivalent forms avoids cancellation.
pub fn gaussian_intersection(mu_n: f64, sigma_n: f64, mu_a: f64, sigma_a: f64) -> Result<f64> {
    if !(sigma_n > 0.0 && sigma_a > 0.0) {
        return Err(invalid("standard deviations must be positive"));
    }
    if ![mu_n, sigma_n, mu_a, sigma_a].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gaussian parameters"));
    }
    if (sigma_n - sigma_a).abs() < 1e-12 {
        return Ok(0.5 * (mu_n + mu_a));
    }
    let vn = sigma_n * sigma_n;
    let va = sigma_a * sigma_a;
    let a = vn - va;
    let log_ratio = (sigma_n / sigma_a).ln();
    let b = mu_a * vn - mu_n * va;
    let disc = sigma_n * sigma_a * ((mu_n - mu_a).powi(2) + 2.0 * a * log_ratio).sqrt();
    let sign = if mu_a >= mu_n { 1.0 } else { -1.0 };
    let numer = b - sign * disc;
    let conj = b + sign * disc;
    if conj.abs() >= numer.abs() {
        let c_const = mu_a * mu_a * vn - mu_n * mu_n * va - 2.0 * vn * va * log_ratio;
        Ok(c_const / conj)
    } else {
        Ok(numer / a)
    }
}

/// Scans the arithmetic grid over the combined score range for sign changes
/// of `f_a - f_n`.
///
/// With no sign change the grid is widened by `extension_width * h` on both
/// sides and scanned again; failing that, the widened-grid point with the
/// smallest `|f_a - f_n|` (first on ties) is used.
pub fn find_intersections(
    s_n: &[f64],
    s_a: &[f64],
    cfg: &OverlapLossConfig,
    rng: &mut crate::Rng,
) -> Result<IntersectionResult> {
    cfg.validate()?;
    let batch = ScoreBatch::new(s_n.to_vec(), s_a.to_vec())?;
    let grid = kde::make_grid(&batch.s_n, &batch.s_a, cfg.grid_points)?;
    let kn = DensityEstimate::new(batch.s_n, cfg.bandwidth)?;
    let ka = DensityEstimate::new(batch.s_a, cfg.bandwidth)?;

    let mut extended = false;
    let mut fallback = false;
    let mut candidates = sign_changes(&grid.points, &density_gap(&grid, &kn, &ka));
    if candidates.is_empty() {
        extended = true;
        let wide = grid.extended(cfg.margin())?;
        let gaps = density_gap(&wide, &kn, &ka);
        candidates = sign_changes(&wide.points, &gaps);
        if candidates.is_empty() {
            fallback = true;
            let mut best = (f64::INFINITY, wide.points[0]);
            for (&x, g) in wide.points.iter().zip(&gaps) {
                if g.abs() < best.0 {
                    best = (g.abs(), x);
                }
            }
            candidates.push(best.1);
        }
    }

    let chosen_c = match cfg.strategy {
        Strategy::Random => candidates[rng.random_range(0..candidates.len())],
        Strategy::Ensemble => candidates[0],
    };
    Ok(IntersectionResult {
        candidates,
        chosen_c,
        strategy: cfg.strategy,
        extended,
        fallback,
        grid,
    })
}

/// `f_a - f_n` at every grid point.
fn density_gap(grid: &ScoreGrid, kn: &DensityEstimate, ka: &DensityEstimate) -> Vec<f64> {
    let count = grid.points.len();
    let fa = ka.pdf_uniform(grid.lo, grid.spacing, count);
    let fnv = kn.pdf_uniform(grid.lo, grid.spacing, count);
    fa.iter().zip(&fnv).map(|(a, n)| a - n).collect()
}

fn sign_changes(points: &[f64], gaps: &[f64]) -> Vec<f64> {
    let signs: Vec<f64> = gaps
        .iter()
        .map(|&d| {
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    // A run of exact zeros between opposite signs is one crossing, placed at
    // its first node; a zero run that returns to the same sign is a touch.
    let mut out = Vec::new();
    let mut last = 0.0;
    let mut zero_start: Option<f64> = None;
    for (&s, &x) in signs.iter().zip(points) {
        if s == 0.0 {
            if last != 0.0 && zero_start.is_none() {
                zero_start = Some(x);
            }
            continue;
        }
        if last != 0.0 && s != last {
            out.push(zero_start.unwrap_or(x));
        }
        zero_start = None;
        last = s;
    }
    out
}

/// Trapezoid approximation of `int_lo^c f`, using `intervals` equal steps of
/// width `(c - lo) / intervals`, clamped to `[0, 1]`.
pub fn trapezoid_cdf(density: impl Fn(f64) -> f64, c: f64, lo: f64, intervals: usize) -> Result<f64> {
    let (nodes, weights) = cdf_nodes(c, lo, intervals)?;
    let raw: f64 = nodes.iter().zip(&weights).map(|(&x, w)| w * density(x)).sum();
    Ok(raw.clamp(0.0, 1.0))
}

/// Nodes and trapezoid weights of the CDF quadrature on `[lo, c]`.
fn cdf_nodes(c: f64, lo: f64, intervals: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if intervals < 1 {
        return Err(invalid("need at least one interval"));
    }
    if !(c.is_finite() && lo.is_finite()) {
        return Err(Error::NonFinite("integration bounds"));
    }
    if c < lo {
        return Err(invalid(format!("upper limit {c} below lower limit {lo}")));
    }
    let step = (c - lo) / intervals as f64;
    let nodes: Vec<f64> = (0..=intervals).map(|k| lo + k as f64 * step).collect();
    let mut weights = vec![step; intervals + 1];
    weights[0] *= 0.5;
    weights[intervals] *= 0.5;
    Ok((nodes, weights))
}

/// Detached quantities of one overlap-loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapPlan {
    /// Lower integration limit of both CDFs.
    pub lower: f64,
    /// Intersection points; the loss is averaged over them.
    pub points: Vec<f64>,
}

impl OverlapPlan {
    pub fn from_intersections(batch: &ScoreBatch, found: &IntersectionResult, cfg: &OverlapLossConfig) -> Self {
        let (lo, _) = batch.range();
        Self {
            lower: lo - cfg.margin(),
            points: found.evaluation_points(),
        }
    }
}

/// The overlap loss: finds intersection points, then evaluates
/// [`overlap_loss_with`].
pub fn overlap_loss(
    batch: &ScoreBatch,
    cfg: &OverlapLossConfig,
    rng: &mut crate::Rng,
) -> Result<(LossValue, IntersectionResult)> {
    let found = find_intersections(&batch.s_n, &batch.s_a, cfg, rng)?;
    let plan = OverlapPlan::from_intersections(batch, &found, cfg);
    let value = overlap_loss_with(batch, &plan, cfg)?;
    Ok((value, found))
}

/// `mean over c of [1 - F_n(c) + F_a(c)]` for a frozen plan.
pub fn overlap_loss_with(batch: &ScoreBatch, plan: &OverlapPlan, cfg: &OverlapLossConfig) -> Result<LossValue> {
    if plan.points.is_empty() {
        return Err(invalid("overlap plan has no intersection points"));
    }
    let kn = DensityEstimate::new(batch.s_n.clone(), cfg.bandwidth)?;
    let ka = DensityEstimate::new(batch.s_a.clone(), cfg.bandwidth)?;
    let mut total = 0.0;
    let mut grad_n = vec![0.0; batch.s_n.len()];
    let mut grad_a = vec![0.0; batch.s_a.len()];
    for &c in &plan.points {
        let (nodes, weights) = cdf_nodes(c.max(plan.lower), plan.lower, cfg.grid_points)?;
        let step = nodes[1] - nodes[0];
        let (cdf_n, g_n) = kn.weighted_uniform(plan.lower, step, &weights);
        let (cdf_a, g_a) = ka.weighted_uniform(plan.lower, step, &weights);
        total += 1.0 - cdf_n.clamp(0.0, 1.0) + cdf_a.clamp(0.0, 1.0);
        if cdf_n > 0.0 && cdf_n < 1.0 {
            grad_n.iter_mut().zip(g_n).for_each(|(a, b)| *a -= b);
        }
        if cdf_a > 0.0 && cdf_a < 1.0 {
            grad_a.iter_mut().zip(g_a).for_each(|(a, b)| *a += b);
        }
    }
    let k = plan.points.len() as f64;
    grad_n.iter_mut().for_each(|g| *g /= k);
    grad_a.iter_mut().for_each(|g| *g /= k);
    Ok(LossValue::from_parts(total / k, grad_n, grad_a))
}

/// Trapezoid integral of `min(f_n, f_a)` over the combined score range.
pub fn overlap_arbitrary(batch: &ScoreBatch, cfg: &OverlapLossConfig) -> Result<LossValue> {
    cfg.validate()?;
    let grid = kde::make_grid(&batch.s_n, &batch.s_a, cfg.grid_points)?;
    overlap_arbitrary_with(batch, &grid, cfg.bandwidth)
}

/// [`overlap_arbitrary`] on a frozen grid. At equal densities the gradient
/// goes to the unlabeled side.
pub fn overlap_arbitrary_with(batch: &ScoreBatch, grid: &ScoreGrid, bandwidth: f64) -> Result<LossValue> {
    let kn = DensityEstimate::new(batch.s_n.clone(), bandwidth)?;
    let ka = DensityEstimate::new(batch.s_a.clone(), bandwidth)?;
    let weights = grid.trapezoid_weights();
    let count = weights.len();
    let f_n = kn.pdf_uniform(grid.lo, grid.spacing, count);
    let f_a = ka.pdf_uniform(grid.lo, grid.spacing, count);
    let mut up_n = vec![0.0; count];
    let mut up_a = vec![0.0; count];
    let mut value = 0.0;
    for k in 0..count {
        let (fnv, fav) = (f_n[k], f_a[k]);
        if fnv <= fav {
            value += weights[k] * fnv;
            up_n[k] = weights[k];
        } else {
            value += weights[k] * fav;
            up_a[k] = weights[k];
        }
    }
    let (_, grad_n) = kn.weighted_uniform(grid.lo, grid.spacing, &up_n);
    let (_, grad_a) = ka.weighted_uniform(grid.lo, grid.spacing, &up_a);
    Ok(LossValue::from_parts(value, grad_n, grad_a))
}

/// Mean over all cross pairs of `max(0, s_n_i - s_a_j)`; zero subgradient at
/// ties.
pub fn ranking_term(batch: &ScoreBatch) -> Result<LossValue> {
    if batch.s_n.is_empty() || batch.s_a.is_empty() {
        return Err(invalid("both sides of a score batch must be non-empty"));
    }
    let pairs = (batch.s_n.len() * batch.s_a.len()) as f64;
    let mut grad_n = vec![0.0; batch.s_n.len()];
    let mut grad_a = vec![0.0; batch.s_a.len()];
    let mut value = 0.0;
    for (i, &n) in batch.s_n.iter().enumerate() {
        for (j, &a) in batch.s_a.iter().enumerate() {
            let gap = n - a;
            if gap > 0.0 {
                value += gap;
                grad_n[i] += 1.0 / pairs;
                grad_a[j] -= 1.0 / pairs;
            }
        }
    }
    Ok(LossValue::from_parts(value / pairs, grad_n, grad_a))
}

/// [`overlap_arbitrary`] plus [`ranking_term`].
pub fn overlap_combined(batch: &ScoreBatch, cfg: &OverlapLossConfig) -> Result<LossValue> {
    cfg.validate()?;
    let grid = kde::make_grid(&batch.s_n, &batch.s_a, cfg.grid_points)?;
    overlap_combined_with(batch, &grid, cfg.bandwidth)
}

pub fn overlap_combined_with(batch: &ScoreBatch, grid: &ScoreGrid, bandwidth: f64) -> Result<LossValue> {
    let arbitrary = overlap_arbitrary_with(batch, grid, bandwidth)?;
    Ok(arbitrary.add(&ranking_term(batch)?))
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn sample_moments(values: &[f64], what: &'static str) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(invalid(format!("{what}: need at least 2 samples for a variance")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance(what));
    }
    Ok((mean, var.sqrt()))
}

/// Intersection point of the two fitted normals, used as the detached `c` of
/// [`overlap_gaussian_with`].
pub fn gaussian_plan(batch: &ScoreBatch) -> Result<f64> {
    let (mn, sn) = sample_moments(&batch.s_n, "unlabeled scores")?;
    let (ma, sa) = sample_moments(&batch.s_a, "anomaly scores")?;
    gaussian_intersection(mn, sn, ma, sa)
}

/// Fits a normal to each side by sample moments and returns
/// `1 - Phi((c - mu_n)/sigma_n) + Phi((c - mu_a)/sigma_a)` at the closed-form
/// intersection `c`.
pub fn overlap_gaussian(batch: &ScoreBatch) -> Result<LossValue> {
    let c = gaussian_plan(batch)?;
    overlap_gaussian_with(batch, c)
}

/// [`overlap_gaussian`] at a frozen `c`; gradients flow through the moments.
pub fn overlap_gaussian_with(batch: &ScoreBatch, c: f64) -> Result<LossValue> {
    let (fn_val, grad_n) = gaussian_side_cdf(&batch.s_n, c, "unlabeled scores")?;
    let (fa_val, grad_a) = gaussian_side_cdf(&batch.s_a, c, "anomaly scores")?;
    let grad_n = grad_n.into_iter().map(|g| -g).collect();
    Ok(LossValue::from_parts(1.0 - fn_val + fa_val, grad_n, grad_a))
}

/// `Phi((c - mu)/sigma)` and its gradient with respect to each sample.
fn gaussian_side_cdf(values: &[f64], c: f64, what: &'static str) -> Result<(f64, Vec<f64>)> {
    let (mean, sd) = sample_moments(values, what)?;
    let n = values.len() as f64;
    let z = (c - mean) / sd;
    let dens = normal_pdf(z);
    // dz/ds_i = -1/(n sd) - z (s_i - mean) / ((n - 1) sd^2)
    let grads = values
        .iter()
        .map(|s| dens * (-1.0 / (n * sd) - z * (s - mean) / ((n - 1.0) * sd * sd)))
        .collect();
    Ok((normal_cdf(z), grads))
}
