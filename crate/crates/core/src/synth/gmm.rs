//! Gaussian mixtures: EM fitting with BIC model selection, and sampling with
//! scaled covariances or means.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autonn::Matrix;
use crate::error::{invalid, Error, Result};

/// Ridge added to every scatter matrix before normalizing.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;
/// Stop once the objective gains less than this per sample.
const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() || !covariance.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: covariance.nrows(),
            });
        }
        if (&covariance - covariance.transpose()).abs().max() > 1e-9 * covariance.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .l();
        Ok(Self {
            weight,
            mean,
            covariance,
            chol,
        })
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // Forward substitution for L y = x - mean.
        let mut stack = [0.0; 8];
        let mut heap = Vec::new();
        let y: &mut [f64] = if d <= stack.len() {
            &mut stack[..d]
        } else {
            heap.resize(d, 0.0);
            &mut heap
        };
        let mut log_det = 0.0;
        for i in 0..d {
            let mut v = x[i] - self.mean[i];
            for j in 0..i {
                v -= self.chol[(i, j)] * y[j];
            }
            y[i] = v / self.chol[(i, i)];
            log_det += self.chol[(i, i)].ln();
        }
        let maha: f64 = y.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + maha) - log_det
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(invalid("mixture needs at least one component"));
        };
        let d = first.mean.len();
        if components.iter().any(|c| c.mean.len() != d) {
            return Err(invalid("components disagree on dimension"));
        }
        if components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(invalid("negative mixture weight"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Free parameters: weights, means and full covariances.
    pub fn n_parameters(&self) -> usize {
        let (k, d) = (self.len(), self.dim());
        (k - 1) + k * d + k * d * (d + 1) / 2
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_likelihood(&self, x: &Matrix) -> f64 {
        x.row_iter().map(|r| self.log_pdf(r)).sum()
    }

    pub fn bic(&self, x: &Matrix) -> f64 {
        -2.0 * self.log_likelihood(x) + self.n_parameters() as f64 * (x.rows() as f64).ln()
    }

    pub fn sample(&self, n: usize, rng: &mut crate::Rng) -> Matrix {
        self.sample_scaled(n, 1.0, 1.0, rng)
    }

    /// Draws from the mixture with every covariance multiplied by
    /// `cov_scale` and every mean by `mean_scale`. Scales of 1 reproduce
    /// [`GaussianMixture::sample`] bit for bit.
    pub fn sample_scaled(&self, n: usize, cov_scale: f64, mean_scale: f64, rng: &mut crate::Rng) -> Matrix {
        let d = self.dim();
        let sd_scale = cov_scale.sqrt();
        let mut values = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = &self.components[self.components.len() - 1];
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    comp = c;
                    break;
                }
            }
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            for i in 0..d {
                let mut v = 0.0;
                for (j, zj) in z.iter().enumerate().take(i + 1) {
                    v += comp.chol[(i, j)] * zj;
                }
                values.push(sd_scale * v + mean_scale * comp.mean[i]);
            }
        }
        Matrix::new(n, d, values).expect("finite mixture draws")
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Result of one EM run at a fixed component count.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Ridge-penalized log-likelihood after each iteration; EM never lets it
    /// decrease.
    pub objective_trace: Vec<f64>,
    pub bic: f64,
}

fn check_fit_input(x: &Matrix) -> Result<()> {
    let (n, d) = (x.rows(), x.cols());
    if d == 0 {
        return Err(invalid("data has no features"));
    }
    if n < 10 * d {
        return Err(invalid(format!("need at least {} rows for {d} features, got {n}", 10 * d)));
    }
    let total_var: f64 = (0..d)
        .map(|c| {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    if !(total_var > 0.0) {
        return Err(Error::ZeroVariance("GMM input"));
    }
    Ok(())
}

/// Fits `k = 1..=max_components` and keeps the lowest BIC.
pub fn fit_gmm(x: &Matrix, max_components: usize, seed: u64) -> Result<GaussianMixture> {
    if max_components == 0 {
        return Err(invalid("max_components must be positive"));
    }
    check_fit_input(x)?;
    let mut best: Option<EmFit> = None;
    for k in 1..=max_components.min(x.rows()) {
        let fit = fit_gmm_k(x, k, seed.wrapping_add(k as u64))?;
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one fit").mixture)
}

/// EM at a fixed component count, seeded by k-means++ centres and a hard
/// assignment to the nearest one.
pub fn fit_gmm_k(x: &Matrix, k: usize, seed: u64) -> Result<EmFit> {
    check_fit_input(x)?;
    let n = x.rows();
    if k == 0 || k > n {
        return Err(invalid("component count must lie in 1..=rows"));
    }
    let mut rng = crate::rng_from_seed(seed);
    let centres = kmeans_pp(x, k, &mut rng);
    let mut resp = vec![0.0; n * k];
    for (i, row) in x.row_iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| sq_dist(row, &centres[a]).total_cmp(&sq_dist(row, &centres[b])))
            .expect("k > 0");
        resp[i * k + nearest] = 1.0;
    }
    let mut mixture = m_step(x, &resp, k)?;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let ll = e_step(x, &mixture, &mut resp);
        let objective = ll - ridge_penalty(&mixture);
        trace.push(objective);
        if objective - prev <= TOLERANCE * n as f64 {
            break;
        }
        prev = objective;
        mixture = m_step(x, &resp, k)?;
    }
    let bic = mixture.bic(x);
    Ok(EmFit {
        mixture,
        objective_trace: trace,
        bic,
    })
}

/// `lambda/2 * sum_k tr(Sigma_k^-1)`: the penalty whose maximizer is the
/// ridged covariance update.
fn ridge_penalty(m: &GaussianMixture) -> f64 {
    m.components
        .iter()
        .map(|c| {
            let inv = c.covariance.clone().cholesky().expect("validated covariance").inverse();
            0.5 * COVARIANCE_RIDGE * inv.trace()
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp(x: &Matrix, k: usize, rng: &mut crate::Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centres = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = x.row_iter().map(|r| sq_dist(r, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, r) in x.row_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, &c));
        }
        centres.push(c);
    }
    centres
}

/// Fills responsibilities and returns the data log-likelihood.
fn e_step(x: &Matrix, m: &GaussianMixture, resp: &mut [f64]) -> f64 {
    let k = m.len();
    let mut ll = 0.0;
    let mut terms = vec![0.0; k];
    for (i, row) in x.row_iter().enumerate() {
        for (t, c) in terms.iter_mut().zip(&m.components) {
            *t = c.weight.ln() + c.log_pdf(row);
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        for j in 0..k {
            resp[i * k + j] = (terms[j] - lse).exp();
        }
    }
    ll
}

fn m_step(x: &Matrix, resp: &[f64], k: usize) -> Result<GaussianMixture> {
    let (n, d) = (x.rows(), x.cols());
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum::<f64>().max(1e-12);
        let mut mean = DVector::zeros(d);
        for (i, row) in x.row_iter().enumerate() {
            let r = resp[i * k + j];
            for c in 0..d {
                mean[c] += r * row[c];
            }
        }
        mean /= nk;
        let mut scatter = DMatrix::identity(d, d) * COVARIANCE_RIDGE;
        for (i, row) in x.row_iter().enumerate() {
            let r = resp[i * k + j];
            if r == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in 0..=a {
                    let v = r * da * (row[b] - mean[b]);
                    scatter[(a, b)] += v;
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                scatter[(b, a)] = scatter[(a, b)];
            }
        }
        components.push(GaussianComponent::new(nk / n as f64, mean, scatter / nk)?);
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    GaussianMixture::new(components)
}
