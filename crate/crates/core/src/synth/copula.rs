//! Gaussian copula with KDE marginals, used to generate data with and
//! without the source's dependency structure.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::autonn::Matrix;
use crate::error::{invalid, Error, Result};
use crate::kde::{normal_cdf, DensityEstimate};
use crate::metrics::average_ranks;

const TABLE_POINTS: usize = 4096;
const QUANTILE_TOL: f64 = 1e-9;
/// Keeps uniforms away from 0 and 1 where the quantile diverges.
const U_CLAMP: f64 = 1e-12;

/// One feature's KDE with Silverman's bandwidth and a tabulated inverse CDF.
#[derive(Clone, Debug)]
pub struct KdeMarginal {
    kde: DensityEstimate,
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to whichever spread
/// is non-zero.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(invalid("bandwidth needs at least two values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => return Err(Error::ZeroVariance("marginal")),
    };
    Ok(0.9 * spread * n.powf(-0.2))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl KdeMarginal {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let h = silverman_bandwidth(values)?;
        let kde = DensityEstimate::new(values.to_vec(), h)?;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * h;
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * h;
        let step = (hi - lo) / (TABLE_POINTS - 1) as f64;
        let xs: Vec<f64> = (0..TABLE_POINTS).map(|i| lo + i as f64 * step).collect();
        let cdf = xs.iter().map(|&x| kde.cdf(x)).collect();
        Ok(Self { kde, xs, cdf })
    }

    pub fn bandwidth(&self) -> f64 {
        self.kde.bandwidth()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.kde.cdf(x)
    }

    /// Inverse CDF: table bracket, then Newton steps kept inside the bracket
    /// with bisection as the fallback.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
        let k = self.cdf.partition_point(|&c| c < u);
        if k == 0 {
            return self.xs[0];
        }
        if k == self.xs.len() {
            return self.xs[self.xs.len() - 1];
        }
        let (mut a, mut b) = (self.xs[k - 1], self.xs[k]);
        let (ca, cb) = (self.cdf[k - 1], self.cdf[k]);
        let mut x = if cb > ca { a + (u - ca) / (cb - ca) * (b - a) } else { 0.5 * (a + b) };
        for _ in 0..60 {
            let f = self.kde.cdf(x) - u;
            if f.abs() < QUANTILE_TOL {
                break;
            }
            if f > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let dens = self.kde.pdf(x);
            let newton = x - f / dens;
            x = if dens > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        }
        x
    }
}

/// Pearson correlation of two equally long vectors.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank-correlation matrix of the columns.
pub fn spearman_matrix(x: &Matrix) -> DMatrix<f64> {
    let d = x.cols();
    let ranks: Vec<Vec<f64>> = (0..d).map(|c| average_ranks(&x.column(c))).collect();
    let mut m = DMatrix::identity(d, d);
    for a in 0..d {
        for b in 0..a {
            let r = pearson(&ranks[a], &ranks[b]);
            m[(a, b)] = r;
            m[(b, a)] = r;
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct GaussianCopula {
    correlation: DMatrix<f64>,
    chol: DMatrix<f64>,
    marginals: Vec<KdeMarginal>,
}

impl GaussianCopula {
    /// Maps Spearman's rho to the latent normal correlation `2 sin(pi rho / 6)`
    /// and repairs a non-positive-definite result by shrinking toward the
    /// identity.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let d = x.cols();
        if x.rows() < 10 * d.max(1) {
            return Err(invalid(format!("need at least {} rows for {d} features", 10 * d.max(1))));
        }
        let rho = spearman_matrix(x);
        let mut latent = rho.map(|r| 2.0 * (std::f64::consts::PI * r / 6.0).sin());
        latent.fill_diagonal(1.0);
        let mut ridge = 0.0;
        let (correlation, chol) = loop {
            let shrunk = &latent * (1.0 / (1.0 + ridge)) + DMatrix::identity(d, d) * (ridge / (1.0 + ridge));
            if let Some(c) = shrunk.clone().cholesky() {
                break (shrunk, c.l());
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
            if ridge > 1e-2 {
                return Err(Error::NotPositiveDefinite("rank-correlation matrix".into()));
            }
        };
        let marginals = (0..d)
            .map(|c| KdeMarginal::fit(&x.column(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            correlation,
            chol,
            marginals,
        })
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn marginals(&self) -> &[KdeMarginal] {
        &self.marginals
    }

    /// Draws that keep the fitted dependency.
    pub fn sample(&self, n: usize, rng: &mut crate::Rng) -> Matrix {
        self.draw(n, true, rng)
    }

    /// Draws from the same marginals with every feature independent.
    pub fn sample_independent(&self, n: usize, rng: &mut crate::Rng) -> Matrix {
        self.draw(n, false, rng)
    }

    fn draw(&self, n: usize, dependent: bool, rng: &mut crate::Rng) -> Matrix {
        let d = self.marginals.len();
        let mut values = Vec::with_capacity(n * d);
        let mut g = vec![0.0; d];
        for _ in 0..n {
            for gi in g.iter_mut() {
                *gi = StandardNormal.sample(rng);
            }
            for i in 0..d {
                let z = if dependent {
                    (0..=i).map(|j| self.chol[(i, j)] * g[j]).sum()
                } else {
                    g[i]
                };
                values.push(self.marginals[i].quantile(normal_cdf(z)));
            }
        }
        Matrix::new(n, d, values).expect("finite copula draws")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn silverman_examples() {
        assert!(silverman_bandwidth(&[1.0, 1.0, 1.0]).is_err());
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = silverman_bandwidth(&v).unwrap();
        let sd = (v.iter().map(|x| (x - 49.5f64).powi(2)).sum::<f64>() / 99.0).sqrt();
        let iqr = 74.25 - 24.75;
        assert!((h - 0.9 * sd.min(iqr / 1.34) * 100f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 7919) % 200) as f64 / 17.0).collect();
        let m = KdeMarginal::fit(&v).unwrap();
        for u in [0.001, 0.1, 0.37, 0.5, 0.9, 0.999] {
            let x = m.quantile(u);
            assert!((m.cdf(x) - u).abs() < 1e-6, "u={u}");
        }
    }

    #[test]
    fn spearman_of_monotone_columns_is_one() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0, 4.0], vec![10.0, 20.0, 25.0, 100.0]]).unwrap();
        assert!((spearman_matrix(&x)[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimension_has_nothing_to_break() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
        let x = Matrix::from_columns(&[v]).unwrap();
        let c = GaussianCopula::fit(&x).unwrap();
        let a = c.sample(50, &mut rng_from_seed(4));
        let b = c.sample_independent(50, &mut rng_from_seed(4));
        assert_eq!(a, b);
    }
}
