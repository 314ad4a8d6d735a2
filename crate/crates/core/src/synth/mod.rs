//! Synthetic anomaly injection.
//!
//! Normals come from a GMM fitted to source data (or, for dependency
//! anomalies, from a Gaussian copula). Anomalies are:
//! - local: the mixture with every covariance scaled by `alpha`;
//! - global: per-feature uniforms on the source range scaled by `alpha`;
//! - clustered: the mixture with every mean scaled by `alpha`;
//! - dependency: the copula's marginals sampled independently.

mod copula;
mod gmm;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use copula::{silverman_bandwidth, spearman_matrix, GaussianCopula, KdeMarginal};
pub use gmm::{fit_gmm, fit_gmm_k, EmFit, GaussianComponent, GaussianMixture, COVARIANCE_RIDGE};

use crate::autonn::Matrix;
use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyType {
    Local,
    Global,
    Clustered,
    Dependency,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 4] = [Self::Local, Self::Global, Self::Clustered, Self::Dependency];

    /// `alpha` used when none is given. Dependency anomalies ignore it.
    pub fn default_alpha(self) -> f64 {
        match self {
            Self::Local | Self::Clustered => 5.0,
            Self::Global => 1.1,
            Self::Dependency => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Local => "local",
            Self::Global => "global",
            Self::Clustered => "clustered",
            Self::Dependency => "dependency",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid(format!("unknown anomaly type {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub anomaly_type: AnomalyType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_n_normals")]
    pub n_normals: usize,
    #[serde(default = "default_ratio")]
    pub anomaly_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_components")]
    pub max_components: usize,
}

fn default_n_normals() -> usize {
    950
}

fn default_ratio() -> f64 {
    0.05
}

fn default_max_components() -> usize {
    5
}

impl SynthSpec {
    pub fn new(anomaly_type: AnomalyType, seed: u64) -> Self {
        Self {
            anomaly_type,
            alpha: None,
            n_normals: default_n_normals(),
            anomaly_ratio: default_ratio(),
            seed,
            max_components: default_max_components(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.anomaly_type.default_alpha())
    }

    /// `round(ratio / (1 - ratio) * n_normals)`.
    pub fn n_anomalies(&self) -> usize {
        (self.anomaly_ratio / (1.0 - self.anomaly_ratio) * self.n_normals as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha() > 0.0 && self.alpha().is_finite()) {
            return Err(invalid("alpha must be positive"));
        }
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio < 1.0) {
            return Err(invalid("anomaly_ratio must lie in (0, 1)"));
        }
        if self.n_normals == 0 {
            return Err(invalid("n_normals must be positive"));
        }
        if self.max_components == 0 {
            return Err(invalid("max_components must be positive"));
        }
        Ok(())
    }
}

pub fn gen_local(gmm: &GaussianMixture, n: usize, alpha: f64, rng: &mut crate::Rng) -> Matrix {
    gmm.sample_scaled(n, alpha, 1.0, rng)
}

pub fn gen_clustered(gmm: &GaussianMixture, n: usize, alpha: f64, rng: &mut crate::Rng) -> Matrix {
    gmm.sample_scaled(n, 1.0, alpha, rng)
}

/// Each feature uniform on `[alpha * min_k, alpha * max_k]` (endpoints
/// reordered if scaling flips them).
pub fn gen_global(x: &Matrix, n: usize, alpha: f64, rng: &mut crate::Rng) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(invalid("source data is empty"));
    }
    let bounds: Vec<(f64, f64)> = (0..x.cols())
        .map(|c| {
            let col = x.column(c);
            let lo = alpha * col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = alpha * col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo.min(hi), lo.max(hi))
        })
        .collect();
    let mut values = Vec::with_capacity(n * x.cols());
    for _ in 0..n {
        for &(lo, hi) in &bounds {
            values.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    Matrix::new(n, x.cols(), values)
}

/// Copula normals plus dependence-free anomalies.
pub fn gen_dependency(x: &Matrix, n_normals: usize, n_anomalies: usize, rng: &mut crate::Rng) -> Result<(Matrix, Matrix)> {
    let copula = GaussianCopula::fit(x)?;
    let normals = copula.sample(n_normals, rng);
    let anomalies = copula.sample_independent(n_anomalies, rng);
    Ok((normals, anomalies))
}

/// Fits the generator to `source` (normal rows only) and assembles a
/// shuffled dataset with labels matching each row's generator.
pub fn make_synthetic_dataset(source: &Matrix, spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = crate::rng_from_seed(spec.seed);
    let n_anom = spec.n_anomalies();
    let alpha = spec.alpha();
    let (normals, anomalies) = match spec.anomaly_type {
        AnomalyType::Dependency => gen_dependency(source, spec.n_normals, n_anom, &mut rng)?,
        kind => {
            let gmm = fit_gmm(source, spec.max_components, spec.seed)?;
            let normals = gmm.sample(spec.n_normals, &mut rng);
            let anomalies = match kind {
                AnomalyType::Local => gen_local(&gmm, n_anom, alpha, &mut rng),
                AnomalyType::Clustered => gen_clustered(&gmm, n_anom, alpha, &mut rng),
                _ => gen_global(source, n_anom, alpha, &mut rng)?,
            };
            (normals, anomalies)
        }
    };
    let all = normals.vstack(&anomalies)?;
    let mut order: Vec<usize> = (0..all.rows()).collect();
    order.shuffle(&mut rng);
    let labels = order.iter().map(|&i| i >= spec.n_normals).collect();
    let name = format!("synth-{}", spec.anomaly_type);
    LabeledDataset::new(name, all.select_rows(&order), labels)
}

/// Built-in 2-D source: two unit-variance blobs away from the origin with
/// strong within-blob correlation.
pub fn builtin_2d_source(n: usize, seed: u64) -> Matrix {
    use nalgebra::{DMatrix, DVector};
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.85, 0.85, 1.0]);
    let comp = |w: f64, m: [f64; 2]| {
        GaussianComponent::new(w, DVector::from_column_slice(&m), cov.clone()).expect("valid built-in component")
    };
    let gmm = GaussianMixture::new(vec![comp(0.6, [2.0, 2.0]), comp(0.4, [4.0, 1.0])]).expect("valid built-in mixture");
    gmm.sample(n, &mut crate::rng_from_seed(seed))
}

/// Rows of the built-in source.
pub const BUILTIN_SOURCE_ROWS: usize = 2000;

/// Name accepted wherever a source CSV path is expected.
pub const BUILTIN_2D: &str = "builtin:2d";
