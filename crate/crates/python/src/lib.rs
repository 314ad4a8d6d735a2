//! Python bindings: the overlap loss, its KDE, the metrics, synthetic data and
//! the experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use overlap_ad_core::bench::{self, ExperimentConfig};
use overlap_ad_core::kde::DensityEstimate;
use overlap_ad_core::metrics::{self, Alternative};
use overlap_ad_core::overlap::{self, OverlapLossConfig, ScoreBatch, Strategy};
use overlap_ad_core::synth::{self, AnomalyType, SynthSpec};
use overlap_ad_core::{rng_from_seed, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Aborted(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn loss_config(grid_points: usize, bandwidth: f64, strategy: &str) -> PyResult<OverlapLossConfig> {
    let strategy = match strategy {
        "random" => Strategy::Random,
        "ensemble" => Strategy::Ensemble,
        other => return Err(PyValueError::new_err(format!("unknown strategy {other:?}"))),
    };
    Ok(OverlapLossConfig {
        grid_points,
        bandwidth,
        strategy,
        ..OverlapLossConfig::default()
    })
}

/// Crossing point of N(mu_n, sigma_n^2) and N(mu_a, sigma_a^2).
#[pyfunction]
fn gaussian_intersection(mu_n: f64, sigma_n: f64, mu_a: f64, sigma_a: f64) -> PyResult<f64> {
    overlap::gaussian_intersection(mu_n, sigma_n, mu_a, sigma_a).map_err(to_py)
}

/// Sign changes of f_a - f_n on the score grid.
#[pyfunction]
#[pyo3(signature = (s_n, s_a, grid_points=1000, bandwidth=1.0, seed=0))]
fn find_intersections(s_n: Vec<f64>, s_a: Vec<f64>, grid_points: usize, bandwidth: f64, seed: u64) -> PyResult<Vec<f64>> {
    let cfg = loss_config(grid_points, bandwidth, "random")?;
    let found = overlap::find_intersections(&s_n, &s_a, &cfg, &mut rng_from_seed(seed)).map_err(to_py)?;
    Ok(found.candidates)
}

/// `(loss, grad_n, grad_a, points)`
type LossOutput = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// Returns `(loss, grad_n, grad_a, points)`.
#[pyfunction]
#[pyo3(signature = (s_n, s_a, grid_points=1000, bandwidth=1.0, strategy="random", seed=0))]
fn overlap_loss(
    s_n: Vec<f64>,
    s_a: Vec<f64>,
    grid_points: usize,
    bandwidth: f64,
    strategy: &str,
    seed: u64,
) -> PyResult<LossOutput> {
    let cfg = loss_config(grid_points, bandwidth, strategy)?;
    let n = s_n.len();
    let batch = ScoreBatch::new(s_n, s_a).map_err(to_py)?;
    let (value, found) = overlap::overlap_loss(&batch, &cfg, &mut rng_from_seed(seed)).map_err(to_py)?;
    let mut grads = value.score_grads;
    let grad_a = grads.split_off(n);
    Ok((value.value, grads, grad_a, found.evaluation_points()))
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auc_roc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn auc_pr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auc_pr(&scores, &labels).map_err(to_py)
}

/// One-sided signed-rank test of `x - y`; returns `(statistic, p_value)`.
#[pyfunction]
#[pyo3(signature = (x, y, alternative="greater"))]
fn wilcoxon(x: Vec<f64>, y: Vec<f64>, alternative: &str) -> PyResult<(f64, f64)> {
    let alt = match alternative {
        "greater" => Alternative::Greater,
        "less" => Alternative::Less,
        other => return Err(PyValueError::new_err(format!("unknown alternative {other:?}"))),
    };
    let r = metrics::wilcoxon_signed_rank(&x, &y, alt).map_err(to_py)?;
    Ok((r.statistic, r.p_value))
}

/// Synthetic dataset from the built-in 2-D source; returns `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (anomaly_type, seed=0, n_normals=950, ratio=0.05, alpha=None))]
fn make_synthetic(
    anomaly_type: &str,
    seed: u64,
    n_normals: usize,
    ratio: f64,
    alpha: Option<f64>,
) -> PyResult<(Vec<Vec<f64>>, Vec<bool>)> {
    let kind: AnomalyType = anomaly_type.parse().map_err(to_py)?;
    let spec = SynthSpec {
        alpha,
        n_normals,
        anomaly_ratio: ratio,
        ..SynthSpec::new(kind, seed)
    };
    let source = synth::builtin_2d_source(synth::BUILTIN_SOURCE_ROWS, seed);
    let ds = synth::make_synthetic_dataset(&source, &spec).map_err(to_py)?;
    let rows = ds.features().row_iter().map(<[f64]>::to_vec).collect();
    Ok((rows, ds.labels().to_vec()))
}

/// Gaussian kernel density estimate.
#[pyclass(name = "KernelDensity", frozen)]
struct PyKernelDensity {
    inner: DensityEstimate,
}

#[pymethods]
impl PyKernelDensity {
    #[new]
    #[pyo3(signature = (samples, bandwidth=1.0))]
    fn new(samples: Vec<f64>, bandwidth: f64) -> PyResult<Self> {
        Ok(Self {
            inner: DensityEstimate::new(samples, bandwidth).map_err(to_py)?,
        })
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth()
    }

    fn pdf(&self, x: f64) -> f64 {
        self.inner.pdf(x)
    }

    fn pdf_at(&self, points: Vec<f64>) -> Vec<f64> {
        self.inner.pdf_at(&points)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.inner.cdf(x)
    }

    fn __len__(&self) -> usize {
        self.inner.samples().len()
    }
}

#[pyclass(name = "ResultRecord", frozen, get_all)]
struct PyResultRecord {
    config_hash: String,
    dataset: String,
    loss: String,
    seed: u64,
    gamma_l: f64,
    auc_roc: f64,
    auc_pr: f64,
    train_seconds: f64,
    final_loss: f64,
    param_change_norm: f64,
    error: Option<String>,
}

impl From<bench::ResultRecord> for PyResultRecord {
    fn from(r: bench::ResultRecord) -> Self {
        Self {
            config_hash: r.config_hash,
            dataset: r.dataset,
            loss: r.loss,
            seed: r.seed,
            gamma_l: r.gamma_l,
            auc_roc: r.auc_roc,
            auc_pr: r.auc_pr,
            train_seconds: r.train_seconds,
            final_loss: r.final_loss,
            param_change_norm: r.param_change_norm,
            error: r.error,
        }
    }
}

#[pymethods]
impl PyResultRecord {
    fn __repr__(&self) -> String {
        format!(
            "ResultRecord(loss={:?}, dataset={:?}, seed={}, auc_roc={:.4}, auc_pr={:.4})",
            self.loss, self.dataset, self.seed, self.auc_roc, self.auc_pr
        )
    }
}

/// One experiment configuration, parsed from the same JSON the CLI reads.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    cfg: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let mut configs = bench::parse_configs(config_json).map_err(to_py)?;
        if configs.len() != 1 {
            return Err(PyValueError::new_err("expected a single configuration object"));
        }
        Ok(Self { cfg: configs.remove(0) })
    }

    #[getter]
    fn loss(&self) -> String {
        self.cfg.loss.to_string()
    }

    #[getter]
    fn repeats(&self) -> usize {
        self.cfg.repeats
    }

    fn config_hash(&self) -> String {
        self.cfg.hash()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.cfg).expect("config serializes")
    }

    /// Runs every repeat with the GIL released.
    fn run(&self, py: Python<'_>) -> PyResult<Vec<PyResultRecord>> {
        let records = py.detach(|| bench::run_suite(&self.cfg, None)).map_err(to_py)?;
        Ok(records.into_iter().map(Into::into).collect())
    }
}

#[pymodule]
fn overlap_ad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gaussian_intersection, m)?)?;
    m.add_function(wrap_pyfunction!(find_intersections, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_loss, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_class::<PyKernelDensity>()?;
    m.add_class::<PyResultRecord>()?;
    m.add_class::<PyExperiment>()?;
    Ok(())
}
