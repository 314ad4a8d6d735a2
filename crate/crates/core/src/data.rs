//! Datasets, the train/test split protocol, label revelation, feature
//! standardization and balanced mini-batch sampling.
//!
//! CSV format: comma separated, optional header, `d` numeric feature columns
//! followed by one label column holding `0` or `1`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autonn::Matrix;
use crate::error::{invalid, Error, Result};

/// Features, ground-truth labels (`true` = anomaly) and the mask of labels
/// revealed to training. Only anomalies are ever revealed.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    features: Matrix,
    labels: Vec<bool>,
    visibility: Vec<bool>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        let visibility = vec![false; labels.len()];
        Ok(Self {
            name: name.into(),
            features,
            labels,
            visibility,
        })
    }

    pub fn with_visibility(mut self, visibility: Vec<bool>) -> Result<Self> {
        if visibility.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                got: visibility.len(),
            });
        }
        if visibility.iter().zip(&self.labels).any(|(v, l)| *v && !*l) {
            return Err(invalid("only anomalies can have a revealed label"));
        }
        self.visibility = visibility;
        Ok(self)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    /// Rows with a hidden label: the unlabeled pool `D_n`.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.visibility[i]).collect()
    }

    /// Rows with a revealed label: the labeled anomalies `D_a`.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visibility[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            visibility: indices.iter().map(|&i| self.visibility[i]).collect(),
        }
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: features.rows(),
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &label) in self.features.row_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(if label { "1" } else { "0" }.into());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a dataset; the name is the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let text = std::fs::read_to_string(path)?;
    parse_csv(&name, &text)
}

/// Parses CSV text. The first line is a header if any of its fields is not
/// a number.
pub fn parse_csv(name: &str, text: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if idx == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(rec.len() - 1);
        for f in rec.iter().take(rec.len() - 1) {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature {f:?}"),
                });
            }
            values.push(v);
        }
        let label = rec.get(rec.len() - 1).unwrap_or_default();
        let label = match label.parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("label must be 0 or 1, found {label:?}"),
                })
            }
        };
        rows.push(values);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(invalid("CSV has no data rows"));
    }
    LabeledDataset::new(name, Matrix::from_rows(&rows)?, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub gamma_l: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            gamma_l: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gamma_l) {
            return Err(invalid("gamma_l must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Shuffles each class and sends `round(class size * train_fraction)` of it
/// to the train side.
pub fn stratified_split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = crate::rng_from_seed(spec.seed);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::EmptyClass(if class { "anomaly" } else { "normal" }));
        }
        idx.shuffle(&mut rng);
        let cut = (idx.len() as f64 * spec.train_fraction).round() as usize;
        train_indices.extend_from_slice(&idx[..cut]);
        test_indices.extend_from_slice(&idx[cut..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        train: ds.subset(&train_indices),
        test: ds.subset(&test_indices),
        train_indices,
        test_indices,
    })
}

/// Number of labels revealed out of `anomalies`: round half up, at least one
/// when `gamma_l > 0`.
pub fn revealed_count(anomalies: usize, gamma_l: f64) -> usize {
    if gamma_l <= 0.0 {
        return 0;
    }
    let k = (gamma_l * anomalies as f64 + 0.5).floor() as usize;
    k.clamp(1, anomalies)
}

/// Reveals the labels of a random subset of the anomalies; the rest stay in
/// the unlabeled pool.
pub fn reveal_labels(train: &LabeledDataset, gamma_l: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&gamma_l) {
        return Err(invalid("gamma_l must lie in [0, 1]"));
    }
    let mut anomalies: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i]).collect();
    if anomalies.is_empty() {
        return Err(Error::EmptyClass("anomaly"));
    }
    let k = revealed_count(anomalies.len(), gamma_l);
    let mut rng = crate::rng_from_seed(seed);
    anomalies.shuffle(&mut rng);
    let mut visibility = vec![false; train.len()];
    for &i in &anomalies[..k] {
        visibility[i] = true;
    }
    train.clone().with_visibility(visibility)
}

/// Per-feature mean and population standard deviation of the train side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(invalid("cannot standardize an empty matrix"));
        }
        let n = x.rows() as f64;
        let mut mean = Vec::with_capacity(x.cols());
        let mut std = Vec::with_capacity(x.cols());
        for c in 0..x.cols() {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(Self { mean, std })
    }

    /// Zero-variance features map to 0.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.check_cols(self.mean.len())?;
        x.map(|_, c, v| {
            if self.std[c] > 0.0 {
                (v - self.mean[c]) / self.std[c]
            } else {
                0.0
            }
        })
    }
}

/// Standardizes both sides with train statistics.
pub fn zscore_fit_apply(
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset, Standardizer)> {
    let st = Standardizer::fit(train.features())?;
    let tr = train.with_features(st.apply(train.features())?)?;
    let te = test.with_features(st.apply(test.features())?)?;
    Ok((tr, te, st))
}

/// One balanced mini-batch: unlabeled rows first, then labeled anomalies.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x_n: Matrix,
    pub x_a: Matrix,
}

impl Batch {
    pub fn stacked(&self) -> Result<Matrix> {
        self.x_n.vstack(&self.x_a)
    }
}

/// Balanced sampler over `D_n` and `D_a`.
///
/// Each epoch permutes `D_n` and walks it in chunks of `batch_size / 2`
/// without replacement; each chunk is paired with an equally sized draw from
/// `D_a` with replacement. An epoch has `max(1, |D_n| / half)` batches; the
/// last partial chunk is dropped unless it is the only one.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    x: Matrix,
    unlabeled: Vec<usize>,
    labeled: Vec<usize>,
    half: usize,
}

impl BatchSampler {
    pub fn new(train: &LabeledDataset, batch_size: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        let unlabeled = train.unlabeled_indices();
        let labeled = train.labeled_indices();
        if labeled.is_empty() {
            return Err(Error::EmptyClass("labeled anomaly"));
        }
        if unlabeled.is_empty() {
            return Err(Error::EmptyClass("unlabeled"));
        }
        Ok(Self {
            x: train.features().clone(),
            unlabeled,
            labeled,
            half: batch_size / 2,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        (self.unlabeled.len() / self.half).max(1)
    }

    pub fn epoch(&self, rng: &mut crate::Rng) -> Vec<Batch> {
        let mut order = self.unlabeled.clone();
        order.shuffle(rng);
        let n_batches = self.batches_per_epoch();
        (0..n_batches)
            .map(|b| {
                let end = ((b + 1) * self.half).min(order.len());
                let rows_n = &order[b * self.half..end];
                let rows_a: Vec<usize> = (0..rows_n.len())
                    .map(|_| self.labeled[rng.random_range(0..self.labeled.len())])
                    .collect();
                Batch {
                    x_n: self.x.select_rows(rows_n),
                    x_a: self.x.select_rows(&rows_a),
                }
            })
            .collect()
    }
}

/// A single balanced batch: `batch_size / 2` distinct unlabeled rows and as
/// many labeled anomalies drawn with replacement.
pub fn sample_batch(train: &LabeledDataset, batch_size: usize, rng: &mut crate::Rng) -> Result<Batch> {
    let sampler = BatchSampler::new(train, batch_size)?;
    let mut pool = sampler.unlabeled.clone();
    let take = sampler.half.min(pool.len());
    let (chosen, _) = pool.partial_shuffle(rng, take);
    let rows_n = chosen.to_vec();
    let rows_a: Vec<usize> = (0..take)
        .map(|_| sampler.labeled[rng.random_range(0..sampler.labeled.len())])
        .collect();
    Ok(Batch {
        x_n: sampler.x.select_rows(&rows_n),
        x_a: sampler.x.select_rows(&rows_a),
    })
}
