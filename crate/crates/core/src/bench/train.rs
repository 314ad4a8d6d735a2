//! The training loop and evaluation.

use log::{debug, warn};

use super::config::ExperimentConfig;
use super::objective::{LossKind, Objective};
use crate::autonn::{param_change_norm, Matrix, Mode, OptimizerState, ScorerNetwork};
use crate::baselines::{build_pairs, ordinal_loss};
use crate::data::{Batch, BatchSampler, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{auc_pr, auc_roc};
use crate::overlap::{LossValue, ScoreBatch};

/// Labeled anomalies paired with each test row when scoring with the
/// Ordinal objective.
pub const ORDINAL_REFERENCE_ROWS: usize = 32;

/// Independent stream derived from a run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_REVEAL: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean loss over the batches used in each epoch.
    pub epoch_loss: Vec<f64>,
    pub skipped_batches: Vec<usize>,
    /// Parameter-change norm against the initial network after each epoch.
    pub param_change: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub kind: LossKind,
    pub network: ScorerNetwork,
    pub initial: ScorerNetwork,
    pub history: TrainHistory,
    /// Rows paired with test rows for Ordinal scoring.
    reference: Option<Matrix>,
}

impl TrainedModel {
    /// Eval-mode anomaly scores. Ordinal scores are the mean over reference
    /// anomalies `a` of the pair score of `[a, x]`; Minus and Inverse score
    /// by magnitude.
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        let Some(reference) = &self.reference else {
            let mut s = self.network.score(x)?;
            if self.kind.scores_by_magnitude() {
                s.iter_mut().for_each(|v| *v = v.abs());
            }
            return Ok(s);
        };
        let mut total = vec![0.0; x.rows()];
        for a in reference.row_iter() {
            let pairs = pair_with(a, x)?;
            for (t, s) in total.iter_mut().zip(self.network.score(&pairs)?) {
                *t += s;
            }
        }
        let k = reference.rows() as f64;
        Ok(total.into_iter().map(|t| t / k).collect())
    }

    /// Representation-layer outputs for each row of `x` (paired with the
    /// first reference anomaly under Ordinal).
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        match &self.reference {
            Some(r) => self.network.embed(&pair_with(r.row(0), x)?),
            None => self.network.embed(x),
        }
    }

    pub fn param_change_norm(&self) -> Result<f64> {
        param_change_norm(&self.network, &self.initial)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.epoch_loss.last().copied().unwrap_or(f64::NAN)
    }
}

fn pair_with(left: &[f64], x: &Matrix) -> Result<Matrix> {
    let mut values = Vec::with_capacity(x.rows() * (left.len() + x.cols()));
    for row in x.row_iter() {
        values.extend_from_slice(left);
        values.extend_from_slice(row);
    }
    Matrix::new(x.rows(), left.len() + x.cols(), values)
}

fn skippable(e: &Error) -> bool {
    matches!(e, Error::DegenerateBatch | Error::ZeroVariance(_) | Error::NonFinite(_))
}

/// Runs the training loop on a dataset whose labeled anomalies are already
/// revealed.
pub fn train(cfg: &ExperimentConfig, train: &LabeledDataset, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    let objective = Objective::new(cfg.loss, cfg.overlap.clone(), cfg.baseline.clone())?;
    let net_cfg = &cfg.network;
    let sampler = BatchSampler::new(train, net_cfg.batch_size)?;
    let mut network = ScorerNetwork::new(
        cfg.loss.input_width(train.dim()),
        net_cfg.hidden_dim,
        derive_seed(seed, STREAM_INIT),
    )?;
    let initial = network.clone();
    let mut opt = OptimizerState::sgd(&network, net_cfg.learning_rate, net_cfg.momentum, net_cfg.weight_decay)?;
    let mut rng = crate::rng_from_seed(derive_seed(seed, STREAM_TRAIN));
    let mut history = TrainHistory::default();

    for epoch in 0..net_cfg.epochs {
        let batches = sampler.epoch(&mut rng);
        let mut total = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for batch in &batches {
            match step(&objective, &mut network, &mut opt, batch, net_cfg.batch_size, cfg, &mut rng) {
                Ok(v) => {
                    total += v;
                    used += 1;
                }
                Err(e) if skippable(&e) => {
                    warn!("epoch {epoch}: skipped batch ({e})");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if 2 * skipped > batches.len() {
            return Err(Error::Aborted(format!(
                "epoch {epoch}: {skipped} of {} batches skipped",
                batches.len()
            )));
        }
        debug!("{} epoch {epoch}: loss {:.6}", cfg.loss, total / used as f64);
        history.epoch_loss.push(total / used as f64);
        history.skipped_batches.push(skipped);
        history.param_change.push(param_change_norm(&network, &initial)?);
    }

    let reference = cfg.loss.is_pairwise().then(|| {
        let labeled = train.labeled_indices();
        let take = labeled.len().min(ORDINAL_REFERENCE_ROWS);
        train.features().select_rows(&labeled[..take])
    });
    Ok(TrainedModel {
        kind: cfg.loss,
        network,
        initial,
        history,
        reference,
    })
}

/// One forward/backward/update; returns the batch loss.
fn step(
    objective: &Objective,
    network: &mut ScorerNetwork,
    opt: &mut OptimizerState,
    batch: &Batch,
    batch_size: usize,
    cfg: &ExperimentConfig,
    rng: &mut crate::Rng,
) -> Result<f64> {
    let (input, split) = if objective.kind.is_pairwise() {
        let per_type = (batch_size / 3).max(1);
        let pairs = build_pairs(&batch.x_n, &batch.x_a, per_type, &cfg.baseline, rng)?;
        (pairs.features, Err(pairs.targets))
    } else {
        (batch.stacked()?, Ok(batch.x_n.rows()))
    };
    let (scores, cache) = network.forward(&input, Mode::Train)?;
    let loss: LossValue = match split {
        Ok(n_unlabeled) => objective.loss(&ScoreBatch::split(&scores, n_unlabeled)?, rng)?,
        Err(targets) => ordinal_loss(&scores, &targets)?,
    };
    if !loss.value.is_finite() || loss.score_grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss"));
    }
    let grads = network.backward(&cache, &loss.score_grads)?;
    opt.step(network, &grads)?;
    Ok(loss.value)
}

/// Eval-mode AUC-ROC and AUC-PR on a test set.
pub fn evaluate(model: &TrainedModel, test: &LabeledDataset) -> Result<(f64, f64)> {
    let scores = model.score(test.features())?;
    Ok((auc_roc(&scores, test.labels())?, auc_pr(&scores, test.labels())?))
}
