//! Repeated-seed runs and the JSON-lines results file.

use std::io::{BufRead, Write};
use std::time::Instant;

use log::{error, info};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{derive_seed, evaluate, train, TrainedModel, STREAM_REVEAL, STREAM_SPLIT};
use crate::data::{reveal_labels, stratified_split, zscore_fit_apply, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub dataset: String,
    pub loss: String,
    pub seed: u64,
    pub gamma_l: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub train_seconds: f64,
    pub final_loss: f64,
    pub param_change_norm: f64,
    /// Set on failed runs, whose metric fields are zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Standardized train (with revealed labels) and test sides of one repeat.
pub struct PreparedRun {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn prepare_run(cfg: &ExperimentConfig, dataset: &LabeledDataset, seed: u64) -> Result<PreparedRun> {
    let spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        gamma_l: cfg.gamma_l,
        seed: derive_seed(seed, STREAM_SPLIT),
    };
    let split = stratified_split(dataset, &spec)?;
    let revealed = reveal_labels(&split.train, cfg.gamma_l, derive_seed(seed, STREAM_REVEAL))?;
    let (train, test, _) = zscore_fit_apply(&revealed, &split.test)?;
    Ok(PreparedRun { train, test })
}

/// Split, train and evaluate one repeat.
pub fn run_once(cfg: &ExperimentConfig, dataset: &LabeledDataset, seed: u64) -> Result<(ResultRecord, TrainedModel)> {
    let run = prepare_run(cfg, dataset, seed)?;
    let start = Instant::now();
    let model = train(cfg, &run.train, seed)?;
    let train_seconds = if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let (auc_roc, auc_pr) = evaluate(&model, &run.test)?;
    let record = ResultRecord {
        config_hash: cfg.hash(),
        dataset: dataset.name.clone(),
        loss: cfg.loss.to_string(),
        seed,
        gamma_l: cfg.gamma_l,
        auc_roc,
        auc_pr,
        train_seconds,
        final_loss: model.final_loss(),
        param_change_norm: model.param_change_norm()?,
        error: None,
    };
    Ok((record, model))
}

/// Runs every repeat (seed `base_seed + r`), writing each record to `sink`
/// as soon as it exists. A failed repeat yields a record with `error` set.
pub fn run_suite(cfg: &ExperimentConfig, sink: Option<&mut dyn Write>) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let dataset = cfg.dataset.load()?;
    run_suite_on(cfg, &dataset, sink)
}

/// [`run_suite`] on an already loaded dataset.
pub fn run_suite_on(
    cfg: &ExperimentConfig,
    dataset: &LabeledDataset,
    mut sink: Option<&mut dyn Write>,
) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.base_seed + r as u64;
        let record = match run_once(cfg, dataset, seed) {
            Ok((rec, _)) => {
                info!(
                    "{} {} seed {seed}: auc_roc {:.4} auc_pr {:.4}",
                    rec.dataset, rec.loss, rec.auc_roc, rec.auc_pr
                );
                rec
            }
            Err(e) => {
                error!("{} {} seed {seed}: {e}", dataset.name, cfg.loss);
                ResultRecord {
                    config_hash: cfg.hash(),
                    dataset: dataset.name.clone(),
                    loss: cfg.loss.to_string(),
                    seed,
                    gamma_l: cfg.gamma_l,
                    auc_roc: 0.0,
                    auc_pr: 0.0,
                    train_seconds: 0.0,
                    final_loss: 0.0,
                    param_change_norm: 0.0,
                    error: Some(e.to_string()),
                }
            }
        };
        if let Some(w) = sink.as_deref_mut() {
            writeln!(w, "{}", record.to_json_line())?;
            w.flush()?;
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
