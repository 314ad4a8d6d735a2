//! Aggregation of result records and significance marks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use super::suite::ResultRecord;
use crate::error::{invalid, Error, Result};
use crate::metrics::{mean_std, stars, wilcoxon_signed_rank, Alternative};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupField {
    Loss,
    Dataset,
    Gamma,
    Seed,
}

impl GroupField {
    pub fn name(self) -> &'static str {
        match self {
            Self::Loss => "loss",
            Self::Dataset => "dataset",
            Self::Gamma => "gamma_l",
            Self::Seed => "seed",
        }
    }

    fn value(self, r: &ResultRecord) -> String {
        match self {
            Self::Loss => r.loss.clone(),
            Self::Dataset => r.dataset.clone(),
            Self::Gamma => r.gamma_l.to_string(),
            Self::Seed => r.seed.to_string(),
        }
    }
}

impl FromStr for GroupField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "loss" => Ok(Self::Loss),
            "dataset" => Ok(Self::Dataset),
            "gamma" | "gamma_l" => Ok(Self::Gamma),
            "seed" => Ok(Self::Seed),
            other => Err(invalid(format!("unknown group field {other:?}"))),
        }
    }
}

/// Parses a comma-separated field list such as `loss,dataset`.
pub fn parse_grouping(s: &str) -> Result<Vec<GroupField>> {
    let fields = s.split(',').filter(|f| !f.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
    if fields.is_empty() {
        return Err(invalid("empty grouping"));
    }
    Ok(fields)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub key: Vec<String>,
    pub count: usize,
    pub failed: usize,
    pub auc_roc: (f64, f64),
    pub auc_pr: (f64, f64),
    pub param_change: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub competitor: String,
    /// Number of (dataset, gamma_l) cells both losses have.
    pub pairs: usize,
    /// One-sided p-value for the baseline's AUC-PR exceeding the
    /// competitor's; `None` when the test is degenerate.
    pub p_value: Option<f64>,
}

impl Comparison {
    pub fn marks(&self) -> &'static str {
        match self.p_value {
            Some(p) => stars(p),
            None => "n/a",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub grouping: Vec<GroupField>,
    pub rows: Vec<GroupRow>,
    pub baseline: String,
    pub comparisons: Vec<Comparison>,
}

/// Mean and standard deviation per group over successful records, plus a
/// signed-rank comparison of `baseline` against every other loss on
/// per-(dataset, gamma_l) mean AUC-PR.
pub fn report(records: &[ResultRecord], grouping: &[GroupField], baseline: &str) -> Result<Report> {
    if grouping.is_empty() {
        return Err(invalid("empty grouping"));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(grouping.iter().map(|g| g.value(r)).collect())
            .or_default()
            .push(r);
    }
    let mut rows = Vec::new();
    for (key, members) in groups {
        let ok: Vec<&ResultRecord> = members.iter().copied().filter(|r| r.is_ok()).collect();
        let failed = members.len() - ok.len();
        if ok.is_empty() {
            rows.push(GroupRow {
                key,
                count: 0,
                failed,
                auc_roc: (f64::NAN, f64::NAN),
                auc_pr: (f64::NAN, f64::NAN),
                param_change: (f64::NAN, f64::NAN),
            });
            continue;
        }
        let col = |f: fn(&ResultRecord) -> f64| -> Result<(f64, f64)> {
            mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        rows.push(GroupRow {
            key,
            count: ok.len(),
            failed,
            auc_roc: col(|r| r.auc_roc)?,
            auc_pr: col(|r| r.auc_pr)?,
            param_change: col(|r| r.param_change_norm)?,
        });
    }

    // loss -> (dataset, gamma) -> mean AUC-PR
    let mut cells: BTreeMap<&str, BTreeMap<(String, String), Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        cells
            .entry(r.loss.as_str())
            .or_default()
            .entry((r.dataset.clone(), r.gamma_l.to_string()))
            .or_default()
            .push(r.auc_pr);
    }
    let means = |loss: &str| -> BTreeMap<(String, String), f64> {
        cells
            .get(loss)
            .map(|m| {
                m.iter()
                    .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
                    .collect()
            })
            .unwrap_or_default()
    };
    let base = means(baseline);
    let losses: BTreeSet<&str> = records.iter().map(|r| r.loss.as_str()).collect();
    let mut comparisons = Vec::new();
    for loss in losses.into_iter().filter(|l| *l != baseline) {
        let other = means(loss);
        let (x, y): (Vec<f64>, Vec<f64>) = base
            .iter()
            .filter_map(|(k, b)| other.get(k).map(|o| (*b, *o)))
            .unzip();
        let p_value = if x.is_empty() {
            None
        } else {
            wilcoxon_signed_rank(&x, &y, Alternative::Greater).ok().map(|w| w.p_value)
        };
        comparisons.push(Comparison {
            competitor: loss.to_string(),
            pairs: x.len(),
            p_value,
        });
    }
    Ok(Report {
        grouping: grouping.to_vec(),
        rows,
        baseline: baseline.to_string(),
        comparisons,
    })
}

impl Report {
    /// Plain-text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let head: Vec<&str> = self.grouping.iter().map(|g| g.name()).collect();
        let _ = writeln!(out, "{}\tn\tfailed\tauc_roc\tauc_pr\tparam_change", head.join("\t"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}±{:.4}\t{:.4}±{:.4}\t{:.4}±{:.4}",
                r.key.join("\t"),
                r.count,
                r.failed,
                r.auc_roc.0,
                r.auc_roc.1,
                r.auc_pr.0,
                r.auc_pr.1,
                r.param_change.0,
                r.param_change.1
            );
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "\n{} vs\tpairs\tp_value\tmarks", self.baseline);
            for c in &self.comparisons {
                let p = c.p_value.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(out, "{}\t{}\t{}\t{}", c.competitor, c.pairs, p, c.marks());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(loss: &str, dataset: &str, seed: u64, auc_pr: f64) -> ResultRecord {
        ResultRecord {
            config_hash: "h".into(),
            dataset: dataset.into(),
            loss: loss.into(),
            seed,
            gamma_l: 0.2,
            auc_roc: 0.5,
            auc_pr,
            train_seconds: 0.0,
            final_loss: 0.0,
            param_change_norm: 1.0,
            error: None,
        }
    }

    #[test]
    fn identical_losses_are_not_significant() {
        let mut recs = Vec::new();
        for d in 0..5 {
            for loss in ["overlap", "hinge"] {
                recs.push(rec(loss, &format!("d{d}"), 0, 0.1 * d as f64));
            }
        }
        let r = report(&recs, &[GroupField::Loss], "overlap").unwrap();
        assert_eq!(r.comparisons.len(), 1);
        assert_eq!(r.comparisons[0].marks(), "n/a");
    }

    #[test]
    fn dominance_on_ten_datasets_earns_three_stars() {
        let mut recs = Vec::new();
        for d in 0..10 {
            recs.push(rec("overlap", &format!("d{d}"), 0, 0.5 + 0.01 * d as f64));
            recs.push(rec("minus", &format!("d{d}"), 0, 0.3));
        }
        let r = report(&recs, &[GroupField::Loss, GroupField::Dataset], "overlap").unwrap();
        let c = &r.comparisons[0];
        assert_eq!(c.pairs, 10);
        assert_eq!(c.p_value, Some(1.0 / 1024.0));
        assert_eq!(c.marks(), "***");
        assert!(r.render().contains("***"));
    }

    #[test]
    fn means_skip_failed_records() {
        let mut recs = vec![rec("overlap", "d", 0, 0.2), rec("overlap", "d", 1, 0.4)];
        let mut bad = rec("overlap", "d", 2, 0.0);
        bad.error = Some("boom".into());
        recs.push(bad);
        let r = report(&recs, &[GroupField::Loss], "overlap").unwrap();
        assert_eq!(r.rows[0].count, 2);
        assert_eq!(r.rows[0].failed, 1);
        assert!((r.rows[0].auc_pr.0 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grouping_parser() {
        assert_eq!(
            parse_grouping("loss,dataset").unwrap(),
            vec![GroupField::Loss, GroupField::Dataset]
        );
        assert!(parse_grouping("loss,colour").is_err());
        assert!(parse_grouping("").is_err());
    }
}
