//! AUC-ROC, AUC-PR (average precision) and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kde::normal_cdf;

/// Largest sample size that gets the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::EmptyClass(if pos == 0 { "positive" } else { "negative" }));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: mean of precision at each positive when scores are
/// sorted descending. Equal scores keep their input order.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// `x` tends to exceed `y`.
    #[default]
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Paired signed-rank test on `d = x - y`. Zero differences are dropped and
/// tied `|d|` share average ranks. Up to [`WILCOXON_EXACT_MAX`] pairs the null
/// distribution is enumerated exactly; beyond that a normal approximation
/// with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired differences"));
    }
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    // Under the null W- has the same law as W+, so "less" is "greater" on W-.
    let stat_for_tail = match alternative {
        Alternative::Greater => w_plus,
        Alternative::Less => total - w_plus,
    };
    if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let dist = signed_rank_null(&doubled);
        let threshold = (2.0 * stat_for_tail).round() as usize;
        let count: f64 = dist.iter().skip(threshold).sum();
        let p = count / 2f64.powi(n as i32);
        Ok(WilcoxonResult {
            statistic: w_plus,
            p_value: p.min(1.0),
            n,
            exact: true,
        })
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            var -= (t * t * t - t) / 48.0;
            i = j + 1;
        }
        if !(var > 0.0) {
            return Err(Error::ZeroVariance("signed-rank statistic"));
        }
        let z = (stat_for_tail - mean - 0.5) / var.sqrt();
        Ok(WilcoxonResult {
            statistic: w_plus,
            p_value: 1.0 - normal_cdf(z),
            n,
            exact: false,
        })
    }
}

/// Counts of sign patterns by doubled rank sum of the positive entries.
fn signed_rank_null(doubled_ranks: &[usize]) -> Vec<f64> {
    let max: usize = doubled_ranks.iter().sum();
    let mut dist = vec![0.0; max + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            if dist[s] != 0.0 {
                dist[s + r] += dist[s];
            }
        }
        reach += r;
    }
    dist
}

/// Significance marks at 1%, 5% and 10%.
pub fn stars(p_value: f64) -> &'static str {
    if p_value < 0.01 {
        "***"
    } else if p_value < 0.05 {
        "**"
    } else if p_value < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn auc_roc_examples() {
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[1.0; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(auc_roc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn auc_pr_examples() {
        assert_eq!(auc_pr(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let ap = auc_pr(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-12);
        assert!(auc_pr(&[0.1], &[false]).is_err());
    }

    #[test]
    fn auc_pr_of_random_scores_is_near_the_positive_rate() {
        let mut rng = rng_from_seed(4);
        let n = 20_000;
        let rate = 0.1;
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < rate).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let ap = auc_pr(&scores, &labels).unwrap();
        let pos = labels.iter().filter(|l| **l).count() as f64 / n as f64;
        assert!((ap - pos).abs() < 3.0 * (pos * (1.0 - pos) / (pos * n as f64)).sqrt(), "{ap} vs {pos}");
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 32.0);
        assert_eq!(r.statistic, 15.0);
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], Alternative::Greater),
            Err(Error::AllZeroDifferences)
        ));
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&ten, &[0.0; 10], Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 1024.0);
    }

    /// W+ of every sign pattern, by brute force.
    fn enumerate(ranks: &[f64]) -> Vec<f64> {
        let n = ranks.len();
        (0..1u32 << n)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum())
            .collect()
    }

    #[test]
    fn antisymmetry_identity() {
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let n = rng.random_range(1..10);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3..4) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3..4) as f64).collect();
            let Ok(g) = wilcoxon_signed_rank(&x, &y, Alternative::Greater) else {
                continue;
            };
            let l = wilcoxon_signed_rank(&y, &x, Alternative::Greater).unwrap();
            let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).filter(|v| *v != 0.0).collect();
            let all = enumerate(&average_ranks(&d));
            let eq = all.iter().filter(|w| (**w - g.statistic).abs() < 1e-9).count() as f64 / all.len() as f64;
            assert!((g.p_value + l.p_value - 1.0 - eq).abs() < 1e-12);
            let less = wilcoxon_signed_rank(&x, &y, Alternative::Less).unwrap();
            assert_eq!(less.p_value, l.p_value);
        }
    }

    #[test]
    fn exact_and_normal_agree_at_25() {
        let mut rng = rng_from_seed(12);
        for _ in 0..20 {
            let x: Vec<f64> = (0..25).map(|_| rng.random::<f64>() + 0.1).collect();
            let y: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let exact = wilcoxon_signed_rank(&x, &y, Alternative::Greater).unwrap();
            assert!(exact.exact);
            let mut x2 = x.clone();
            let mut y2 = y.clone();
            x2.push(1.0);
            y2.push(1.0);
            // Appending a zero difference keeps n = 25; build the approximation
            // by hand instead.
            let n = 25.0;
            let z = (exact.statistic - n * (n + 1.0) / 4.0 - 0.5) / (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0f64).sqrt();
            let approx = 1.0 - normal_cdf(z);
            assert!((exact.p_value - approx).abs() < 0.01, "{} vs {approx}", exact.p_value);
            assert_eq!(wilcoxon_signed_rank(&x2, &y2, Alternative::Greater).unwrap(), exact);
        }
    }

    #[test]
    fn large_samples_use_the_approximation() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + 0.05).collect();
        let y: Vec<f64> = (0..40).map(|i| (39 - i) as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&x, &y, Alternative::Greater).unwrap();
        assert!(!r.exact);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }

    proptest! {
        #[test]
        fn auc_roc_monotone_invariance(
            pairs in prop::collection::vec((-10.0f64..10.0, any::<bool>()), 2..40),
        ) {
            let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let a = auc_roc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp()).collect();
            prop_assert!((a - auc_roc(&t, &labels).unwrap()).abs() < 1e-12);
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == scores.len() {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((a + auc_roc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
