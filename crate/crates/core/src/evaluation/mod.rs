//! Detection metrics. In-distribution samples are the positive class and
//! every detector reports higher scores for more anomalous inputs, so a
//! lower score counts as a more confident positive.

mod stats;

pub use stats::{bayesian_sign_test, nemenyi_cd, nemenyi_q, ComparisonTable, SignTest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub is_id: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, is_id: Vec<bool>) -> Result<Self> {
        if scores.len() != is_id.len() {
            return Err(Error::Metric(format!(
                "{} scores but {} labels",
                scores.len(),
                is_id.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        Ok(ScoredSet { scores, is_id })
    }

    /// Builds a set from separate ID and OoD score lists.
    pub fn from_groups(id: &[f64], ood: &[f64]) -> Result<Self> {
        let scores = id.iter().chain(ood).copied().collect();
        let is_id = std::iter::repeat_n(true, id.len())
            .chain(std::iter::repeat_n(false, ood.len()))
            .collect();
        ScoredSet::new(scores, is_id)
    }

    pub fn positives(&self) -> usize {
        self.is_id.iter().filter(|&&b| b).count()
    }

    pub fn negatives(&self) -> usize {
        self.is_id.len() - self.positives()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::Metric(format!(
                "need both classes, got {p} in-distribution and {n} out-of-distribution"
            )));
        }
        Ok((p, n))
    }

    /// `(score, id count, ood count)` per distinct score, ascending.
    fn groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut out: Vec<(f64, usize, usize)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            match out.last_mut() {
                Some(g) if g.0 == s => {}
                _ => out.push((s, 0, 0)),
            }
            let g = out.last_mut().expect("just pushed");
            if self.is_id[i] {
                g.1 += 1;
            } else {
                g.2 += 1;
            }
        }
        out
    }
}

/// Probability that a random ID sample scores below a random OoD sample,
/// ties counting one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let (p, n) = s.require_both()?;
    // Mann-Whitney: every OoD sample beats all ID samples in lower groups
    // and ties with the ID samples of its own group.
    let mut ids_below = 0usize;
    let mut twice_wins = 0u128;
    for (_, ids, oods) in s.groups() {
        twice_wins += (oods as u128) * (2 * ids_below as u128 + ids as u128);
        ids_below += ids;
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

/// Average precision with ID as the positive class, thresholds stepping
/// through the distinct scores from lowest to highest.
pub fn aupr(s: &ScoredSet) -> Result<f64> {
    let (p, _) = s.require_both()?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (_, ids, oods) in s.groups() {
        tp += ids;
        fp += oods;
        if ids > 0 {
            area += (ids as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

/// False-positive rate at the lowest threshold whose true-positive rate
/// reaches `target_tpr`; a sample is accepted as ID when its score is at
/// most the threshold.
pub fn fpr_at_tpr(s: &ScoredSet, target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::arg(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    let (p, n) = s.require_both()?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, ids, oods) in s.groups() {
        tp += ids;
        fp += oods;
        if tp as f64 / p as f64 >= target_tpr {
            return Ok(fp as f64 / n as f64);
        }
    }
    Ok(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub aupr: f64,
    /// FPR at the configured TPR (0.95 unless stated otherwise).
    pub fpr: f64,
}

pub fn detection_metrics(s: &ScoredSet, target_tpr: f64) -> Result<DetectionMetrics> {
    Ok(DetectionMetrics {
        auroc: auroc(s)?,
        aupr: aupr(s)?,
        fpr: fpr_at_tpr(s, target_tpr)?,
    })
}

/// Scores of one detector on an ID/OoD pairing with their metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub detector: String,
    pub scored: ScoredSet,
    pub metrics: DetectionMetrics,
}

impl DetectionReport {
    pub fn new(detector: impl Into<String>, scored: ScoredSet, target_tpr: f64) -> Result<Self> {
        let metrics = detection_metrics(&scored, target_tpr)?;
        Ok(DetectionReport {
            detector: detector.into(),
            scored,
            metrics,
        })
    }
}

#[cfg(test)]
mod tests;
