use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::model::Model;

/// Scores at or above this are called positive.
pub const THRESHOLD: f64 = 0.5;

/// Area under the ROC curve as the Mann–Whitney statistic,
/// `P(pos > neg) + ½ P(tie)`, computed from midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("auc needs finite scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "auc needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank2 += midrank2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One prediction per pair.
    #[default]
    Pair,
    /// Mean score over each subject's pairs.
    Subject,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair" => Ok(Self::Pair),
            "subject" => Ok(Self::Subject),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub accuracy: f64,
    /// Absent when the evaluated set holds a single class.
    pub auc: Option<f64>,
    pub confusion: Confusion,
    pub per_sample: Vec<ScoredSample>,
}

impl EvalReport {
    /// Accuracy, AUC and confusion counts from scored items.
    pub fn from_scores(aggregation: Aggregation, per_sample: Vec<ScoredSample>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        let mut confusion = Confusion::default();
        for s in &per_sample {
            match (s.score >= THRESHOLD, s.label == 1) {
                (true, true) => confusion.true_positive += 1,
                (true, false) => confusion.false_positive += 1,
                (false, false) => confusion.true_negative += 1,
                (false, true) => confusion.false_negative += 1,
            }
        }
        let accuracy = (confusion.true_positive + confusion.true_negative) as f64 / per_sample.len() as f64;
        let scores: Vec<f64> = per_sample.iter().map(|s| s.score).collect();
        let labels: Vec<u8> = per_sample.iter().map(|s| s.label).collect();
        let auc = match auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("AUC undefined: {e}");
                None
            }
        };
        Ok(Self { aggregation, accuracy, auc, confusion, per_sample })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `sigmoid(logit)` for every sample, in input order.
pub fn score_samples<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| model.score(s)).collect()
}

/// Averages pair scores per subject. Subjects are listed in id order.
pub fn aggregate_by_subject<T>(samples: &[Sample<T>], scores: &[f64]) -> Vec<ScoredSample> {
    let mut acc: BTreeMap<&str, (f64, usize, u8)> = BTreeMap::new();
    for (s, &score) in samples.iter().zip(scores) {
        let e = acc.entry(&s.subject_id).or_insert((0.0, 0, s.label));
        e.0 += score;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (sum, n, label))| ScoredSample { id: id.to_string(), score: sum / n as f64, label })
        .collect()
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample<T>], aggregation: Aggregation) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let scores = score_samples(model, samples)?;
    let items = match aggregation {
        Aggregation::Pair => samples
            .iter()
            .zip(&scores)
            .map(|(s, &score)| ScoredSample { id: s.id.clone(), score, label: s.label })
            .collect(),
        Aggregation::Subject => aggregate_by_subject(samples, &scores),
    };
    EvalReport::from_scores(aggregation, items)
}
