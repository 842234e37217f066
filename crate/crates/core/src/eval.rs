//! Classification metrics over labelled prediction records.
//!
//! Argmax and top-k ties go to the earlier label. AUC is the Mann-Whitney
//! rank statistic with midranks, so tied positive/negative pairs count ½.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{parse_predictions_tsv, ranking, ClassProbabilities, ClassifyError};
use crate::labels::LabelSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("record {slice_id}: expected {expected} probabilities, got {got}")]
    DimensionMismatch { slice_id: String, expected: usize, got: usize },
    #[error("k = {k} must be in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("no ground-truth label for slice {0:?}")]
    MissingLabel(String),
    #[error("labels line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub slice_id: String,
    /// Index of the true class in the label set.
    pub truth: usize,
    pub probs: ClassProbabilities,
}

impl EvalRecord {
    pub fn new(slice_id: impl Into<String>, truth: &str, probs: ClassProbabilities, labels: &LabelSet) -> Result<Self, EvalError> {
        let slice_id = slice_id.into();
        let truth = labels.index_of(truth).ok_or_else(|| EvalError::UnknownLabel(truth.into()))?;
        if probs.len() != labels.len() {
            return Err(EvalError::DimensionMismatch {
                slice_id,
                expected: labels.len(),
                got: probs.len(),
            });
        }
        Ok(Self { slice_id, truth, probs })
    }

    pub fn predicted(&self) -> usize {
        self.probs.argmax()
    }
}

fn check(records: &[EvalRecord], n: usize) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for r in records {
        if r.probs.len() != n {
            return Err(EvalError::DimensionMismatch {
                slice_id: r.slice_id.clone(),
                expected: n,
                got: r.probs.len(),
            });
        }
        if r.truth >= n {
            return Err(EvalError::UnknownLabel(format!("class index {}", r.truth)));
        }
    }
    Ok(())
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

pub fn confusion_matrix(records: &[EvalRecord], labels: &LabelSet) -> Result<ConfusionMatrix, EvalError> {
    let n = labels.len();
    check(records, n)?;
    let flat = records
        .par_iter()
        .fold(
            || vec![0u64; n * n],
            |mut acc, r| {
                acc[r.truth * n + r.predicted()] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; n * n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(ConfusionMatrix {
        labels: labels.iter().map(str::to_string).collect(),
        counts: flat.chunks(n).map(<[u64]>::to_vec).collect(),
    })
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// The class was never predicted; precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> PrfSummary {
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let predicted = cm.predicted_count(c);
            let support = cm.support(c);
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            ClassMetrics {
                label: cm.labels[c].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                precision_undefined: predicted == 0,
            }
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    PrfSummary {
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
        per_class,
    }
}

/// Fraction of records whose true class is among the `k` most probable.
pub fn top_k_accuracy(records: &[EvalRecord], n_classes: usize, k: usize) -> Result<f64, EvalError> {
    check(records, n_classes)?;
    if k == 0 || k > n_classes {
        return Err(EvalError::InvalidK { k, n: n_classes });
    }
    let hits = records
        .par_iter()
        .filter(|r| ranking(&r.probs.probs)[..k].contains(&r.truth))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mann-Whitney AUC of `scores` for the positives; `None` without both
/// positives and negatives.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled midranks keep the rank sum integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_midrank = (i + 1 + j) as u128;
        rank_sum2 += doubled_midrank * order[i..j].iter().filter(|&&o| positive[o]).count() as u128;
        i = j;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // 2U = 2R - p(p+1)
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    /// One-vs-rest AUC per class; `None` for degenerate classes.
    pub per_class: Vec<Option<f64>>,
    /// Classes lacking positives or negatives, excluded from the macro mean.
    pub degenerate: Vec<String>,
    pub macro_auc: Option<f64>,
    /// AUC over all (record, class) pairs pooled.
    pub micro_auc: Option<f64>,
}

pub fn roc_auc_ovr(records: &[EvalRecord], labels: &LabelSet) -> Result<AucSummary, EvalError> {
    let n = labels.len();
    check(records, n)?;
    let per_class: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|c| {
            let scores: Vec<f64> = records.iter().map(|r| r.probs.probs[c]).collect();
            let pos: Vec<bool> = records.iter().map(|r| r.truth == c).collect();
            auc(&scores, &pos)
        })
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let degenerate = per_class
        .iter()
        .zip(labels.iter())
        .filter(|(a, _)| a.is_none())
        .map(|(_, l)| l.to_string())
        .collect();
    let scores: Vec<f64> = records.iter().flat_map(|r| r.probs.probs.iter().copied()).collect();
    let pos: Vec<bool> = records.iter().flat_map(|r| (0..n).map(move |c| r.truth == c)).collect();
    Ok(AucSummary {
        macro_auc: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
        micro_auc: auc(&scores, &pos),
        per_class,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub precision_undefined: bool,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    pub accuracy: f64,
    pub top3_accuracy: f64,
    /// Classes in label order.
    pub per_class: Vec<ClassReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub degenerate_classes: Vec<String>,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(records: &[EvalRecord], labels: &LabelSet) -> Result<EvalReport, EvalError> {
    let confusion = confusion_matrix(records, labels)?;
    let prf = precision_recall_f1(&confusion);
    let aucs = roc_auc_ovr(records, labels)?;
    let top3 = top_k_accuracy(records, labels.len(), 3.min(labels.len()))?;
    let per_class = prf
        .per_class
        .into_iter()
        .zip(&aucs.per_class)
        .map(|(m, auc)| ClassReport {
            label: m.label,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: m.support,
            precision_undefined: m.precision_undefined,
            auc: *auc,
        })
        .collect();
    Ok(EvalReport {
        n_records: records.len(),
        accuracy: confusion.trace() as f64 / records.len() as f64,
        top3_accuracy: top3,
        per_class,
        macro_precision: prf.macro_precision,
        macro_recall: prf.macro_recall,
        macro_f1: prf.macro_f1,
        macro_auc: aucs.macro_auc,
        micro_auc: aucs.micro_auc,
        degenerate_classes: aucs.degenerate,
        confusion,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Per-species table with an unweighted average row, then the headline
    /// numbers and the confusion matrix.
    pub fn to_markdown(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        writeln!(s, "| Species | F1-score | Precision | Recall | AUC | Support |").unwrap();
        writeln!(s, "|---|---|---|---|---|---|").unwrap();
        for c in &self.per_class {
            let flag = if c.precision_undefined { "*" } else { "" };
            writeln!(
                s,
                "| {} | {:.3} | {:.3}{flag} | {:.3} | {} | {} |",
                c.label,
                c.f1,
                c.precision,
                c.recall,
                opt(c.auc),
                c.support
            )
            .unwrap();
        }
        writeln!(
            s,
            "| Average | {:.3} | {:.3} | {:.3} | {} | {} |",
            self.macro_f1,
            self.macro_precision,
            self.macro_recall,
            opt(self.macro_auc),
            self.n_records
        )
        .unwrap();
        if self.per_class.iter().any(|c| c.precision_undefined) {
            writeln!(s, "\n\\* never predicted; precision undefined, shown as 0.").unwrap();
        }
        writeln!(s, "\nAccuracy {:.4}, top-3 accuracy {:.4}, micro AUC {}.", self.accuracy, self.top3_accuracy, opt(self.micro_auc)).unwrap();
        if !self.degenerate_classes.is_empty() {
            writeln!(s, "Excluded from macro AUC: {}.", self.degenerate_classes.join(", ")).unwrap();
        }
        writeln!(s, "\n| true \\ predicted | {} |", self.confusion.labels.join(" | ")).unwrap();
        writeln!(s, "|---|{}", "---|".repeat(self.confusion.n_classes())).unwrap();
        for (label, row) in self.confusion.labels.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(s, "| {label} | {} |", cells.join(" | ")).unwrap();
        }
        s
    }
}

/// Parse `slice_id<TAB>label` rows; a leading `slice_id` header is skipped.
pub fn parse_labels_tsv(text: &str, labels: &LabelSet) -> Result<HashMap<String, usize>, EvalError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: String| EvalError::Parse { line: i + 1, message };
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse("expected slice_id<TAB>label".into()))?;
        let (id, label) = (id.trim(), label.trim());
        if out.is_empty() && id == "slice_id" {
            continue;
        }
        let class = labels.index_of(label).ok_or_else(|| EvalError::UnknownLabel(label.into()))?;
        if out.insert(id.to_string(), class).is_some() {
            return Err(parse(format!("duplicate slice id {id:?}")));
        }
    }
    Ok(out)
}

/// Join predictions and labels TSVs into records, in prediction order.
/// Every predicted slice needs a label; extra labels are ignored.
pub fn records_from_tsv(predictions: &str, truth: &str, labels: &LabelSet) -> Result<Vec<EvalRecord>, EvalError> {
    let truth = parse_labels_tsv(truth, labels)?;
    parse_predictions_tsv(predictions, labels.len())?
        .into_iter()
        .map(|(id, probs)| {
            let class = *truth.get(&id).ok_or_else(|| EvalError::MissingLabel(id.clone()))?;
            let probs = ClassProbabilities::new("predictions", probs)?;
            Ok(EvalRecord { slice_id: id, truth: class, probs })
        })
        .collect()
}

pub fn load_records(predictions: &Path, truth: &Path, labels: &LabelSet) -> Result<Vec<EvalRecord>, EvalError> {
    records_from_tsv(&std::fs::read_to_string(predictions)?, &std::fs::read_to_string(truth)?, labels)
}
