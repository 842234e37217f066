//! Classifier providers and ensemble combiners.
//!
//! A provider turns a preprocessed slice into a probability vector over an
//! ordered [`LabelSet`]. Combiners are pure functions over those vectors:
//! the confidence-switching patch ensemble and plurality voting.

mod ensemble;
mod provider;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelSet;

pub use ensemble::{
    combine_majority, combine_or_fallback, combine_patch_ensemble, EnsembleConfig, EnsembleOutcome, Fallback,
    MajorityVote, PatchRule, ENSEMBLE_PROVIDER_ID,
};
pub use provider::{
    parse_predictions_tsv, predict_all, ExternalProcessProvider, HuNearestProvider, PredictRequest, Provider,
    StubProvider, TsvProvider,
};

/// Probabilities must sum to one within this tolerance.
pub const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("provider {0} is unavailable: {1}")]
    ProviderUnavailable(String, String),
    #[error("contract violation from {provider}: {detail}")]
    ContractViolation { provider: String, detail: String },
    #[error("provider {0} is not among the predictions")]
    MissingProvider(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("k = {k} must be in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("majority vote needs at least two providers, got {0}")]
    TooFewProviders(usize),
    #[error("no prediction for slice {0:?}")]
    UnknownSlice(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A probability vector over an ordered label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub provider_id: String,
    pub probs: Vec<f64>,
}

impl ClassProbabilities {
    /// Checks that `probs` is nonnegative, finite and sums to one.
    pub fn new(provider_id: impl Into<String>, probs: Vec<f64>) -> Result<Self, ClassifyError> {
        let provider_id = provider_id.into();
        if let Err(detail) = check_distribution(&probs) {
            return Err(ClassifyError::ContractViolation {
                provider: provider_id,
                detail,
            });
        }
        Ok(Self { provider_id, probs })
    }

    /// Normalise nonnegative scores by their sum.
    pub fn from_scores(provider_id: impl Into<String>, scores: &[f64]) -> Result<Self, ClassifyError> {
        let provider_id = provider_id.into();
        let sum: f64 = scores.iter().sum();
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite() || *s < 0.0) || !(sum > 0.0) {
            return Err(ClassifyError::ContractViolation {
                provider: provider_id,
                detail: "scores must be finite, nonnegative and not all zero".into(),
            });
        }
        Ok(Self {
            provider_id,
            probs: scores.iter().map(|s| s / sum).collect(),
        })
    }

    /// Checks the vector length against a label set.
    pub fn expect_len(self, labels: &LabelSet) -> Result<Self, ClassifyError> {
        if self.probs.len() != labels.len() {
            return Err(ClassifyError::ContractViolation {
                provider: self.provider_id,
                detail: format!("expected {} probabilities, got {}", labels.len(), self.probs.len()),
            });
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_distribution(probs: &[f64]) -> Result<(), String> {
    if probs.is_empty() {
        return Err("empty probability vector".into());
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("probability {p} is negative or not finite"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Class indices by descending probability, ties by label order.
pub fn ranking(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub confidence: f64,
}

/// The `k` most probable labels, ties broken by label order.
pub fn top_k(probs: &ClassProbabilities, labels: &LabelSet, k: usize) -> Result<Vec<RankedLabel>, ClassifyError> {
    if probs.len() != labels.len() {
        return Err(ClassifyError::ContractViolation {
            provider: probs.provider_id.clone(),
            detail: format!("expected {} probabilities, got {}", labels.len(), probs.len()),
        });
    }
    if k == 0 || k > labels.len() {
        return Err(ClassifyError::InvalidK { k, n: labels.len() });
    }
    Ok(ranking(&probs.probs)
        .into_iter()
        .take(k)
        .map(|i| RankedLabel {
            label: labels.get(i).expect("index within label set").to_string(),
            confidence: probs.probs[i],
        })
        .collect())
}
