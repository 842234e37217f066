//! Specimen-level dataset splitting and offline augmentation kernels.

mod augment;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{
    apply_geometric, apply_photometric, augment_geometric, cutmix, mixup, one_hot, AugmentParams, GeometricDraw,
};
pub use split::{
    evaluate_assignment, split_specimens, SplitAssignment, SplitParams, SplitSummary, MAX_BLOCK, SPLIT_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurationError {
    #[error("counts are empty")]
    EmptyCounts,
    #[error("mean count is zero")]
    ZeroMean,
    #[error("invalid split targets: {0}")]
    InvalidTargets(String),
    #[error("no specimens to split")]
    NoSpecimens,
    #[error("duplicate specimen id {0}")]
    DuplicateSpecimen(String),
    #[error("species {species} has {count} specimens; at most 14 are supported")]
    SpeciesTooLarge { species: String, count: usize },
    #[error("images have different shapes")]
    ShapeMismatch,
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("label {label} outside {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Post-filter slice count for one specimen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecimenStats {
    pub specimen_id: String,
    pub species: String,
    pub usable_slice_count: u64,
}

impl SpecimenStats {
    pub fn new(specimen_id: impl Into<String>, species: impl Into<String>, usable_slice_count: u64) -> Self {
        Self {
            specimen_id: specimen_id.into(),
            species: species.into(),
            usable_slice_count,
        }
    }
}

/// Coefficient of variation in percent, `100 * s / mean`, with the sample
/// (n - 1) standard deviation. A single count has no spread and scores 0.
pub fn coefficient_of_variation(counts: &[u64]) -> Result<f64, CurationError> {
    if counts.is_empty() {
        return Err(CurationError::EmptyCounts);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return Err(CurationError::ZeroMean);
    }
    if counts.len() == 1 {
        return Ok(0.0);
    }
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
    Ok(100.0 * (ss / (n - 1.0)).sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[5, 5, 5]).unwrap(), 0.0);
        assert_eq!(coefficient_of_variation(&[]), Err(CurationError::EmptyCounts));
        assert_eq!(coefficient_of_variation(&[0, 0]), Err(CurationError::ZeroMean));
        // mean 2, sample variance 1 -> 50%.
        assert!((coefficient_of_variation(&[1, 2, 3]).unwrap() - 50.0).abs() < 1e-12);
        let train = [3782, 3943, 2243, 4156, 4048, 4102, 3597, 3899, 3705, 3743, 3535, 3350];
        assert!((coefficient_of_variation(&train).unwrap() - 13.91).abs() <= 0.01);
    }

    #[test]
    fn split_serde_names() {
        assert_eq!(serde_json::to_string(&Split::Val).unwrap(), "\"val\"");
        assert_eq!(Split::Test.to_string(), "test");
    }
}
