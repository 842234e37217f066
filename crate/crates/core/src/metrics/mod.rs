//! Image similarity primitives used by the slice matcher.

mod dice;
mod hu;
mod ncc;
pub mod orb;
mod orb_pattern;
mod ssim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dice::dice;
pub use hu::{central_moments, hu_distance, hu_invariants, hu_moments, HuVector, HU_DISTANCE_FLOOR, HU_EPSILON};
pub use ncc::{ncc, NccStats};
pub use orb::{orb_detect, orb_match_score, OrbFeature, OrbParams};
pub use ssim::{gaussian_blur, gaussian_kernel, ssim, SsimParams, SsimStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("inputs have different shapes")]
    ShapeMismatch,
    #[error("images must be at least {min}x{min} (got {width}x{height})")]
    TooSmall { min: usize, width: usize, height: usize },
    #[error("mask is empty")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dice,
    Hu,
    Ssim,
    Ncc,
    Orb,
}

impl MetricKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dice" => Some(MetricKind::Dice),
            "hu" => Some(MetricKind::Hu),
            "ssim" => Some(MetricKind::Ssim),
            "ncc" => Some(MetricKind::Ncc),
            "orb" => Some(MetricKind::Orb),
            _ => None,
        }
    }
}

/// A metric value plus whether it is defined for the inputs (NCC on a
/// constant image, ORB without features).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
    pub valid: bool,
}

impl MetricScore {
    pub fn valid(kind: MetricKind, value: f64) -> Self {
        Self { kind, value, valid: true }
    }

    pub fn invalid(kind: MetricKind) -> Self {
        Self { kind, value: 0.0, valid: false }
    }
}
