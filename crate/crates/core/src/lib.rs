//! Micro-CT foraminifera slice analysis.
//!
//! The crate covers the non-training half of a slice-classification workflow:
//!
//! * [`volume_io`]: NIfTI-1 subset reader/writer, manifests, slice extraction.
//! * [`preprocess`]: Otsu content filtering, segmentation, cropping, resizing.
//! * [`curation`]: specimen-level split balancing and augmentation kernels.
//! * [`metrics`]: Dice, Hu moments, SSIM, NCC and ORB.
//! * [`matcher`]: the coarse-to-fine slice matcher and its corpus index.
//! * [`classify`]: classifier providers and ensemble combiners.
//! * [`eval`]: confusion matrices, P/R/F1, top-k accuracy and ROC AUC.
//! * [`phantom`]: synthetic specimen volumes for tests and demos.

pub mod classify;
pub mod curation;
pub mod eval;
pub mod image;
pub mod labels;
pub mod matcher;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod volume_io;

pub use crate::classify::{ClassProbabilities, EnsembleConfig, PatchRule};
pub use crate::curation::{SplitAssignment, SpecimenStats};
pub use crate::eval::{EvalRecord, EvalReport};
pub use crate::image::{Axis, BinaryMask, Provenance, SliceImage};
pub use crate::labels::LabelSet;
pub use crate::matcher::{CorpusIndex, MatchQuery, MatchResult};
pub use crate::preprocess::PreprocessParams;
pub use crate::volume_io::{Manifest, Volume, VolumeHeader};
