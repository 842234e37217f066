//! Two-stage slice matching: a cheap mask-based ranking over every indexed
//! slice, then rotation-searched SSIM/NCC plus ORB scoring of the survivors.
//!
//! Both the query and the corpus slices are brought into a common frame
//! before comparison: the specimen mask's centroid is moved to the centre
//! and the farthest foreground pixel is scaled to a fixed radius. That frame
//! commutes with in-plane rotation, so a rotated query differs from its
//! source slice by a rotation about the crop centre only.

mod cache;
mod coarse;
mod fine;
mod index;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{build_or_load, load_cache, save_cache, CacheError, CacheStatus, CACHE_MAGIC, CACHE_SCHEMA_VERSION};
pub use coarse::{coarse_rank, CoarseCandidate, COARSE_HU_WEIGHT};
pub use fine::{fine_match, FineScore, PreparedQuery};
pub use index::{build_corpus_index, content_hash, index_manifest, matching_frame, orb_features, AxisCount, CorpusIndex, IndexFailure, IndexParams, SliceRecord, VolumeSummary};

use crate::image::{Axis, BinaryMask, SliceImage};
use crate::metrics::MetricError;
use crate::preprocess::{segment, PreprocessError, PreprocessParams};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("no corpus slices match the query filters")]
    EmptyCorpus,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Relative weights of the fine-stage metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub ssim: f64,
    pub ncc: f64,
    pub orb: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            ssim: 0.5,
            ncc: 0.3,
            orb: 0.2,
        }
    }
}

impl MatchWeights {
    fn validate(&self) -> Result<(), MatchError> {
        let w = [self.ssim, self.ncc, self.orb];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MatchError::InvalidQuery("weights must be nonnegative".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(MatchError::InvalidQuery("weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// Search settings shared by every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Restrict to these volume ids.
    pub candidate_volume_ids: Option<Vec<String>>,
    /// Restrict to these axes; empty means every indexed axis.
    pub axes: Vec<Axis>,
    pub top_k_coarse: usize,
    /// Number of results returned.
    pub top_n: usize,
    /// Step of the first rotation sweep, whole degrees dividing 360.
    pub coarse_rotation_step: u32,
    /// Half-width of the 1-degree refinement window around the sweep winner.
    pub refine_radius: u32,
    pub weights: MatchWeights,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            candidate_volume_ids: None,
            axes: Vec::new(),
            top_k_coarse: 50,
            top_n: 10,
            coarse_rotation_step: 15,
            refine_radius: 7,
            weights: MatchWeights::default(),
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        self.weights.validate()?;
        let step = self.coarse_rotation_step;
        if step == 0 || 360 % step != 0 {
            return Err(MatchError::InvalidQuery(format!("rotation step {step} must divide 360")));
        }
        if self.top_k_coarse == 0 {
            return Err(MatchError::InvalidQuery("top_k_coarse must be positive".into()));
        }
        Ok(())
    }

    /// Whether a corpus slice passes the volume and axis filters.
    pub fn admits(&self, volume_id: &str, axis: Axis) -> bool {
        let volume_ok = self
            .candidate_volume_ids
            .as_ref()
            .map_or(true, |ids| ids.iter().any(|v| v == volume_id));
        volume_ok && (self.axes.is_empty() || self.axes.contains(&axis))
    }
}

/// A segmented query slice.
#[derive(Debug, Clone)]
pub struct MatchQuery {
    pub image: SliceImage,
    pub mask: BinaryMask,
    pub params: MatchParams,
}

impl MatchQuery {
    /// Segments `image` with the corpus preprocessing settings.
    pub fn from_image(image: SliceImage, preprocess: &PreprocessParams, params: MatchParams) -> Result<Self, MatchError> {
        let mask = segment(&image, preprocess)?.mask;
        Ok(Self { image, mask, params })
    }

    pub fn with_mask(image: SliceImage, mask: BinaryMask, params: MatchParams) -> Result<Self, MatchError> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(MatchError::InvalidQuery("mask and image differ in shape".into()));
        }
        if mask.is_empty() {
            return Err(MatchError::InvalidQuery("query mask is empty".into()));
        }
        Ok(Self { image, mask, params })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub volume_id: String,
    pub species: String,
    pub axis: Axis,
    pub slice_index: usize,
    /// Rotation (degrees, counter-clockwise as displayed) that carries the
    /// query onto the matched slice.
    pub best_rotation: f64,
    pub dice: f64,
    pub hu_dist: f64,
    pub coarse_score: f64,
    pub ssim: f64,
    pub ncc: Option<f64>,
    pub orb: Option<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub coarse_ms: f64,
    pub fine_ms: f64,
    pub total_ms: f64,
    pub slices_scanned: usize,
    pub candidates: usize,
    pub slices_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub results: Vec<MatchResult>,
    pub timing: TimingReport,
}

/// Frame radius as a multiple of the specimen's RMS radius (a uniform disk
/// of radius `R` gets about `1.24 R`).
pub const FRAME_RMS_REACH: f64 = 1.75;

/// Resample a slice into the matching frame. Pixels outside the mask are
/// zeroed; the intensity-weighted centroid of what remains lands at the
/// centre and `FRAME_RMS_REACH * (1 + margin)` RMS radii reach the border.
/// Intensity moments survive interpolation far better than the mask
/// outline, which keeps small slices stable under rotation.
pub fn normalize_for_matching(
    image: &SliceImage,
    mask: &BinaryMask,
    size: usize,
    margin: f64,
) -> Result<(SliceImage, BinaryMask), MatchError> {
    if mask.is_empty() {
        return Err(MatchError::Metric(MetricError::EmptyMask));
    }
    let masked = image.masked(mask);
    let weight = |x: usize, y: usize| masked.get(x, y).max(0.0) as f64;
    let mut total: f64 = mask.points().map(|(x, y)| weight(x, y)).sum();
    let uniform = total <= 0.0;
    if uniform {
        total = mask.count() as f64;
    }
    let w = |x: usize, y: usize| if uniform { 1.0 } else { weight(x, y) };
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in mask.points() {
        sx += w(x, y) * x as f64;
        sy += w(x, y) * y as f64;
    }
    let (cx, cy) = (sx / total, sy / total);
    let second: f64 = mask
        .points()
        .map(|(x, y)| w(x, y) * ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)))
        .sum();
    // A single pixel still has the spread of a unit square.
    let rms = (second / total + 1.0 / 6.0).sqrt();
    let radius = FRAME_RMS_REACH * rms * (1.0 + margin);
    let half = (size as f64 - 1.0) / 2.0;
    let scale = if size > 1 { radius / half } else { 1.0 };
    let mask_img = mask.to_image();
    let src = |u: usize, v: usize| (cx + (u as f64 - half) * scale, cy + (v as f64 - half) * scale);
    let out = SliceImage::from_fn(size, size, |u, v| {
        let (x, y) = src(u, v);
        masked.sample_bilinear(x, y).unwrap_or(0.0) as f32
    });
    let out_mask = BinaryMask::from_fn(size, size, |u, v| {
        let (x, y) = src(u, v);
        mask_img.sample_bilinear(x, y).unwrap_or(0.0) >= 0.5
    });
    Ok((out, out_mask))
}

/// Coarse ranking followed by fine scoring of the survivors.
pub fn match_query(query: &MatchQuery, corpus: &CorpusIndex) -> Result<MatchOutcome, MatchError> {
    match_query_with_progress(query, corpus, &|_| {})
}

/// As [`match_query`], reporting the fraction of fine-stage candidates
/// finished. Calls may arrive out of order from worker threads.
pub fn match_query_with_progress(
    query: &MatchQuery,
    corpus: &CorpusIndex,
    progress: &(dyn Fn(f64) + Sync),
) -> Result<MatchOutcome, MatchError> {
    query.params.validate()?;
    let start = Instant::now();
    let prepared = PreparedQuery::new(query, corpus)?;
    let candidates = coarse_rank(&prepared, corpus, &query.params)?;
    let scanned = corpus
        .records
        .iter()
        .filter(|r| query.params.admits(&r.volume_id, r.axis))
        .count();
    let coarse_ms = start.elapsed().as_secs_f64() * 1e3;
    let fine_start = Instant::now();
    let mut results = fine_match(&prepared, corpus, &candidates, &query.params, progress);
    results.truncate(query.params.top_n.max(1));
    let fine_ms = fine_start.elapsed().as_secs_f64() * 1e3;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(MatchOutcome {
        results,
        timing: TimingReport {
            coarse_ms,
            fine_ms,
            total_ms,
            slices_scanned: scanned,
            candidates: candidates.len(),
            slices_per_sec: if total_ms > 0.0 { scanned as f64 / (total_ms / 1e3) } else { 0.0 },
        },
    })
}

/// Fine scoring of every admitted corpus slice, skipping the coarse stage.
/// Used to measure how often coarse pruning changes the winner.
pub fn exhaustive_match(query: &MatchQuery, corpus: &CorpusIndex) -> Result<Vec<MatchResult>, MatchError> {
    query.params.validate()?;
    let prepared = PreparedQuery::new(query, corpus)?;
    let everything = MatchParams {
        top_k_coarse: usize::MAX,
        ..query.params.clone()
    };
    let candidates = coarse_rank(&prepared, corpus, &everything)?;
    Ok(fine_match(&prepared, corpus, &candidates, &query.params, &|_| {}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::rotate;

    fn blob() -> (SliceImage, BinaryMask) {
        let img = SliceImage::from_fn(48, 48, |x, y| {
            let inside = (10..30).contains(&x) && (14..26).contains(&y) || (24..30).contains(&x) && (26..36).contains(&y);
            if inside {
                0.3 + ((x * 7 + y * 3) % 10) as f32 * 0.05
            } else {
                0.0
            }
        });
        let mask = BinaryMask::from_fn(48, 48, |x, y| img.get(x, y) > 0.0);
        (img, mask)
    }

    #[test]
    fn normalisation_centres_the_specimen() {
        let (img, mask) = blob();
        let (out, m) = normalize_for_matching(&img, &mask, 32, 0.05).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert!(m.count() > 0);
        let mass: f64 = out.pixels().iter().map(|&v| v as f64).sum();
        let cx = (0..32).flat_map(|y| (0..32).map(move |x| (x, y))).map(|(x, y)| x as f64 * out.get(x, y) as f64).sum::<f64>() / mass;
        let cy = (0..32).flat_map(|y| (0..32).map(move |x| (x, y))).map(|(x, y)| y as f64 * out.get(x, y) as f64).sum::<f64>() / mass;
        assert!((cx - 15.5).abs() < 0.5 && (cy - 15.5).abs() < 0.5, "{cx} {cy}");
    }

    #[test]
    fn normalisation_commutes_with_quarter_turns() {
        let (img, mask) = blob();
        let (a, _) = normalize_for_matching(&img, &mask, 32, 0.05).unwrap();
        let r = rotate(&img, 90.0);
        let rm = BinaryMask::from_fn(48, 48, |x, y| r.get(x, y) > 0.0);
        let (b, _) = normalize_for_matching(&r, &rm, 32, 0.05).unwrap();
        let a_rot = rotate(&a, 90.0);
        let diff: f64 = a_rot
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(p, q)| (p - q).abs() as f64)
            .sum::<f64>()
            / 1024.0;
        assert!(diff < 1e-4, "mean difference {diff}");
    }

    #[test]
    fn params_validation() {
        assert!(MatchParams::default().validate().is_ok());
        let bad = MatchParams {
            coarse_rotation_step: 7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MatchParams {
            weights: MatchWeights {
                ssim: 0.5,
                ncc: 0.5,
                orb: 0.5,
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
