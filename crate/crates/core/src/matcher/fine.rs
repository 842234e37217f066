use std::cmp::Ordering;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{matching_frame, orb_features, CoarseCandidate, CorpusIndex, MatchError, MatchParams, MatchQuery, MatchResult, MatchWeights};
use crate::image::{rotate, BinaryMask, SliceImage};
use crate::metrics::{hu_moments, orb_match_score, HuVector, NccStats, OrbFeature, OrbParams, SsimParams, SsimStats};

struct Rotated {
    ssim: SsimStats,
    ncc: NccStats,
}

/// A query moved into the corpus matching frame, with lazily built rotated
/// copies shared by every candidate.
pub struct PreparedQuery {
    pub(crate) hu: HuVector,
    pub(crate) image: SliceImage,
    pub(crate) mask: BinaryMask,
    /// Framed mask at every coarse rotation step.
    pub(crate) mask_rotations: Vec<BinaryMask>,
    pub(crate) orb: Vec<OrbFeature>,
    ssim_params: SsimParams,
    orb_params: OrbParams,
    rotations: Vec<OnceLock<Rotated>>,
}

impl PreparedQuery {
    pub fn new(query: &MatchQuery, corpus: &CorpusIndex) -> Result<Self, MatchError> {
        let p = &corpus.params;
        let hu = hu_moments(&query.mask)?;
        let (image, mask) = matching_frame(&query.image, &query.mask, p)?;
        let step = query.params.coarse_rotation_step.max(1);
        let mask_img = mask.to_image();
        let mask_rotations = (0..360)
            .step_by(step as usize)
            .map(|deg| {
                if deg == 0 {
                    mask.clone()
                } else {
                    let r = rotate(&mask_img, deg as f64);
                    BinaryMask::from_fn(r.width(), r.height(), |x, y| r.get(x, y) >= 0.5)
                }
            })
            .collect();
        let orb = orb_features(&query.image, &query.mask, p)?;
        Ok(Self {
            hu,
            image,
            mask,
            mask_rotations,
            orb,
            ssim_params: p.ssim.clone(),
            orb_params: p.orb.clone(),
            rotations: (0..360).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn framed_image(&self) -> &SliceImage {
        &self.image
    }

    pub fn framed_mask(&self) -> &BinaryMask {
        &self.mask
    }

    fn rotated(&self, degrees: u32) -> &Rotated {
        self.rotations[(degrees % 360) as usize].get_or_init(|| {
            let img = if degrees % 360 == 0 {
                self.image.clone()
            } else {
                rotate(&self.image, degrees as f64)
            };
            Rotated {
                ssim: SsimStats::new(&img, &self.ssim_params).expect("frame size validated at build"),
                ncc: NccStats::new(&img),
            }
        })
    }
}

/// SSIM and NCC of the query rotated by `rotation` against one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineScore {
    pub rotation: u32,
    pub ssim: f64,
    pub ncc: Option<f64>,
}

impl FineScore {
    /// Rotation-dependent part of the combined score.
    fn objective(&self, w: &MatchWeights) -> f64 {
        w.ssim * (self.ssim + 1.0) / 2.0 + self.ncc.map_or(0.0, |n| w.ncc * (n + 1.0) / 2.0)
    }
}

fn score_at(query: &PreparedQuery, corpus: &CorpusIndex, record: usize, rotation: u32) -> FineScore {
    let rec = &corpus.records[record];
    let rot = query.rotated(rotation);
    let ssim = rot
        .ssim
        .ssim(rec.ssim_stats(&corpus.params.ssim), &corpus.params.ssim)
        .expect("query and corpus share the frame size");
    let ncc = rot.ncc.correlate(rec.ncc_stats()).expect("query and corpus share the frame size");
    FineScore { rotation, ssim, ncc }
}

/// Coarse sweep, then a 1-degree refinement around the sweep winner. Ties
/// keep the earlier evaluation: lower sweep angle, then smaller offset.
fn best_rotation(query: &PreparedQuery, corpus: &CorpusIndex, record: usize, params: &MatchParams) -> FineScore {
    let w = &params.weights;
    let step = params.coarse_rotation_step;
    let mut best = score_at(query, corpus, record, 0);
    for deg in (step..360).step_by(step as usize) {
        let s = score_at(query, corpus, record, deg);
        if s.objective(w) > best.objective(w) {
            best = s;
        }
    }
    let centre = best.rotation as i64;
    for off in 1..=params.refine_radius as i64 {
        for d in [-off, off] {
            let deg = (centre + d).rem_euclid(360) as u32;
            let s = score_at(query, corpus, record, deg);
            if s.objective(w) > best.objective(w) {
                best = s;
            }
        }
    }
    best
}

/// Weighted mean of the normalised metrics over the valid ones.
pub(crate) fn combine(weights: &MatchWeights, ssim: f64, ncc: Option<f64>, orb: Option<f64>) -> f64 {
    let mut num = weights.ssim * (ssim + 1.0) / 2.0;
    let mut den = weights.ssim;
    if let Some(n) = ncc {
        num += weights.ncc * (n + 1.0) / 2.0;
        den += weights.ncc;
    }
    if let Some(o) = orb {
        num += weights.orb * o;
        den += weights.orb;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Score every candidate at its best rotation; results sorted by combined
/// score, ties by (volume, axis, index).
pub fn fine_match(
    query: &PreparedQuery,
    corpus: &CorpusIndex,
    candidates: &[CoarseCandidate],
    params: &MatchParams,
    progress: &(dyn Fn(f64) + Sync),
) -> Vec<MatchResult> {
    let done = AtomicUsize::new(0);
    let total = candidates.len().max(1) as f64;
    let mut results: Vec<MatchResult> = candidates
        .par_iter()
        .map(|c| {
            let rec = &corpus.records[c.record];
            let fine = best_rotation(query, corpus, c.record, params);
            let orb = orb_match_score(&query.orb, &rec.orb, &query.orb_params);
            let orb = orb.valid.then_some(orb.value);
            let result = MatchResult {
                volume_id: rec.volume_id.clone(),
                species: rec.species.clone(),
                axis: rec.axis,
                slice_index: rec.index,
                best_rotation: fine.rotation as f64,
                dice: c.dice,
                hu_dist: c.hu_dist,
                coarse_score: c.score,
                ssim: fine.ssim,
                ncc: fine.ncc,
                orb,
                combined: combine(&params.weights, fine.ssim, fine.ncc, orb),
            };
            let n = done.fetch_add(1, AtomicOrdering::Relaxed) + 1;
            progress(n as f64 / total);
            result
        })
        .collect();
    results.sort_by(|a, b| match b.combined.total_cmp(&a.combined) {
        Ordering::Equal => (&a.volume_id, a.axis, a.slice_index).cmp(&(&b.volume_id, b.axis, b.slice_index)),
        o => o,
    });
    results
}
