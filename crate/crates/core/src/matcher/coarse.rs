use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusIndex, MatchError, MatchParams, PreparedQuery};
use crate::metrics::hu_distance;

/// Weight of the Hu distance against Dice in the coarse score.
pub const COARSE_HU_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseCandidate {
    /// Position in `CorpusIndex::records`.
    pub record: usize,
    /// Best Dice over the coarse rotation sweep of the query mask.
    pub dice: f64,
    pub hu_dist: f64,
    pub score: f64,
}

fn dice_counts(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Rank admitted corpus slices by `dice - 0.1 * hu_dist`, where Dice is
/// maximised over the query mask's coarse rotations. Ties go to the lower
/// (volume, axis, index).
pub fn coarse_rank(
    query: &PreparedQuery,
    corpus: &CorpusIndex,
    params: &MatchParams,
) -> Result<Vec<CoarseCandidate>, MatchError> {
    let admitted: Vec<usize> = (0..corpus.records.len())
        .filter(|&i| params.admits(&corpus.records[i].volume_id, corpus.records[i].axis))
        .collect();
    if admitted.is_empty() {
        return Err(MatchError::EmptyCorpus);
    }
    let counts: Vec<usize> = query.mask_rotations.iter().map(|m| m.count()).collect();
    let mut ranked: Vec<CoarseCandidate> = admitted
        .par_iter()
        .map(|&i| {
            let rec = &corpus.records[i];
            let rc = rec.mask.count();
            let dice = query
                .mask_rotations
                .iter()
                .zip(&counts)
                .map(|(m, &qc)| dice_counts(m.intersection_count(&rec.mask), qc, rc))
                .fold(0.0, f64::max);
            let hu_dist = hu_distance(&query.hu, &rec.hu);
            CoarseCandidate {
                record: i,
                dice,
                hu_dist,
                score: dice - COARSE_HU_WEIGHT * hu_dist,
            }
        })
        .collect();
    let key = |c: &CoarseCandidate| {
        let r = &corpus.records[c.record];
        (r.volume_id.clone(), r.axis, r.index)
    };
    ranked.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => key(a).cmp(&key(b)),
        o => o,
    });
    ranked.truncate(params.top_k_coarse);
    Ok(ranked)
}
