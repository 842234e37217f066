use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_for_matching, MatchError};
use crate::image::Axis;
use crate::image::{BinaryMask, SliceImage};
use crate::metrics::{gaussian_blur, hu_moments, orb_detect, HuVector, NccStats, OrbFeature, OrbParams, SsimParams, SsimStats};
use crate::preprocess::{content_score, segment, PreprocessParams};
use crate::volume_io::{extract_slice, Manifest, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    pub preprocess: PreprocessParams,
    pub axes: Vec<Axis>,
    /// Extra border around the specimen in the matching frame, as a
    /// fraction of its radius.
    pub match_margin: f64,
    /// Gaussian sigma applied to the framed image; 0 disables it.
    pub match_blur: f64,
    /// Side of the separate frame ORB features are detected in.
    pub orb_frame_size: usize,
    pub orb: OrbParams,
    pub ssim: SsimParams,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            preprocess: PreprocessParams::default(),
            axes: vec![Axis::Z],
            match_margin: 0.05,
            match_blur: 1.0,
            orb_frame_size: 224,
            orb: OrbParams::default(),
            ssim: SsimParams::default(),
        }
    }
}

impl IndexParams {
    pub fn frame_size(&self) -> usize {
        self.preprocess.target_size
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        self.preprocess.validate()?;
        if self.frame_size() < self.ssim.window {
            return Err(MatchError::InvalidQuery(format!(
                "target size {} is below the SSIM window",
                self.frame_size()
            )));
        }
        if !(self.match_blur >= 0.0 && self.match_blur.is_finite()) {
            return Err(MatchError::InvalidQuery(format!("match blur {} must be finite and >= 0", self.match_blur)));
        }
        if self.axes.is_empty() {
            return Err(MatchError::InvalidQuery("no axes to index".into()));
        }
        Ok(())
    }
}

/// Cached per-slice data used by both matching stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceRecord {
    pub volume_id: String,
    pub species: String,
    pub axis: Axis,
    pub index: usize,
    /// Hu moments of the full-resolution segmentation.
    pub hu: HuVector,
    /// Segmentation in the matching frame.
    pub mask: BinaryMask,
    /// Masked intensities in the matching frame.
    pub image: SliceImage,
    pub orb: Vec<OrbFeature>,
    #[serde(skip)]
    ssim_stats: OnceLock<SsimStats>,
    #[serde(skip)]
    ncc_stats: OnceLock<NccStats>,
}

impl PartialEq for SliceRecord {
    fn eq(&self, other: &Self) -> bool {
        self.volume_id == other.volume_id
            && self.species == other.species
            && self.axis == other.axis
            && self.index == other.index
            && self.hu == other.hu
            && self.mask == other.mask
            && self.image == other.image
            && self.orb == other.orb
    }
}

impl SliceRecord {
    pub fn ssim_stats(&self, params: &SsimParams) -> &SsimStats {
        self.ssim_stats
            .get_or_init(|| SsimStats::new(&self.image, params).expect("frame size validated at build"))
    }

    pub fn ncc_stats(&self) -> &NccStats {
        self.ncc_stats.get_or_init(|| NccStats::new(&self.image))
    }

    pub fn slice_id(&self) -> String {
        format!("{}_{}_{:04}", self.volume_id, self.axis, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisCount {
    pub axis: Axis,
    pub total: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub volume_id: String,
    pub species: String,
    pub dims: [usize; 3],
    pub axes: Vec<AxisCount>,
}

impl VolumeSummary {
    pub fn kept(&self) -> usize {
        self.axes.iter().map(|a| a.kept).sum()
    }

    pub fn total(&self) -> usize {
        self.axes.iter().map(|a| a.total).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexFailure {
    pub volume_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub params: IndexParams,
    pub content_hash: String,
    pub volumes: Vec<VolumeSummary>,
    pub records: Vec<SliceRecord>,
    pub failures: Vec<IndexFailure>,
}

impl CorpusIndex {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn find(&self, volume_id: &str, axis: Axis, index: usize) -> Option<&SliceRecord> {
        self.records
            .iter()
            .find(|r| r.volume_id == volume_id && r.axis == axis && r.index == index)
    }
}

/// SHA-256 over the index parameters and every volume's identity and voxels.
pub fn content_hash(volumes: &[Volume], params: &IndexParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).expect("params serialise"));
    for v in volumes {
        h.update(v.specimen_id.as_bytes());
        h.update([0]);
        h.update(v.species.as_bytes());
        h.update([0]);
        for d in v.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for x in v.voxels() {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Frame a segmented slice for matching and apply the matching blur.
pub fn matching_frame(image: &SliceImage, mask: &BinaryMask, params: &IndexParams) -> Result<(SliceImage, BinaryMask), MatchError> {
    let (framed, framed_mask) = normalize_for_matching(image, mask, params.frame_size(), params.match_margin)?;
    if params.match_blur == 0.0 {
        return Ok((framed, framed_mask));
    }
    let size = 2 * (3.0 * params.match_blur).ceil() as usize + 1;
    Ok((gaussian_blur(&framed, size, params.match_blur), framed_mask))
}

/// ORB features of a segmented slice in its own, larger frame.
pub fn orb_features(image: &SliceImage, mask: &BinaryMask, params: &IndexParams) -> Result<Vec<OrbFeature>, MatchError> {
    let (framed, _) = normalize_for_matching(image, mask, params.orb_frame_size, params.match_margin)?;
    Ok(orb_detect(&framed, &params.orb))
}

/// Segment and frame one slice; `None` when it fails the content filter or
/// segmentation.
pub(crate) fn index_slice(image: &SliceImage, params: &IndexParams) -> Option<(HuVector, SliceImage, BinaryMask, Vec<OrbFeature>)> {
    if content_score(image) < params.preprocess.content_min_fraction {
        return None;
    }
    let mask = segment(image, &params.preprocess).ok()?.mask;
    let hu = hu_moments(&mask).ok()?;
    let (framed, framed_mask) = matching_frame(image, &mask, params).ok()?;
    let orb = orb_features(image, &mask, params).ok()?;
    Some((hu, framed, framed_mask, orb))
}

/// Index every slice of every volume along the configured axes.
pub fn build_corpus_index(volumes: &[Volume], params: &IndexParams) -> Result<CorpusIndex, MatchError> {
    params.validate()?;
    let tasks: Vec<(usize, Axis, usize)> = volumes
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| {
            params
                .axes
                .iter()
                .flat_map(move |&axis| (0..v.header.dim(axis)).map(move |i| (vi, axis, i)))
        })
        .collect();
    let records: Vec<Option<SliceRecord>> = tasks
        .par_iter()
        .map(|&(vi, axis, index)| {
            let vol = &volumes[vi];
            let slice = extract_slice(vol, axis, index).ok()?;
            let (hu, image, mask, orb) = index_slice(&slice, params)?;
            Some(SliceRecord {
                volume_id: vol.specimen_id.clone(),
                species: vol.species.clone(),
                axis,
                index,
                hu,
                mask,
                image,
                orb,
                ssim_stats: OnceLock::new(),
                ncc_stats: OnceLock::new(),
            })
        })
        .collect();
    let summaries = volumes
        .iter()
        .enumerate()
        .map(|(vi, v)| VolumeSummary {
            volume_id: v.specimen_id.clone(),
            species: v.species.clone(),
            dims: v.dims(),
            axes: params
                .axes
                .iter()
                .map(|&axis| AxisCount {
                    axis,
                    total: v.header.dim(axis),
                    kept: tasks
                        .iter()
                        .zip(&records)
                        .filter(|((tv, ta, _), r)| *tv == vi && *ta == axis && r.is_some())
                        .count(),
                })
                .collect(),
        })
        .collect();
    Ok(CorpusIndex {
        params: params.clone(),
        content_hash: content_hash(volumes, params),
        volumes: summaries,
        records: records.into_iter().flatten().collect(),
        failures: Vec::new(),
    })
}

/// Load every manifest entry and index those that load; failures are
/// recorded rather than aborting the build.
pub fn index_manifest(manifest: &Manifest, params: &IndexParams) -> Result<CorpusIndex, MatchError> {
    let mut volumes = Vec::new();
    let mut failures = Vec::new();
    for (entry, loaded) in manifest.entries.iter().zip(manifest.load_all()) {
        match loaded {
            Ok(v) => volumes.push(v),
            Err(e) => failures.push(IndexFailure {
                volume_id: entry.specimen_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let mut index = build_corpus_index(&volumes, params)?;
    index.failures = failures;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, Morphology, PhantomSpec};
    use crate::preprocess::preprocess_pipeline;

    fn small_params() -> IndexParams {
        let mut p = IndexParams::default();
        p.preprocess.target_size = 48;
        p
    }

    #[test]
    fn slice_count_equals_pipeline_survivors() {
        let vols: Vec<Volume> = [(Morphology::Spiral, 1u64), (Morphology::Layered, 2)]
            .iter()
            .enumerate()
            .map(|(i, &(m, s))| generate(&PhantomSpec::new(format!("P{i}"), m, s).with_dims([40, 40, 36])))
            .collect();
        let params = small_params();
        let index = build_corpus_index(&vols, &params).unwrap();
        let mut expected = 0;
        for v in &vols {
            for z in 0..v.dims()[2] {
                let s = extract_slice(v, Axis::Z, z).unwrap();
                if preprocess_pipeline(&s, &params.preprocess).image.is_some() {
                    expected += 1;
                }
            }
        }
        assert_eq!(index.len(), expected);
        assert_eq!(index.volumes.iter().map(|v| v.kept()).sum::<usize>(), expected);
        assert!(index.records.iter().all(|r| r.image.width() == 48));
    }

    #[test]
    fn hash_tracks_params_and_content() {
        let v = vec![generate(&PhantomSpec::new("A", Morphology::Spiny, 1).with_dims([24, 24, 24]))];
        let p = small_params();
        let h = content_hash(&v, &p);
        assert_eq!(h, content_hash(&v, &p));
        let mut q = p.clone();
        q.match_margin = 0.1;
        assert_ne!(h, content_hash(&v, &q));
        let w = vec![generate(&PhantomSpec::new("A", Morphology::Spiny, 2).with_dims([24, 24, 24]))];
        assert_ne!(h, content_hash(&w, &p));
    }
}
