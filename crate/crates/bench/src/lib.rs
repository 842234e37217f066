//! Shared inputs for the criterion benches in `benches/`.

use foramslice_core::matcher::{build_corpus_index, IndexParams};
use foramslice_core::phantom::{generate, standard_corpus};
use foramslice_core::preprocess::segment;
use foramslice_core::volume_io::extract_slice;
use foramslice_core::{Axis, BinaryMask, CorpusIndex, PreprocessParams, SliceImage, Volume};

/// The phantom corpus at a reduced size.
pub fn volumes(dims: [usize; 3]) -> Vec<Volume> {
    standard_corpus().iter().map(|s| generate(&s.clone().with_dims(dims))).collect()
}

/// Middle Z slice of one phantom volume.
pub fn middle_slice(volume: &Volume) -> SliceImage {
    extract_slice(volume, Axis::Z, volume.dims()[2] / 2).expect("slice in range")
}

pub fn mask_of(image: &SliceImage) -> BinaryMask {
    segment(image, &PreprocessParams::default()).expect("phantom slice segments").mask
}

pub fn index(volumes: &[Volume], frame: usize) -> CorpusIndex {
    let mut params = IndexParams::default();
    params.preprocess.target_size = frame;
    build_corpus_index(volumes, &params).expect("index builds")
}
