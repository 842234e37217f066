//! Slice quality control and segmentation: Otsu thresholding, low-content
//! rejection, median denoising, sensitivity-controlled foreground
//! segmentation, bounding-box cropping and bilinear resizing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, SliceImage};

pub const HISTOGRAM_BINS: usize = 256;

/// Fraction of the remaining headroom `(1 - t_otsu)` that full sensitivity
/// adds to the threshold.
pub const SENSITIVITY_GAIN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("image has a single intensity value")]
    DegenerateImage,
    #[error("no foreground pixel survives segmentation (sensitivity too high)")]
    EmptyForeground,
    #[error("image and mask shapes differ")]
    ShapeMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    /// 0 keeps the Otsu foreground, 1 removes the most background.
    pub sensitivity: f64,
    /// Slices whose content score falls below this are rejected.
    pub content_min_fraction: f64,
    /// Side of the square output raster.
    pub target_size: usize,
    /// Median window is `(2r + 1)^2`.
    pub denoise_radius: usize,
    /// Bounding-box margin per side, as a fraction of the box extent.
    pub crop_margin: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            sensitivity: 0.0,
            content_min_fraction: 0.01,
            target_size: 224,
            denoise_radius: 1,
            crop_margin: 0.05,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..=1.0).contains(&self.sensitivity) {
            return Err(PreprocessError::InvalidParams("sensitivity must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.content_min_fraction) {
            return Err(PreprocessError::InvalidParams(
                "content_min_fraction must be in [0, 1]".into(),
            ));
        }
        if self.target_size == 0 {
            return Err(PreprocessError::InvalidParams("target_size must be >= 1".into()));
        }
        if !(self.crop_margin >= 0.0 && self.crop_margin.is_finite()) {
            return Err(PreprocessError::InvalidParams("crop_margin must be >= 0".into()));
        }
        Ok(())
    }
}

#[inline]
fn bin_of(v: f32) -> usize {
    ((v as f64 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn histogram(image: &SliceImage) -> [u64; HISTOGRAM_BINS] {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &v in image.pixels() {
        hist[bin_of(v)] += 1;
    }
    hist
}

/// Compares two between-class scores `num / den` exactly where the integers
/// fit, falling back to floating point for very large images.
fn score_greater(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l > r,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Otsu split over a 256-bin histogram: returns the last bin of the
/// background class. Ties resolve to the lowest bin.
///
/// With bin indices as class values, the between-class variance at split `t`
/// is proportional to `(N1*S0 - N0*S1)^2 / (N0*N1)`, which is evaluated in
/// integers so ties are exact.
pub fn otsu_bin(hist: &[u64; HISTOGRAM_BINS]) -> Result<usize, PreprocessError> {
    let total: u64 = hist.iter().sum();
    let sum_all: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best: Option<(usize, (u128, u128))> = None;
    for t in 0..HISTOGRAM_BINS - 1 {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        let diff = (n1 as i128 * s0 as i128 - n0 as i128 * s1 as i128).unsigned_abs();
        let score = (diff * diff, n0 as u128 * n1 as u128);
        if best.map_or(true, |(_, b)| score_greater(score, b)) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t).ok_or(PreprocessError::DegenerateImage)
}

/// Otsu threshold in intensity units: pixels `>= threshold` are foreground.
pub fn otsu_threshold(image: &SliceImage) -> Result<f64, PreprocessError> {
    let (lo, hi) = image.min_max();
    if lo == hi {
        return Err(PreprocessError::DegenerateImage);
    }
    let t = otsu_bin(&histogram(image))?;
    Ok((t + 1) as f64 / HISTOGRAM_BINS as f64)
}

/// Fraction of pixels at or above the Otsu threshold; 0 for degenerate
/// images.
pub fn content_score(image: &SliceImage) -> f64 {
    match otsu_threshold(image) {
        Ok(t) => foreground_fraction(image, t),
        Err(_) => 0.0,
    }
}

fn foreground_fraction(image: &SliceImage, threshold: f64) -> f64 {
    let above = image.pixels().iter().filter(|&&v| v as f64 >= threshold).count();
    above as f64 / image.len() as f64
}

/// Median filter with a `(2r + 1)^2` window; borders replicate the edge.
pub fn median_filter(image: &SliceImage, radius: usize) -> SliceImage {
    if radius == 0 {
        return image.clone();
    }
    let (w, h) = (image.width() as isize, image.height() as isize);
    let r = radius as isize;
    let mut window = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            window.clear();
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    window.push(image.get(xx, yy));
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            out.set(x as usize, y as usize, *m);
        }
    }
    out
}

/// Connected components of the set pixels (4-connectivity). Returns one
/// label per pixel (`0` = unset, components numbered from 1 in row-major
/// discovery order) and each component's size.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 || !mask.get_index(start) {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if labels[j] == 0 && mask.get_index(j) {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 4-connected component; ties go to the component found
/// first in row-major order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let Some(best) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
    else {
        return BinaryMask::new(mask.width(), mask.height());
    };
    let w = mask.width();
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| labels[y * w + x] == best)
}

/// Sets every background pixel that is not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !outside[i] && !mask.get_index(i) {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        if x > 0 {
            seed(i - 1, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(i + 1, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(i - w, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(i + w, &mut outside, &mut queue);
        }
    }
    BinaryMask::from_fn(w, h, |x, y| !outside[y * w + x])
}

/// Threshold used by [`segment_foreground`] for a given Otsu threshold.
pub fn sensitivity_threshold(t_otsu: f64, sensitivity: f64) -> f64 {
    t_otsu + sensitivity * (1.0 - t_otsu) * SENSITIVITY_GAIN
}

/// Details of a segmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub otsu_threshold: f64,
    pub threshold: f64,
}

/// Foreground segmentation.
///
/// The image is median-filtered and thresholded at Otsu; the largest
/// 4-connected component at that base threshold anchors the specimen. The
/// sensitivity-raised threshold is then applied inside the anchor only, and
/// interior holes are filled. Restricting to the anchor keeps the mask
/// monotone in sensitivity: raising it can only remove pixels.
pub fn segment(image: &SliceImage, params: &PreprocessParams) -> Result<Segmentation, PreprocessError> {
    params.validate()?;
    let denoised = median_filter(image, params.denoise_radius);
    let t_otsu = otsu_threshold(&denoised)?;
    let (w, h) = (image.width(), image.height());
    let base = BinaryMask::from_fn(w, h, |x, y| denoised.get(x, y) as f64 >= t_otsu);
    let anchor = largest_component(&base);
    if anchor.is_empty() {
        return Err(PreprocessError::EmptyForeground);
    }
    let threshold = sensitivity_threshold(t_otsu, params.sensitivity);
    let raised = BinaryMask::from_fn(w, h, |x, y| anchor.get(x, y) && denoised.get(x, y) as f64 >= threshold);
    if raised.is_empty() {
        return Err(PreprocessError::EmptyForeground);
    }
    Ok(Segmentation {
        mask: fill_holes(&raised),
        otsu_threshold: t_otsu,
        threshold,
    })
}

pub fn segment_foreground(image: &SliceImage, params: &PreprocessParams) -> Result<BinaryMask, PreprocessError> {
    segment(image, params).map(|s| s.mask)
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Tight bounding box of `mask` grown by `margin_fraction` of its extent on
/// each side (rounded to whole pixels) and clamped to the image.
pub fn crop_bbox(mask: &BinaryMask, margin_fraction: f64) -> Result<BBox, PreprocessError> {
    let (x0, y0, x1, y1) = mask.bbox().ok_or(PreprocessError::EmptyForeground)?;
    let mx = (margin_fraction * (x1 - x0 + 1) as f64).round() as usize;
    let my = (margin_fraction * (y1 - y0 + 1) as f64).round() as usize;
    Ok(BBox {
        x0: x0.saturating_sub(mx),
        y0: y0.saturating_sub(my),
        x1: (x1 + mx).min(mask.width() - 1),
        y1: (y1 + my).min(mask.height() - 1),
    })
}

pub fn crop_to_bbox(image: &SliceImage, mask: &BinaryMask, margin_fraction: f64) -> Result<SliceImage, PreprocessError> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(PreprocessError::ShapeMismatch);
    }
    let bb = crop_bbox(mask, margin_fraction)?;
    Ok(image.sub_image(bb.x0, bb.y0, bb.width(), bb.height()))
}

fn crop_mask(mask: &BinaryMask, bb: BBox) -> BinaryMask {
    BinaryMask::from_fn(bb.width(), bb.height(), |x, y| mask.get(bb.x0 + x, bb.y0 + y))
}

/// Source coordinate for output index `i` under corner alignment: the first
/// and last output samples land exactly on the first and last input pixels.
#[inline]
fn corner_aligned(i: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len == 1 {
        (src_len as f64 - 1.0) / 2.0
    } else {
        i as f64 * ((src_len as f64 - 1.0) / (dst_len as f64 - 1.0))
    }
}

/// Bilinear resize to `target_size x target_size` with corner-aligned
/// sampling.
pub fn resize_bilinear(image: &SliceImage, target_size: usize) -> SliceImage {
    resize_to(image, target_size, target_size)
}

pub fn resize_to(image: &SliceImage, width: usize, height: usize) -> SliceImage {
    assert!(width >= 1 && height >= 1, "target size must be >= 1");
    let mut out = SliceImage::from_fn(width, height, |u, v| {
        let sx = corner_aligned(u, image.width(), width);
        let sy = corner_aligned(v, image.height(), height);
        image.sample_bilinear(sx, sy).unwrap_or(0.0) as f32
    });
    out.set_provenance(image.provenance().cloned());
    out
}

/// Resizes a mask by sampling the nearest source pixel under the same
/// corner-aligned mapping.
pub fn resize_mask(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    BinaryMask::from_fn(width, height, |u, v| {
        let sx = corner_aligned(u, mask.width(), width).round() as usize;
        let sy = corner_aligned(v, mask.height(), height).round() as usize;
        mask.get(sx.min(mask.width() - 1), sy.min(mask.height() - 1))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub content_score: f64,
    pub otsu_threshold: Option<f64>,
    pub threshold_used: Option<f64>,
    pub bbox: Option<BBox>,
    pub rejected: bool,
    pub reason: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    /// Masked, cropped and resized slice (absent when rejected or failed).
    pub image: Option<SliceImage>,
    pub mask: Option<BinaryMask>,
    pub report: PreprocessReport,
}

/// Content filter, then segmentation, crop and resize. Failures are recorded
/// in the report instead of being returned as errors.
pub fn preprocess_pipeline(image: &SliceImage, params: &PreprocessParams) -> PreprocessOutput {
    let mut report = PreprocessReport {
        content_score: 0.0,
        otsu_threshold: None,
        threshold_used: None,
        bbox: None,
        rejected: false,
        reason: None,
        error: None,
    };
    let fail = |mut report: PreprocessReport, rejected: bool, reason: String| {
        report.rejected = rejected;
        if rejected {
            report.reason = Some(reason);
        } else {
            report.error = Some(reason);
        }
        PreprocessOutput {
            image: None,
            mask: None,
            report,
        }
    };
    if let Err(e) = params.validate() {
        return fail(report, false, e.to_string());
    }

    match otsu_threshold(image) {
        Ok(t) => {
            report.otsu_threshold = Some(t);
            report.content_score = foreground_fraction(image, t);
        }
        Err(e) => return fail(report, true, e.to_string()),
    }
    if report.content_score < params.content_min_fraction {
        let reason = format!(
            "content score {:.4} below minimum {:.4}",
            report.content_score, params.content_min_fraction
        );
        return fail(report, true, reason);
    }

    let seg = match segment(image, params) {
        Ok(s) => s,
        Err(e) => return fail(report, false, e.to_string()),
    };
    report.threshold_used = Some(seg.threshold);
    let bb = match crop_bbox(&seg.mask, params.crop_margin) {
        Ok(bb) => bb,
        Err(e) => return fail(report, false, e.to_string()),
    };
    report.bbox = Some(bb);

    let cropped = image.masked(&seg.mask).sub_image(bb.x0, bb.y0, bb.width(), bb.height());
    let out_image = resize_bilinear(&cropped, params.target_size);
    let out_mask = resize_mask(&crop_mask(&seg.mask, bb), params.target_size, params.target_size);
    PreprocessOutput {
        image: Some(out_image),
        mask: Some(out_mask),
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk(n: usize, cx: f64, cy: f64, r: f64, fg: f32, bg: f32) -> SliceImage {
        SliceImage::from_fn(n, n, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                fg
            } else {
                bg
            }
        })
    }

    /// Independent Otsu oracle: partition the pixels directly for every
    /// candidate split and compare exact integer criteria.
    fn otsu_oracle(image: &SliceImage) -> Option<usize> {
        let bins: Vec<u64> = image.pixels().iter().map(|&v| bin_of(v) as u64).collect();
        let n = bins.len() as i128;
        let mut best: Option<(usize, i128, i128)> = None;
        for t in 0..255u64 {
            let (c0, c1): (Vec<u64>, Vec<u64>) = bins.iter().partition(|&&b| b <= t);
            if c0.is_empty() || c1.is_empty() {
                continue;
            }
            let (n0, n1) = (c0.len() as i128, c1.len() as i128);
            let s0: i128 = c0.iter().map(|&b| b as i128).sum();
            let s1: i128 = c1.iter().map(|&b| b as i128).sum();
            assert_eq!(n0 + n1, n);
            let num = (n1 * s0 - n0 * s1).pow(2);
            let den = n0 * n1;
            let better = match best {
                None => true,
                Some((_, bn, bd)) => num * bd > bn * den,
            };
            if better {
                best = Some((t as usize, num, den));
            }
        }
        best.map(|b| b.0)
    }

    #[test]
    fn bimodal_split_between_clusters() {
        let img = SliceImage::from_fn(10, 10, |x, y| if (x + 10 * y) < 50 { 0.0 } else { 1.0 });
        let t = otsu_threshold(&img).unwrap();
        assert!(t > 0.0 && t <= 1.0);
        assert_eq!(content_score(&img), 0.5);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = SliceImage::filled(8, 8, 0.3);
        assert_eq!(otsu_threshold(&img), Err(PreprocessError::DegenerateImage));
        assert_eq!(content_score(&img), 0.0);
        assert_eq!(content_score(&SliceImage::filled(8, 8, 0.0)), 0.0);
    }

    #[test]
    fn three_level_fixture_matches_exhaustive_scan() {
        let mut values = vec![0.1f32; 32];
        values.extend(vec![0.4f32; 16]);
        values.extend(vec![0.9f32; 16]);
        let img = SliceImage::new(8, 8, values).unwrap();
        let t = otsu_bin(&histogram(&img)).unwrap();
        assert_eq!(Some(t), otsu_oracle(&img));
        // Bins 25 / 102 / 230 with weights 2:1:1: separating the top level
        // (between-class score 385.9k) beats separating the bottom (318.1k).
        assert_eq!(t, 102);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn otsu_equals_exhaustive(pixels in proptest::collection::vec(0.0f32..=1.0, 256)) {
            let img = SliceImage::new(16, 16, pixels).unwrap();
            let (lo, hi) = img.min_max();
            prop_assume!(lo != hi);
            prop_assert_eq!(otsu_bin(&histogram(&img)).ok(), otsu_oracle(&img));
        }
    }

    #[test]
    fn segmentation_keeps_disk_and_drops_speckles() {
        let mut img = disk(40, 20.0, 20.0, 10.0, 0.9, 0.1);
        let clean = segment_foreground(&img, &PreprocessParams { denoise_radius: 0, ..Default::default() }).unwrap();
        for (x, y) in [(2, 2), (37, 3), (5, 35)] {
            img.set(x, y, 0.9);
        }
        let mask = segment_foreground(&img, &PreprocessParams { denoise_radius: 0, ..Default::default() }).unwrap();
        // Oracle: the flood-fill component containing the disk centre.
        let (labels, _) = label_components(&BinaryMask::from_fn(40, 40, |x, y| img.get(x, y) >= 0.5));
        let centre = labels[20 * 40 + 20];
        let expected = BinaryMask::from_fn(40, 40, |x, y| labels[y * 40 + x] == centre);
        assert_eq!(mask, expected);
        assert_eq!(mask, clean);
    }

    #[test]
    fn sensitivity_zero_is_otsu_and_one_is_subset() {
        let img = SliceImage::from_fn(48, 48, |x, y| {
            let d = ((x as f64 - 24.0).powi(2) + (y as f64 - 24.0).powi(2)).sqrt();
            if d < 16.0 {
                (0.5 + 0.4 * (1.0 - d / 16.0)) as f32
            } else {
                0.05
            }
        });
        let p0 = PreprocessParams { sensitivity: 0.0, ..Default::default() };
        let p1 = PreprocessParams { sensitivity: 1.0, ..Default::default() };
        let m0 = segment_foreground(&img, &p0).unwrap();
        let den = median_filter(&img, 1);
        let t = otsu_threshold(&den).unwrap();
        assert_eq!(m0, fill_holes(&largest_component(&BinaryMask::from_fn(48, 48, |x, y| den.get(x, y) as f64 >= t))));
        let m1 = segment_foreground(&img, &p1).unwrap();
        assert!(m1.is_subset_of(&m0));
        assert!(m1.count() < m0.count());
    }

    #[test]
    fn holes_are_filled() {
        let img = SliceImage::from_fn(20, 20, |x, y| {
            let ring = (3..17).contains(&x) && (3..17).contains(&y);
            let hole = (7..13).contains(&x) && (7..13).contains(&y);
            if ring && !hole {
                1.0
            } else {
                0.0
            }
        });
        let mask = segment_foreground(&img, &PreprocessParams { denoise_radius: 0, ..Default::default() }).unwrap();
        assert_eq!(mask.count(), 14 * 14);
    }

    #[test]
    fn empty_foreground_error() {
        assert_eq!(
            segment_foreground(&SliceImage::filled(8, 8, 0.2), &PreprocessParams::default()),
            Err(PreprocessError::DegenerateImage)
        );
        let m = BinaryMask::new(4, 4);
        assert_eq!(
            crop_to_bbox(&SliceImage::filled(4, 4, 0.0), &m, 0.0),
            Err(PreprocessError::EmptyForeground)
        );
    }

    #[test]
    fn crop_examples() {
        let img = SliceImage::from_fn(10, 10, |x, y| (x + 10 * y) as f32 / 100.0);
        let full = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(crop_to_bbox(&img, &full, 0.0).unwrap(), img);

        let mut single = BinaryMask::new(10, 10);
        single.set(5, 7, true);
        let c = crop_to_bbox(&img, &single, 0.0).unwrap();
        assert_eq!((c.width(), c.height()), (1, 1));
        assert_eq!(c.get(0, 0), img.get(5, 7));

        // Rows 2-5, cols 3-6, 25% margin -> one pixel each side.
        let block = BinaryMask::from_fn(10, 10, |x, y| (3..=6).contains(&x) && (2..=5).contains(&y));
        let bb = crop_bbox(&block, 0.25).unwrap();
        assert_eq!(bb, BBox { x0: 2, y0: 1, x1: 7, y1: 6 });
    }

    proptest! {
        #[test]
        fn crop_commutes_with_translation(
            x0 in 2usize..10, y0 in 2usize..10, w in 1usize..8, h in 1usize..8,
            dx in 0usize..6, dy in 0usize..6,
        ) {
            let make = |ox: usize, oy: usize| BinaryMask::from_fn(40, 40, |x, y| {
                (x0 + ox..x0 + ox + w).contains(&x) && (y0 + oy..y0 + oy + h).contains(&y)
            });
            let a = crop_bbox(&make(0, 0), 0.2).unwrap();
            let b = crop_bbox(&make(dx, dy), 0.2).unwrap();
            prop_assume!(a.x0 > 0 && a.y0 > 0);
            prop_assert_eq!((b.x0, b.y0, b.x1, b.y1), (a.x0 + dx, a.y0 + dy, a.x1 + dx, a.y1 + dy));
        }

        #[test]
        fn resize_stays_within_input_range(
            pixels in proptest::collection::vec(0.0f32..=1.0, 36),
            size in 1usize..20,
        ) {
            let img = SliceImage::new(6, 6, pixels).unwrap();
            let (lo, hi) = img.min_max();
            let out = resize_bilinear(&img, size);
            prop_assert!(out.pixels().iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn resize_examples() {
        let img = SliceImage::from_fn(7, 7, |x, y| ((x * 3 + y * 5) % 11) as f32 / 10.0);
        assert_eq!(resize_bilinear(&img, 7), img);
        let c = resize_bilinear(&SliceImage::filled(5, 3, 0.25), 9);
        assert!(c.pixels().iter().all(|&v| v == 0.25));
        let checker = SliceImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&checker, 3);
        assert_eq!(r.get(1, 1), 0.5);
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(1, 0), 0.5);
    }

    #[test]
    fn pipeline_paths() {
        let params = PreprocessParams { target_size: 32, ..Default::default() };
        let blank = preprocess_pipeline(&SliceImage::filled(30, 30, 0.0), &params);
        assert!(blank.report.rejected && blank.image.is_none());

        let mut tiny = SliceImage::filled(100, 100, 0.1);
        tiny.set(50, 50, 0.9);
        let low = preprocess_pipeline(&tiny, &params);
        assert!(low.report.rejected);
        assert!(low.report.content_score < 0.01);

        let img = disk(60, 25.0, 30.0, 12.0, 0.8, 0.1);
        let out = preprocess_pipeline(&img, &params);
        assert!(!out.report.rejected, "{:?}", out.report);
        let o = out.image.unwrap();
        assert_eq!((o.width(), o.height()), (32, 32));
        // Composition of the verified sub-ops.
        let mask = segment_foreground(&img, &params).unwrap();
        let bb = crop_bbox(&mask, params.crop_margin).unwrap();
        assert_eq!(out.report.bbox, Some(bb));
        let expected = resize_bilinear(&crop_to_bbox(&img.masked(&mask), &mask, params.crop_margin).unwrap(), 32);
        assert_eq!(o.pixels(), expected.pixels());
        assert!(o.get(16, 16) > 0.5);
    }
}
