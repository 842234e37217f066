//! Single-scale ORB: FAST-9 corners ranked by Harris response, intensity
//! centroid orientation and steered BRIEF over the standard 256-test pattern.

use std::borrow::Cow;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::orb_pattern::BRIEF_PATTERN;
use super::ssim::gaussian_blur;
use super::{MetricKind, MetricScore};
use crate::image::SliceImage;

/// Bresenham circle of radius 3, clockwise from the top.
const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC_LENGTH: u32 = 9;
const HARRIS_BLOCK: isize = 3;
const HARRIS_K: f64 = 0.04;
const SMOOTH_SIZE: usize = 7;
const SMOOTH_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbParams {
    pub fast_threshold: f32,
    pub n_keypoints: usize,
    pub patch_size: usize,
    pub hamming_ratio: f64,
    /// Orientation quantisation in degrees (30 bins of 12 by default).
    pub angle_step: f64,
}

impl Default for OrbParams {
    fn default() -> Self {
        Self {
            fast_threshold: 0.08,
            n_keypoints: 256,
            patch_size: 31,
            hamming_ratio: 0.8,
            angle_step: 12.0,
        }
    }
}

impl OrbParams {
    fn half_patch(&self) -> isize {
        (self.patch_size / 2) as isize
    }

    /// Keypoints stay this far from the border so every steered test and the
    /// orientation patch remain inside the image.
    pub fn border(&self) -> usize {
        let reach = BRIEF_PATTERN
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[2], t[3])])
            .map(|(x, y)| ((x as f64).powi(2) + (y as f64).powi(2)).sqrt())
            .fold(0.0, f64::max);
        (reach.ceil() as usize + 1).max(self.half_patch() as usize + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbFeature {
    pub x: u32,
    pub y: u32,
    /// Quantised orientation in degrees, `[0, 360)`.
    pub angle: f64,
    pub response: f64,
    pub descriptor: [u64; 4],
}

impl OrbFeature {
    pub fn hamming(&self, other: &OrbFeature) -> u32 {
        self.descriptor
            .iter()
            .zip(&other.descriptor)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// FAST segment test: `ARC_LENGTH` contiguous circle pixels all brighter than
/// `centre + t` or all darker than `centre - t`.
fn is_fast_corner(img: &SliceImage, x: usize, y: usize, t: f32) -> bool {
    let c = img.get(x, y);
    let (mut bright, mut dark) = (0u32, 0u32);
    for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        if v > c + t {
            bright |= 1 << i;
        } else if v < c - t {
            dark |= 1 << i;
        }
    }
    has_arc(bright) || has_arc(dark)
}

fn has_arc(bits: u32) -> bool {
    if bits.count_ones() < ARC_LENGTH {
        return false;
    }
    let doubled = bits | (bits << 16);
    let mut run = doubled;
    for _ in 1..ARC_LENGTH {
        run &= run >> 1;
    }
    run != 0
}

fn harris_response(img: &SliceImage, x: usize, y: usize) -> f64 {
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for dy in -HARRIS_BLOCK..=HARRIS_BLOCK {
        for dx in -HARRIS_BLOCK..=HARRIS_BLOCK {
            let px = (x as isize + dx) as usize;
            let py = (y as isize + dy) as usize;
            let gx = (img.get(px + 1, py) - img.get(px - 1, py)) as f64 * 0.5;
            let gy = (img.get(px, py + 1) - img.get(px, py - 1)) as f64 * 0.5;
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) * (sxx + syy)
}

fn centroid_angle(img: &SliceImage, x: usize, y: usize, radius: isize) -> f64 {
    let (mut m10, mut m01) = (0.0, 0.0);
    let r2 = radius * radius;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10).to_degrees()
}

fn quantize_angle(degrees: f64, step: f64) -> (usize, f64) {
    let bins = (360.0 / step).round().max(1.0) as usize;
    let idx = ((degrees / step).round() as i64).rem_euclid(bins as i64) as usize;
    (idx, idx as f64 * step)
}

/// Integer test offsets rotated to each quantised orientation.
fn steered_patterns(bins: usize) -> Cow<'static, [[[isize; 4]; 256]]> {
    static CACHE: OnceLock<Vec<(usize, Vec<[[isize; 4]; 256]>)>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        [12usize, 24, 30, 36, 72, 360]
            .iter()
            .map(|&n| (n, build_patterns(n)))
            .collect()
    });
    match all.iter().find(|(n, _)| *n == bins) {
        Some((_, p)) => Cow::Borrowed(p),
        None => Cow::Owned(build_patterns(bins)),
    }
}

fn build_patterns(bins: usize) -> Vec<[[isize; 4]; 256]> {
    (0..bins)
        .map(|b| {
            let (c, s) = crate::image::cos_sin_degrees(b as f64 * 360.0 / bins as f64);
            let rot = |x: i8, y: i8| {
                let (x, y) = (x as f64, y as f64);
                ((c * x - s * y).round() as isize, (s * x + c * y).round() as isize)
            };
            let mut out = [[0isize; 4]; 256];
            for (o, t) in out.iter_mut().zip(BRIEF_PATTERN.iter()) {
                let (x1, y1) = rot(t[0], t[1]);
                let (x2, y2) = rot(t[2], t[3]);
                *o = [x1, y1, x2, y2];
            }
            out
        })
        .collect()
}

/// Detect up to `n_keypoints` oriented features. Images smaller than the
/// patch plus border yield no features.
pub fn orb_detect(image: &SliceImage, params: &OrbParams) -> Vec<OrbFeature> {
    let border = params.border();
    let (w, h) = (image.width(), image.height());
    if w < params.patch_size || h < params.patch_size || w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }

    let mut response = vec![f64::NEG_INFINITY; w * h];
    let mut corners = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            if is_fast_corner(image, x, y, params.fast_threshold) {
                response[y * w + x] = harris_response(image, x, y);
                corners.push((x, y));
            }
        }
    }

    // 3x3 non-maximum suppression; equal responses keep the earlier pixel.
    let idx = |x: usize, y: usize| y * w + x;
    let mut kept: Vec<(usize, usize, f64)> = corners
        .into_iter()
        .filter(|&(x, y)| {
            let r = response[idx(x, y)];
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let o = response[idx(nx, ny)];
                    if o > r || (o == r && idx(nx, ny) < idx(x, y)) {
                        return false;
                    }
                }
            }
            true
        })
        .map(|(x, y)| (x, y, response[idx(x, y)]))
        .collect();
    kept.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    kept.truncate(params.n_keypoints);

    let smoothed = gaussian_blur(image, SMOOTH_SIZE, SMOOTH_SIGMA);
    let bins = (360.0 / params.angle_step).round().max(1.0) as usize;
    let patterns = steered_patterns(bins);
    kept.into_iter()
        .map(|(x, y, r)| {
            let (bin, angle) = quantize_angle(centroid_angle(image, x, y, params.half_patch()), params.angle_step);
            let mut descriptor = [0u64; 4];
            for (i, t) in patterns[bin].iter().enumerate() {
                let a = smoothed.get((x as isize + t[0]) as usize, (y as isize + t[1]) as usize);
                let b = smoothed.get((x as isize + t[2]) as usize, (y as isize + t[3]) as usize);
                if a < b {
                    descriptor[i / 64] |= 1 << (i % 64);
                }
            }
            OrbFeature {
                x: x as u32,
                y: y as u32,
                angle,
                response: r,
                descriptor,
            }
        })
        .collect()
}

/// Nearest and second-nearest Hamming distance from `f` into `pool`.
fn nearest(f: &OrbFeature, pool: &[OrbFeature]) -> (usize, u32, Option<u32>) {
    let (mut best, mut d1, mut d2) = (0, u32::MAX, None::<u32>);
    for (j, g) in pool.iter().enumerate() {
        let d = f.hamming(g);
        if d < d1 {
            if d1 != u32::MAX {
                d2 = Some(d1);
            }
            best = j;
            d1 = d;
        } else if d2.map_or(true, |s| d < s) {
            d2 = Some(d);
        }
    }
    (best, d1, d2)
}

/// Number of mutual nearest-neighbour matches passing the ratio test.
pub fn orb_match_count(a: &[OrbFeature], b: &[OrbFeature], ratio: f64) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let back: Vec<usize> = b.iter().map(|g| nearest(g, a).0).collect();
    a.iter()
        .enumerate()
        .filter(|(i, f)| {
            let (j, d1, d2) = nearest(f, b);
            let passes = d1 == 0 || d2.map_or(true, |d2| (d1 as f64) < ratio * d2 as f64);
            back[j] == *i && passes
        })
        .count()
}

/// `matches / max(1, min(|a|, |b|))`; invalid when either side is empty.
pub fn orb_match_score(a: &[OrbFeature], b: &[OrbFeature], params: &OrbParams) -> MetricScore {
    if a.is_empty() || b.is_empty() {
        return MetricScore::invalid(MetricKind::Orb);
    }
    let matches = orb_match_count(a, b, params.hamming_ratio);
    let denom = a.len().min(b.len()).max(1);
    MetricScore::valid(MetricKind::Orb, matches as f64 / denom as f64)
}
