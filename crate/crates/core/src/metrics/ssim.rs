//! Gaussian-windowed SSIM over all fully-contained windows.

use serde::{Deserialize, Serialize};

use super::{MetricError, MetricKind, MetricScore};
use crate::image::SliceImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Window side (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Normalised 1D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with clamped borders; output matches the input size.
pub fn gaussian_blur(img: &SliceImage, size: usize, sigma: f64) -> SliceImage {
    let k = gaussian_kernel(size, sigma);
    let r = (size / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut tmp = vec![0.0f64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x + i as isize - r).clamp(0, w - 1);
                acc += kv * img.get(sx as usize, y as usize) as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    SliceImage::from_fn(w as usize, h as usize, |x, y| {
        let mut acc = 0.0;
        for (i, kv) in k.iter().enumerate() {
            let sy = (y as isize + i as isize - r).clamp(0, h - 1);
            acc += kv * tmp[(sy * w) as usize + x];
        }
        acc as f32
    })
}

/// Separable "valid" convolution: output is `(w - k + 1) x (h - k + 1)`.
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64], scratch: &mut Vec<f64>) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    scratch.clear();
    scratch.resize(ow * h, 0.0);
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let out = &mut scratch[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * row[x + t];
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (t, &kv) in kernel.iter().enumerate() {
        for y in 0..oh {
            let src = &scratch[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Per-image quantities reused across many SSIM evaluations: pixel values,
/// windowed means and windowed second moments.
#[derive(Debug, Clone)]
pub struct SsimStats {
    width: usize,
    height: usize,
    kernel: Vec<f64>,
    values: Vec<f64>,
    mean: Vec<f64>,
    second: Vec<f64>,
}

impl SsimStats {
    pub fn new(image: &SliceImage, params: &SsimParams) -> Result<Self, MetricError> {
        let (w, h) = (image.width(), image.height());
        if w < params.window || h < params.window {
            return Err(MetricError::TooSmall {
                min: params.window,
                width: w,
                height: h,
            });
        }
        let kernel = gaussian_kernel(params.window, params.sigma);
        let values: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
        let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
        let mut scratch = Vec::new();
        let mean = filter_valid(&values, w, h, &kernel, &mut scratch);
        let second = filter_valid(&squares, w, h, &kernel, &mut scratch);
        Ok(Self {
            width: w,
            height: h,
            kernel,
            values,
            mean,
            second,
        })
    }

    /// Mean SSIM between two precomputed images of the same shape.
    pub fn ssim(&self, other: &SsimStats, params: &SsimParams) -> Result<f64, MetricError> {
        if self.width != other.width || self.height != other.height || self.kernel.len() != other.kernel.len() {
            return Err(MetricError::ShapeMismatch);
        }
        let products: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        let mut scratch = Vec::new();
        let cross = filter_valid(&products, self.width, self.height, &self.kernel, &mut scratch);
        let (c1, c2) = (params.c1(), params.c2());
        let mut total = 0.0;
        for i in 0..cross.len() {
            let (ma, mb) = (self.mean[i], other.mean[i]);
            let va = self.second[i] - ma * ma;
            let vb = other.second[i] - mb * mb;
            let cov = cross[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
        Ok(total / cross.len() as f64)
    }
}

/// Mean SSIM over every fully-contained Gaussian window.
pub fn ssim(a: &SliceImage, b: &SliceImage, params: &SsimParams) -> Result<MetricScore, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch);
    }
    let sa = SsimStats::new(a, params)?;
    let sb = SsimStats::new(b, params)?;
    Ok(MetricScore::valid(MetricKind::Ssim, sa.ssim(&sb, params)?))
}
