//! 2D raster types shared by every stage: grayscale slices, binary masks and
//! the resampling helpers used by preprocessing, augmentation and matching.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {0}x{1})")]
    EmptyDimensions(usize, usize),
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("pixel value {value} at offset {offset} is outside [0, 1]")]
    OutOfRange { offset: usize, value: f32 },
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("could not encode image: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Volume axis a slice is taken perpendicular to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn parse(s: &str) -> Option<Axis> {
        match s.trim() {
            "x" | "X" => Some(Axis::X),
            "y" | "Y" => Some(Axis::Y),
            "z" | "Z" => Some(Axis::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

/// Where a slice came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub volume_id: String,
    pub axis: Axis,
    pub index: usize,
}

/// Single-channel raster with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    provenance: Option<Provenance>,
}

impl SliceImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions(width, height));
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some((offset, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { offset, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
            provenance: None,
        })
    }

    /// Builds an image from a generator; values are clamped into `[0, 1]`
    /// (NaN maps to 0).
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp01(f(x, y)));
            }
        }
        Self {
            width,
            height,
            pixels,
            provenance: None,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn set_provenance(&mut self, provenance: Option<Provenance>) {
        self.provenance = provenance;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = clamp01(value);
    }

    pub fn same_shape(&self, other: &SliceImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> SliceImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height && w > 0 && h > 0);
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        SliceImage {
            width: w,
            height: h,
            pixels,
            provenance: self.provenance.clone(),
        }
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> SliceImage {
        assert!(mask.width() == self.width && mask.height() == self.height);
        let pixels = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.get_index(i) { v } else { 0.0 })
            .collect();
        SliceImage {
            width: self.width,
            height: self.height,
            pixels,
            provenance: self.provenance.clone(),
        }
    }

    /// Bilinear sample at a sub-pixel position. Positions outside the pixel
    /// grid (beyond a tiny tolerance) return `None`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -EPS && y >= -EPS && x <= max_x + EPS && y <= max_y + EPS) {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// 8-bit grayscale conversion (rounding to nearest).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_gray8(width: usize, height: usize, data: &[u8]) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                got: data.len(),
            });
        }
        Self::new(
            width,
            height,
            data.iter().map(|&v| v as f32 / 255.0).collect(),
        )
    }

    /// Decodes PNG/JPEG (or anything the `image` crate recognises) into a
    /// grayscale slice. 16-bit inputs keep their precision.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let dynamic = ::image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Self::from_dynamic(dynamic)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn from_dynamic(dynamic: ::image::DynamicImage) -> Result<Self, ImageError> {
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        let pixels = match dynamic {
            ::image::DynamicImage::ImageLuma8(buf) => {
                buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
            }
            other => {
                let luma16 = other.to_luma16();
                luma16
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 65535.0)
                    .collect()
            }
        };
        Self::new(w, h, pixels)
    }

    /// Lossless 8-bit PNG encoding.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = ::image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_gray8())
            .ok_or_else(|| ImageError::Encode("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ::image::ImageFormat::Png)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Foreground mask, bit-packed row-major (foreground = 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let i = y * self.width + x;
        if on {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Number of pixels set in both masks. Panics on shape mismatch.
    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        assert!(self.same_shape(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// `true` when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| self.get(x, y).then_some((x, y)))
        })
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.points() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    pub fn to_image(&self) -> SliceImage {
        SliceImage::from_fn(self.width, self.height, |x, y| if self.get(x, y) { 1.0 } else { 0.0 })
    }
}

/// `(cos, sin)` of an angle in degrees, exact at multiples of 90 degrees.
pub fn cos_sin_degrees(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    if r == 0.0 {
        (1.0, 0.0)
    } else if r == 90.0 {
        (0.0, 1.0)
    } else if r == 180.0 {
        (-1.0, 0.0)
    } else if r == 270.0 {
        (0.0, -1.0)
    } else {
        let t = r.to_radians();
        (t.cos(), t.sin())
    }
}

/// Similarity warp about the image centre: rotation by `degrees`
/// (counter-clockwise as displayed, rows pointing down), isotropic `scale`
/// and optional horizontal flip applied before the rotation. Output keeps the
/// input shape; samples falling outside the source are 0.
pub fn warp_similarity(image: &SliceImage, degrees: f64, scale: f64, hflip: bool) -> SliceImage {
    let (w, h) = (image.width(), image.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (c, s) = cos_sin_degrees(degrees);
    let inv_scale = 1.0 / scale;
    let mut out = vec![0.0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            // Destination offset with y pointing up.
            let dx = u as f64 - cx;
            let dy = cy - v as f64;
            // Inverse rotation, then inverse scale.
            let sx = (c * dx + s * dy) * inv_scale;
            let sy = (-s * dx + c * dy) * inv_scale;
            let mut src_x = cx + sx;
            let src_y = cy - sy;
            if hflip {
                src_x = 2.0 * cx - src_x;
            }
            if let Some(val) = image.sample_bilinear(src_x, src_y) {
                out[v * w + u] = clamp01(val as f32);
            }
        }
    }
    let mut result = SliceImage {
        width: w,
        height: h,
        pixels: out,
        provenance: None,
    };
    result.set_provenance(image.provenance().cloned());
    result
}

/// In-plane rotation about the image centre; see [`warp_similarity`].
pub fn rotate(image: &SliceImage, degrees: f64) -> SliceImage {
    warp_similarity(image, degrees, 1.0, false)
}

/// Mirror left-right.
pub fn hflip(image: &SliceImage) -> SliceImage {
    let w = image.width();
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..w {
            out.pixels[y * w + x] = image.get(w - 1 - x, y);
        }
    }
    out
}
