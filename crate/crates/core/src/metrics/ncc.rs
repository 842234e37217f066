use super::{MetricError, MetricKind, MetricScore};
use crate::image::SliceImage;

/// Zero-mean pixel values and their Euclidean norm, reusable across many
/// correlations against the same image.
#[derive(Debug, Clone)]
pub struct NccStats {
    width: usize,
    height: usize,
    centered: Vec<f64>,
    norm: f64,
    constant: bool,
}

impl NccStats {
    pub fn new(image: &SliceImage) -> Self {
        let n = image.len() as f64;
        let mean = image.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
        let centered: Vec<f64> = image.pixels().iter().map(|&v| v as f64 - mean).collect();
        let norm = centered.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (lo, hi) = image.min_max();
        Self {
            width: image.width(),
            height: image.height(),
            centered,
            norm,
            constant: lo == hi || norm == 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// Correlation coefficient; `None` when either side is constant.
    pub fn correlate(&self, other: &NccStats) -> Result<Option<f64>, MetricError> {
        if self.width != other.width || self.height != other.height {
            return Err(MetricError::ShapeMismatch);
        }
        if self.constant || other.constant {
            return Ok(None);
        }
        let dot: f64 = self.centered.iter().zip(&other.centered).map(|(a, b)| a * b).sum();
        Ok(Some((dot / (self.norm * other.norm)).clamp(-1.0, 1.0)))
    }
}

/// Zero-mean normalised cross-correlation `sum (a - a')(b - b') / (n sa sb)`
/// with population standard deviations. Invalid when either input is
/// constant.
pub fn ncc(a: &SliceImage, b: &SliceImage) -> Result<MetricScore, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch);
    }
    Ok(match NccStats::new(a).correlate(&NccStats::new(b))? {
        Some(v) => MetricScore::valid(MetricKind::Ncc, v),
        None => MetricScore::invalid(MetricKind::Ncc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(values: Vec<f32>) -> SliceImage {
        SliceImage::new(4, values.len() / 4, values).unwrap()
    }

    #[test]
    fn examples() {
        let x = img((0..16).map(|i| ((i * 7) % 16) as f32 / 15.0).collect());
        assert!((ncc(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
        let neg = img(x.pixels().iter().map(|v| 1.0 - v).collect());
        assert!((ncc(&x, &neg).unwrap().value + 1.0).abs() < 1e-6);
        let aff = img(x.pixels().iter().map(|v| 0.5 + 0.25 * v).collect());
        assert!((ncc(&x, &aff).unwrap().value - 1.0).abs() < 1e-6);
        let c = ncc(&x, &img(vec![0.3; 16])).unwrap();
        assert!(!c.valid);
        assert_eq!(ncc(&x, &img(vec![0.3; 8])), Err(MetricError::ShapeMismatch));
    }

    proptest! {
        #[test]
        fn affine_invariance_and_antisymmetry(
            a in proptest::collection::vec(0.0f32..=1.0, 16),
            b in proptest::collection::vec(0.0f32..=1.0, 16),
            gain in 0.1f32..0.5, offset in 0.0f32..0.4,
        ) {
            let (ia, ib) = (img(a.clone()), img(b));
            let base = ncc(&ia, &ib).unwrap();
            prop_assume!(base.valid);
            let scaled = img(a.iter().map(|v| offset + gain * v).collect());
            prop_assert!((ncc(&scaled, &ib).unwrap().value - base.value).abs() < 1e-5);
            let negated = img(a.iter().map(|v| 1.0 - v).collect());
            prop_assert!((ncc(&negated, &ib).unwrap().value + base.value).abs() < 1e-5);
        }
    }
}
