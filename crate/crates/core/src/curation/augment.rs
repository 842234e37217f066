use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::image::{clamp01, warp_similarity, SliceImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Rotation drawn from `[-rotation_range, rotation_range]` degrees.
    pub rotation_range: f64,
    pub scale_range: (f64, f64),
    pub hflip: bool,
    /// Additive brightness drawn from `[-brightness_delta, brightness_delta]`.
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    pub mixup_lambda: f64,
    pub cutmix_lambda: f64,
    pub rng_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_range: 45.0,
            scale_range: (0.8, 1.2),
            hflip: true,
            brightness_delta: 0.1,
            contrast_range: (0.9, 1.1),
            mixup_lambda: 0.5,
            cutmix_lambda: 0.5,
            rng_seed: 0,
        }
    }
}

/// One sampled geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricDraw {
    pub degrees: f64,
    pub scale: f64,
    pub hflip: bool,
}

impl GeometricDraw {
    pub const IDENTITY: GeometricDraw = GeometricDraw {
        degrees: 0.0,
        scale: 1.0,
        hflip: false,
    };

    pub fn sample<R: Rng + ?Sized>(params: &AugmentParams, rng: &mut R) -> Self {
        let degrees = if params.rotation_range > 0.0 {
            rng.gen_range(-params.rotation_range..=params.rotation_range)
        } else {
            0.0
        };
        let (lo, hi) = params.scale_range;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let hflip = params.hflip && rng.gen_bool(0.5);
        Self { degrees, scale, hflip }
    }
}

/// Rotation about the centre, isotropic scale and optional flip with
/// bilinear resampling; pixels mapped from outside the frame are 0.
pub fn apply_geometric(image: &SliceImage, draw: &GeometricDraw) -> SliceImage {
    warp_similarity(image, draw.degrees, draw.scale, draw.hflip)
}

pub fn augment_geometric<R: Rng + ?Sized>(image: &SliceImage, params: &AugmentParams, rng: &mut R) -> SliceImage {
    apply_geometric(image, &GeometricDraw::sample(params, rng))
}

/// `contrast * (v - 0.5) + 0.5 + brightness`, clamped to `[0, 1]`.
pub fn apply_photometric(image: &SliceImage, brightness: f64, contrast: f64) -> SliceImage {
    SliceImage::from_fn(image.width(), image.height(), |x, y| {
        let v = image.get(x, y) as f64;
        (contrast * (v - 0.5) + 0.5 + brightness) as f32
    })
}

pub fn one_hot(label: usize, n_classes: usize) -> Result<Vec<f64>, CurationError> {
    if label >= n_classes {
        return Err(CurationError::InvalidLabel { label, n_classes });
    }
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    Ok(v)
}

fn soft_label(label_a: usize, label_b: usize, weight_a: f64, n_classes: usize) -> Result<Vec<f64>, CurationError> {
    let mut v = one_hot(label_a, n_classes)?;
    one_hot(label_b, n_classes)?;
    v[label_a] = weight_a;
    v[label_b] += 1.0 - weight_a;
    Ok(v)
}

fn check_pair(a: &SliceImage, b: &SliceImage, lambda: f64) -> Result<(), CurationError> {
    if !a.same_shape(b) {
        return Err(CurationError::ShapeMismatch);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CurationError::InvalidLambda(lambda));
    }
    Ok(())
}

/// Pixelwise `lambda * a + (1 - lambda) * b` with the matching soft label.
pub fn mixup(
    a: &SliceImage,
    label_a: usize,
    b: &SliceImage,
    label_b: usize,
    lambda: f64,
    n_classes: usize,
) -> Result<(SliceImage, Vec<f64>), CurationError> {
    check_pair(a, b, lambda)?;
    let label = soft_label(label_a, label_b, lambda, n_classes)?;
    let image = SliceImage::from_fn(a.width(), a.height(), |x, y| {
        let (va, vb) = (a.get(x, y), b.get(x, y));
        let v = (lambda * va as f64 + (1.0 - lambda) * vb as f64) as f32;
        v.clamp(va.min(vb), va.max(vb))
    });
    Ok((image, label))
}

/// Paste a rectangle from `b` covering about `1 - lambda` of the frame at a
/// uniformly random position inside `a`. Label weights use the realised
/// patch area.
pub fn cutmix<R: Rng + ?Sized>(
    a: &SliceImage,
    label_a: usize,
    b: &SliceImage,
    label_b: usize,
    lambda: f64,
    n_classes: usize,
    rng: &mut R,
) -> Result<(SliceImage, Vec<f64>), CurationError> {
    check_pair(a, b, lambda)?;
    let (w, h) = (a.width(), a.height());
    let side = (1.0 - lambda).sqrt();
    let pw = ((w as f64 * side).round() as usize).min(w);
    let ph = ((h as f64 * side).round() as usize).min(h);
    let x0 = rng.gen_range(0..=w - pw);
    let y0 = rng.gen_range(0..=h - ph);
    let mut out = a.clone();
    for y in y0..y0 + ph {
        for x in x0..x0 + pw {
            out.set(x, y, clamp01(b.get(x, y)));
        }
    }
    let pasted = (pw * ph) as f64 / (w * h) as f64;
    let label = soft_label(label_a, label_b, 1.0 - pasted, n_classes)?;
    Ok((out, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::hflip;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> SliceImage {
        SliceImage::from_fn(n, n, |x, y| ((x * 3 + y * 7) % 11) as f32 / 10.0)
    }

    #[test]
    fn identity_and_flip() {
        let img = ramp(9);
        assert_eq!(apply_geometric(&img, &GeometricDraw::IDENTITY).pixels(), img.pixels());
        assert_eq!(hflip(&hflip(&img)).pixels(), img.pixels());
    }

    #[test]
    fn quarter_turn_is_an_index_permutation() {
        // L-shape in a 7x7 frame.
        let img = SliceImage::from_fn(7, 7, |x, y| if x == 1 || (y == 5 && x < 5) { 1.0 } else { 0.0 });
        let draw = GeometricDraw {
            degrees: 90.0,
            scale: 1.0,
            hflip: false,
        };
        let out = apply_geometric(&img, &draw);
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(out.get(x, y), img.get(6 - y, x));
            }
        }
    }

    #[test]
    fn mixup_examples() {
        let zero = SliceImage::filled(4, 4, 0.0);
        let one = SliceImage::filled(4, 4, 1.0);
        let (m, l) = mixup(&zero, 0, &one, 1, 0.5, 2).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 0.5));
        assert_eq!(l, vec![0.5, 0.5]);
        let (m, l) = mixup(&zero, 0, &one, 1, 1.0, 3).unwrap();
        assert_eq!(m.pixels(), zero.pixels());
        assert_eq!(l, vec![1.0, 0.0, 0.0]);
        let a = ramp(6);
        let b = SliceImage::from_fn(6, 6, |x, y| ((x * 5 + y) % 7) as f32 / 6.0);
        let (m, l) = mixup(&a, 2, &b, 0, 0.3, 3).unwrap();
        for i in 0..36 {
            let expect = (0.3 * a.pixels()[i] as f64 + 0.7 * b.pixels()[i] as f64) as f32;
            assert!((m.pixels()[i] - expect).abs() <= 1e-7);
        }
        assert!((l[2] - 0.3).abs() < 1e-15 && (l[0] - 0.7).abs() < 1e-15);
        assert_eq!(mixup(&a, 0, &zero, 1, 0.5, 2).unwrap_err(), CurationError::ShapeMismatch);
        assert_eq!(mixup(&a, 0, &b, 1, 1.5, 2).unwrap_err(), CurationError::InvalidLambda(1.5));
    }

    #[test]
    fn cutmix_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = SliceImage::filled(16, 16, 0.0);
        let b = SliceImage::filled(16, 16, 1.0);
        let (out, l) = cutmix(&a, 0, &b, 1, 0.75, 2, &mut rng).unwrap();
        let pasted = out.pixels().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(pasted, 64);
        assert_eq!(l, vec![0.75, 0.25]);
        let (out, l) = cutmix(&a, 0, &b, 1, 1.0, 2, &mut rng).unwrap();
        assert_eq!(out.pixels(), a.pixels());
        assert_eq!(l, vec![1.0, 0.0]);
        let (out, l) = cutmix(&a, 0, &b, 1, 0.0, 2, &mut rng).unwrap();
        assert_eq!(out.pixels(), b.pixels());
        assert_eq!(l, vec![0.0, 1.0]);
    }

    #[test]
    fn same_seed_same_output() {
        let img = ramp(20);
        let p = AugmentParams::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..4).map(|_| augment_geometric(&img, &p, &mut rng).to_gray8()).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn soft_labels_are_distributions() {
        let a = ramp(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..=10 {
            let lambda = i as f64 / 10.0;
            for (_, l) in [
                mixup(&a, 1, &a, 4, lambda, 12).unwrap(),
                cutmix(&a, 1, &a, 4, lambda, 12, &mut rng).unwrap(),
            ] {
                assert_eq!(l.len(), 12);
                assert!(l.iter().all(|&v| v >= 0.0));
                assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
