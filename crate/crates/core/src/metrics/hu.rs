//! Hu moment invariants of binary masks.
//!
//! Central moments are accumulated exactly in integers: with `N` pixels and
//! coordinate sums `Sx, Sy`, the scaled offsets `N*x - Sx` are integral, so
//! `sum (N*x - Sx)^p (N*y - Sy)^q = N^(p+q) * mu_pq` carries no rounding.
//! That makes translation invariance bit-exact and right-angle rotations
//! exact up to the final floating-point combination.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::image::BinaryMask;

pub const HU_EPSILON: f64 = 1e-30;

/// Seven Hu invariants in log-signed form, `sign(h) * log10(|h| + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuVector(pub [f64; 7]);

/// Central moments `mu_pq` for `p + q <= 3`, indexed `[p][q]`.
pub fn central_moments(mask: &BinaryMask) -> Result<[[f64; 4]; 4], MetricError> {
    let n = mask.count();
    if n == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(exact_scaled_moments(mask, n)
        .map(|scaled| {
            let nf = n as f64;
            let mut mu = [[0.0; 4]; 4];
            for (p, row) in mu.iter_mut().enumerate() {
                for (q, v) in row.iter_mut().enumerate() {
                    if p + q <= 3 {
                        *v = scaled[p][q] as f64 / nf.powi((p + q) as i32);
                    }
                }
            }
            mu
        })
        .unwrap_or_else(|| float_moments(mask, n)))
}

/// `sum (N x - Sx)^p (N y - Sy)^q`, or `None` on i128 overflow.
fn exact_scaled_moments(mask: &BinaryMask, n: usize) -> Option<[[i128; 4]; 4]> {
    let (mut sx, mut sy) = (0i128, 0i128);
    for (x, y) in mask.points() {
        sx += x as i128;
        sy += y as i128;
    }
    let n = n as i128;
    let mut m = [[0i128; 4]; 4];
    for (x, y) in mask.points() {
        let u = (n.checked_mul(x as i128)?).checked_sub(sx)?;
        let v = (n.checked_mul(y as i128)?).checked_sub(sy)?;
        let u2 = u.checked_mul(u)?;
        let v2 = v.checked_mul(v)?;
        let terms = [
            (2, 0, u2),
            (0, 2, v2),
            (1, 1, u.checked_mul(v)?),
            (3, 0, u2.checked_mul(u)?),
            (0, 3, v2.checked_mul(v)?),
            (2, 1, u2.checked_mul(v)?),
            (1, 2, u.checked_mul(v2)?),
        ];
        for (p, q, t) in terms {
            m[p][q] = m[p][q].checked_add(t)?;
        }
    }
    Some(m)
}

fn float_moments(mask: &BinaryMask, n: usize) -> [[f64; 4]; 4] {
    let nf = n as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in mask.points() {
        sx += x as f64;
        sy += y as f64;
    }
    let (cx, cy) = (sx / nf, sy / nf);
    let mut mu = [[0.0; 4]; 4];
    for (x, y) in mask.points() {
        let (u, v) = (x as f64 - cx, y as f64 - cy);
        for (p, row) in mu.iter_mut().enumerate() {
            for (q, val) in row.iter_mut().enumerate() {
                if (2..=3).contains(&(p + q)) {
                    *val += u.powi(p as i32) * v.powi(q as i32);
                }
            }
        }
    }
    mu
}

/// The raw seven Hu invariants.
pub fn hu_invariants(mask: &BinaryMask) -> Result<[f64; 7], MetricError> {
    let mu = central_moments(mask)?;
    let n = mask.count() as f64;
    let eta = |p: usize, q: usize| {
        let order = (p + q) as f64;
        mu[p][q] / n.powf(1.0 + order / 2.0)
    };
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));

    let a = n30 - 3.0 * n12;
    let b = 3.0 * n21 - n03;
    let p = n30 + n12;
    let q = n21 + n03;

    let h1 = n20 + n02;
    let h2 = (n20 - n02) * (n20 - n02) + 4.0 * n11 * n11;
    let h3 = a * a + b * b;
    let h4 = p * p + q * q;
    let h5 = a * p * (p * p - 3.0 * q * q) + b * q * (3.0 * p * p - q * q);
    let h6 = (n20 - n02) * (p * p - q * q) + 4.0 * n11 * p * q;
    let h7 = b * p * (p * p - 3.0 * q * q) - a * q * (3.0 * p * p - q * q);
    Ok([h1, h2, h3, h4, h5, h6, h7])
}

pub fn hu_moments(mask: &BinaryMask) -> Result<HuVector, MetricError> {
    let raw = hu_invariants(mask)?;
    Ok(HuVector(raw.map(|h| {
        let mag = (h.abs() + HU_EPSILON).log10();
        if h < 0.0 {
            -mag
        } else {
            mag
        }
    })))
}

/// Invariants smaller than this in magnitude are left out of
/// [`hu_distance`]; their signs are at the mercy of rasterisation noise.
pub const HU_DISTANCE_FLOOR: f64 = 1e-5;

/// L1 distance between log-signed Hu vectors over the components where both
/// invariants reach [`HU_DISTANCE_FLOOR`] (log magnitude at most 5), as in
/// OpenCV's `matchShapes`.
pub fn hu_distance(a: &HuVector, b: &HuVector) -> f64 {
    let limit = -HU_DISTANCE_FLOOR.log10();
    a.0.iter()
        .zip(&b.0)
        .filter(|(x, y)| x.abs() <= limit && y.abs() <= limit)
        .map(|(x, y)| (x - y).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> BinaryMask {
        // Asymmetric L with a tail.
        BinaryMask::from_fn(40, 40, |x, y| {
            ((5..25).contains(&x) && (5..10).contains(&y))
                || ((5..10).contains(&x) && (5..30).contains(&y))
                || ((20..23).contains(&x) && (10..17).contains(&y))
        })
    }

    fn translate(m: &BinaryMask, dx: isize, dy: isize) -> BinaryMask {
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            let (sx, sy) = (x as isize - dx, y as isize - dy);
            sx >= 0 && sy >= 0 && (sx as usize) < m.width() && (sy as usize) < m.height() && m.get(sx as usize, sy as usize)
        })
    }

    fn rotate90(m: &BinaryMask) -> BinaryMask {
        let n = m.width();
        BinaryMask::from_fn(n, n, |x, y| m.get(n - 1 - y, x))
    }

    /// Brute-force double sum over the raster, independent of the integer
    /// path.
    fn brute_eta(mask: &BinaryMask, p: i32, q: i32) -> f64 {
        let pts: Vec<(f64, f64)> = mask.points().map(|(x, y)| (x as f64, y as f64)).collect();
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let mu: f64 = pts.iter().map(|(x, y)| (x - cx).powi(p) * (y - cy).powi(q)).sum();
        mu / n.powf(1.0 + (p + q) as f64 / 2.0)
    }

    #[test]
    fn translation_is_exact() {
        let m = blob();
        let t = translate(&m, 10, 4);
        let d = hu_moments(&m).unwrap();
        let e = hu_moments(&t).unwrap();
        for (a, b) in d.0.iter().zip(&e.0) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn quarter_turn_invariance() {
        let m = blob();
        let a = hu_moments(&m).unwrap();
        let b = hu_moments(&rotate90(&m)).unwrap();
        assert!(hu_distance(&a, &b) <= 7e-6);
    }

    #[test]
    fn square_vs_disk_against_brute_force() {
        let square = BinaryMask::from_fn(41, 41, |x, y| (10..31).contains(&x) && (10..31).contains(&y));
        let disk = BinaryMask::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            dx * dx + dy * dy <= 121.0
        });
        for m in [&square, &disk] {
            let h = hu_invariants(m).unwrap();
            let h1 = brute_eta(m, 2, 0) + brute_eta(m, 0, 2);
            let h2 = (brute_eta(m, 2, 0) - brute_eta(m, 0, 2)).powi(2) + 4.0 * brute_eta(m, 1, 1).powi(2);
            assert!((h[0] - h1).abs() < 1e-12);
            assert!((h[1] - h2).abs() < 1e-12);
        }
        let hs = hu_moments(&square).unwrap();
        let hd = hu_moments(&disk).unwrap();
        assert!(hu_distance(&hs, &hd) > 1e-3);
        // h1 of a continuous disk is 1/(2 pi); the raster is close.
        assert!((hu_invariants(&disk).unwrap()[0] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 2e-3);
    }

    #[test]
    fn distance_properties() {
        let a = hu_moments(&blob()).unwrap();
        let b = HuVector([1.0, -2.0, 3.0, 0.5, 0.0, -1.0, 2.0]);
        assert_eq!(hu_distance(&a, &a), 0.0);
        assert_eq!(hu_distance(&a, &b), hu_distance(&b, &a));
        let c = HuVector([0.0; 7]);
        assert_eq!(hu_distance(&b, &c), 1.0 + 2.0 + 3.0 + 0.5 + 0.0 + 1.0 + 2.0);
    }

    #[test]
    fn tiny_invariants_are_skipped() {
        let a = HuVector([-0.8, -2.5, -3.5, -5.0, 10.4, -7.1, -11.3]);
        let b = HuVector([-0.7, -2.3, -3.6, -4.4, -9.1, 5.7, 8.4]);
        assert!((hu_distance(&a, &b) - (0.1 + 0.2 + 0.1 + 0.6)).abs() < 1e-12);
        // Either side below the floor drops the component.
        let c = HuVector([-0.7, -2.3, -3.6, -5.2, 0.0, 0.0, 0.0]);
        assert!((hu_distance(&a, &c) - (0.1 + 0.2 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert_eq!(hu_moments(&BinaryMask::new(5, 5)), Err(MetricError::EmptyMask));
    }
}
