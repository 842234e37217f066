use super::{MetricError, MetricKind, MetricScore};
use crate::image::BinaryMask;

/// Dice overlap `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<MetricScore, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch);
    }
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(MetricScore::valid(MetricKind::Dice, 1.0));
    }
    let inter = a.intersection_count(b);
    Ok(MetricScore::valid(MetricKind::Dice, 2.0 * inter as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(bits: &[bool], w: usize) -> BinaryMask {
        BinaryMask::from_fn(w, bits.len() / w, |x, y| bits[y * w + x])
    }

    #[test]
    fn examples() {
        let a = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        assert_eq!(dice(&a, &a).unwrap().value, 1.0);
        let b = BinaryMask::from_fn(4, 4, |x, y| x >= 2 && y >= 2);
        assert_eq!(dice(&a, &b).unwrap().value, 0.0);
        // |A| = 3, |B| = 3, overlap 2.
        let a = mask_from(&[true, true, true, false], 4);
        let b = mask_from(&[false, true, true, true], 4);
        assert!((dice(&a, &b).unwrap().value - 2.0 / 3.0).abs() < 1e-12);
        let e = BinaryMask::new(3, 3);
        assert_eq!(dice(&e, &e).unwrap().value, 1.0);
        assert_eq!(dice(&e, &BinaryMask::new(3, 4)), Err(MetricError::ShapeMismatch));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64)) {
            let (ma, mb) = (mask_from(&a, 8), mask_from(&b, 8));
            let ab = dice(&ma, &mb).unwrap().value;
            prop_assert_eq!(ab, dice(&mb, &ma).unwrap().value);
            prop_assert!((0.0..=1.0).contains(&ab));
            if !ma.is_empty() {
                prop_assert_eq!(dice(&ma, &ma).unwrap().value, 1.0);
            }
        }
    }
}
