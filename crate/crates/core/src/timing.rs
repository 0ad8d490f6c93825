//! Summary statistics over per-trial wall-clock timings.

use crate::num::Scalar;

/// Median of a sample; the mean of the two middle values for even lengths.
/// `None` for an empty sample or one containing NaN.
pub fn median<T: Scalar>(samples: &[T]) -> Option<T> {
    if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        let two = T::one() + T::one();
        Some((sorted[mid - 1] + sorted[mid]) / two)
    }
}

/// Baseline median over candidate median. `None` when either sample is empty
/// or the candidate median is not strictly positive.
pub fn speedup<T: Scalar>(reference_ms: &[T], candidate_ms: &[T]) -> Option<T> {
    let r = median(reference_ms)?;
    let c = median(candidate_ms)?;
    if c <= T::zero() || r < T::zero() || !r.is_finite() || !c.is_finite() {
        return None;
    }
    Some(r / c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_and_even_medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0f32, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median::<f64>(&[]), None);
        assert_eq!(median(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn scripted_fixture_speedup_is_two() {
        let r = [10.0, 10.0, 10.0, 12.0, 10.0];
        let c = [5.0, 5.0, 5.0, 5.0, 7.0];
        assert_eq!(speedup(&r, &c), Some(2.0));
        assert_eq!(speedup(&r, &[0.0, 0.0, 1.0]), None);
        assert_eq!(speedup(&r, &[]), None);
    }

    #[test]
    fn median_ignores_single_outlier() {
        let jittered = [1.0, 1.0, 1.0, 1.0, 500.0];
        assert_eq!(median(&jittered), Some(1.0));
    }
}
