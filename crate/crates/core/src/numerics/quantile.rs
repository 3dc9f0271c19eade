use crate::error::{Error, Result};

/// Linear-interpolation ("type 7") quantile of an ascending sample.
///
/// The position is `(n - 1) q`, so `q = 0` gives the minimum and `q = 1` the maximum.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("quantile level {q} outside [0, 1]")));
    }
    Ok(quantile_unchecked(sorted, q))
}

pub(crate) fn quantile_unchecked(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let j = h.floor() as usize;
    if j + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - j as f64;
    sorted[j] + frac * (sorted[j + 1] - sorted[j])
}

/// Sorts a sample ascending; NaNs order last.
pub fn sort_samples(xs: &mut [f64]) {
    xs.sort_unstable_by(f64::total_cmp);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(empirical_quantile(&[10.0, 20.0], 0.25).unwrap(), 12.5);
        assert_eq!(empirical_quantile(&[10.0, 20.0], 0.0).unwrap(), 10.0);
        assert_eq!(empirical_quantile(&[10.0, 20.0], 1.0).unwrap(), 20.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
    }

    #[test]
    fn errors() {
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&[1.0], 1.5).is_err());
        assert!(empirical_quantile(&[1.0], f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_level(mut xs in prop::collection::vec(-1e3f64..1e3, 1..60), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
            sort_samples(&mut xs);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(empirical_quantile(&xs, lo).unwrap() <= empirical_quantile(&xs, hi).unwrap());
        }

        #[test]
        fn affine_equivariance(mut xs in prop::collection::vec(-1e3f64..1e3, 1..60), q in 0.0f64..=1.0,
                               scale in 0.1f64..10.0, shift in -100.0f64..100.0) {
            sort_samples(&mut xs);
            let ys: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let lhs = empirical_quantile(&ys, q).unwrap();
            let rhs = scale * empirical_quantile(&xs, q).unwrap() + shift;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
