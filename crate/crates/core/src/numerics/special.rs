//! Log-gamma, digamma and trigamma on the positive real axis.
//!
//! All three lift small arguments with the recurrence until `x >= LIFT` and
//! then evaluate the Stirling / asymptotic series, which has converged to
//! double precision by that point.

use crate::error::{Error, Result};

const LIFT: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_arg(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} requires a finite positive argument, got {x}"
        )))
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_arg("log_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

/// `Ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_arg("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// `Ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    check_arg("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x >= LIFT {
        return stirling(x);
    }
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted < LIFT {
        prod *= shifted;
        shifted += 1.0;
    }
    stirling(shifted) - prod.ln()
}

fn stirling(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r
        * (1.0 / 12.0
            + r2 * (-1.0 / 360.0
                + r2 * (1.0 / 1260.0
                    + r2 * (-1.0 / 1680.0
                        + r2 * (1.0 / 1188.0
                            + r2 * (-691.0 / 360_360.0 + r2 * (1.0 / 156.0 + r2 * (-3617.0 / 122_400.0))))))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < LIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            + r2 * (-1.0 / 120.0
                + r2 * (1.0 / 252.0
                    + r2 * (-1.0 / 240.0 + r2 * (1.0 / 132.0 + r2 * (-691.0 / 32_760.0 + r2 * (1.0 / 12.0)))))));
    acc + x.ln() - 0.5 * r - series
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < LIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r
        * r2
        * (1.0 / 6.0
            + r2 * (-1.0 / 30.0
                + r2 * (1.0 / 42.0
                    + r2 * (-1.0 / 30.0 + r2 * (5.0 / 66.0 + r2 * (-691.0 / 2730.0 + r2 * (7.0 / 6.0)))))));
    acc + r + 0.5 * r2 + series
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn log_gamma_known_values() {
        assert_abs_diff_eq!(log_gamma(1.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(log_gamma(2.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            log_gamma(0.5).unwrap(),
            0.5 * std::f64::consts::PI.ln(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(log_gamma(10.0).unwrap(), 362_880f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_gamma(10.0).unwrap(), 12.801_827_480_1, epsilon = 1e-10);
    }

    #[test]
    fn log_gamma_factorials_up_to_170() {
        let mut ln_fact = 0.0f64;
        for n in 1..170u32 {
            // ln Γ(n+1) = ln n!
            ln_fact += f64::from(n).ln();
            let got = log_gamma(f64::from(n) + 1.0).unwrap();
            assert!((got - ln_fact).abs() <= 1e-12 * ln_fact.max(1.0), "n={n}");
        }
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert_abs_diff_eq!(digamma(1.0).unwrap(), -euler, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(2.0).unwrap(), 1.0 - euler, epsilon = 1e-13);
        assert_abs_diff_eq!(
            digamma(0.5).unwrap(),
            -euler - 2.0 * std::f64::consts::LN_2,
            epsilon = 1e-13
        );
    }

    #[test]
    fn trigamma_known_values() {
        let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
        assert_abs_diff_eq!(trigamma(1.0).unwrap(), zeta2, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(2.0).unwrap(), zeta2 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(0.5).unwrap(), 3.0 * zeta2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_positive_arguments() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(log_gamma(bad).is_err());
            assert!(digamma(bad).is_err());
            assert!(trigamma(bad).is_err());
        }
    }

    proptest! {
        #[test]
        fn digamma_recurrence(log_x in (1e-6f64).ln()..(1e6f64).ln()) {
            let x = log_x.exp();
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            prop_assert!((lhs - 1.0 / x).abs() <= 1e-9 * (1.0 / x).max(1.0));
        }

        #[test]
        fn digamma_is_derivative_of_log_gamma(log_x in (1e-2f64).ln()..(1e6f64).ln()) {
            let x = log_x.exp();
            let h = 1e-5 * x.max(1.0);
            let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
            let d = digamma(x).unwrap();
            prop_assert!((fd - d).abs() <= 1e-5 * d.abs().max(1.0), "x={} fd={} d={}", x, fd, d);
        }

        #[test]
        fn trigamma_is_derivative_of_digamma(log_x in (1e-2f64).ln()..(1e4f64).ln()) {
            let x = log_x.exp();
            let h = 1e-5 * x;
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            let t = trigamma(x).unwrap();
            prop_assert!((fd - t).abs() <= 1e-5 * t.abs());
        }
    }
}
