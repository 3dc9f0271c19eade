//! Gamma, Poisson and bivariate-normal variate generators.

use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::SymMatrix2;
use super::special::ln_gamma_unchecked;
use crate::error::{Error, Result};

/// Uniform on (0, 1].
#[inline]
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[inline]
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from Gamma(shape, rate), mean `shape / rate`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
        return Err(Error::domain(format!(
            "gamma requires positive finite shape and rate, got ({shape}, {rate})"
        )));
    }
    Ok((standard_gamma(shape, rng) / rate).max(f64::MIN_POSITIVE))
}

/// Gamma(shape, 1) for a shape already known to be positive and finite.
///
/// Shapes below one are boosted: `G(a) = G(a + 1) U^{1/a}`, evaluated in log
/// space so that tiny shapes do not lose the draw to underflow early.
#[inline]
pub(crate) fn standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let g = marsaglia_tsang(shape + 1.0, rng);
        let log_u = open_uniform(rng).ln();
        return (g.ln() + log_u / shape).exp().max(f64::MIN_POSITIVE);
    }
    marsaglia_tsang(shape, rng)
}

#[inline]
fn marsaglia_tsang<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Poisson draw; a zero mean returns zero without consuming randomness.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::domain(format!(
            "poisson mean must be finite and non-negative, got {mean}"
        )));
    }
    Ok(poisson_unchecked(mean, rng))
}

pub(crate) fn poisson_unchecked<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean == 0.0 {
        0
    } else if mean < 10.0 {
        poisson_inversion(mean, rng)
    } else {
        poisson_ptrs(mean, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

// Transformed rejection with squeeze (Hörmann, PTRS), valid for mean >= 10.
fn poisson_ptrs<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let ln_mean = mean.ln();
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v = rng.random::<f64>();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * ln_mean - ln_gamma_unchecked(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Pre-factored bivariate normal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateNormal {
    mean: (f64, f64),
    root: SymMatrix2,
}

impl BivariateNormal {
    pub fn new(mean: (f64, f64), cov: SymMatrix2) -> Result<Self> {
        let root = cov.sqrt_psd()?;
        Ok(Self { mean, root })
    }

    pub fn mean(&self) -> (f64, f64) {
        self.mean
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z0 = standard_normal(rng);
        let z1 = standard_normal(rng);
        let r = &self.root;
        (
            self.mean.0 + (r.xx * z0 + r.xy * z1),
            self.mean.1 + (r.xy * z0 + r.yy * z1),
        )
    }
}

pub fn sample_bivariate_normal<R: Rng + ?Sized>(mean: (f64, f64), cov: &SymMatrix2, rng: &mut R) -> Result<(f64, f64)> {
    Ok(BivariateNormal::new(mean, *cov)?.sample(rng))
}
