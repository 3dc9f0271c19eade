//! Posterior draws of clone intensities and of the diversity functionals.
//!
//! Observed clones are padded with `c_hat - C` zero-count clones. Each draw
//! `b` gets its own random stream, so the draws do not depend on how the work
//! is scheduled; observed counts are put in descending order first, so a
//! permutation of the input does not change the draws either.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::{FitResult, DEFAULT_PARAM_BOUNDS};
use crate::error::{Error, Result};
use crate::model::{functionals_unchecked, CloneCounts, DiversityDraws, GammaPrior, IntensityVector};
use crate::numerics::{standard_gamma, BivariateNormal, RngStream};
use crate::par;
use crate::uncertainty::HyperCovariance;
use crate::zero_block::{single_atom, Atom, AtomMixture, PowerSums, AGGREGATE_MIN_ZEROS};

/// Observed counts in canonical (descending) order plus the zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedCounts {
    observed: Vec<u64>,
    zero_pad: u64,
}

impl PaddedCounts {
    pub fn new(counts: &CloneCounts, fit: &FitResult) -> Result<Self> {
        if counts.len() as u64 != fit.observed_c {
            return Err(Error::domain(format!(
                "fit was computed for {} clones but {} were supplied",
                fit.observed_c,
                counts.len()
            )));
        }
        Ok(Self::with_padding(counts, fit.zero_pad()))
    }

    pub fn with_padding(counts: &CloneCounts, zero_pad: u64) -> Self {
        let mut observed = counts.counts().to_vec();
        observed.sort_unstable_by(|a, b| b.cmp(a));
        Self { observed, zero_pad }
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    pub fn zero_pad(&self) -> u64 {
        self.zero_pad
    }

    /// Padded clone count `c_hat`.
    pub fn len(&self) -> usize {
        self.observed.len() + self.zero_pad as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Hyperparameters fixed at the point estimate.
    Naive,
    /// Hyperparameters drawn from their log-normal approximate law.
    HyperUncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub b_draws: usize,
    pub mode: SamplingMode,
    /// Draw fresh hyperparameters for every clone rather than once per draw.
    /// Off by default: independent per-clone draws shift the functionals
    /// instead of widening them.
    pub per_clone_hyper: bool,
    /// Box the hyperparameter draws are clamped into; matches the fit's box.
    #[serde(default = "default_bounds")]
    pub param_bounds: (f64, f64),
}

fn default_bounds() -> (f64, f64) {
    DEFAULT_PARAM_BOUNDS
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            b_draws: 500,
            mode: SamplingMode::HyperUncertain,
            per_clone_hyper: false,
            param_bounds: DEFAULT_PARAM_BOUNDS,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_draws < 50 {
            return Err(Error::domain(format!(
                "at least 50 posterior draws are needed for interval construction, got {}",
                self.b_draws
            )));
        }
        let (lo, hi) = self.param_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::domain(format!("invalid parameter bounds ({lo}, {hi})")));
        }
        Ok(())
    }
}

fn log_normal_law(prior: &GammaPrior, cov: &HyperCovariance) -> Result<BivariateNormal> {
    BivariateNormal::new((prior.shape.ln(), prior.rate.ln()), cov.log_scale)
}

#[inline]
fn exp_pair(u: f64, v: f64, bounds: (f64, f64)) -> (f64, f64) {
    (u.exp().clamp(bounds.0, bounds.1), v.exp().clamp(bounds.0, bounds.1))
}

/// `(a*, b*) = exp(N((ln a, ln b), A J A))`, clamped into the default
/// parameter box.
pub fn sample_hyperparams<R: Rng + ?Sized>(
    prior: &GammaPrior,
    cov: &HyperCovariance,
    rng: &mut R,
) -> Result<GammaPrior> {
    let (u, v) = log_normal_law(prior, cov)?.sample(rng);
    let (shape, rate) = exp_pair(u, v, DEFAULT_PARAM_BOUNDS);
    Ok(GammaPrior { shape, rate })
}

/// Ready-to-sample conditional law of the intensities.
#[derive(Debug, Clone, Copy)]
pub struct IntensitySource {
    prior: GammaPrior,
    law: Option<BivariateNormal>,
    per_clone: bool,
    bounds: (f64, f64),
}

impl IntensitySource {
    pub fn new(prior: &GammaPrior, cov: &HyperCovariance, mode: SamplingMode, per_clone_hyper: bool) -> Result<Self> {
        Self::with_bounds(prior, cov, mode, per_clone_hyper, DEFAULT_PARAM_BOUNDS)
    }

    pub fn with_bounds(
        prior: &GammaPrior,
        cov: &HyperCovariance,
        mode: SamplingMode,
        per_clone_hyper: bool,
        bounds: (f64, f64),
    ) -> Result<Self> {
        let law = match mode {
            SamplingMode::Naive => None,
            SamplingMode::HyperUncertain => Some(log_normal_law(prior, cov)?),
        };
        Ok(Self {
            prior: *prior,
            law,
            per_clone: per_clone_hyper,
            bounds,
        })
    }

    /// Hyperparameters shared by all clones of one draw, or `None` when
    /// every clone gets its own.
    fn shared<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(f64, f64)> {
        match (self.law, self.per_clone) {
            (Some(_), true) => None,
            (Some(law), false) => {
                let (u, v) = law.sample(rng);
                Some(exp_pair(u, v, self.bounds))
            }
            (None, _) => Some((self.prior.shape, self.prior.rate)),
        }
    }

    #[inline]
    fn clone_draw<R: Rng + ?Sized>(&self, shared: Option<(f64, f64)>, z: u64, rng: &mut R) -> f64 {
        let (a, b) = match (shared, self.law) {
            (Some(p), _) => p,
            (None, Some(law)) => {
                let (u, v) = law.sample(rng);
                exp_pair(u, v, self.bounds)
            }
            (None, None) => (self.prior.shape, self.prior.rate),
        };
        gamma_draw(a + z as f64, b + 1.0, rng)
    }

    /// Fills `out` with one intensity per padded clone,
    /// `lambda_i ~ Gamma(a* + z_i, b* + 1)`.
    pub fn fill<R: Rng + ?Sized>(&self, padded: &PaddedCounts, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(padded.len());
        let shared = self.shared(rng);
        let zeros = std::iter::repeat_n(&0u64, padded.zero_pad as usize);
        for &z in padded.observed.iter().chain(zeros) {
            out.push(self.clone_draw(shared, z, rng));
        }
    }
}

#[inline]
fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    (standard_gamma(shape, rng) / rate).max(f64::MIN_POSITIVE)
}

pub fn sample_intensities<R: Rng + ?Sized>(
    padded: &PaddedCounts,
    source: &IntensitySource,
    rng: &mut R,
) -> IntensityVector {
    let mut out = Vec::new();
    source.fill(padded, rng, &mut out);
    IntensityVector::new(out).expect("gamma draws are clamped to be positive")
}

/// Sampler for a zero block too large to draw clone by clone.
enum ZeroBlock {
    /// One law for every zero clone, prepared once.
    Fixed(Atom),
    /// One law per draw, prepared per draw.
    Shared,
    Mixture(AtomMixture),
}

impl ZeroBlock {
    fn new(source: &IntensitySource, cov: &HyperCovariance, n0: u64) -> Self {
        match (source.law, source.per_clone) {
            (None, _) => ZeroBlock::Fixed(single_atom(source.prior.shape, source.prior.rate + 1.0, n0)),
            (Some(_), false) => ZeroBlock::Shared,
            (Some(law), true) => ZeroBlock::Mixture(AtomMixture::new(law.mean(), &cov.log_scale, source.bounds, n0)),
        }
    }

    fn add<R: Rng + ?Sized>(&self, shared: Option<(f64, f64)>, n0: u64, sums: &mut PowerSums, rng: &mut R) {
        match self {
            ZeroBlock::Fixed(atom) => atom.add(n0, sums, rng),
            ZeroBlock::Shared => {
                let (a, b) = shared.expect("shared hyperparameters are drawn per draw");
                single_atom(a, b + 1.0, n0).add(n0, sums, rng);
            }
            ZeroBlock::Mixture(mix) => mix.add(n0, sums, rng),
        }
    }
}

/// `B` posterior draws of clonality and entropy, draw `b` using stream `rng.child(b)`.
///
/// With at least [`AGGREGATE_MIN_ZEROS`] padded zeros, the zero block enters
/// through its power sums: the largest zero-clone intensities are drawn
/// exactly and the rest through a normal approximation of their sums, and
/// clone-specific hyperparameters are discretized on Gauss-Hermite nodes.
pub fn diversity_draws(
    padded: &PaddedCounts,
    prior: &GammaPrior,
    cov: &HyperCovariance,
    config: &SamplerConfig,
    rng: RngStream,
) -> Result<DiversityDraws> {
    config.validate()?;
    if padded.is_empty() {
        return Err(Error::domain("no clones to sample"));
    }
    let source = IntensitySource::with_bounds(prior, cov, config.mode, config.per_clone_hyper, config.param_bounds)?;
    let n0 = padded.zero_pad();
    let pairs = if n0 >= AGGREGATE_MIN_ZEROS {
        let block = ZeroBlock::new(&source, cov, n0);
        par::map_indexed(config.b_draws, |b| {
            let mut stream = rng.child(b as u64).rng();
            let shared = source.shared(&mut stream);
            let mut sums = PowerSums::default();
            for &z in padded.observed() {
                sums.push(source.clone_draw(shared, z, &mut stream));
            }
            block.add(shared, n0, &mut sums, &mut stream);
            sums.functionals()
        })
    } else {
        par::map_indexed(config.b_draws, |b| {
            let mut stream = rng.child(b as u64).rng();
            let mut buf = Vec::new();
            source.fill(padded, &mut stream, &mut buf);
            functionals_unchecked(&buf)
        })
    };
    let (clonality, entropy) = pairs.into_iter().unzip();
    Ok(DiversityDraws { clonality, entropy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SymMatrix2;

    fn prior(a: f64, b: f64) -> GammaPrior {
        GammaPrior::new(a, b).unwrap()
    }

    fn cov(log_scale: SymMatrix2) -> HyperCovariance {
        HyperCovariance {
            j_hat: SymMatrix2::ZERO,
            log_scale,
            at_boundary: false,
        }
    }

    #[test]
    fn zero_covariance_hyperparameters_are_exact() {
        let mut rng = RngStream::new(1, 0).rng();
        let p = prior(0.7, 0.3);
        let draw = sample_hyperparams(&p, &HyperCovariance::zero(), &mut rng).unwrap();
        assert!((draw.shape - 0.7).abs() < 1e-15 && (draw.rate - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hyperparameter_median_and_correlation() {
        let mut rng = RngStream::new(2, 0).rng();
        let p = prior(1.0, 1.0);
        let c = cov(SymMatrix2::new(0.01, 0.009, 0.01));
        let n = 100_000;
        let mut shapes = Vec::with_capacity(n);
        let (mut su, mut sv, mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let d = sample_hyperparams(&p, &c, &mut rng).unwrap();
            assert!(d.shape > 0.0 && d.rate > 0.0);
            shapes.push(d.shape);
            let (u, v) = (d.shape.ln(), d.rate.ln());
            su += u;
            sv += v;
            suu += u * u;
            svv += v * v;
            suv += u * v;
        }
        shapes.sort_by(f64::total_cmp);
        let median = shapes[n / 2];
        assert!((median - 1.0).abs() < 0.01, "median {median}");
        let nf = n as f64;
        let cuv = suv / nf - su * sv / (nf * nf);
        let cuu = suu / nf - su * su / (nf * nf);
        let cvv = svv / nf - sv * sv / (nf * nf);
        let corr = cuv / (cuu * cvv).sqrt();
        assert!((corr - 0.9).abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn naive_intensity_means() {
        let counts = CloneCounts::new(vec![5, 5]).unwrap();
        let padded = PaddedCounts::with_padding(&counts, 1);
        let source =
            IntensitySource::new(&prior(1.0, 1.0), &HyperCovariance::zero(), SamplingMode::Naive, true).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let n = 100_000;
        let mut sum_obs = 0.0;
        let mut sum_zero = 0.0;
        for _ in 0..n {
            let lam = sample_intensities(&padded, &source, &mut rng);
            sum_obs += lam.as_slice()[0];
            sum_zero += lam.as_slice()[2];
        }
        assert!((sum_obs / n as f64 - 3.0).abs() < 0.02);
        // Gamma(1, 2): mean 0.5, sd 0.5
        assert!((sum_zero / n as f64 - 0.5).abs() < 5.0 * 0.5 / (n as f64).sqrt());

        let source =
            IntensitySource::new(&prior(0.5, 2.0), &HyperCovariance::zero(), SamplingMode::Naive, true).unwrap();
        let mut sum_zero = 0.0;
        for _ in 0..n {
            sum_zero += sample_intensities(&padded, &source, &mut rng).as_slice()[2];
        }
        let sd = (0.5f64).sqrt() / 3.0;
        assert!((sum_zero / n as f64 - 0.5 / 3.0).abs() < 5.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn padded_len_and_order() {
        let counts = CloneCounts::new(vec![1, 7, 3]).unwrap();
        let padded = PaddedCounts::with_padding(&counts, 4);
        assert_eq!(padded.observed(), &[7, 3, 1]);
        assert_eq!(padded.len(), 7);
    }

    #[test]
    fn sampler_config_needs_fifty_draws() {
        let cfg = SamplerConfig {
            b_draws: 10,
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
