//! Parametric-bootstrap calibration of the posterior interval level and the
//! end-to-end interval pipeline.
//!
//! Each calibration replicate simulates a complete repertoire from the fitted
//! model, records the true functionals of the simulated intensities, refits
//! the model to the simulated positive counts and draws from the refitted
//! posterior. Whether the truth falls inside the `alpha`-level percentile
//! interval is read off from the truth's position in the draws
//! ([`TruthRank`]), so one pass gives the coverage for the whole alpha grid.

use serde::{Deserialize, Serialize};

use crate::em::{fit as fit_model, fit_from, CountGroups, FitConfig, FitResult, DEFAULT_PARAM_BOUNDS};
use crate::error::{Error, Result};
use crate::model::{functionals_unchecked, CloneCounts, DiversityDraws, Functional};
use crate::numerics::{poisson_unchecked, quantile_unchecked, sort_samples, standard_gamma, RngStream};
use crate::par;
use crate::posterior::{diversity_draws, PaddedCounts, SamplerConfig, SamplingMode};
use crate::uncertainty::{hyper_covariance, hyper_covariance_groups, HyperCovariance};
use crate::zero_block::{composed_repertoire, AGGREGATE_MIN_ZEROS};

/// Repertoires simulated clone by clone larger than this are refused.
pub const MAX_SIMULATED_CLONES: u64 = 100_000_000;
const REPLICATE_RETRIES: u64 = 10;
const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub r_replicates: usize,
    pub b_draws: usize,
    pub target_coverage: f64,
    /// Strictly increasing candidate levels in (0, 1).
    pub alpha_grid: Vec<f64>,
    pub per_clone_hyper: bool,
    /// Draw hyperparameters from their approximate law inside the
    /// calibration replicates; `false` calibrates the naive posterior.
    #[serde(default = "default_true")]
    pub hyper_uncertainty: bool,
    /// Refit each replicate; `false` reuses the generating fit.
    #[serde(default = "default_true")]
    pub refit: bool,
}

fn default_true() -> bool {
    true
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            r_replicates: 200,
            b_draws: 500,
            target_coverage: 0.95,
            alpha_grid: alpha_grid(0.002, 0.5),
            per_clone_hyper: false,
            hyper_uncertainty: true,
            refit: true,
        }
    }
}

/// `step, 2 step, ...` up to and including `max` (within rounding).
pub fn alpha_grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (1..=n).map(|k| k as f64 * step).collect()
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_replicates < 50 {
            return Err(Error::domain(format!(
                "calibration needs at least 50 replicates, got {}",
                self.r_replicates
            )));
        }
        self.sampler(SamplingMode::HyperUncertain, DEFAULT_PARAM_BOUNDS)
            .validate()?;
        if !(self.target_coverage > 0.0 && self.target_coverage < 1.0) {
            return Err(Error::domain("target coverage must lie in (0, 1)"));
        }
        if self.alpha_grid.is_empty() {
            return Err(Error::domain("alpha grid is empty"));
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::domain("alpha grid must lie inside (0, 1)"));
        }
        if self.alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("alpha grid must be strictly increasing"));
        }
        Ok(())
    }

    /// Interval level of the uncalibrated and naive methods.
    pub fn nominal_alpha(&self) -> f64 {
        1.0 - self.target_coverage
    }

    fn sampler(&self, mode: SamplingMode, bounds: (f64, f64)) -> SamplerConfig {
        SamplerConfig {
            b_draws: self.b_draws,
            mode,
            per_clone_hyper: self.per_clone_hyper,
            param_bounds: bounds,
        }
    }
}

/// Equal-tailed percentile interval `(q(alpha/2), q(1 - alpha/2))`.
pub fn interval_from_draws(sorted: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if sorted.is_empty() {
        return Err(Error::domain("interval from an empty set of draws"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok((
        quantile_unchecked(sorted, alpha / 2.0),
        quantile_unchecked(sorted, 1.0 - alpha / 2.0),
    ))
}

/// Position of a truth among sorted posterior draws.
///
/// With the linear-interpolation quantile `q`, the set of levels `p` with
/// `q(p) <= truth` is `[0, upper_level]` and the set with `q(p) >= truth` is
/// `[lower_level, 1]`, so the `alpha` interval covers the truth exactly when
/// `alpha/2 <= upper_level` and `1 - alpha/2 >= lower_level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRank {
    /// Mid-rank `(#{draws < truth} + #{draws == truth} / 2) / B`.
    pub u: f64,
    /// Smallest level whose quantile reaches the truth (2 if none does).
    pub lower_level: f64,
    /// Largest level whose quantile stays at or below the truth (-1 if none does).
    pub upper_level: f64,
}

impl TruthRank {
    pub fn covered(&self, alpha: f64) -> bool {
        alpha / 2.0 <= self.upper_level && 1.0 - alpha / 2.0 >= self.lower_level
    }
}

fn interpolated_level(sorted: &[f64], below: usize, truth: f64) -> f64 {
    let j = below - 1;
    let (x0, x1) = (sorted[j], sorted[j + 1]);
    (j as f64 + (truth - x0) / (x1 - x0)) / (sorted.len() - 1) as f64
}

pub fn replicate_rank(truth: f64, sorted: &[f64]) -> TruthRank {
    let n = sorted.len();
    let below = sorted.partition_point(|x| *x < truth);
    let at_or_below = sorted.partition_point(|x| *x <= truth);
    let u = (below as f64 + 0.5 * (at_or_below - below) as f64) / n as f64;
    let upper_level = if at_or_below == 0 {
        -1.0
    } else if at_or_below == n {
        1.0
    } else {
        interpolated_level(sorted, at_or_below, truth)
    };
    let lower_level = if below == n {
        2.0
    } else if below == 0 {
        0.0
    } else {
        interpolated_level(sorted, below, truth)
    };
    TruthRank {
        u,
        lower_level,
        upper_level,
    }
}

/// A repertoire simulated from a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub truth_clonality: f64,
    pub truth_entropy: f64,
    pub counts: CloneCounts,
}

/// Draws `c_hat` intensities from `Gamma(a_hat, b_hat)`, records their
/// functionals and keeps the positive Poisson counts.
///
/// When the expected number of zero-count clones reaches the aggregation
/// threshold the repertoire is generated by composition instead, which has
/// the same law and costs time proportional to the positive clones only.
pub fn simulate_replicate(fit: &FitResult, rng: RngStream) -> Result<Replicate> {
    let (a, b) = (fit.prior.shape, fit.prior.rate);
    let n = fit.c_hat;
    let expected_zeros = n as f64 * (-a * (1.0 / b).ln_1p()).exp();
    let composed = expected_zeros >= AGGREGATE_MIN_ZEROS as f64;
    if !composed && n > MAX_SIMULATED_CLONES {
        return Err(Error::NumericDegeneracy(format!("refusing to simulate {n} clones")));
    }
    let mut lam = Vec::new();
    for attempt in 0..REPLICATE_RETRIES {
        let mut g = rng.child(attempt).rng();
        let ((truth_clonality, truth_entropy), counts) = if composed {
            let (sums, counts) = composed_repertoire(a, b, n, &mut g);
            (sums.functionals(), counts)
        } else {
            lam.clear();
            lam.extend((0..n).map(|_| (standard_gamma(a, &mut g) / b).max(f64::MIN_POSITIVE)));
            let counts: Vec<u64> = lam
                .iter()
                .map(|&l| poisson_unchecked(l, &mut g))
                .filter(|&z| z > 0)
                .collect();
            (functionals_unchecked(&lam), counts)
        };
        if counts.len() >= 2 {
            return Ok(Replicate {
                truth_clonality,
                truth_entropy,
                counts: CloneCounts::new(counts)?,
            });
        }
    }
    Err(Error::DegenerateReplicate(format!(
        "fewer than two positive counts in {REPLICATE_RETRIES} attempts with (a, b, C) = ({a}, {b}, {n})"
    )))
}

/// Everything computed for one calibration replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub truth_clonality: f64,
    pub truth_entropy: f64,
    pub fit: FitResult,
    /// Sorted posterior draws from the replicate's own fit.
    pub draws: DiversityDraws,
    pub clonality_rank: TruthRank,
    pub entropy_rank: TruthRank,
}

impl ReplicateOutcome {
    pub fn rank(&self, functional: Functional) -> &TruthRank {
        match functional {
            Functional::Clonality => &self.clonality_rank,
            Functional::Entropy => &self.entropy_rank,
        }
    }
}

/// Replicate `index` of [`calibrate`], run on its own.
pub fn calibration_replicate(
    fit: &FitResult,
    fit_cfg: &FitConfig,
    config: &CalibConfig,
    rng: RngStream,
    index: u64,
) -> Result<ReplicateOutcome> {
    let stream = rng.child(index);
    let rep = simulate_replicate(fit, stream.child(0))?;
    let rep_fit = if config.refit {
        fit_from(&rep.counts, fit_cfg, Some(fit.prior))?
    } else {
        let c = rep.counts.len() as u64;
        FitResult {
            observed_c: c,
            n0_hat: (fit.c_hat - c) as f64,
            loglik_trace: Vec::new(),
            ..fit.clone()
        }
    };
    let (cov, mode) = if config.hyper_uncertainty {
        let groups = CountGroups::from_counts(&rep.counts);
        (
            hyper_covariance_groups(&groups, &rep_fit)?,
            SamplingMode::HyperUncertain,
        )
    } else {
        (HyperCovariance::zero(), SamplingMode::Naive)
    };
    let padded = PaddedCounts::new(&rep.counts, &rep_fit)?;
    let mut draws = diversity_draws(
        &padded,
        &rep_fit.prior,
        &cov,
        &config.sampler(mode, fit_cfg.param_bounds),
        stream.child(1),
    )?;
    sort_samples(&mut draws.clonality);
    sort_samples(&mut draws.entropy);
    Ok(ReplicateOutcome {
        clonality_rank: replicate_rank(rep.truth_clonality, &draws.clonality),
        entropy_rank: replicate_rank(rep.truth_entropy, &draws.entropy),
        truth_clonality: rep.truth_clonality,
        truth_entropy: rep.truth_entropy,
        fit: rep_fit,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub alpha: f64,
    pub coverage: f64,
}

/// Empirical coverage of the `alpha` intervals across the replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CoveragePoint>,
    pub chosen_alpha0: f64,
    pub achieved_coverage: f64,
    /// Replicates that entered the curve.
    pub replicates: usize,
}

impl CoverageCurve {
    /// Builds the curve and picks the grid level closest to `target`,
    /// preferring the smaller level (wider interval) on ties.
    pub fn from_ranks(ranks: &[TruthRank], grid: &[f64], target: f64) -> Result<Self> {
        if ranks.is_empty() || grid.is_empty() {
            return Err(Error::domain("coverage curve needs replicates and a grid"));
        }
        let r = ranks.len() as f64;
        let points: Vec<CoveragePoint> = grid
            .iter()
            .map(|&alpha| CoveragePoint {
                alpha,
                coverage: ranks.iter().filter(|k| k.covered(alpha)).count() as f64 / r,
            })
            .collect();
        let mut best = points[0];
        for p in &points[1..] {
            if (p.coverage - target).abs() < (best.coverage - target).abs() - 1e-12 {
                best = *p;
            }
        }
        Ok(Self {
            points,
            chosen_alpha0: best.alpha,
            achieved_coverage: best.coverage,
            replicates: ranks.len(),
        })
    }

    pub fn coverage_at(&self, alpha: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.alpha - alpha).abs() < 1e-12)
            .map(|p| p.coverage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub clonality: CoverageCurve,
    pub entropy: CoverageCurve,
    pub failed_replicates: usize,
}

impl Calibration {
    pub fn curve(&self, functional: Functional) -> &CoverageCurve {
        match functional {
            Functional::Clonality => &self.clonality,
            Functional::Entropy => &self.entropy,
        }
    }
}

/// Runs the `R` calibration replicates and builds one coverage curve per functional.
pub fn calibrate(fit: &FitResult, fit_cfg: &FitConfig, config: &CalibConfig, rng: RngStream) -> Result<Calibration> {
    config.validate()?;
    let outcomes = par::map_indexed(config.r_replicates, |i| {
        calibration_replicate(fit, fit_cfg, config, rng, i as u64).map(|o| (o.clonality_rank, o.entropy_rank))
    });
    let total = outcomes.len();
    let mut first_error = None;
    let mut ranks_c = Vec::with_capacity(total);
    let mut ranks_e = Vec::with_capacity(total);
    for outcome in outcomes {
        match outcome {
            Ok((c, e)) => {
                ranks_c.push(c);
                ranks_e.push(e);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let failed = total - ranks_c.len();
    if failed as f64 > MAX_FAILED_FRACTION * total as f64 || ranks_c.is_empty() {
        return Err(Error::CalibrationUnstable {
            failed,
            total,
            first_error: first_error.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    Ok(Calibration {
        clonality: CoverageCurve::from_ranks(&ranks_c, &config.alpha_grid, config.target_coverage)?,
        entropy: CoverageCurve::from_ranks(&ranks_e, &config.alpha_grid, config.target_coverage)?,
        failed_replicates: failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Hyperparameter-uncertain posterior at the calibrated level.
    Calibrated,
    /// Hyperparameter-uncertain posterior at the nominal level.
    Uncalibrated,
    /// Plug-in posterior at the nominal level.
    Naive,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Calibrated, Method::Uncalibrated, Method::Naive];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Calibrated => "calibrated",
            Method::Uncalibrated => "uncalibrated",
            Method::Naive => "naive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrated" => Ok(Method::Calibrated),
            "uncalibrated" => Ok(Method::Uncalibrated),
            "naive" => Ok(Method::Naive),
            other => Err(Error::domain(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawsSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub functional: Functional,
    pub method: Method,
    /// Posterior median of the method's draws.
    pub point_estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Level the interval was built at.
    pub alpha0: f64,
    pub draws_summary: DrawsSummary,
}

impl IntervalReport {
    fn from_sorted(functional: Functional, method: Method, sorted: &[f64], alpha: f64) -> Result<Self> {
        let (lower, upper) = interval_from_draws(sorted, alpha)?;
        Ok(Self {
            functional,
            method,
            point_estimate: quantile_unchecked(sorted, 0.5),
            lower,
            upper,
            alpha0: alpha,
            draws_summary: DrawsSummary {
                count: sorted.len(),
                min: sorted[0],
                max: sorted[sorted.len() - 1],
            },
        })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Fit, covariance, calibration and the three interval methods for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub fit: FitResult,
    pub covariance: HyperCovariance,
    pub calibration: Calibration,
    pub reports: Vec<IntervalReport>,
}

impl PipelineResult {
    pub fn report(&self, functional: Functional, method: Method) -> &IntervalReport {
        self.reports
            .iter()
            .find(|r| r.functional == functional && r.method == method)
            .expect("the pipeline emits every functional/method pair")
    }
}

pub fn run_pipeline(
    counts: &CloneCounts,
    fit_cfg: &FitConfig,
    calib_cfg: &CalibConfig,
    seed: u64,
) -> Result<PipelineResult> {
    run_pipeline_stream(counts, fit_cfg, calib_cfg, RngStream::new(seed, 0))
}

/// [`run_pipeline`] driven by an explicit stream.
pub fn run_pipeline_stream(
    counts: &CloneCounts,
    fit_cfg: &FitConfig,
    calib_cfg: &CalibConfig,
    rng: RngStream,
) -> Result<PipelineResult> {
    calib_cfg.validate()?;
    let fit = fit_model(counts, fit_cfg)?;
    let covariance = hyper_covariance(counts, &fit)?;
    let calibration = calibrate(&fit, fit_cfg, calib_cfg, rng.child(0))?;

    let padded = PaddedCounts::new(counts, &fit)?;
    let mut hyper = diversity_draws(
        &padded,
        &fit.prior,
        &covariance,
        &calib_cfg.sampler(SamplingMode::HyperUncertain, fit_cfg.param_bounds),
        rng.child(1),
    )?;
    let mut naive = diversity_draws(
        &padded,
        &fit.prior,
        &HyperCovariance::zero(),
        &calib_cfg.sampler(SamplingMode::Naive, fit_cfg.param_bounds),
        rng.child(2),
    )?;
    for v in [
        &mut hyper.clonality,
        &mut hyper.entropy,
        &mut naive.clonality,
        &mut naive.entropy,
    ] {
        sort_samples(v);
    }

    let nominal = calib_cfg.nominal_alpha();
    let mut reports = Vec::with_capacity(6);
    for functional in Functional::ALL {
        let (h, n) = match functional {
            Functional::Clonality => (&hyper.clonality, &naive.clonality),
            Functional::Entropy => (&hyper.entropy, &naive.entropy),
        };
        let alpha0 = calibration.curve(functional).chosen_alpha0;
        reports.push(IntervalReport::from_sorted(functional, Method::Calibrated, h, alpha0)?);
        reports.push(IntervalReport::from_sorted(
            functional,
            Method::Uncalibrated,
            h,
            nominal,
        )?);
        reports.push(IntervalReport::from_sorted(functional, Method::Naive, n, nominal)?);
    }
    Ok(PipelineResult {
        fit,
        covariance,
        calibration,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn interval_on_one_to_hundred() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = interval_from_draws(&xs, 0.5).unwrap();
        assert_abs_diff_eq!(lo, 25.75, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 75.25, epsilon = 1e-12);
        let (lo1, hi1) = interval_from_draws(&xs, 0.1).unwrap();
        assert!(lo1 <= lo && hi <= hi1);
        assert!(interval_from_draws(&[], 0.1).is_err());
        assert!(interval_from_draws(&xs, 0.0).is_err());
    }

    #[test]
    fn symmetric_draws_give_symmetric_interval() {
        let mut xs: Vec<f64> = (1..=37).map(|i| f64::from(i) * 0.37).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        xs.extend(neg);
        sort_samples(&mut xs);
        let (lo, hi) = interval_from_draws(&xs, 0.2).unwrap();
        assert!((lo + hi).abs() < 1e-12);
    }

    #[test]
    fn rank_extremes() {
        let xs: Vec<f64> = (1..=99).map(f64::from).collect();
        let below = replicate_rank(0.0, &xs);
        assert_eq!(below.u, 0.0);
        let grid = alpha_grid(0.002, 0.5);
        assert!(grid.iter().all(|a| !below.covered(*a)));
        let median = replicate_rank(50.0, &xs);
        assert!(grid.iter().all(|a| median.covered(*a)));
        assert!(median.covered(0.99));
        let above = replicate_rank(1000.0, &xs);
        assert_eq!(above.u, 1.0);
        assert!(grid.iter().all(|a| !above.covered(*a)));
    }

    #[test]
    fn grid_construction() {
        let g = alpha_grid(0.002, 0.5);
        assert_eq!(g.len(), 250);
        assert_abs_diff_eq!(g[0], 0.002);
        assert_abs_diff_eq!(g[249], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn closest_coverage_prefers_wider_interval() {
        // 20 ranks; coverage steps of 0.05
        let ranks: Vec<TruthRank> = (0..20)
            .map(|i| {
                let u = (i as f64 + 0.5) / 20.0;
                TruthRank {
                    u,
                    lower_level: u,
                    upper_level: u,
                }
            })
            .collect();
        let grid = alpha_grid(0.01, 0.5);
        let curve = CoverageCurve::from_ranks(&ranks, &grid, 0.95).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].coverage <= w[0].coverage);
        }
        let best = curve.chosen_alpha0;
        let first_with_same = curve
            .points
            .iter()
            .find(|p| (p.coverage - curve.achieved_coverage).abs() < 1e-12)
            .unwrap();
        assert_eq!(best, first_with_same.alpha);
    }

    #[test]
    fn config_validation() {
        let mut cfg = CalibConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.r_replicates = 10;
        assert!(cfg.validate().is_err());
        let cfg = CalibConfig {
            alpha_grid: vec![0.2, 0.1],
            ..CalibConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn rank_decision_equals_membership(mut xs in prop::collection::vec(-10f64..10.0, 2..80),
                                           truth in -12f64..12.0, pick in 0usize..80, alpha in 0.001f64..0.999) {
            sort_samples(&mut xs);
            // include exact ties with a draw
            let truth = if pick < xs.len() && pick % 3 == 0 { xs[pick] } else { truth };
            let rank = replicate_rank(truth, &xs);
            let (lo, hi) = interval_from_draws(&xs, alpha).unwrap();
            prop_assert_eq!(rank.covered(alpha), lo <= truth && truth <= hi);
        }

        #[test]
        fn intervals_are_nested(mut xs in prop::collection::vec(-10f64..10.0, 1..80), a1 in 0.001f64..0.999, a2 in 0.001f64..0.999) {
            sort_samples(&mut xs);
            let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let (lo_w, hi_w) = interval_from_draws(&xs, small).unwrap();
            let (lo_n, hi_n) = interval_from_draws(&xs, large).unwrap();
            prop_assert!(lo_w <= lo_n && hi_n <= hi_w);
        }
    }
}
