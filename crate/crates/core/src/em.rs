//! Maximum-likelihood fit of the zero-truncated Gamma-Poisson model.
//!
//! The outer EM treats the number of unseen clones as missing and replaces it
//! by its expectation `n0 = C p0 / (1 - p0)`; the inner EM treats the clone
//! intensities as missing and maximizes the completed negative-binomial
//! likelihood for fixed `n0`. Both loops work on grouped counts
//! (`value`, `multiplicity`), which is exact and much cheaper because real
//! repertoires are dominated by a handful of small count values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CloneCounts, GammaPrior};
use crate::numerics::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked, CompensatedSum, SymMatrix2};

/// Cap applied to the unseen-clone estimate when `p0` approaches one.
pub const N0_CAP: f64 = 1e9;
pub const DEFAULT_PARAM_BOUNDS: (f64, f64) = (1e-6, 1e6);
const SNAP_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative change of the truncated log-likelihood that stops the outer loop.
    pub outer_tol: f64,
    /// Relative parameter change that stops the inner loop.
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Box for both shape and rate.
    pub param_bounds: (f64, f64),
    /// Try a safeguarded Newton step on the truncated likelihood after each
    /// outer iteration; it is kept only if the likelihood increases.
    pub newton_accel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-8,
            inner_tol: 1e-10,
            max_outer_iters: 500,
            max_inner_iters: 200,
            param_bounds: DEFAULT_PARAM_BOUNDS,
            newton_accel: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.param_bounds;
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::domain("fit tolerances must be positive"));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::domain("fit iteration limits must be positive"));
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::domain(format!("invalid parameter bounds ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub prior: GammaPrior,
    /// Expected number of unseen clones (real valued).
    pub n0_hat: f64,
    /// Total clone estimate `C + round(n0_hat)`.
    pub c_hat: u64,
    pub observed_c: u64,
    /// Truncated log-likelihood after each outer iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// The estimate sits on the parameter box.
    pub clamped: bool,
    #[serde(default)]
    pub shape_at_bound: bool,
    #[serde(default)]
    pub rate_at_bound: bool,
    /// `n0_hat` hit [`N0_CAP`].
    pub n0_capped: bool,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn zero_pad(&self) -> u64 {
        self.c_hat - self.observed_c
    }
}

/// Distinct count values with their multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct CountGroups {
    groups: Vec<(u64, f64)>,
    observed: u64,
}

impl CountGroups {
    pub fn from_counts(counts: &CloneCounts) -> Self {
        Self::from_values(counts.counts())
    }

    /// Groups arbitrary positive values (the caller guarantees positivity).
    pub(crate) fn from_values(values: &[u64]) -> Self {
        let mut map: BTreeMap<u64, u64> = BTreeMap::new();
        for &z in values {
            *map.entry(z).or_default() += 1;
        }
        Self {
            groups: map.into_iter().map(|(z, m)| (z, m as f64)).collect(),
            observed: values.len() as u64,
        }
    }

    pub fn groups(&self) -> &[(u64, f64)] {
        &self.groups
    }

    /// Number of observed clones `C`.
    pub fn observed(&self) -> u64 {
        self.observed
    }

    fn mean_and_variance(&self) -> (f64, f64) {
        let n = self.observed as f64;
        let mean = self.groups.iter().map(|(z, m)| *z as f64 * m).sum::<f64>() / n;
        let var = self
            .groups
            .iter()
            .map(|(z, m)| m * (*z as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (mean, var)
    }
}

/// `ln P(Z = z)` under the Gamma-Poisson (negative binomial) marginal.
pub fn nb_log_pmf(z: u64, prior: &GammaPrior) -> f64 {
    let (a, b) = (prior.shape, prior.rate);
    let z = z as f64;
    ln_gamma_unchecked(z + a) - ln_gamma_unchecked(a) - ln_gamma_unchecked(z + 1.0) + prior.log_zero_probability()
        - z * b.ln_1p()
}

/// `ln(1 - p0)`, or an error when the zero class swallows all the mass.
fn log_one_minus_p0(prior: &GammaPrior) -> Result<f64> {
    let one_minus = -prior.log_zero_probability().exp_m1();
    if one_minus <= 1e-15 {
        return Err(Error::NumericDegeneracy(format!(
            "P(Z = 0) is within 1e-15 of one at (a, b) = ({}, {})",
            prior.shape, prior.rate
        )));
    }
    Ok(one_minus.ln())
}

/// Zero-truncated log-likelihood of the observed counts.
pub fn truncated_loglik(counts: &CloneCounts, prior: &GammaPrior) -> Result<f64> {
    truncated_loglik_groups(&CountGroups::from_counts(counts), prior)
}

pub fn truncated_loglik_groups(groups: &CountGroups, prior: &GammaPrior) -> Result<f64> {
    let norm = log_one_minus_p0(prior)?;
    let mut acc = CompensatedSum::new();
    for &(z, m) in groups.groups() {
        acc.add(m * (nb_log_pmf(z, prior) - norm));
    }
    Ok(acc.value())
}

/// Value, gradient and Hessian of the truncated log-likelihood in `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikDerivatives {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: SymMatrix2,
}

/// Closed-form derivatives of the truncated log-likelihood.
///
/// The truncation term `-ln(1 - p0)` with `ln p0 = a ln(b/(b+1))` is
/// differentiated through `w = p0 / (1 - p0)`:
/// `d(-ln(1-p0)) = w d ln p0` and
/// `d2(-ln(1-p0)) = w d2 ln p0 + w (1 + w) (d ln p0)(d ln p0)^T`.
pub fn loglik_derivatives(groups: &CountGroups, prior: &GammaPrior) -> Result<LoglikDerivatives> {
    let (a, b) = (prior.shape, prior.rate);
    let norm = log_one_minus_p0(prior)?;
    let r = prior.log_zero_probability() / a;
    let ln1p_b = b.ln_1p();
    let psi_a = digamma_unchecked(a);
    let tri_a = trigamma_unchecked(a);
    let lg_a = ln_gamma_unchecked(a);
    let inv_b = 1.0 / b;
    let inv_b1 = 1.0 / (b + 1.0);

    let mut value = CompensatedSum::new();
    let mut ga = CompensatedSum::new();
    let mut gb = CompensatedSum::new();
    let mut haa = CompensatedSum::new();
    let mut hbb = CompensatedSum::new();
    for &(z, m) in groups.groups() {
        let zf = z as f64;
        value.add(m * (ln_gamma_unchecked(zf + a) - lg_a - ln_gamma_unchecked(zf + 1.0) + a * r - zf * ln1p_b - norm));
        ga.add(m * (digamma_unchecked(zf + a) - psi_a + r));
        gb.add(m * (a * inv_b - (a + zf) * inv_b1));
        haa.add(m * (trigamma_unchecked(zf + a) - tri_a));
        hbb.add(m * (-a * inv_b * inv_b + (a + zf) * inv_b1 * inv_b1));
    }
    let c = groups.observed() as f64;
    let hab_obs = c * inv_b * inv_b1;

    // derivatives of ln p0
    let w = (prior.log_zero_probability() - norm).exp();
    let w2 = w * (1.0 + w);
    let d_a = r;
    let d_b = a * inv_b * inv_b1;
    let d_ab = inv_b * inv_b1;
    let d_bb = a * (inv_b1 * inv_b1 - inv_b * inv_b);

    let grad = [ga.value() + c * w * d_a, gb.value() + c * w * d_b];
    let hess = SymMatrix2::new(
        haa.value() + c * w2 * d_a * d_a,
        hab_obs + c * (w * d_ab + w2 * d_a * d_b),
        hbb.value() + c * (w * d_bb + w2 * d_b * d_b),
    );
    Ok(LoglikDerivatives {
        value: value.value(),
        grad,
        hess,
    })
}

/// Expected number of unseen clones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct N0Estimate {
    pub value: f64,
    /// True when the value was capped at [`N0_CAP`].
    pub capped: bool,
}

/// Outer E-step: `n0 = C p0 / (1 - p0)`, evaluated as `C / expm1(-ln p0)`.
pub fn estimate_n0(prior: &GammaPrior, observed_c: u64) -> N0Estimate {
    let denom = (-prior.log_zero_probability()).exp_m1();
    let value = observed_c as f64 / denom;
    if value.is_finite() && value <= N0_CAP {
        N0Estimate { value, capped: false }
    } else {
        N0Estimate {
            value: N0_CAP,
            capped: true,
        }
    }
}

/// Expected complete-data sufficient statistics of the inner E-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `sum E[lambda_i] + n0 E[lambda_0]`
    pub s_lambda: f64,
    /// `sum E[ln lambda_i] + n0 E[ln lambda_0]`
    pub s_loglambda: f64,
    /// `C + n0`
    pub weight: f64,
}

pub fn inner_e_step(counts: &CloneCounts, n0: f64, prior: &GammaPrior) -> SufficientStats {
    inner_e_step_groups(&CountGroups::from_counts(counts), n0, prior)
}

pub fn inner_e_step_groups(groups: &CountGroups, n0: f64, prior: &GammaPrior) -> SufficientStats {
    let (a, b) = (prior.shape, prior.rate);
    let ln_b1 = b.ln_1p();
    let mut s_lambda = CompensatedSum::new();
    let mut s_log = CompensatedSum::new();
    for &(z, m) in groups.groups() {
        let zf = z as f64;
        s_lambda.add(m * (zf + a));
        s_log.add(m * digamma_unchecked(zf + a));
    }
    let c = groups.observed() as f64;
    s_lambda.add(n0 * a);
    s_log.add(n0 * digamma_unchecked(a));
    let weight = c + n0;
    SufficientStats {
        s_lambda: s_lambda.value() / (1.0 + b),
        s_loglambda: s_log.value() - weight * ln_b1,
        weight,
    }
}

/// Result of the inner M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep {
    pub prior: GammaPrior,
    /// The stationary point fell outside the parameter box and was clamped.
    pub clamped: bool,
}

const ROOT_BRACKET: (f64, f64) = (1e-8, 1e8);

/// Maximizer of `Q(a, b) = (a-1) s_log - w (lnΓ(a) - a ln b) - b s_lambda`.
///
/// Profiling `b = w a / s_lambda` leaves `Ψ(a) - ln a = ln(w / s_lambda) + s_log / w`,
/// whose left side increases in `a`; it is solved by Newton in `ln a`
/// inside a maintained bracket.
pub fn inner_m_step(stats: &SufficientStats, bounds: (f64, f64)) -> MStep {
    let w = stats.weight;
    let target = (w / stats.s_lambda).ln() + stats.s_loglambda / w;
    let h = |a: f64| digamma_unchecked(a) - a.ln() - target;

    let (mut lo, mut hi) = (ROOT_BRACKET.0.ln(), ROOT_BRACKET.1.ln());
    let mut clamped = false;
    let t = if !(target < 0.0) || h(ROOT_BRACKET.1) < 0.0 {
        clamped = true;
        hi
    } else if h(ROOT_BRACKET.0) > 0.0 {
        clamped = true;
        lo
    } else {
        // classical starting value for the gamma shape MLE
        let s = -target;
        let guess = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
        let mut t = guess.clamp(ROOT_BRACKET.0, ROOT_BRACKET.1).ln();
        for _ in 0..200 {
            let a = t.exp();
            let val = h(a);
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = a * trigamma_unchecked(a) - 1.0;
            let mut next = t - val / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let done = (next - t).abs() <= 1e-15 * t.abs().max(1.0);
            t = next;
            if done || hi - lo <= 1e-15 * t.abs().max(1.0) {
                break;
            }
        }
        t
    };

    let mut a = t.exp();
    if a < bounds.0 || a > bounds.1 {
        clamped = true;
        a = a.clamp(bounds.0, bounds.1);
    }
    let mut b = w * a / stats.s_lambda;
    if !(b >= bounds.0 && b <= bounds.1) {
        clamped = true;
        b = if b.is_nan() {
            bounds.1
        } else {
            b.clamp(bounds.0, bounds.1)
        };
    }
    MStep {
        prior: GammaPrior { shape: a, rate: b },
        clamped,
    }
}

/// Outcome of running the inner EM for a fixed `n0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerEm {
    pub prior: GammaPrior,
    pub iterations: usize,
    pub converged: bool,
    pub clamped: bool,
}

/// Inner EM for fixed `n0`: maximizes `sum ln p(z_i) + n0 ln p(0)`.
pub fn inner_em(
    groups: &CountGroups,
    n0: f64,
    start: GammaPrior,
    tol: f64,
    max_iters: usize,
    bounds: (f64, f64),
) -> InnerEm {
    let mut prior = start;
    let mut clamped = false;
    for it in 1..=max_iters {
        let stats = inner_e_step_groups(groups, n0, &prior);
        let step = inner_m_step(&stats, bounds);
        clamped = step.clamped;
        let change = ((step.prior.shape - prior.shape) / prior.shape)
            .abs()
            .max(((step.prior.rate - prior.rate) / prior.rate).abs());
        prior = step.prior;
        if change <= tol {
            return InnerEm {
                prior,
                iterations: it,
                converged: true,
                clamped,
            };
        }
    }
    InnerEm {
        prior,
        iterations: max_iters,
        converged: false,
        clamped,
    }
}

fn moment_start(groups: &CountGroups, bounds: (f64, f64)) -> GammaPrior {
    let (m, v) = groups.mean_and_variance();
    let (a, b) = if v > m {
        (m * m / (v - m), m / (v - m))
    } else {
        (1.0, 1.0)
    };
    GammaPrior {
        shape: a.clamp(bounds.0, bounds.1),
        rate: b.clamp(bounds.0, bounds.1),
    }
}

/// One safeguarded Newton step on the truncated likelihood in `(ln a, ln b)`.
/// Returns the new point only if it raises the likelihood.
fn newton_step(
    groups: &CountGroups,
    prior: &GammaPrior,
    current: f64,
    bounds: (f64, f64),
) -> Option<(GammaPrior, f64)> {
    let d = loglik_derivatives(groups, prior).ok()?;
    let (a, b) = (prior.shape, prior.rate);
    let g = [a * d.grad[0], b * d.grad[1]];
    let neg_h = SymMatrix2::new(
        -(a * a * d.hess.xx + a * d.grad[0]),
        -(a * b * d.hess.xy),
        -(b * b * d.hess.yy + b * d.grad[1]),
    );
    if !neg_h.is_finite() {
        return None;
    }
    // Newton direction on the curvature with eigenvalues floored away from
    // zero and sign-flipped, so flat or non-concave ridges still give an
    // ascent direction.
    let (vals, vecs) = neg_h.eigen();
    let floor = 1e-8 * vals[0].abs().max(vals[1].abs()).max(1e-300);
    let mut step = [0.0; 2];
    for (val, v) in vals.iter().zip(vecs) {
        let coef = (v[0] * g[0] + v[1] * g[1]) / val.abs().max(floor);
        step[0] += coef * v[0];
        step[1] += coef * v[1];
    }
    let len = step[0].hypot(step[1]);
    if !len.is_finite() {
        return None;
    }
    if len > 2.0 {
        step = [2.0 * step[0] / len, 2.0 * step[1] / len];
    }
    let mut scale = 1.0;
    for _ in 0..30 {
        let cand = GammaPrior {
            shape: (a.ln() + scale * step[0]).exp().clamp(bounds.0, bounds.1),
            rate: (b.ln() + scale * step[1]).exp().clamp(bounds.0, bounds.1),
        };
        if let Ok(l) = truncated_loglik_groups(groups, &cand) {
            if l > current {
                return Some((cand, l));
            }
        }
        scale *= 0.5;
    }
    None
}

/// Fits `(a, b)` and the unseen-clone count to the observed counts.
pub fn fit(counts: &CloneCounts, config: &FitConfig) -> Result<FitResult> {
    fit_from(counts, config, None)
}

/// Like [`fit`] but starting the iterations at `start` when given.
pub fn fit_from(counts: &CloneCounts, config: &FitConfig, start: Option<GammaPrior>) -> Result<FitResult> {
    config.validate()?;
    let groups = CountGroups::from_counts(counts);
    let c = groups.observed();
    if groups.groups().len() == 1 && c < 3 {
        return Err(Error::FitDegenerate(format!(
            "all {c} observed clones have the same count {}; the truncated likelihood has no interior maximum",
            groups.groups()[0].0
        )));
    }
    let bounds = config.param_bounds;
    let mut prior = match start {
        Some(p) => GammaPrior {
            shape: p.shape.clamp(bounds.0, bounds.1),
            rate: p.rate.clamp(bounds.0, bounds.1),
        },
        None => moment_start(&groups, bounds),
    };

    let mut prev = truncated_loglik_groups(&groups, &prior)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut n0_capped = false;
    for _ in 0..config.max_outer_iters {
        let n0 = estimate_n0(&prior, c);
        n0_capped |= n0.capped;
        let inner = inner_em(
            &groups,
            n0.value,
            prior,
            config.inner_tol,
            config.max_inner_iters,
            bounds,
        );
        prior = inner.prior;
        let mut l = truncated_loglik_groups(&groups, &prior)?;
        if config.newton_accel {
            if let Some((p, lp)) = newton_step(&groups, &prior, l, bounds) {
                prior = p;
                l = lp;
            }
        }
        trace.push(l);
        let done = (l - prev).abs() <= config.outer_tol * prev.abs().max(f64::MIN_POSITIVE);
        prev = l;
        if done {
            converged = true;
            break;
        }
    }

    if let Some((p, l)) = snap_to_bounds(&groups, &prior, prev, bounds) {
        prior = p;
        trace.push(l);
    }

    let n0 = estimate_n0(&prior, c);
    n0_capped |= n0.capped;
    let at_bound = |p: f64| p <= bounds.0 || p >= bounds.1;
    let shape_at_bound = at_bound(prior.shape);
    let rate_at_bound = at_bound(prior.rate);
    Ok(FitResult {
        prior,
        n0_hat: n0.value,
        c_hat: c + n0.value.round() as u64,
        observed_c: c,
        loglik_trace: trace,
        converged,
        clamped: shape_at_bound || rate_at_bound,
        shape_at_bound,
        rate_at_bound,
        n0_capped,
    })
}

/// Moves a coordinate lying within a factor [`SNAP_FACTOR`] of a bound onto
/// that bound when doing so does not lower the likelihood. On the nearly
/// flat ridge toward `a -> 0` the iterations otherwise stop short of the
/// bound once the likelihood gains drop below tolerance.
fn snap_to_bounds(
    groups: &CountGroups,
    prior: &GammaPrior,
    current: f64,
    bounds: (f64, f64),
) -> Option<(GammaPrior, f64)> {
    let snap = |p: f64| {
        if p < bounds.0 * SNAP_FACTOR {
            bounds.0
        } else if p > bounds.1 / SNAP_FACTOR {
            bounds.1
        } else {
            p
        }
    };
    let cand = GammaPrior {
        shape: snap(prior.shape),
        rate: snap(prior.rate),
    };
    if cand == *prior {
        return None;
    }
    let l = truncated_loglik_groups(groups, &cand).ok()?;
    (l >= current).then_some((cand, l))
}
