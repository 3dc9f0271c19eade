//! Observed-information covariance of the fitted hyperparameters.

use serde::{Deserialize, Serialize};

use crate::em::{loglik_derivatives, CountGroups, FitResult};
use crate::error::{Error, Result};
use crate::model::{CloneCounts, GammaPrior};
use crate::numerics::SymMatrix2;

/// Covariance of `(a_hat, b_hat)` together with its log-scale version
/// `A J A`, `A = diag(1/a_hat, 1/b_hat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperCovariance {
    pub j_hat: SymMatrix2,
    pub log_scale: SymMatrix2,
    /// Computed at a fit that was clamped to the parameter box.
    #[serde(default)]
    pub at_boundary: bool,
}

impl HyperCovariance {
    /// No hyperparameter uncertainty at all.
    pub fn zero() -> Self {
        Self {
            j_hat: SymMatrix2::ZERO,
            log_scale: SymMatrix2::ZERO,
            at_boundary: false,
        }
    }
}

/// Negative Hessian of the truncated log-likelihood at `prior`.
pub fn observed_information(counts: &CloneCounts, prior: &GammaPrior) -> Result<SymMatrix2> {
    observed_information_groups(&CountGroups::from_counts(counts), prior)
}

pub fn observed_information_groups(groups: &CountGroups, prior: &GammaPrior) -> Result<SymMatrix2> {
    let h = loglik_derivatives(groups, prior)?.hess;
    Ok(SymMatrix2::new(-h.xx, -h.xy, -h.yy))
}

/// Inverse of a positive definite information matrix.
pub fn covariance_of_mle(info: &SymMatrix2) -> Result<SymMatrix2> {
    let det = info.det();
    if !(det > 1e-300) || !(info.xx > 0.0) || !info.is_finite() {
        return Err(Error::SingularInformation { det });
    }
    info.inverse().ok_or(Error::SingularInformation { det })
}

pub fn log_scale_covariance(prior: &GammaPrior, j_hat: &SymMatrix2) -> HyperCovariance {
    HyperCovariance {
        j_hat: *j_hat,
        log_scale: j_hat.scale_sandwich(1.0 / prior.shape, 1.0 / prior.rate),
        at_boundary: false,
    }
}

/// Information, inversion and log-scale transform for a finished fit.
pub fn hyper_covariance(counts: &CloneCounts, fit: &FitResult) -> Result<HyperCovariance> {
    hyper_covariance_groups(&CountGroups::from_counts(counts), fit)
}

/// A coordinate sitting on the parameter box is held fixed: its variance is
/// zero and the free coordinate gets the inverse of its own information.
pub(crate) fn hyper_covariance_groups(groups: &CountGroups, fit: &FitResult) -> Result<HyperCovariance> {
    let info = observed_information_groups(groups, &fit.prior)?;
    let free_variance = |i: f64| {
        if i > 0.0 && i.is_finite() {
            Ok(1.0 / i)
        } else {
            Err(Error::SingularInformation { det: i })
        }
    };
    let j_hat = match (fit.shape_at_bound, fit.rate_at_bound) {
        (false, false) => covariance_of_mle(&info)?,
        (true, false) => SymMatrix2::diag(0.0, free_variance(info.yy)?),
        (false, true) => SymMatrix2::diag(free_variance(info.xx)?, 0.0),
        (true, true) => SymMatrix2::ZERO,
    };
    let mut cov = log_scale_covariance(&fit.prior, &j_hat);
    cov.at_boundary = fit.clamped;
    Ok(cov)
}
