//! Special functions, random variates and sample utilities shared by the
//! modelling modules.

mod matrix;
mod quantile;
mod random;
mod rng;
mod special;
mod sum;

pub use matrix::SymMatrix2;
pub use quantile::{empirical_quantile, sort_samples};
pub use random::{sample_bivariate_normal, sample_gamma, sample_poisson, BivariateNormal};
pub use rng::{RngStream, StreamRng};
pub use special::{digamma, log_gamma, trigamma};
pub use sum::{compensated_sum, CompensatedSum};

pub(crate) use quantile::quantile_unchecked;
pub(crate) use random::{poisson_unchecked, standard_gamma, standard_normal};
pub(crate) use special::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};
