//! Read-count data, intensity vectors and the two diversity functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;

/// Positive read counts of the observed clones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloneCounts {
    counts: Vec<u64>,
    replicate_id: Option<String>,
}

impl CloneCounts {
    /// Requires at least two clones, each with at least one read.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidData(format!(
                "at least two observed clones are required, got {}",
                counts.len()
            )));
        }
        if let Some(pos) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidData(format!(
                "clone {} has a zero count; observed clones must have at least one read",
                pos + 1
            )));
        }
        Ok(Self {
            counts,
            replicate_id: None,
        })
    }

    pub fn with_replicate_id(mut self, id: impl Into<String>) -> Self {
        self.replicate_id = Some(id.into());
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn replicate_id(&self) -> Option<&str> {
        self.replicate_id.as_deref()
    }

    /// Number of observed clones `C`.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total_reads(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Shape/rate pair of a Gamma intensity law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
            return Err(Error::domain(format!(
                "gamma prior needs positive finite shape and rate, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Probability that a clone drawn from this prior yields no reads.
    pub fn zero_probability(&self) -> f64 {
        self.log_zero_probability().exp()
    }

    /// `a ln(b / (b + 1))`.
    pub fn log_zero_probability(&self) -> f64 {
        -self.shape * (1.0 / self.rate).ln_1p()
    }
}

/// Strictly positive Poisson rates, one per clone.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVector(Vec<f64>);

impl IntensityVector {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::domain("intensity vector is empty"));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::domain(format!("intensity {bad} is not positive and finite")));
        }
        Ok(Self(lambdas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn clonality(&self) -> f64 {
        functionals_unchecked(&self.0).0
    }

    pub fn entropy(&self) -> f64 {
        functionals_unchecked(&self.0).1
    }
}

/// Posterior draws of both functionals; entry `b` of each list comes from the same intensity draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityDraws {
    pub clonality: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl DiversityDraws {
    pub fn len(&self) -> usize {
        self.clonality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clonality.is_empty()
    }
}

/// Which diversity functional a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Functional {
    Clonality,
    Entropy,
}

impl Functional {
    pub const ALL: [Functional; 2] = [Functional::Clonality, Functional::Entropy];

    pub fn name(&self) -> &'static str {
        match self {
            Functional::Clonality => "clonality",
            Functional::Entropy => "entropy",
        }
    }
}

fn check_intensities(lam: &[f64]) -> Result<()> {
    if lam.is_empty() {
        return Err(Error::domain("diversity of an empty intensity vector"));
    }
    if lam.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || lam.iter().all(|l| *l == 0.0) {
        return Err(Error::domain(
            "intensities must be finite, non-negative and not all zero",
        ));
    }
    Ok(())
}

/// Clonality `sum p_i^2` with `p_i = lambda_i / sum lambda`.
pub fn clonality(lam: &[f64]) -> Result<f64> {
    check_intensities(lam)?;
    Ok(functionals_unchecked(lam).0)
}

/// Shannon entropy `-sum p_i ln p_i` (natural log).
pub fn entropy(lam: &[f64]) -> Result<f64> {
    check_intensities(lam)?;
    Ok(functionals_unchecked(lam).1)
}

/// Both functionals from two compensated passes. Zero intensities contribute nothing.
pub(crate) fn functionals_unchecked(lam: &[f64]) -> (f64, f64) {
    let total: CompensatedSum = lam.iter().copied().collect();
    let inv_total = 1.0 / total.value();
    let mut sq = CompensatedSum::new();
    let mut ent = CompensatedSum::new();
    for &l in lam {
        if l > 0.0 {
            let p = l * inv_total;
            sq.add(p * p);
            ent.add(-p * p.ln());
        }
    }
    (sq.value(), ent.value().max(0.0))
}

/// `(k / C, cumulative read fraction of the k largest clones)` for `k = 1..=C`.
pub fn cumulative_proportions(counts: &CloneCounts) -> Vec<(f64, f64)> {
    let mut sorted = counts.counts().to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let total = counts.total_reads() as f64;
    let c = sorted.len() as f64;
    let mut running = 0u64;
    let mut out: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            running += z;
            ((k + 1) as f64 / c, running as f64 / total)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = (1.0, 1.0);
    }
    out
}
