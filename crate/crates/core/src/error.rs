use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violates a structural requirement.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The likelihood cannot be evaluated reliably at the requested point.
    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("singular observed information (determinant {det:e}); a larger dataset is needed")]
    SingularInformation { det: f64 },

    #[error("degenerate replicate: {0}")]
    DegenerateReplicate(String),

    #[error("calibration unstable: {failed} of {total} replicates failed (first error: {first_error})")]
    CalibrationUnstable {
        failed: usize,
        total: usize,
        first_error: String,
    },

    #[error("scenario failed: {failed} of {total} simulations errored (first error: {first_error})")]
    ScenarioFailed {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True when the error stems from the input data rather than from the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_) | Error::FitDegenerate(_) | Error::DegenerateReplicate(_)
        )
    }
}
