//! Error types shared across the crate.

use crate::identifiability::IdentifiabilityReport;
use crate::nonlinear::ConvergenceTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A panel or simulation spec failed structural validation.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A portfolio has no observed cells, so its level is undetermined.
    #[error("portfolio {0:?} has no observed cells")]
    EmptyPortfolio(String),

    /// The design matrix is numerically rank-deficient; the attached report
    /// lists the deficiency and the suspect portfolio/year groups.
    #[error("singular system: deficiency {} (rank {} of {} columns){}",
        .0.deficiency, .0.numerical_rank, .0.n_columns(), .0.summary_suffix())]
    Singular(Box<IdentifiabilityReport>),

    /// The fixed-point loop hit its iteration cap before the tolerance.
    #[error(
        "calibration did not converge within {max_iter} iterations (last max |dK| = {last_dk:.3e})"
    )]
    NotConverged {
        max_iter: usize,
        last_dk: f64,
        trace: Box<ConvergenceTrace>,
    },
}
