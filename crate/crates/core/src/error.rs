use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("argument {value} outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("non-finite value in {0}")]
    NumericalInput(&'static str),

    #[error("factorization broke down: {0}")]
    Singular(String),

    #[error("degenerate smoother at lambda = {lambda:e}: tr(I - alpha A) = {denominator:e}")]
    DegenerateSmoother { lambda: f64, denominator: f64 },

    #[error("every lambda on the grid gave a degenerate smoother")]
    SelectionFailed,

    #[error("model file: {0}")]
    Format(String),
}

impl Error {
    /// True for failures caused by the numbers rather than the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalInput(_)
                | Error::Singular(_)
                | Error::DegenerateSmoother { .. }
                | Error::SelectionFailed
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
