use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} exceeds the limit of {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid qubit index: {0}")]
    Index(String),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("cannot enumerate {n_qubits} qubits (limit {limit})")]
    EnumerationLimit { n_qubits: usize, limit: usize },

    #[error("unitarity drift {0:.3e} persists after re-orthonormalization")]
    NumericDrift(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DimensionLimit { .. }
                | Error::NotHermitian(_)
                | Error::Normalization(_)
                | Error::InvalidDensity(_)
                | Error::EnumerationLimit { .. }
                | Error::NumericDrift(_)
        )
    }
}
