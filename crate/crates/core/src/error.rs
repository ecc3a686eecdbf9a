use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix `{name}` is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { name: &'static str, min_eigenvalue: f64 },

    #[error("{what} lost positive semidefiniteness at t = {time} (min eigenvalue {min_eigenvalue:e})")]
    PsdLost { what: &'static str, time: f64, min_eigenvalue: f64 },

    #[error("{what} blew up at t = {time} (norm {norm:e})")]
    BlowUp { what: &'static str, time: f64, norm: f64 },

    #[error("non-finite value in {what} at t = {time}")]
    NonFinite { what: &'static str, time: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures raised while integrating or simulating, as opposed to
    /// rejected inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::PsdLost { .. } | Error::BlowUp { .. } | Error::NonFinite { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
