use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: wrong arity, bad parameter, unknown name.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A point outside `[0, 1]` or a non-finite value.
    #[error("domain error: {0}")]
    Domain(String),
    /// Quadrature, normalization or sampling failure.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A resolution or rate that cannot be realized.
    #[error("resolution error: {0}")]
    Resolution(String),
    /// The request is outside what the implementation supports.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// The sensitivity vanishes on a set of positive probability.
    #[error("variable {var} has zero sensitivity on a set of probability {mass:.3e}; use a don't-care design")]
    DontCare { var: usize, mass: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{x} is outside [0, 1]")))
    }
}
