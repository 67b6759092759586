use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("entry {value} at {location} is not a probability")]
    NotAProbability { location: String, value: f64 },

    #[error("{location} sums to {sum}, outside 1 ± 1e-9")]
    NormalizationError { location: String, sum: f64 },

    #[error("no active component on the {side} side")]
    NoActiveComponent { side: &'static str },

    #[error("coupling never fails (discrepancy is zero); nothing to condition on")]
    ZeroDiscrepancy,

    #[error("f({config:?}) = {ratio} exceeds 1; failure mass is below max(0, P - Q)")]
    RatioAboveOne { config: Vec<usize>, ratio: f64 },

    #[error("failure mass at {0:?} is zero")]
    ZeroDenominator(Vec<usize>),

    #[error("component {component}, coordinate {coordinate}: P(1) = {value} is not 0, 1/2 or 1")]
    NotASubcube {
        component: usize,
        coordinate: usize,
        value: f64,
    },

    #[error("subcube mixtures need q = 2, got q = {0}")]
    WrongAlphabet(usize),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("not a 3-CNF formula: {0}")]
    NotThreeCnf(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
