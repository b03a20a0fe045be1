//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The family has no apex: `m(t)` never exceeds 1 below the radius.
    #[error("family `{family}` is not in K*: {reason}")]
    NotInKStar { family: String, reason: String },

    /// Evaluation parameter outside the family's domain.
    #[error("parameter t = {t} outside the valid range [{lo}, {hi})")]
    ParamOutOfRange { t: f64, lo: f64, hi: f64 },

    /// Coefficients live on the residue class n % span == 1.
    #[error("n = {n} is outside the valid residue class: coefficients vanish unless n % {span} == 1")]
    InvalidResidueClass { n: usize, span: usize },

    #[error("series truncation {have} too small; need at least {need}")]
    TruncationTooSmall { need: usize, have: usize },

    /// Composition is only defined for inner series vanishing at 0.
    #[error("inner series must have zero constant term")]
    NonzeroConstantTerm,

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("invalid offspring family: {0}")]
    InvalidFamily(String),

    #[error("k = {k} exceeds the supported cap {cap}")]
    KTooLarge { k: usize, cap: usize },

    #[error("n = {n} exceeds the exhaustive enumeration cap {cap}")]
    EnumerationTooLarge { n: usize, cap: usize },

    #[error("closed-form evaluation outside its domain: {0}")]
    ClosedFormDomain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
