use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },

    #[error("truncation at n_max = {n_max} leaves tail probability {tail:e} (limit {limit:e})")]
    TruncationTail { n_max: usize, tail: f64, limit: f64 },

    #[error("Fock({n}) preparation with a ground-state amplitude needs triple n - 1, which does not exist")]
    MissingLowerTriple { n: usize },

    #[error("Fock({n}) needs n <= n_max = {n_max}")]
    FockAboveTruncation { n: usize, n_max: usize },

    #[error("preparation not supported: {0}")]
    UnsupportedPreparation(&'static str),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite value in right-hand side at t = {t}")]
    NonFinite { t: f64 },

    #[error("event function has no sign change on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("exit time undefined for p0 = 0: the atom never leaves")]
    ZeroMomentum,

    #[error("need at least {needed} non-empty bins in the fit range, found {found}")]
    InsufficientBins { needed: usize, found: usize },

    #[error("no detected exit records")]
    NoDetectedRecords,

    #[error("separation overflow persisted after {retries} interval reductions")]
    SeparationOverflow { retries: usize },
}
