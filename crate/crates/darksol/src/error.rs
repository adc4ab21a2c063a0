//! Error type shared by all numerical modules.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("defocusing condition violated: f'(1) = {0} must be negative")]
    DefocusingViolated(f64),
    #[error("transonic non-degeneracy violated: |f''(1) + 3 f'(1)| = {0}")]
    H3Violated(f64),
    #[error("no soliton at speed c = {0}: N_c has no admissible zero in (0, 1)")]
    NoZero(f64),
    #[error("speed c = {c} outside the admissible range (0, {c_s})")]
    BadSpeed { c: f64, c_s: f64 },
    #[error("grid too small: half-length {half_length} < required {required}")]
    GridTooSmall { half_length: f64, required: f64 },
    #[error("vacuum breach: max eta = {0}")]
    VacuumBreach(f64),
    #[error("blow-up detected at t = {t}: max eta = {max_eta}")]
    BlowUpDetected { t: f64, max_eta: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("eigensolver failure: {0}")]
    SolverFail(String),
    #[error("bad ordering: {0}")]
    BadOrdering(String),
    #[error("modulation Newton did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("bad polynomial: {0}")]
    BadPolynomial(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
