use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed transfer function: {0}")]
    MalformedTransferFunction(String),

    #[error("denominator vanishes on the unit circle at omega = {omega}")]
    PoleOnCircle { omega: f64 },

    #[error("closed loop is ill-posed: 1 + G C has a zero leading coefficient")]
    IllPosedLoop,

    #[error("{what} is unstable (max pole modulus {max_modulus:.6})")]
    Unstable { what: String, max_modulus: f64 },

    #[error("root finder failed to converge for polynomial of degree {degree}")]
    RootFinding { degree: usize },

    #[error("impulse response of {0} does not decay")]
    NonDecaying(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LFSR seed must be nonzero in the low {register_length} bits")]
    ZeroSeed { register_length: u32 },

    #[error("paired experiments need distinct noise seeds (both were {0})")]
    EqualSeeds(u64),

    #[error("experiments do not share the same excitation")]
    ExcitationMismatch,

    #[error("grid mismatch: expected N = {expected}, got N = {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("every run was masked at all frequencies for {0}")]
    AllMasked(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures caused by the numerics of the problem (unstable
    /// loops, singular denominators, non-convergence) rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PoleOnCircle { .. }
                | Error::IllPosedLoop
                | Error::Unstable { .. }
                | Error::RootFinding { .. }
                | Error::NonDecaying(_)
                | Error::AllMasked(_)
        )
    }
}
