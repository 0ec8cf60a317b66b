//! Non-parametric frequency-domain identification of a plant operating in
//! closed loop under periodic excitation.
//!
//! The crate covers the whole pipeline: rational transfer functions and the
//! feedback loop ([`lti`]), excitation and the unitary DFT ([`signals`]),
//! steady-state simulation ([`sim`]), the direct, indirect, joint
//! input-output and two-experiment estimators with geometric averaging
//! ([`estimators`]), exact finite-N noise covariances and small-noise
//! variance profiles ([`variance`]), and a Monte Carlo harness that checks
//! theory against simulation ([`mc`]).

pub mod csvio;
pub mod error;
pub mod estimators;
pub mod lti;
pub mod mc;
pub mod poly;
pub mod signals;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};
pub use num_complex::Complex64;
