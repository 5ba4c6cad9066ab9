//! Stochastic pseudomode simulation of non-Markovian open quantum systems.
//!
//! A system coupled to a Gaussian bosonic bath is reduced to a small set of
//! dissipative pseudomodes (with possibly complex parameters) plus a
//! stationary Gaussian classical drive. The bath correlation function is
//! split into a quantum part, handled exactly by zero-temperature
//! pseudomodes, and a time-symmetric classical part, synthesized as a
//! trigonometric Gaussian field. Ensemble averages over noise realizations
//! recover the reduced system dynamics.
//!
//! Module map:
//! - [`qcore`]: dense complex operator algebra on system ⊗ mode spaces
//! - [`quad`]: adaptive Gauss–Kronrod quadrature
//! - [`bath`]: spectral densities, correlation functions, pole/residue
//!   analysis, quantum-classical decompositions
//! - [`noise`]: Fourier synthesis of the classical field
//! - [`fit`]: Levenberg–Marquardt fits for non-rational baths
//! - [`dynamics`]: Lindblad-form integrator with complex parameters
//! - [`ensemble`]: trajectory orchestration and empirical statistics
//! - [`scenarios`]: end-to-end parameterized experiments

pub mod bath;
pub mod dynamics;
pub mod ensemble;
pub mod fit;
pub mod noise;
pub mod qcore;
pub mod quad;
pub mod scenarios;

pub use num_complex::Complex64;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Qcore(#[from] qcore::QcoreError),
    #[error(transparent)]
    Quad(#[from] quad::QuadError),
    #[error(transparent)]
    Bath(#[from] bath::BathError),
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Scenario(#[from] scenarios::ScenarioError),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True when the error reflects bad input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Qcore(e) => e.is_config_error(),
            Error::Bath(e) => e.is_config_error(),
            Error::Dynamics(e) => e.is_config_error(),
            Error::Scenario(e) => e.is_config_error(),
            Error::Noise(_) | Error::Quad(_) | Error::Fit(_) | Error::Ensemble(_) => false,
        }
    }
}
