//! Gaussian-state simulation of probabilistic continuous-variable
//! entanglement distillation with homodyne triggering.
//!
//! The pipeline models two identical two-mode entangled states ("v-class":
//! one squeezed beam mixed with vacuum on a balanced beam splitter), sends
//! each of the four beams through an independent Gaussian phase-diffusion
//! channel, interferes the two copies on balanced beam splitters, and
//! post-selects on a homodyne trigger `|X_TA + X_TB| < Q`. Surviving
//! verification modes are characterised by covariance-matrix tomography:
//! Duan total variance, determinant/purity, logarithmic negativity and
//! excess kurtosis.
//!
//! Every Monte Carlo estimate produced by [`protocol`] can be cross-checked
//! against [`oracle`], a deterministic Gauss–Hermite quadrature over the
//! phase-noise distribution that never touches the sampling code path.
//!
//! Units: quadrature variance of the vacuum is 1/4 ([`VACUUM_VAR`]), so the
//! nonlocal EPR variances have vacuum value 1/2 and the Duan total variance
//! of vacuum is exactly 1.

pub mod config;
pub mod gaussian;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod protocol;
pub mod sweep;

pub use gaussian::{GaussianState, SymplecticMatrix, VACUUM_VAR};
pub use metrics::{CovarianceEstimate, MetricsReport};
pub use noise::{NoiseSample, PhaseNoiseSpec};
pub use oracle::QuadratureGrid;
pub use protocol::{EnsembleResult, ProtocolConfig, SamplingMode, ShotRecord};
pub use sweep::{calibrate_eta, DatasetSelection, SweepSpec};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Configuration rejected before any computation ran.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A state or parameter set violates physicality (uncertainty relation,
    /// positive semidefiniteness, efficiency range, ...).
    #[error("unphysical input: {0}")]
    Physicality(String),
    /// Linear-algebra failure (factorization of a non-PSD matrix, singular
    /// measured variance, non-positive determinant estimate, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An estimator was asked to run on too few samples.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// No shot satisfied the trigger condition; widen Q or raise n_shots.
    #[error("empty ensemble: no accepted shots out of {total}")]
    EmptyEnsemble { total: u64 },
    /// The quadrature oracle failed its own convergence self-check.
    #[error("oracle convergence failure: {0}")]
    OracleConvergence(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
