//! Delay-dependent, sampled-data, gain-scheduled output feedback for LPV
//! systems whose state delay varies with the scheduling parameter.
//!
//! The pipeline has three legs:
//!
//! 1. [`synthesis`] — pose a parameter-dependent LMI feasibility/minimization
//!    problem over a scheduling grid and solve it as a semidefinite program
//!    ([`sdp`]), producing a [`synthesis::SynthesisCertificate`] that bounds
//!    the closed-loop L2 gain.
//! 2. [`realize`] — recover the continuous-time controller matrices from the
//!    certificate and discretize them exactly over one sampling interval,
//!    including the delayed-state taps that reach back into the controller's
//!    own sample history.
//! 3. [`sim`] — validate the design in a hybrid closed loop: continuous
//!    delayed plant, discrete controller, zero-order hold, parameter-varying
//!    sampling instants.
//!
//! The [`engine`] module instantiates the spark-ignition air-fuel-ratio
//! benchmark that the synthesis machinery is demonstrated on, and
//! [`baseline`] provides the delay-ignoring comparison controller.

pub mod baseline;
pub mod engine;
pub mod lmi;
pub mod lpv;
pub mod realize;
pub mod sdp;
pub mod sim;
pub mod synthesis;

/// Dense double-precision matrix used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type ColVec = nalgebra::DVector<f64>;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Unified error type for the whole pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar or structural argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// The plant failed structural validation.
    #[error("invalid plant: {0}")]
    Plant(String),

    /// Every (lambda2, lambda3, lambda4) combination was infeasible.
    #[error("synthesis infeasible for every lambda combination tried ({0} trials)")]
    InfeasibleEverywhere(usize),

    /// The SDP solver stopped without a usable status.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A matrix that must be invertible is singular or too ill-conditioned.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A history lookup reached past the stored buffer.
    #[error("history lookup failed: {0}")]
    History(String),

    /// The simulated state left the finite range; the trace up to the halt
    /// instant is still available from the simulator.
    #[error("simulation halted: {0}")]
    SimHalt(String),

    /// Text import of an SDP failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::Dimension`].
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Shorthand for [`Error::Invalid`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(overview, "../../../book/src/overview.md");
    chapter!(plant_model, "../../../book/src/plant-model.md");
    chapter!(engine_benchmark, "../../../book/src/engine-benchmark.md");
    chapter!(synthesis_lmi, "../../../book/src/synthesis-lmi.md");
    chapter!(sdp_backend, "../../../book/src/sdp-backend.md");
    chapter!(controller_realization, "../../../book/src/controller-realization.md");
    chapter!(hybrid_simulation, "../../../book/src/hybrid-simulation.md");
    chapter!(baseline_comparison, "../../../book/src/baseline-comparison.md");
    chapter!(cli, "../../../book/src/cli.md");
}
