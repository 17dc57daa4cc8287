//! Update a cheap-model optimal solution with a handful of expensive-model
//! evaluations.
//!
//! The pipeline: solve the low-fidelity optimization problem, evaluate the
//! high-fidelity model at a few training inputs, calibrate a Gaussian
//! posterior over an affine model-discrepancy operator, and push that
//! posterior through a post-optimality sensitivity operator to get a mean
//! update and samples of the optimal solution — without ever materializing
//! the discrepancy parameter space.

pub mod calibration;
pub mod cost;
pub mod error;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod prior;
pub mod rng;
pub mod update;


pub use calibration::{
    Calibration, GSpectrum, KronTerm, ThetaOrigin, ThetaStructured, TrainingData,
};
pub use error::{CalibrationError, ConfigError, MeshError, SolveError};
pub use mesh::{BoundaryTag, Mesh};
pub use optim::{
    CgForcing, ForwardModel, Linearization, LofiProblem, OptimizationResult, TrustRegionOptions,
};
pub use update::{HessianProjector, PosteriorEnsemble};

pub use prior::{EllipticOperator, OptPrior, StatePrior};

/// Library version, recorded in run manifests for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

