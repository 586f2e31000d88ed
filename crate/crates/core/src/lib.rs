//! Numerical lab for the continuity method on the regular Hopf Sasakian model.
//!
//! The model is `S^3 -> CP^1` with transverse complex dimension `m = 1`. All
//! basic functions are represented by real spherical harmonic coefficients on
//! the quotient sphere.

pub mod checks;
pub mod cli;
pub mod error;
pub mod estimates;
pub mod functionals;
pub mod linalg;
pub mod ma_solver;
pub mod model;
pub mod sampling;
pub mod spectral;
pub mod sphere;

pub use error::{Error, Result};
pub use model::{
    build_model, compute_h, eta_einstein_map, metric_state, sasaki_ricci_bound, BasicFunction, EtaEinsteinConstants,
    MetricState, ModelConfig, RicciPotential, SymmetryMode, TransverseModel,
};
