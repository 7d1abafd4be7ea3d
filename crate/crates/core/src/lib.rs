//! Gaussian-process analysis of positioned sport trajectories.
//!
//! The crate covers batch and grid-based on-line GP regression over track
//! distance, maximum-likelihood hyperparameter training, grey-box resultant
//! force estimation from Newtonian kinetics, black-box speed models for
//! individuals and clustered groups, and a synthetic race generator.

pub mod error;
pub mod gp;
pub mod hyperopt;
pub mod kernels;
mod lbfgs;
pub mod linalg;
pub mod online;
pub mod trajectory;
pub mod force;
pub mod flow;
pub mod synthetic;
pub mod analysis;

pub use error::{Error, Result};
pub use gp::{GpModel, GpSnapshot, PosteriorPrediction};
pub use hyperopt::{HyperParamVector, OptimizeOptions, OptimizeReport};
pub use kernels::{KernelFamily, KernelSpec};
