//! Asymmetric valley models, theory constants, SGD simulation, shift
//! models, a small batch-normalized network and direction probes.

pub mod error;
pub mod landscape;
pub mod nn;
pub mod probes;
pub mod rng;
pub mod sgd_sim;
pub mod shiftgen;
pub mod stats;
pub mod theory;
pub mod valley_models;

pub use error::{Error, Result};
pub use landscape::Landscape;
pub use valley_models::{AsymmetrySpec, GradientBounds, Loss1D};
