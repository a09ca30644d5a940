//! Minimum-norm interpolation with random features, two-layer networks and
//! residual networks, plus the numerical checks around them.

pub mod complexity;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod random_features;
pub mod resnet;
pub mod rng;
pub mod sampling;
pub mod two_layer;

pub use error::{Error, Result};
