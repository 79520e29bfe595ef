//! Multi-AUV cooperative target tracking: underwater physics, sonar sensing,
//! fuzzy formation assignment, a dynamic-switching multi-agent actor-critic
//! learner and a simulated hierarchical control plane.

pub mod asma;
pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod ocean;
pub mod reward;
pub mod sonar;

pub use error::{Error, Result};

/// Three-vector used for positions, velocities and forces.
pub type Vec3 = nalgebra::Vector3<f64>;
