//! Discrete Cosserat dynamics of an underwater soft arm and a two-time-scale
//! layered controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`screw`]: SE(3)/se(3) numerics
//! - [`model`]: arm geometry, material, fluid and quadrature grid
//! - [`config`]: JSON configuration documents
//! - [`kinematics`]: piecewise-constant-strain kinematics
//! - [`dynamics`]: assembly of the generalized Newton–Euler terms
//! - [`split`]: core/perturbed partition, slow and fast sub-models
//! - [`control`]: layered control laws and Lyapunov monitors
//! - [`sim`]: time integration and trajectories

pub mod error;
pub mod screw;
pub mod model;
pub mod kinematics;
pub mod dynamics;
pub mod split;
pub mod control;
pub mod sim;
pub mod config;

pub use error::{Error, Result};
pub use screw::{Pose, Screw};
pub use model::RobotModel;
