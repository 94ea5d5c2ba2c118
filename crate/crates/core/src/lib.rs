//! Vehicle tracking from a 2D scanning LADAR.
//!
//! The crate is organized bottom-up:
//!
//! * [`kinematics`]: the independent steering model (ISM) and the
//!   variable-axis Ackerman steering model (VASM), with their transition and
//!   process-noise matrices.
//! * [`fitting`]: RANSAC edge / L-shape fitting, Gauss-Newton refinement and
//!   conversion of a fit into a center measurement with covariance.
//! * [`shape`]: decayed-histogram length and width estimation.
//! * [`tracker`]: Kalman predict/update, association, mover promotion and the
//!   multi-hypothesis track manager.
//! * [`simulator`]: ground-truth scenarios and a ray-cast scanning sensor.
//! * [`scanlog`], [`metrics`], [`cli`]: file formats and the command-line harness.

#[cfg(test)]
#[macro_use]
mod testutil;

pub mod angle;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod kinematics;
pub mod metrics;
pub mod scanlog;
pub mod shape;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
