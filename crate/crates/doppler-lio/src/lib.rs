//! Correspondence-free lidar-inertial odometry from FMCW Doppler returns.
//!
//! An FMCW lidar measures a per-return radial (Doppler) velocity in addition
//! to range. Because that measurement is linear in the 6-DOF body velocity,
//! vehicle velocity can be estimated with a linear continuous-time MAP solve
//! over velocity knots -- no point cloud registration, no data association --
//! and integrated into SE(3) poses afterward. A gyroscope supplies the
//! angular degrees of freedom a single lidar cannot observe.
//!
//! The crate provides the full pipeline plus the surrounding tooling:
//!
//! - [`lie`]: skew/wedge operators, SE(3) exponential, adjoints.
//! - [`pointcloud`]: frame ingestion and azimuth-elevation downsampling.
//! - [`bias`]: per-bin linear regression of the Doppler bias on range.
//! - [`measurement`]: Doppler and gyroscope error models and factor rows.
//! - [`ransac`]: per-frame outlier rejection with a 2-DOF velocity model.
//! - [`estimator`]: batch block-tridiagonal solve and marginalizing filter.
//! - [`integrator`]: numerical pose integration with a stationary clamp.
//! - [`observability`]: rank/nullspace analysis of multi-sensor rigs.
//! - [`sim`]: synthetic sequence generation with labeled outliers.
//! - [`eval`]: KITTI-style relative odometry error metrics.
//! - [`pipeline`]: end-to-end orchestration, manifests, and timing.
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each demonstrates one capability end to end. The `doppler-lio` binary
//! exposes the same functionality as subcommands.

// Validation uses `!(x > 0.0)` so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod integrator;
pub mod lie;
pub mod measurement;
pub mod observability;
pub mod pipeline;
pub mod pointcloud;
pub mod ransac;
pub mod sim;

pub use error::{Error, Result};
pub use lie::{BodyVelocity, RigidTransform};
