//! Multi-IMU fusion by Best Axes Composition: IMU error model, SO(3)
//! kinematics, batch calibration, AVE and BAC fusion, and a seeded rig
//! simulator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod imu_model;
pub mod kinematics;
pub mod lie;
pub mod optim;
pub mod rng;
pub mod simulator;
pub mod spline;

pub use error::{Error, ErrorClass, Result};
pub use imu_model::{BiasState, ImuIntrinsics, ImuSample, SystematicErrorSpec};
pub use kinematics::{ImuExtrinsics, Pose, Trajectory};
pub use lie::{AxisAngle, Mat3, Rotation, Vec3};
