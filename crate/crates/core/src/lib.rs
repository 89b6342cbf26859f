//! Radar-inertial odometry with online estimation of the IMU-radar time offset.
//!
//! The estimator is an error-state EKF over attitude, gyro bias, velocity,
//! accelerometer bias, position and the time offset `t_d`. IMU samples drive
//! RK4 propagation; every radar scan yields a RANSAC/least-squares ego-velocity
//! that updates the filter at the scan's corrected time `t + t_d` on the IMU
//! clock.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod so3;
pub mod state;
pub mod propagation;
pub mod ego_velocity;
pub mod update;
pub mod filter;
pub mod temporal;
pub mod trajectory;
pub mod simulator;
pub mod config;
pub mod io;
pub mod eval;
pub mod pipeline;
