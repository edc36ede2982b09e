//! Rail visual-inertial odometry workbench.
//!
//! * [`geometry`]: poses, pinhole projection, stereo triangulation.
//! * [`simulator`]: rail-constrained ground truth, landmark corridors, IMU
//!   streams and stereo observations with scenario injectors.
//! * [`preintegration`]: IMU preintegration between keyframes.
//! * [`estimator`]: sliding-window visual-inertial least squares.
//! * [`evaluation`]: segment-based distance and heading errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod preintegration;
pub mod simulator;

pub use evaluation::{EvalReport, SegmentError, Trajectory};
pub use geometry::{CameraIntrinsics, Landmark, PixelRect, Pose, StereoRig};
pub use preintegration::{ImuBias, ImuNoise, ImuSample, PreintegratedImu, GRAVITY};
