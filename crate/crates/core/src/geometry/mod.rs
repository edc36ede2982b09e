//! Rigid transforms, pinhole projection and stereo triangulation shared by
//! the simulator and the estimator.

mod camera;
mod pose;
pub mod so3;
mod stereo;

use nalgebra::Vector3;
use thiserror::Error;

pub use camera::{project, CameraIntrinsics, Projection, MIN_DEPTH};
pub use pose::Pose;
pub use stereo::{midpoint, triangulate_stereo, StereoRig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("degenerate ray configuration")]
    DegenerateRay,
    #[error("body x axis is vertical, heading undefined")]
    GimbalDegenerate,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// Axis-aligned pixel rectangle `[u0, u1] x [v0, v1]`, inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl PixelRect {
    /// Normalizes corner order so that `u0 <= u1` and `v0 <= v1`.
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Self {
        Self { u0: u0.min(u1), v0: v0.min(v1), u1: u0.max(u1), v1: v0.max(v1) }
    }

    pub fn contains(&self, px: &nalgebra::Vector2<f64>) -> bool {
        px.x >= self.u0 && px.x <= self.u1 && px.y >= self.v0 && px.y <= self.v1
    }
}

/// Yaw of the body x axis projected onto the world horizontal plane, in (-pi, pi].
pub fn heading_of(p: &Pose) -> Result<f64, GeometryError> {
    let x_axis = p.rotation * Vector3::x();
    let horizontal = x_axis.x.hypot(x_axis.y);
    if horizontal < 1e-6_f64.sin() {
        return Err(GeometryError::GimbalDegenerate);
    }
    Ok(wrap_angle(x_axis.y.atan2(x_axis.x)))
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}
