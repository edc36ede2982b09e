//! Sliding-window visual-inertial least squares.
//!
//! Keyframe states carry 15 degrees of freedom ordered
//! `(dtheta, dp, dv, dbg, dba)`; rotation is perturbed on the right
//! (`R <- R Exp(dtheta)`), everything else additively. Landmarks are world
//! points and are eliminated with a Schur complement inside every
//! Levenberg-Marquardt iteration.

mod marginalization;
mod problem;
mod residuals;
mod run;

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{so3, PixelRect, Pose};
use crate::preintegration::{ImuBias, PreintegrationError};

pub use marginalization::{marginalize_oldest, schur_marginalize, slide_window, NewKeyframe};
pub use problem::{
    solve_window, InertialFactor, LinearPrior, SolveReport, Termination, VisualObservation, WindowProblem, STATE_DIM,
};
pub use residuals::{
    depth_residual, depth_sigma, huber_cost, huber_weight, inertial_residual, preintegration_whitener,
    reprojection_residual, CameraModel, DepthModel, DepthResidual, InertialResidual, ReprojectionResidual, Vector15,
};
pub use run::{run_estimator, EstimatorOutput, FrameDiagnostics};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("landmark behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("inertial factor spans {preintegrated} s but the states are {span} s apart")]
    NonAdjacentStates { span: f64, preintegrated: f64 },
    #[error("solver diverged at frame {frame}")]
    SolverDiverged { frame: usize },
    #[error("window has no gauge fixing (no prior and no fixed pose)")]
    RankDeficient,
    #[error("frame {frame} has only {count} tracked landmarks")]
    InsufficientObservations { frame: usize, count: usize },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent sensor log: {0}")]
    InvalidLog(String),
    #[error(transparent)]
    Preintegration(#[from] PreintegrationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    MonoInertial,
    Stereo,
    StereoInertial,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MonoInertial, Mode::Stereo, Mode::StereoInertial];

    pub fn uses_imu(self) -> bool {
        self != Mode::Stereo
    }

    pub fn uses_stereo(self) -> bool {
        self != Mode::MonoInertial
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::MonoInertial => "mono-inertial",
            Mode::Stereo => "stereo",
            Mode::StereoInertial => "stereo-inertial",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EstimatorError::InvalidConfig(format!("unknown mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub window_size: usize,
    pub max_iterations: usize,
    pub huber_px: f64,
    pub depth_weight: f64,
    pub depth_cutoff_factor: f64,
    pub pixel_sigma: f64,
    pub mask: Option<PixelRect>,
    /// Upper bound on landmarks observed per keyframe.
    pub max_features: usize,
    /// Minimum ray angle before a track without stereo depth is triangulated.
    pub min_parallax_deg: f64,
    pub velocity_prior_sigma: f64,
    pub gyro_bias_prior_sigma: f64,
    pub accel_bias_prior_sigma: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::StereoInertial,
            window_size: 10,
            max_iterations: 15,
            huber_px: 2.0,
            depth_weight: 1.0,
            depth_cutoff_factor: 40.0,
            pixel_sigma: 1.0,
            mask: None,
            max_features: 80,
            min_parallax_deg: 1.0,
            velocity_prior_sigma: 0.05,
            gyro_bias_prior_sigma: 0.01,
            accel_bias_prior_sigma: 0.1,
        }
    }
}

impl EstimatorConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.into()));
        if self.window_size < 3 {
            return bad("window size must be >= 3");
        }
        if !(self.depth_cutoff_factor > 0.0) {
            return bad("depth cutoff factor must be > 0");
        }
        if !(self.depth_weight >= 0.0) {
            return bad("depth weight must be >= 0");
        }
        if !(self.pixel_sigma > 0.0) || !(self.huber_px > 0.0) {
            return bad("pixel sigma and Huber threshold must be > 0");
        }
        if self.max_iterations == 0 || self.max_features < 5 {
            return bad("need at least one iteration and five features");
        }
        let priors = [self.velocity_prior_sigma, self.gyro_bias_prior_sigma, self.accel_bias_prior_sigma];
        if priors.iter().any(|s| !(*s > 0.0)) {
            return bad("prior sigmas must be > 0");
        }
        Ok(())
    }

    pub fn depth_model(&self) -> DepthModel {
        DepthModel { sigma_px: self.pixel_sigma, weight: self.depth_weight, cutoff_factor: self.depth_cutoff_factor }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyframeState {
    pub timestamp: f64,
    /// world-from-body
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

impl KeyframeState {
    pub fn new(timestamp: f64, pose: Pose) -> Self {
        Self { timestamp, pose, velocity: Vector3::zeros(), bias: ImuBias::zero() }
    }

    pub fn is_valid(&self) -> bool {
        self.pose.is_valid()
            && self.timestamp.is_finite()
            && self.velocity.iter().chain(self.bias.gyro.iter()).chain(self.bias.accel.iter()).all(|v| v.is_finite())
    }

    /// `self [+] delta`.
    pub fn retract(&self, delta: &Vector15) -> Self {
        let rotation = self.pose.rotation * so3::exp_quat(&delta.fixed_rows::<3>(0).into_owned());
        Self {
            timestamp: self.timestamp,
            pose: Pose::new(
                UnitQuaternion::new_normalize(rotation.into_inner()),
                self.pose.translation + delta.fixed_rows::<3>(3),
            ),
            velocity: self.velocity + delta.fixed_rows::<3>(6),
            bias: ImuBias::new(self.bias.gyro + delta.fixed_rows::<3>(9), self.bias.accel + delta.fixed_rows::<3>(12)),
        }
    }

    /// `other [-] self`, the inverse of [`retract`](Self::retract).
    pub fn local(&self, other: &KeyframeState) -> Vector15 {
        let mut d = Vector15::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&so3::log_quat(&(self.pose.rotation.inverse() * other.pose.rotation)));
        d.fixed_rows_mut::<3>(3).copy_from(&(other.pose.translation - self.pose.translation));
        d.fixed_rows_mut::<3>(6).copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(9).copy_from(&(other.bias.gyro - self.bias.gyro));
        d.fixed_rows_mut::<3>(12).copy_from(&(other.bias.accel - self.bias.accel));
        d
    }
}
