//! Synthetic rail scenarios: track geometry, speed profile, landmark
//! corridor, IMU stream and stereo pixel observations.
//!
//! Every random draw comes from a ChaCha8 generator seeded by
//! [`ScenarioConfig::seed`], with one independent stream per purpose, so a
//! configuration always reproduces the same [`Simulation`] bit for bit.

mod imu;
mod landmarks;
mod path;
mod profile;
mod render;
mod trajectory;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{so3, CameraIntrinsics, GeometryError, PixelRect, Pose, StereoRig};
use crate::preintegration::{ImuBias, GRAVITY};

pub use imu::{generate_imu, ImuSpec, ImuStream};
pub use landmarks::{generate_landmarks, LandmarkWorld, HEIGHT_RANGE, LATERAL_RANGE};
pub use path::{build_path, PathElement, PathPoint, PathSpec, RailPath};
pub use profile::{SpeedElement, SpeedProfileSpec};
pub use render::{render_observations, Frame, MismatchStats, Observation, SensorLog};
pub use trajectory::{sample_trajectory, GroundTruth, GroundTruthSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulatorError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("path element {element} does not join tangentially (heading jump {jump} rad)")]
    DiscontinuousTangent { element: usize, jump: f64 },
    #[error("invalid speed profile: {0}")]
    InvalidProfile(String),
    #[error("speed profile covers {profile} m but the path is only {path} m long")]
    ProfileOverrunsPath { profile: f64, path: f64 },
    #[error("ground truth sampled at {found} Hz, IMU expects {expected} Hz")]
    RateMismatch { expected: f64, found: f64 },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Periodic ground pattern and wrong-association rate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AliasingSpec {
    /// Spacing of the ground row in meters; 0 disables the row.
    pub period: f64,
    pub mismatch_prob: f64,
}

/// Error added to the reported cam0-from-cam1 extrinsic.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CalibrationPerturbation {
    /// Rotation vector in cam0 axes, radians.
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub path: PathSpec,
    pub profile: SpeedProfileSpec,
    pub imu: ImuSpec,
    pub camera_rate_hz: f64,
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
    /// body-from-cam0 mounting.
    pub body_cam0: Pose,
    pub pixel_sigma: f64,
    /// Corridor landmarks per meter of track.
    pub landmark_density: f64,
    /// Maximum cam0 viewing distance, meters.
    pub max_range: f64,
    /// Stereo matches exist only below `max_range_factor * baseline` depth.
    pub max_range_factor: f64,
    pub aliasing: AliasingSpec,
    /// Closed time intervals without any observation.
    pub dropouts: Vec<(f64, f64)>,
    pub mask: Option<PixelRect>,
    pub calibration: CalibrationPerturbation,
    pub seed: u64,
}

/// Forward-looking camera: optical axis along body x, image x to the right
/// (body -y), image y down (body -z).
pub fn default_body_cam0() -> Pose {
    let r = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    Pose::from_parts(&r, Vector3::new(1.5, 0.0, 2.5))
}

impl ScenarioConfig {
    /// Defaults on a 300 m straight at 14 m/s.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            path: PathSpec::default().straight(300.0),
            profile: SpeedProfileSpec::default().hold(14.0, 15.0),
            imu: ImuSpec::default(),
            camera_rate_hz: 20.0,
            intrinsics: CameraIntrinsics::rail_default(),
            baseline: 0.31,
            body_cam0: default_body_cam0(),
            pixel_sigma: 1.0,
            landmark_density: 2.0,
            max_range: 80.0,
            max_range_factor: 40.0,
            aliasing: AliasingSpec::default(),
            dropouts: Vec::new(),
            mask: None,
            calibration: CalibrationPerturbation::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(m.into()));
        self.imu.validate()?;
        self.intrinsics.validate()?;
        if !(self.camera_rate_hz > 0.0) {
            return bad("camera rate must be > 0");
        }
        if !(self.imu.rate_hz > 2.0 * self.camera_rate_hz) {
            return bad("IMU rate must exceed twice the camera rate");
        }
        let ratio = self.imu.rate_hz / self.camera_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("IMU rate must be an integer multiple of the camera rate");
        }
        if !(self.baseline > 0.0) {
            return bad("baseline must be > 0");
        }
        if !(self.pixel_sigma >= 0.0) {
            return bad("pixel sigma must be >= 0");
        }
        if !(self.max_range > 0.0) || !(self.max_range_factor > 0.0) {
            return bad("ranges must be > 0");
        }
        if !(0.0..=1.0).contains(&self.aliasing.mismatch_prob) {
            return bad("mismatch probability must lie in [0, 1]");
        }
        if self.dropouts.iter().any(|&(a, b)| !(a <= b)) {
            return bad("dropout intervals need t0 <= t1");
        }
        if !self.body_cam0.is_valid() {
            return bad("invalid camera mounting");
        }
        Ok(())
    }

    pub fn true_rig(&self) -> StereoRig {
        StereoRig { t_cam0_cam1: Pose::from_translation(self.baseline, 0.0, 0.0), baseline: self.baseline }
    }

    /// Rig as a miscalibrated system would report it.
    pub fn reported_rig(&self) -> Result<StereoRig, SimulatorError> {
        let delta = Pose::new(so3::exp_quat(&self.calibration.rotation), self.calibration.translation);
        Ok(StereoRig::new(self.true_rig().t_cam0_cam1.compose(&delta))?)
    }

    pub fn frame_step(&self) -> usize {
        (self.imu.rate_hz / self.camera_rate_hz).round() as usize
    }
}

/// Output of [`simulate`]: the sensor log plus everything an evaluator or a
/// test may want to compare against.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub log: SensorLog,
    /// Sampled at the IMU rate.
    pub ground_truth: GroundTruth,
    pub world: LandmarkWorld,
    pub true_biases: Vec<ImuBias>,
    pub mismatches: MismatchStats,
}

impl Simulation {
    /// Ground truth at the camera frames.
    pub fn frame_ground_truth(&self, step: usize) -> GroundTruth {
        self.ground_truth.decimate(step)
    }
}

const STREAM_LANDMARKS: u64 = 1;
const STREAM_IMU: u64 = 2;
const STREAM_PIXELS: u64 = 3;
const STREAM_MISMATCH: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn simulate(config: &ScenarioConfig) -> Result<Simulation, SimulatorError> {
    config.validate()?;
    let path = build_path(&config.path)?;
    let gt = sample_trajectory(&path, &config.profile, config.imu.rate_hz)?;
    let world = generate_landmarks(
        &path,
        config.landmark_density,
        config.aliasing.period,
        &mut stream(config.seed, STREAM_LANDMARKS),
    )?;
    let imu = generate_imu(&gt, &config.imu, &GRAVITY, &mut stream(config.seed, STREAM_IMU))?;
    let step = config.frame_step();
    let frames: Vec<_> = gt
        .samples
        .iter()
        .step_by(step)
        .enumerate()
        .map(|(id, s)| (Frame { id, timestamp: s.timestamp }, *s))
        .collect();
    let reported = config.reported_rig()?;
    let (observations, mismatches) = render_observations(
        &frames,
        &world,
        config,
        &reported,
        &mut stream(config.seed, STREAM_PIXELS),
        &mut stream(config.seed, STREAM_MISMATCH),
    );
    let log = SensorLog {
        imu: imu.samples,
        imu_noise: config.imu.noise,
        frames: frames.iter().map(|(f, _)| *f).collect(),
        observations,
        intrinsics: config.intrinsics,
        rig: reported,
        body_cam0: config.body_cam0,
    };
    Ok(Simulation { log, ground_truth: gt, world, true_biases: imu.biases, mismatches })
}
