use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::trajectory::GroundTruth;
use super::SimulatorError;
use crate::preintegration::{ImuBias, ImuNoise, ImuSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSpec {
    pub rate_hz: f64,
    pub noise: ImuNoise,
    pub initial_bias: ImuBias,
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self { rate_hz: 300.0, noise: ImuNoise::default(), initial_bias: ImuBias::zero() }
    }
}

impl ImuSpec {
    pub fn noiseless(rate_hz: f64) -> Self {
        Self {
            rate_hz,
            noise: ImuNoise { gyro_density: 0.0, accel_density: 0.0, gyro_walk: 0.0, accel_walk: 0.0 },
            initial_bias: ImuBias::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let n = &self.noise;
        let densities = [n.gyro_density, n.accel_density, n.gyro_walk, n.accel_walk];
        if !(self.rate_hz > 0.0) || densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(SimulatorError::InvalidConfig("IMU rate must be > 0 and densities >= 0".into()));
        }
        if !self.initial_bias.is_valid() {
            return Err(SimulatorError::InvalidConfig("IMU initial bias out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    /// True bias at each sample.
    pub biases: Vec<ImuBias>,
}

/// Synthesizes one IMU sample per ground-truth sample.
///
/// `gyro = w_body + b_g + n_g`, `accel = R^T (a_world - g) + b_a + n_a`;
/// white noise is drawn with standard deviation `density / sqrt(dt)` and the
/// biases follow a random walk with increments `walk * sqrt(dt)`. The ground
/// truth must therefore be sampled at the IMU rate.
pub fn generate_imu<R: Rng>(
    gt: &GroundTruth,
    spec: &ImuSpec,
    gravity: &Vector3<f64>,
    rng: &mut R,
) -> Result<ImuStream, SimulatorError> {
    spec.validate()?;
    let dt = 1.0 / spec.rate_hz;
    if let Some(w) = gt.samples.windows(2).find(|w| ((w[1].timestamp - w[0].timestamp) - dt).abs() > 1e-9) {
        return Err(SimulatorError::RateMismatch {
            expected: spec.rate_hz,
            found: 1.0 / (w[1].timestamp - w[0].timestamp),
        });
    }
    let n = &spec.noise;
    let white_g = n.gyro_density / dt.sqrt();
    let white_a = n.accel_density / dt.sqrt();
    let walk_g = n.gyro_walk * dt.sqrt();
    let walk_a = n.accel_walk * dt.sqrt();

    let gauss3 = |rng: &mut R| {
        Vector3::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    };

    let mut bias = spec.initial_bias;
    let mut stream = ImuStream { samples: Vec::with_capacity(gt.len()), biases: Vec::with_capacity(gt.len()) };
    for (k, s) in gt.samples.iter().enumerate() {
        if k > 0 {
            bias.gyro += walk_g * gauss3(rng);
            bias.accel += walk_a * gauss3(rng);
        }
        let specific_force = s.pose.rotation.inverse() * (s.acceleration - gravity);
        let gyro = s.angular_rate + bias.gyro + white_g * gauss3(rng);
        let accel = specific_force + bias.accel + white_a * gauss3(rng);
        stream.samples.push(ImuSample { timestamp: s.timestamp, gyro, accel });
        stream.biases.push(bias);
    }
    Ok(stream)
}
