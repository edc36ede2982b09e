//! IMU preintegration between keyframes.
//!
//! Samples are integrated with the midpoint rule into rotation, velocity and
//! position deltas expressed in the first keyframe's body frame. Alongside
//! the deltas the integrator propagates a 9x9 covariance over
//! `(dtheta, dv, dp)` and the exact first-order Jacobians of the discrete
//! scheme with respect to the gyro and accelerometer biases, so a factor can
//! be re-linearized at a new bias without touching the raw samples.

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::geometry::{so3, Pose};

pub type Matrix9 = SMatrix<f64, 9, 9>;
type Matrix9x3 = SMatrix<f64, 9, 3>;

/// Gravity in the world frame (z up), m/s^2.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreintegrationError {
    #[error("need at least two IMU samples, got {0}")]
    EmptyWindow(usize),
    #[error("IMU timestamps not strictly increasing at sample {0}")]
    NonMonotonicTimestamps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// rad/s, body frame
    pub gyro: Vector3<f64>,
    /// m/s^2 specific force, body frame
    pub accel: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_valid(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|v| v.is_finite() && v.abs() < 1.0)
    }
}

impl std::ops::Sub for ImuBias {
    type Output = ImuBias;
    fn sub(self, rhs: ImuBias) -> ImuBias {
        ImuBias::new(self.gyro - rhs.gyro, self.accel - rhs.accel)
    }
}

/// Continuous-time noise densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    /// rad/s/sqrt(Hz)
    pub gyro_density: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_density: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_walk: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { gyro_density: 2e-4, accel_density: 2e-3, gyro_walk: 4e-6, accel_walk: 4e-5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub dt: f64,
    pub delta_rotation: Matrix3<f64>,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    /// Covariance over (dtheta, dv, dp).
    pub covariance: Matrix9,
    pub d_rotation_d_gyro_bias: Matrix3<f64>,
    pub d_velocity_d_gyro_bias: Matrix3<f64>,
    pub d_velocity_d_accel_bias: Matrix3<f64>,
    pub d_position_d_gyro_bias: Matrix3<f64>,
    pub d_position_d_accel_bias: Matrix3<f64>,
    pub linearization_bias: ImuBias,
    pub sample_count: usize,
    pub noise: ImuNoise,
}

/// Deltas after a first-order bias update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectedDeltas {
    pub rotation: Matrix3<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
}

impl PreintegratedImu {
    /// Midpoint integration of `samples` (bias `bias_lin` removed).
    pub fn integrate(samples: &[ImuSample], bias_lin: ImuBias, noise: ImuNoise) -> Result<Self, PreintegrationError> {
        if samples.len() < 2 {
            return Err(PreintegrationError::EmptyWindow(samples.len()));
        }
        if let Some(i) = samples.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(PreintegrationError::NonMonotonicTimestamps(i + 1));
        }

        let mut pre = Self {
            dt: 0.0,
            delta_rotation: Matrix3::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            covariance: Matrix9::zeros(),
            d_rotation_d_gyro_bias: Matrix3::zeros(),
            d_velocity_d_gyro_bias: Matrix3::zeros(),
            d_velocity_d_accel_bias: Matrix3::zeros(),
            d_position_d_gyro_bias: Matrix3::zeros(),
            d_position_d_accel_bias: Matrix3::zeros(),
            linearization_bias: bias_lin,
            sample_count: samples.len(),
            noise,
        };
        for w in samples.windows(2) {
            pre.step(&w[0], &w[1]);
        }
        Ok(pre)
    }

    fn step(&mut self, s0: &ImuSample, s1: &ImuSample) {
        let dt = s1.timestamp - s0.timestamp;
        let b = self.linearization_bias;
        let omega = 0.5 * (s0.gyro + s1.gyro) - b.gyro;
        let a0 = s0.accel - b.accel;
        let a1 = s1.accel - b.accel;

        let phi = omega * dt;
        let step_rot = so3::exp(&phi);
        let jr = so3::right_jacobian(&phi);
        let r0 = self.delta_rotation;
        let r1 = so3::orthonormalize(&(r0 * step_rot));

        let acc = 0.5 * (r0 * a0 + r1 * a1);

        // Bias Jacobians of the discrete scheme.
        let jr0 = self.d_rotation_d_gyro_bias;
        let jr1 = step_rot.transpose() * jr0 - jr * dt;
        let hat_a0 = so3::hat(&a0);
        let hat_a1 = so3::hat(&a1);
        let dacc_dbg = -0.5 * (r0 * hat_a0 * jr0 + r1 * hat_a1 * jr1);
        let dacc_dba = -0.5 * (r0 + r1);
        self.d_position_d_gyro_bias += self.d_velocity_d_gyro_bias * dt + 0.5 * dacc_dbg * dt * dt;
        self.d_position_d_accel_bias += self.d_velocity_d_accel_bias * dt + 0.5 * dacc_dba * dt * dt;
        self.d_velocity_d_gyro_bias += dacc_dbg * dt;
        self.d_velocity_d_accel_bias += dacc_dba * dt;
        self.d_rotation_d_gyro_bias = jr1;

        // Error-state transition over (dtheta, dv, dp).
        let mut f = Matrix9::identity();
        let dacc_dtheta = -0.5 * (r0 * hat_a0 + r1 * hat_a1 * step_rot.transpose());
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&step_rot.transpose());
        f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(dacc_dtheta * dt));
        f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * dacc_dtheta * dt * dt));
        f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));

        let mut g_gyro = Matrix9x3::zeros();
        g_gyro.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let r_mid = 0.5 * (r0 + r1);
        let mut g_acc = Matrix9x3::zeros();
        g_acc.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r_mid * dt));
        g_acc.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * r_mid * dt * dt));
        let qg = self.noise.gyro_density.powi(2) / dt;
        let qa = self.noise.accel_density.powi(2) / dt;
        let cov = f * self.covariance * f.transpose()
            + g_gyro * g_gyro.transpose() * qg
            + g_acc * g_acc.transpose() * qa;
        self.covariance = 0.5 * (cov + cov.transpose());

        self.delta_position += self.delta_velocity * dt + 0.5 * acc * dt * dt;
        self.delta_velocity += acc * dt;
        self.delta_rotation = r1;
        self.dt += dt;
    }

    /// First-order update of the deltas to `new_bias`. Accuracy degrades for
    /// bias changes beyond a few 1e-2.
    pub fn correct_bias(&self, new_bias: &ImuBias) -> CorrectedDeltas {
        let db = *new_bias - self.linearization_bias;
        CorrectedDeltas {
            rotation: self.delta_rotation * so3::exp(&(self.d_rotation_d_gyro_bias * db.gyro)),
            velocity: self.delta_velocity + self.d_velocity_d_gyro_bias * db.gyro + self.d_velocity_d_accel_bias * db.accel,
            position: self.delta_position + self.d_position_d_gyro_bias * db.gyro + self.d_position_d_accel_bias * db.accel,
        }
    }

    /// Mean of the factor: where the state at the end of the interval should
    /// be, given the state at its start.
    pub fn predict(&self, start: &NavState, bias: &ImuBias, gravity: &Vector3<f64>) -> NavState {
        let d = self.correct_bias(bias);
        let ri = start.pose.rotation_matrix();
        let dt = self.dt;
        let rj = so3::orthonormalize(&(ri * d.rotation));
        let velocity = start.velocity + gravity * dt + ri * d.velocity;
        let position = start.pose.translation + start.velocity * dt + 0.5 * gravity * dt * dt + ri * d.position;
        NavState { pose: Pose::from_parts(&rj, position), velocity }
    }
}

/// Convenience wrapper mirroring [`PreintegratedImu::integrate`].
pub fn integrate(samples: &[ImuSample], bias_lin: ImuBias, noise: ImuNoise) -> Result<PreintegratedImu, PreintegrationError> {
    PreintegratedImu::integrate(samples, bias_lin, noise)
}

/// Convenience wrapper mirroring [`PreintegratedImu::predict`].
pub fn predict_state(start: &NavState, bias: &ImuBias, pre: &PreintegratedImu, gravity: &Vector3<f64>) -> NavState {
    pre.predict(start, bias, gravity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(gyro: Vector3<f64>, accel: Vector3<f64>, rate: f64, duration: f64) -> Vec<ImuSample> {
        let n = (duration * rate).round() as usize;
        (0..=n).map(|k| ImuSample { timestamp: k as f64 / rate, gyro, accel }).collect()
    }

    #[test]
    fn zero_signal_gives_identity() {
        let s = constant(Vector3::zeros(), Vector3::zeros(), 300.0, 1.0);
        let pre = integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap();
        assert_eq!(pre.delta_rotation, Matrix3::identity());
        assert_eq!(pre.delta_velocity, Vector3::zeros());
        assert_eq!(pre.delta_position, Vector3::zeros());
        assert!((pre.dt - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_acceleration_closed_form() {
        let a = 0.7;
        let t = 2.0;
        let s = constant(Vector3::zeros(), Vector3::new(a, 0.0, 0.0), 300.0, t);
        let pre = integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap();
        assert!((pre.delta_velocity - Vector3::new(a * t, 0.0, 0.0)).norm() < 1e-9);
        assert!((pre.delta_position - Vector3::new(0.5 * a * t * t, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn errors() {
        let s = constant(Vector3::zeros(), Vector3::zeros(), 100.0, 0.0);
        assert_eq!(integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap_err(), PreintegrationError::EmptyWindow(1));
        let mut s = constant(Vector3::zeros(), Vector3::zeros(), 100.0, 0.1);
        s[3].timestamp = s[2].timestamp;
        assert_eq!(
            integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap_err(),
            PreintegrationError::NonMonotonicTimestamps(3)
        );
    }

    #[test]
    fn correcting_with_linearization_bias_is_identity() {
        let s: Vec<_> = (0..=60)
            .map(|k| {
                let t = k as f64 / 300.0;
                ImuSample {
                    timestamp: t,
                    gyro: Vector3::new(0.1 * t, -0.05, 0.2),
                    accel: Vector3::new(0.3, 0.1 * t, 9.81),
                }
            })
            .collect();
        let b = ImuBias::new(Vector3::new(0.01, 0.0, -0.01), Vector3::new(0.05, -0.02, 0.0));
        let pre = integrate(&s, b, ImuNoise::default()).unwrap();
        let c = pre.correct_bias(&b);
        assert_eq!(c.rotation, pre.delta_rotation);
        assert_eq!(c.velocity, pre.delta_velocity);
        assert_eq!(c.position, pre.delta_position);
    }

    #[test]
    fn stationary_prediction_holds_state() {
        let s = constant(Vector3::zeros(), -GRAVITY, 300.0, 0.5);
        let pre = integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap();
        let start = NavState { pose: Pose::from_translation(1.0, 2.0, 3.0), velocity: Vector3::zeros() };
        let end = predict_state(&start, &ImuBias::zero(), &pre, &GRAVITY);
        assert!((end.pose.translation - start.pose.translation).norm() < 1e-6);
        assert!(end.velocity.norm() < 1e-6);
        assert!(end.pose.rotation.angle() < 1e-6);
    }

    #[test]
    fn free_fall_is_ballistic() {
        let s = constant(Vector3::zeros(), Vector3::zeros(), 300.0, 0.5);
        let pre = integrate(&s, ImuBias::zero(), ImuNoise::default()).unwrap();
        let v = Vector3::new(3.0, -1.0, 2.0);
        let start = NavState { pose: Pose::identity(), velocity: v };
        let end = predict_state(&start, &ImuBias::zero(), &pre, &GRAVITY);
        let expected = v * 0.5 + 0.5 * GRAVITY * 0.25;
        assert!((end.pose.translation - expected).norm() < 1e-9);
    }

    #[test]
    fn covariance_psd_and_growing() {
        let s = constant(Vector3::new(0.05, -0.02, 0.1), Vector3::new(0.2, 0.0, 9.81), 300.0, 1.0);
        let mut last_trace = 0.0;
        for n in [10, 50, 150, 301] {
            let pre = integrate(&s[..n], ImuBias::zero(), ImuNoise::default()).unwrap();
            let sym = (pre.covariance - pre.covariance.transpose()).abs().max();
            assert!(sym < 1e-18);
            let eig = pre.covariance.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e > -1e-18), "{:?}", eig.eigenvalues);
            let tr = pre.covariance.trace();
            assert!(tr > last_trace);
            last_trace = tr;
        }
    }
}
