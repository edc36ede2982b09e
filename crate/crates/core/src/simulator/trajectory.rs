use nalgebra::Vector3;

use super::path::RailPath;
use super::profile::SpeedProfileSpec;
use super::SimulatorError;
use crate::geometry::Pose;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: f64,
    /// world-from-body
    pub pose: Pose,
    /// world frame, m/s
    pub velocity: Vector3<f64>,
    /// body frame, rad/s
    pub angular_rate: Vector3<f64>,
    /// world frame, m/s^2
    pub acceleration: Vector3<f64>,
    pub arc_length: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub samples: Vec<GroundTruthSample>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.timestamp)
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    /// Every `step`-th sample, starting with the first.
    pub fn decimate(&self, step: usize) -> GroundTruth {
        GroundTruth { samples: self.samples.iter().step_by(step.max(1)).copied().collect() }
    }
}

/// Samples the rail-constrained motion at `rate_hz`: position on the path,
/// body x along the tangent, body z up, no roll/pitch. Velocity,
/// acceleration and yaw rate are the analytic derivatives of the
/// path/speed composition.
pub fn sample_trajectory(path: &RailPath, profile: &SpeedProfileSpec, rate_hz: f64) -> Result<GroundTruth, SimulatorError> {
    profile.validate()?;
    if !(rate_hz > 0.0) {
        return Err(SimulatorError::InvalidConfig("sample rate must be positive".into()));
    }
    let distance = profile.total_distance();
    if distance > path.total_length() + 1e-9 {
        return Err(SimulatorError::ProfileOverrunsPath { profile: distance, path: path.total_length() });
    }
    let n = (profile.duration() * rate_hz + 1e-9).floor() as usize + 1;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            let (s, v, a_t) = profile.state_at(t);
            let p = path.at(s);
            let tangent = p.tangent();
            let normal = p.normal();
            let vel = v * tangent;
            let acc = a_t * tangent + p.curvature * v * v * normal;
            GroundTruthSample {
                timestamp: t,
                pose: Pose::from_yaw(p.heading, Vector3::new(p.position.x, p.position.y, 0.0)),
                velocity: Vector3::new(vel.x, vel.y, 0.0),
                angular_rate: Vector3::new(0.0, 0.0, p.curvature * v),
                acceleration: Vector3::new(acc.x, acc.y, 0.0),
                arc_length: s,
            }
        })
        .collect();
    Ok(GroundTruth { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::heading_of;
    use crate::simulator::path::{build_path, PathSpec};

    #[test]
    fn straight_constant_speed() {
        let path = build_path(&PathSpec::default().straight(200.0)).unwrap();
        let gt = sample_trajectory(&path, &SpeedProfileSpec::default().hold(10.0, 10.0), 100.0).unwrap();
        assert_eq!(gt.len(), 1001);
        for s in &gt.samples {
            assert!((s.pose.translation.x - 10.0 * s.timestamp).abs() < 1e-9);
            assert_eq!(heading_of(&s.pose).unwrap(), 0.0);
            assert_eq!(s.angular_rate, Vector3::zeros());
        }
    }

    #[test]
    fn circular_motion() {
        let (r, v) = (150.0, 12.0);
        let path = build_path(&PathSpec::default().arc(r, 1.0)).unwrap();
        let gt = sample_trajectory(&path, &SpeedProfileSpec::default().hold(v, 10.0), 50.0).unwrap();
        for s in &gt.samples {
            assert!((s.acceleration.norm() - v * v / r).abs() < 1e-12);
            assert!((s.angular_rate.z - v / r).abs() < 1e-15);
            assert!((s.velocity.norm() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn overrun_rejected() {
        let path = build_path(&PathSpec::default().straight(50.0)).unwrap();
        let err = sample_trajectory(&path, &SpeedProfileSpec::default().hold(10.0, 10.0), 10.0).unwrap_err();
        assert!(matches!(err, SimulatorError::ProfileOverrunsPath { .. }));
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let path = build_path(&PathSpec::default().straight(30.0).arc(120.0, 0.6).arc(200.0, -0.4).straight(100.0)).unwrap();
        let profile = SpeedProfileSpec::default().ramp(4.0, 12.0, 6.0).hold(12.0, 8.0).ramp(12.0, 8.0, 4.0);
        let rate = 1000.0;
        let gt = sample_trajectory(&path, &profile, rate).unwrap();
        let h = 1.0 / rate;
        for w in gt.samples.windows(3) {
            let (a, b, c) = (&w[0], &w[1], &w[2]);
            let curvature_step = path.at(a.arc_length).curvature != path.at(c.arc_length).curvature;
            let v_fd = (c.pose.translation - a.pose.translation) / (2.0 * h);
            let speed = b.velocity.norm().max(1.0);
            assert!((v_fd - b.velocity).norm() < 1e-4 * speed, "velocity at t={}", b.timestamp);
            let yaw_a = heading_of(&a.pose).unwrap();
            let yaw_c = heading_of(&c.pose).unwrap();
            let rate_fd = crate::geometry::wrap_angle(yaw_c - yaw_a) / (2.0 * h);
            if !curvature_step {
                assert!((rate_fd - b.angular_rate.z).abs() < 1e-4 * speed);
            }
        }
        // acceleration away from element junctions (where it is discontinuous)
        for w in gt.samples.windows(3).step_by(7) {
            let (a, b, c) = (&w[0], &w[1], &w[2]);
            let kink = path.at(a.arc_length).curvature != path.at(c.arc_length).curvature
                || profile.state_at(a.timestamp).2 != profile.state_at(c.timestamp).2;
            if kink {
                continue;
            }
            let acc_fd = (c.velocity - a.velocity) / (2.0 * h);
            assert!((acc_fd - b.acceleration).norm() < 1e-4 * b.acceleration.norm().max(1.0));
        }
        assert!(gt.samples.windows(2).all(|w| w[1].arc_length >= w[0].arc_length));
    }
}
