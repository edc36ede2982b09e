//! Preintegration against independent integrators and simulator ground truth.

mod support;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railodo_core::geometry::so3;
use railodo_core::preintegration::{ImuBias, ImuNoise, ImuSample, NavState, PreintegratedImu, GRAVITY};
use railodo_core::simulator::{simulate, ImuSpec, PathSpec, ScenarioConfig, SpeedProfileSpec};
use support::preint::{fine_step_errors, Signal};

#[test]
fn matches_fine_step_integration() {
    let [rot, _, vel, pos] = fine_step_errors(300, 10);
    assert!(rot < 1e-6, "rotation {rot:e}");
    assert!(vel < 1e-6, "velocity {vel:e}");
    assert!(pos < 1e-6, "position {pos:e}");
}

fn random_window(rng: &mut ChaCha8Rng) -> (Vec<ImuSample>, ImuBias) {
    let sig = Signal::random(rng);
    let bias = ImuBias::new(
        Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3)),
        Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
    );
    (sig.samples(300.0, 0.5), bias)
}

/// Largest discrepancy between first-order correction and re-integration.
fn correction_gap(samples: &[ImuSample], lin: ImuBias, delta: ImuBias) -> f64 {
    let pre = PreintegratedImu::integrate(samples, lin, ImuNoise::default()).unwrap();
    let target = ImuBias::new(lin.gyro + delta.gyro, lin.accel + delta.accel);
    let again = PreintegratedImu::integrate(samples, target, ImuNoise::default()).unwrap();
    let c = pre.correct_bias(&target);
    let dr = so3::log(&(c.rotation.transpose() * again.delta_rotation)).norm();
    dr.max((c.velocity - again.delta_velocity).norm()).max((c.position - again.delta_position).norm())
}

#[test]
fn bias_correction_tracks_reintegration() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for _ in 0..10 {
        let (samples, lin) = random_window(&mut rng);
        let delta = ImuBias::new(Vector3::new(1e-3, -1e-3, 1e-3), Vector3::new(-1e-3, 1e-3, 1e-3));
        let gap = correction_gap(&samples, lin, delta);
        assert!(gap < 1e-4, "gap {gap:e}");
    }
}

#[test]
fn correction_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    for _ in 0..10 {
        let (samples, lin) = random_window(&mut rng);
        let dir = ImuBias::new(
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.05,
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.5,
        );
        let half = ImuBias::new(dir.gyro * 0.5, dir.accel * 0.5);
        let ratio = correction_gap(&samples, lin, dir) / correction_gap(&samples, lin, half);
        assert!((3.5..4.5).contains(&ratio), "halving the bias step shrank the error by {ratio}");
    }
}

#[test]
fn bias_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let eps = 1e-6;
    for _ in 0..10 {
        let (samples, lin) = random_window(&mut rng);
        let pre = PreintegratedImu::integrate(&samples, lin, ImuNoise::default()).unwrap();
        for axis in 0..6 {
            let shifted = |s: f64| {
                let mut b = lin;
                if axis < 3 {
                    b.gyro[axis] += s;
                } else {
                    b.accel[axis - 3] += s;
                }
                PreintegratedImu::integrate(&samples, b, ImuNoise::default()).unwrap()
            };
            let (plus, minus) = (shifted(eps), shifted(-eps));
            let d_rot = so3::log(&(minus.delta_rotation.transpose() * plus.delta_rotation)) / (2.0 * eps);
            let d_vel = (plus.delta_velocity - minus.delta_velocity) / (2.0 * eps);
            let d_pos = (plus.delta_position - minus.delta_position) / (2.0 * eps);
            let (j_rot, j_vel, j_pos) = if axis < 3 {
                (
                    pre.d_rotation_d_gyro_bias.column(axis).into_owned(),
                    pre.d_velocity_d_gyro_bias.column(axis).into_owned(),
                    pre.d_position_d_gyro_bias.column(axis).into_owned(),
                )
            } else {
                (
                    Vector3::zeros(),
                    pre.d_velocity_d_accel_bias.column(axis - 3).into_owned(),
                    pre.d_position_d_accel_bias.column(axis - 3).into_owned(),
                )
            };
            let err = |a: &Vector3<f64>, n: &Vector3<f64>| (a - n).norm() / n.norm().max(1e-6);
            assert!(err(&j_rot, &d_rot) < 1e-5 || (j_rot - d_rot).norm() < 1e-9, "rotation axis {axis}");
            assert!(err(&j_vel, &d_vel) < 1e-5, "velocity axis {axis}: {:e}", err(&j_vel, &d_vel));
            assert!(err(&j_pos, &d_pos) < 1e-5, "position axis {axis}: {:e}", err(&j_pos, &d_pos));
        }
    }
}

#[test]
fn prediction_matches_simulated_ground_truth() {
    let mut c = ScenarioConfig::with_seed(7);
    c.path = PathSpec::default().straight(100.0);
    c.profile = SpeedProfileSpec::default().hold(14.0, 3.0);
    c.imu = ImuSpec::noiseless(300.0);
    let sim = simulate(&c).unwrap();
    let gt = &sim.ground_truth.samples;
    for start in [0usize, 150, 450] {
        let end = start + 150;
        let (si, sj) = (&gt[start], &gt[end]);
        let samples = sim.log.imu_between(si.timestamp, sj.timestamp);
        assert_eq!(samples.len(), 151);
        let pre = PreintegratedImu::integrate(samples, ImuBias::zero(), ImuNoise::default()).unwrap();
        let pred = pre.predict(&NavState { pose: si.pose, velocity: si.velocity }, &ImuBias::zero(), &GRAVITY);
        let err = (pred.pose.translation - sj.pose.translation).norm();
        assert!(err < 1e-4, "start {start}: {err:e} m");
        assert!((pred.velocity - sj.velocity).norm() < 1e-4);
    }
}
