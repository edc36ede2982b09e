//! Window solver and sliding-window bookkeeping on simulated data.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use railodo_core::estimator::{
    run_estimator, slide_window, solve_window, CameraModel, EstimatorConfig, EstimatorError, InertialFactor,
    KeyframeState, Mode, NewKeyframe, VisualObservation, WindowProblem,
};
use railodo_core::evaluation::Trajectory;
use railodo_core::geometry::so3;
use railodo_core::simulator::{simulate, ImuSpec, PathSpec, ScenarioConfig, Simulation, SpeedProfileSpec};
use railodo_core::{ImuBias, ImuNoise, PreintegratedImu, GRAVITY};

fn scenario(seed: u64, length: f64, secs: f64, pixel_sigma: f64) -> Simulation {
    let mut c = ScenarioConfig::with_seed(seed);
    c.path = PathSpec::default().straight(length / 3.0).arc(800.0, length / 3.0 / 800.0).straight(length / 3.0);
    c.profile = SpeedProfileSpec::default().hold(14.0, secs);
    c.imu = ImuSpec::noiseless(300.0);
    c.pixel_sigma = pixel_sigma;
    simulate(&c).unwrap()
}

/// A window over the first `n` frames with every state, landmark and
/// measurement at its true value, expressed in the world frame.
fn window_at_truth(sim: &Simulation, n: usize, mode: Mode) -> WindowProblem {
    let gt = sim.frame_ground_truth(15);
    let log = &sim.log;
    let camera = CameraModel::new(log.intrinsics, log.body_cam0, &log.rig);
    let keyframes: Vec<KeyframeState> = gt.samples[..n]
        .iter()
        .map(|s| KeyframeState { timestamp: s.timestamp, pose: s.pose, velocity: s.velocity, bias: ImuBias::zero() })
        .collect();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for f in 0..n {
        for o in log.frame_observations(f).iter().filter(|o| o.camera == 0) {
            *counts.entry(o.landmark_id).or_default() += 1;
        }
    }
    let mut problem = WindowProblem {
        keyframes,
        landmarks: Vec::new(),
        landmark_ids: Vec::new(),
        observations: Vec::new(),
        inertial: Vec::new(),
        prior: None,
        fixed_pose: Some(0),
        estimate_motion: mode.uses_imu(),
        camera,
        gravity: GRAVITY,
    };
    for f in 0..n {
        for o in log.frame_observations(f) {
            if counts[&o.landmark_id] < 3 || (o.camera == 1 && !mode.uses_stereo()) {
                continue;
            }
            let l = *index.entry(o.landmark_id).or_insert_with(|| {
                problem.landmarks.push(sim.world.landmarks[o.true_landmark_id as usize].position);
                problem.landmark_ids.push(o.landmark_id);
                problem.landmarks.len() - 1
            });
            let depth = if mode.uses_stereo() { o.depth } else { None };
            problem.observations.push(VisualObservation { keyframe: f, landmark: l, camera: o.camera, pixel: o.pixel, depth });
        }
    }
    if mode.uses_imu() {
        for f in 1..n {
            let samples = log.imu_between(gt.samples[f - 1].timestamp, gt.samples[f].timestamp);
            let pre = PreintegratedImu::integrate(samples, ImuBias::zero(), ImuNoise::default()).unwrap();
            problem.inertial.push(InertialFactor::new(f - 1, f, pre));
        }
    }
    problem
}

fn max_position_error(a: &WindowProblem, b: &WindowProblem) -> f64 {
    a.keyframes.iter().zip(&b.keyframes).map(|(x, y)| (x.pose.translation - y.pose.translation).norm()).fold(0.0, f64::max)
}

#[test]
fn landmark_ids_match_world_indices() {
    let sim = scenario(1, 300.0, 2.0, 0.0);
    assert!(sim.world.landmarks.iter().enumerate().all(|(i, l)| l.id == i as u64));
}

#[test]
fn converges_immediately_at_truth() {
    let sim = scenario(1, 300.0, 2.0, 0.0);
    for mode in [Mode::Stereo, Mode::StereoInertial, Mode::MonoInertial] {
        let mut p = window_at_truth(&sim, 10, mode);
        let report = solve_window(&mut p, &EstimatorConfig::with_mode(mode)).unwrap();
        assert!(report.iterations <= 2, "{mode}: {} iterations", report.iterations);
        let bound = if mode.uses_imu() { 1e-4 } else { 1e-8 };
        assert!(report.rms() < bound, "{mode}: rms {:e}", report.rms());
    }
}

#[test]
fn recovers_from_perturbed_start() {
    let sim = scenario(2, 300.0, 2.0, 0.0);
    for mode in [Mode::Stereo, Mode::StereoInertial] {
        let truth = window_at_truth(&sim, 10, mode);
        let mut p = truth.clone();
        for (k, s) in p.keyframes.iter_mut().enumerate().skip(1) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s.pose.translation += Vector3::new(0.1, -0.1 * sign, 0.05);
            s.pose.rotation *= so3::exp_quat(&Vector3::new(0.0, 0.0, sign * 0.5f64.to_radians()));
        }
        for l in p.landmarks.iter_mut() {
            *l += Vector3::new(0.2, 0.1, -0.1);
        }
        let mut config = EstimatorConfig::with_mode(mode);
        config.max_iterations = 50;
        let report = solve_window(&mut p, &config).unwrap();
        let err = max_position_error(&p, &truth);
        assert!(err < 1e-5, "{mode}: {err:e} m after {} iterations", report.iterations);
    }
}

#[test]
fn accepted_costs_never_increase() {
    let sim = scenario(3, 300.0, 2.0, 1.0);
    let mut p = window_at_truth(&sim, 10, Mode::StereoInertial);
    for s in p.keyframes.iter_mut().skip(1) {
        s.pose.translation += Vector3::new(0.3, 0.2, -0.1);
    }
    let report = solve_window(&mut p, &EstimatorConfig::with_mode(Mode::StereoInertial)).unwrap();
    assert!(report.accepted_costs.len() >= 2);
    assert!(report.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(report.final_cost, *report.accepted_costs.last().unwrap());
}

#[test]
fn missing_gauge_is_rank_deficient() {
    let sim = scenario(1, 300.0, 2.0, 0.0);
    let mut p = window_at_truth(&sim, 5, Mode::Stereo);
    p.fixed_pose = None;
    assert_eq!(solve_window(&mut p, &EstimatorConfig::with_mode(Mode::Stereo)).unwrap_err(), EstimatorError::RankDeficient);
}

#[test]
fn solution_is_gauge_invariant() {
    let sim = scenario(4, 300.0, 2.0, 1.0);
    let config = EstimatorConfig::with_mode(Mode::Stereo);
    let mut a = window_at_truth(&sim, 8, Mode::Stereo);
    let ra = solve_window(&mut a, &config).unwrap();

    // the same window expressed in a rotated and shifted world frame
    let t = railodo_core::Pose::from_yaw(0.7, Vector3::new(40.0, -12.0, 3.0));
    let mut b = window_at_truth(&sim, 8, Mode::Stereo);
    for s in b.keyframes.iter_mut() {
        s.pose = t.compose(&s.pose);
    }
    for l in b.landmarks.iter_mut() {
        *l = t.transform_point(l);
    }
    let rb = solve_window(&mut b, &config).unwrap();
    assert!((ra.initial_cost - rb.initial_cost).abs() <= 1e-9 * ra.initial_cost);
    assert!((ra.final_cost - rb.final_cost).abs() <= 1e-9 * ra.final_cost, "{} vs {}", ra.final_cost, rb.final_cost);
    for (x, y) in a.keyframes.iter().zip(&b.keyframes) {
        let mapped = t.compose(&x.pose);
        assert!((mapped.translation - y.pose.translation).norm() < 1e-9);
        assert!(mapped.rotation.angle_to(&y.pose.rotation) < 1e-9);
    }
}

#[test]
fn sliding_keeps_window_size_and_builds_prior() {
    let sim = scenario(5, 300.0, 3.0, 1.0);
    let gt = sim.frame_ground_truth(15);
    let mut config = EstimatorConfig::with_mode(Mode::StereoInertial);
    config.window_size = 5;
    let mut p = window_at_truth(&sim, 5, Mode::StereoInertial);
    solve_window(&mut p, &config).unwrap();
    let first_ids: Vec<u64> =
        p.observations.iter().filter(|o| o.keyframe == 0).map(|o| p.landmark_ids[o.landmark]).collect();
    assert!(!first_ids.is_empty());
    let samples = sim.log.imu_between(gt.samples[4].timestamp, gt.samples[5].timestamp);
    let pre = PreintegratedImu::integrate(samples, ImuBias::zero(), ImuNoise::default()).unwrap();
    let removed = slide_window(&mut p, &config, NewKeyframe::Inertial(Box::new(pre))).unwrap().unwrap();
    assert!((removed.timestamp - gt.samples[0].timestamp).abs() < 1e-12);
    assert_eq!(p.keyframes.len(), 5);
    assert!((p.keyframes[4].timestamp - gt.samples[5].timestamp).abs() < 1e-9);
    let prior = p.prior.as_ref().expect("marginalization leaves a prior");
    assert!(prior.keyframes.contains(&0));
    assert_eq!(prior.jacobian.ncols(), prior.keyframes.len() * 15);
    assert_eq!(p.fixed_pose, None);
    // every landmark the oldest keyframe saw leaves with it
    assert!(first_ids.iter().all(|id| !p.landmark_ids.contains(id)));
    assert!(p.observations.iter().all(|o| o.keyframe < 5 && o.landmark < p.landmarks.len()));
    assert!(p.inertial.iter().all(|f| f.j == f.i + 1 && f.j < 5));
    let report = solve_window(&mut p, &config).unwrap();
    assert!(report.final_cost.is_finite());
}

fn position_error_along(out: &railodo_core::estimator::EstimatorOutput, sim: &Simulation) -> f64 {
    let gt = sim.frame_ground_truth(15);
    let est = Trajectory::new(out.poses()).unwrap();
    let truth = Trajectory::new(gt.samples.iter().map(|s| (s.timestamp, s.pose)).collect()).unwrap();
    let origin = truth.samples()[0].1;
    est.samples()
        .iter()
        .zip(truth.samples())
        .map(|((_, e), (_, g))| (origin.compose(e).translation - g.translation).norm())
        .fold(0.0, f64::max)
}

#[test]
fn noiseless_run_stays_on_track() {
    let sim = scenario(6, 300.0, 200.0 / 14.0, 0.0);
    let out = run_estimator(&sim.log, &EstimatorConfig::with_mode(Mode::StereoInertial), sim.ground_truth.samples[0].velocity)
        .unwrap();
    assert_eq!(out.states.len(), sim.log.frames.len());
    let err = position_error_along(&out, &sim);
    assert!(err < 0.05, "max error {err} m over 200 m");
}

#[test]
fn dropout_frames_coast_and_are_flagged() {
    let mut c = ScenarioConfig::with_seed(7);
    c.profile = SpeedProfileSpec::default().hold(14.0, 6.0);
    c.dropouts = vec![(3.0, 3.5)];
    let sim = simulate(&c).unwrap();
    let out = run_estimator(&sim.log, &EstimatorConfig::with_mode(Mode::StereoInertial), sim.ground_truth.samples[0].velocity)
        .unwrap();
    assert_eq!(out.states.len(), sim.log.frames.len());
    let gaps: Vec<f64> = out.diagnostics.iter().filter(|d| d.gap).map(|d| d.timestamp).collect();
    assert!(!gaps.is_empty());
    assert!(gaps.iter().all(|&t| (2.999..=3.501).contains(&t)), "{gaps:?}");
    let err = position_error_along(&out, &sim);
    assert!(err < 1.0, "{err} m after a 0.5 s dropout");
}

#[test]
fn far_stereo_depths_are_gated() {
    let mut c = ScenarioConfig::with_seed(8);
    c.profile = SpeedProfileSpec::default().hold(14.0, 3.0);
    c.max_range_factor = 200.0;
    let sim = simulate(&c).unwrap();
    let config = EstimatorConfig::with_mode(Mode::Stereo);
    let out = run_estimator(&sim.log, &config, Vector3::zeros()).unwrap();
    let gated: usize = out.diagnostics.iter().map(|d| d.gated_depths).sum();
    let used: usize = out.diagnostics.iter().map(|d| d.depth_residuals).sum();
    assert!(gated > 0 && used > 0, "gated {gated}, used {used}");
    let far = sim.log.observations.iter().filter(|o| o.depth.is_some_and(|d| d >= 40.0 * 0.31)).count();
    assert!(far > 0);
}
