//! Analytic residual Jacobians against central finite differences.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railodo_core::estimator::{
    depth_residual, inertial_residual, preintegration_whitener, reprojection_residual, CameraModel, DepthModel,
    KeyframeState, LinearPrior, Vector15,
};
use railodo_core::geometry::{CameraIntrinsics, Pose, StereoRig};
use railodo_core::preintegration::{ImuBias, ImuNoise, ImuSample, NavState, PreintegratedImu, GRAVITY};
use railodo_core::simulator::default_body_cam0;

const STEP: f64 = 1e-6;

fn vec3<R: Rng>(rng: &mut R, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
}

fn random_state<R: Rng>(rng: &mut R, t: f64) -> KeyframeState {
    KeyframeState {
        timestamp: t,
        pose: Pose::new(UnitQuaternion::from_scaled_axis(vec3(rng, 1.0)), vec3(rng, 20.0)),
        velocity: vec3(rng, 10.0),
        bias: ImuBias::new(vec3(rng, 1e-3), vec3(rng, 0.05)),
    }
}

fn camera() -> CameraModel {
    CameraModel::new(CameraIntrinsics::rail_default(), default_body_cam0(), &StereoRig::fronto_parallel(0.71).unwrap())
}

/// Landmark placed `depth` meters in front of `cam` with a random lateral offset.
fn landmark_in_view<R: Rng>(rng: &mut R, state: &KeyframeState, cam: &CameraModel, depth: f64) -> Vector3<f64> {
    let p_c = Vector3::new(rng.random_range(-0.4..0.4) * depth, rng.random_range(-0.3..0.3) * depth, depth);
    cam.world_point(state, 0, &p_c)
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-8)
}

/// Central differences of `f` over the 15-dof state perturbation.
fn fd_state<F: Fn(&KeyframeState) -> DVector<f64>>(s: &KeyframeState, dims: usize, f: F) -> DMatrix<f64> {
    let m = f(s).len();
    let mut j = DMatrix::zeros(m, dims);
    for i in 0..dims {
        let mut d = Vector15::zeros();
        d[i] = STEP;
        let col = (f(&s.retract(&d)) - f(&s.retract(&-d))) / (2.0 * STEP);
        j.set_column(i, &col);
    }
    j
}

fn fd_point<F: Fn(&Vector3<f64>) -> DVector<f64>>(p: &Vector3<f64>, f: F) -> DMatrix<f64> {
    let m = f(p).len();
    let mut j = DMatrix::zeros(m, 3);
    for i in 0..3 {
        let mut d = Vector3::zeros();
        d[i] = STEP;
        j.set_column(i, &((f(&(p + d)) - f(&(p - d))) / (2.0 * STEP)));
    }
    j
}

/// Worst relative error over `cases` random configurations.
pub fn reprojection(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = camera();
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let s = random_state(&mut rng, 0.0);
        let depth = rng.random_range(3.0..60.0);
        let l = landmark_in_view(&mut rng, &s, &cam, depth);
        let c = (case % 2) as u8;
        let obs = Vector2::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1200.0));
        let eval = |s: &KeyframeState, l: &Vector3<f64>| {
            let r = reprojection_residual(s, &cam, c, l, &obs, 1.3).unwrap();
            DVector::from_column_slice(r.residual.as_slice())
        };
        let r = reprojection_residual(&s, &cam, c, &l, &obs, 1.3).unwrap();
        let fd_pose = fd_state(&s, 6, |s| eval(s, &l));
        let fd_l = fd_point(&l, |l| eval(&s, l));
        worst = worst.max(relative_error(&DMatrix::from_column_slice(2, 6, r.d_pose.as_slice()), &fd_pose));
        worst = worst.max(relative_error(&DMatrix::from_column_slice(2, 3, r.d_landmark.as_slice()), &fd_l));
    }
    worst
}

/// Worst relative error over `cases` random configurations.
pub fn depth(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = camera();
    let model = DepthModel { sigma_px: 1.0, weight: 2.0, cutoff_factor: 40.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let s = random_state(&mut rng, 0.0);
        let depth = rng.random_range(3.0..25.0);
        let l = landmark_in_view(&mut rng, &s, &cam, depth);
        let measured = rng.random_range(3.0..25.0);
        let eval = |s: &KeyframeState, l: &Vector3<f64>| {
            DVector::from_element(1, depth_residual(s, &cam, l, measured, &model).unwrap().residual)
        };
        let r = depth_residual(&s, &cam, &l, measured, &model).unwrap();
        worst = worst.max(relative_error(
            &DMatrix::from_column_slice(1, 6, r.d_pose.as_slice()),
            &fd_state(&s, 6, |s| eval(s, &l)),
        ));
        worst = worst.max(relative_error(
            &DMatrix::from_column_slice(1, 3, r.d_landmark.as_slice()),
            &fd_point(&l, |l| eval(&s, l)),
        ));
    }
    worst
}

fn random_preintegration<R: Rng>(rng: &mut R) -> PreintegratedImu {
    let gyro0 = vec3(rng, 0.3);
    let gyro1 = vec3(rng, 0.3);
    let acc0 = vec3(rng, 2.0) + Vector3::new(0.0, 0.0, 9.81);
    let acc1 = vec3(rng, 2.0) + Vector3::new(0.0, 0.0, 9.81);
    let n = 16;
    let samples: Vec<_> = (0..n)
        .map(|k| {
            let u = k as f64 / (n - 1) as f64;
            ImuSample { timestamp: k as f64 / 300.0, gyro: gyro0.lerp(&gyro1, u), accel: acc0.lerp(&acc1, u) }
        })
        .collect();
    let lin = ImuBias::new(vec3(rng, 1e-3), vec3(rng, 0.05));
    PreintegratedImu::integrate(&samples, lin, ImuNoise::default()).unwrap()
}

/// Worst relative error over `cases` random configurations.
pub fn inertial(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let pre = random_preintegration(&mut rng);
        let w = preintegration_whitener(&pre);
        let mut si = random_state(&mut rng, 1.0);
        si.bias = ImuBias::new(pre.linearization_bias.gyro + vec3(&mut rng, 2e-3), pre.linearization_bias.accel + vec3(&mut rng, 0.02));
        let pred = pre.predict(&NavState { pose: si.pose, velocity: si.velocity }, &si.bias, &GRAVITY);
        let sj = KeyframeState { timestamp: 1.0 + pre.dt, pose: pred.pose, velocity: pred.velocity, bias: si.bias }
            .retract(&Vector15::from_fn(|_, _| rng.random_range(-0.01..0.01)));
        let r = inertial_residual(&si, &sj, &pre, &w, &GRAVITY).unwrap();
        let eval = |a: &KeyframeState, b: &KeyframeState| {
            let r = inertial_residual(a, b, &pre, &w, &GRAVITY).unwrap().residual;
            DVector::from_column_slice(r.as_slice())
        };
        let fd_i = fd_state(&si, 15, |s| eval(s, &sj));
        let fd_j = fd_state(&sj, 15, |s| eval(&si, s));
        let ai = DMatrix::from_column_slice(15, 15, r.d_state_i.as_slice());
        let aj = DMatrix::from_column_slice(15, 15, r.d_state_j.as_slice());
        for c in 0..15 {
            let col_err = |a: &DMatrix<f64>, f: &DMatrix<f64>| {
                (a.column(c) - f.column(c)).norm() / f.column(c).norm().max(1e-3 * f.norm())
            };
            worst = worst.max(col_err(&ai, &fd_i)).max(col_err(&aj, &fd_j));
        }
    }
    worst
}

/// Worst relative error over `cases` random configurations.
pub fn prior(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let anchors = [random_state(&mut rng, 0.0), random_state(&mut rng, 0.05)];
        let jacobian = DMatrix::from_fn(20, 30, |_, _| rng.random_range(-1.0..1.0));
        let residual = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let prior = LinearPrior { keyframes: vec![0, 1], anchors: anchors.to_vec(), jacobian, residual };
        let mut d = Vector15::from_fn(|_, _| rng.random_range(-0.2..0.2));
        let states = [anchors[0].retract(&d), anchors[1].retract(&{
            d.iter_mut().for_each(|x| *x *= -0.5);
            d
        })];
        let (_, j) = prior.evaluate(&states);
        for k in 0..2 {
            let fd = fd_state(&states[k], 15, |s| {
                let mut st = states;
                st[k] = *s;
                prior.evaluate(&st).0
            });
            worst = worst.max(relative_error(&j.columns(15 * k, 15).into_owned(), &fd));
        }
    }
    worst
}
