use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::marginalization::{slide_window, NewKeyframe};
use super::problem::{LinearPrior, VisualObservation, WindowProblem, STATE_DIM};
use super::residuals::CameraModel;
use super::{solve_window, EstimatorConfig, EstimatorError, KeyframeState, Mode};
use crate::geometry::{so3, Pose};
use crate::preintegration::{ImuNoise, PreintegratedImu, GRAVITY};
use crate::simulator::{Observation, SensorLog};

/// Per-frame bookkeeping written next to the trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDiagnostics {
    pub frame_id: usize,
    pub timestamp: f64,
    /// Landmarks this frame contributes residuals for.
    pub landmarks: usize,
    pub new_landmarks: usize,
    pub window_landmarks: usize,
    pub reprojection_residuals: usize,
    pub depth_residuals: usize,
    /// Stereo depths at or beyond the cutoff, hence without a residual.
    pub gated_depths: usize,
    pub iterations: usize,
    pub rms: f64,
    /// Fewer than five landmarks: coasted on the IMU or extrapolated.
    pub gap: bool,
    /// Tracking was lost and the window restarted at a predicted pose.
    pub reanchored: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorOutput {
    /// One state per frame, in frame order. Gap frames carry the
    /// extrapolated pose.
    pub states: Vec<KeyframeState>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

impl EstimatorOutput {
    pub fn poses(&self) -> Vec<(f64, Pose)> {
        self.states.iter().map(|s| (s.timestamp, s.pose)).collect()
    }
}

const MIN_LANDMARKS: usize = 5;

#[derive(Clone, Copy, Debug)]
struct Measurement {
    id: u64,
    cam0: Vector2<f64>,
    cam1: Option<Vector2<f64>>,
    depth: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
struct PendingObs {
    frame_id: usize,
    camera: u8,
    pixel: Vector2<f64>,
}

/// Groups one frame's observations by associated landmark, applying the
/// mask and the camera subset of `mode`.
fn measurements(obs: &[Observation], config: &EstimatorConfig) -> Vec<Measurement> {
    let masked = |px: &Vector2<f64>| config.mask.is_some_and(|m| m.contains(px));
    let stereo = config.mode.uses_stereo();
    let mut by_id: BTreeMap<u64, Measurement> = BTreeMap::new();
    for o in obs.iter().filter(|o| o.camera == 0 && !masked(&o.pixel)) {
        by_id.insert(
            o.landmark_id,
            Measurement { id: o.landmark_id, cam0: o.pixel, cam1: None, depth: if stereo { o.depth } else { None } },
        );
    }
    for o in obs.iter().filter(|o| o.camera == 1) {
        if let Some(m) = by_id.get_mut(&o.landmark_id) {
            if stereo && !masked(&o.pixel) {
                m.cam1 = Some(o.pixel);
            } else {
                m.depth = None;
            }
        }
    }
    by_id.into_values().collect()
}

/// Fixed pseudo-random order for new features, so the budget does not favor
/// any id range.
fn scramble(id: u64) -> u64 {
    let mut z = id.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn floored_noise(n: &ImuNoise) -> ImuNoise {
    let d = ImuNoise::default();
    ImuNoise {
        gyro_density: n.gyro_density.max(0.1 * d.gyro_density),
        accel_density: n.accel_density.max(0.1 * d.accel_density),
        gyro_walk: n.gyro_walk.max(0.1 * d.gyro_walk),
        accel_walk: n.accel_walk.max(0.1 * d.accel_walk),
    }
}

/// Least-squares intersection of viewing rays; `None` when the rays are
/// nearly parallel or the point lands behind a camera.
fn triangulate_rays(rays: &[(Vector3<f64>, Vector3<f64>)], min_parallax: f64) -> Option<Vector3<f64>> {
    let mut max_angle: f64 = 0.0;
    for (i, a) in rays.iter().enumerate() {
        for b in &rays[i + 1..] {
            max_angle = max_angle.max(a.1.dot(&b.1).clamp(-1.0, 1.0).acos());
        }
    }
    if max_angle < min_parallax {
        return None;
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (c, d) in rays {
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * c;
    }
    let p = a.try_inverse()? * b;
    rays.iter().all(|(c, d)| (p - c).dot(d) > 0.5).then_some(p)
}

struct Runner<'a> {
    log: &'a SensorLog,
    config: &'a EstimatorConfig,
    camera: CameraModel,
    noise: ImuNoise,
    problem: WindowProblem,
    window_frames: Vec<usize>,
    pending: BTreeMap<u64, Vec<PendingObs>>,
    states: BTreeMap<usize, KeyframeState>,
    diagnostics: Vec<FrameDiagnostics>,
    initial_velocity: Vector3<f64>,
}

impl<'a> Runner<'a> {
    fn empty_problem(camera: CameraModel, mode: Mode) -> WindowProblem {
        WindowProblem {
            keyframes: Vec::new(),
            landmarks: Vec::new(),
            landmark_ids: Vec::new(),
            observations: Vec::new(),
            inertial: Vec::new(),
            prior: None,
            fixed_pose: None,
            estimate_motion: mode.uses_imu(),
            camera,
            gravity: GRAVITY,
        }
    }

    /// Starts a window at `state`, pose held fixed.
    fn anchor(&mut self, frame_id: usize, state: KeyframeState) {
        self.problem = Self::empty_problem(self.camera, self.config.mode);
        self.problem.keyframes.push(state);
        self.problem.fixed_pose = Some(0);
        if self.config.mode.uses_imu() {
            let c = self.config;
            let sigmas = [c.velocity_prior_sigma, c.gyro_bias_prior_sigma, c.accel_bias_prior_sigma];
            let mut jacobian = DMatrix::zeros(9, STATE_DIM);
            for (b, s) in sigmas.iter().enumerate() {
                for k in 0..3 {
                    jacobian[(3 * b + k, 6 + 3 * b + k)] = 1.0 / s;
                }
            }
            self.problem.prior =
                Some(LinearPrior { keyframes: vec![0], anchors: vec![state], jacobian, residual: DVector::zeros(9) });
        }
        self.window_frames = vec![frame_id];
        self.pending.clear();
    }

    fn emit_window(&mut self) {
        for (k, &f) in self.window_frames.iter().enumerate() {
            self.states.insert(f, self.problem.keyframes[k]);
        }
    }

    /// Constant-velocity extrapolation from the two newest keyframes.
    fn extrapolate(&self, t: f64) -> KeyframeState {
        let kfs = &self.problem.keyframes;
        let last = kfs[kfs.len() - 1];
        if kfs.len() < 2 {
            return KeyframeState { timestamp: t, ..last };
        }
        let prev = kfs[kfs.len() - 2];
        let ratio = (t - last.timestamp) / (last.timestamp - prev.timestamp);
        let rel = prev.pose.inverse().compose(&last.pose);
        let phi = so3::log_quat(&rel.rotation) * ratio;
        let step = Pose::new(so3::exp_quat(&phi), rel.translation * ratio);
        KeyframeState { timestamp: t, pose: last.pose.compose(&step), ..last }
    }

    fn kf_index(&self, frame_id: usize) -> Option<usize> {
        self.window_frames.iter().position(|&f| f == frame_id)
    }

    fn add_landmark(&mut self, id: u64, position: Vector3<f64>) -> usize {
        self.problem.landmarks.push(position);
        self.problem.landmark_ids.push(id);
        self.problem.landmarks.len() - 1
    }

    fn add_measurement(&mut self, kf: usize, landmark: usize, m: &Measurement, diag: &mut FrameDiagnostics) {
        let cutoff = self.config.depth_cutoff_factor * self.camera.baseline;
        let depth = m.depth.filter(|_| self.config.depth_weight > 0.0);
        match depth {
            Some(d) if d >= cutoff => diag.gated_depths += 1,
            Some(_) => diag.depth_residuals += 1,
            None => {}
        }
        self.problem.observations.push(VisualObservation { keyframe: kf, landmark, camera: 0, pixel: m.cam0, depth });
        diag.reprojection_residuals += 1;
        if let Some(px1) = m.cam1 {
            self.problem.observations.push(VisualObservation { keyframe: kf, landmark, camera: 1, pixel: px1, depth: None });
            diag.reprojection_residuals += 1;
        }
    }

    fn ray(&self, kf: usize, camera: u8, px: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let state = &self.problem.keyframes[kf];
        let t_wc = state.pose.compose(&self.camera.body_cam[camera as usize]);
        (t_wc.translation, t_wc.rotation * self.camera.intrinsics.ray(px).normalize())
    }

    fn process(&mut self, frame_index: usize) -> Result<(), EstimatorError> {
        let frame = self.log.frames[frame_index];
        let meas = measurements(self.log.frame_observations(frame.id), self.config);
        let mut diag = FrameDiagnostics { frame_id: frame.id, timestamp: frame.timestamp, ..Default::default() };
        let mode = self.config.mode;

        if self.problem.keyframes.is_empty() {
            let state = KeyframeState {
                timestamp: frame.timestamp,
                pose: Pose::identity(),
                velocity: if mode.uses_imu() { self.initial_velocity } else { Vector3::zeros() },
                bias: Default::default(),
            };
            self.anchor(frame.id, state);
        } else if mode.uses_imu() {
            let last = *self.problem.keyframes.last().expect("non-empty window");
            let samples = self.log.imu_between(last.timestamp, frame.timestamp);
            let pre = PreintegratedImu::integrate(samples, last.bias, self.noise)?;
            if let Some(out) = slide_window(&mut self.problem, self.config, NewKeyframe::Inertial(Box::new(pre)))? {
                self.states.insert(self.window_frames.remove(0), out);
            }
            self.window_frames.push(frame.id);
        } else {
            let predicted = self.extrapolate(frame.timestamp);
            if meas.len() < MIN_LANDMARKS {
                diag.gap = true;
                self.states.insert(frame.id, predicted);
                self.diagnostics.push(diag);
                return Ok(());
            }
            let index: HashMap<u64, usize> = self.problem.landmark_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            let tracked = meas.iter().filter(|m| index.contains_key(&m.id)).count();
            let initializable = meas.iter().filter(|m| m.depth.is_some()).count();
            if tracked < MIN_LANDMARKS && initializable >= MIN_LANDMARKS {
                self.emit_window();
                self.anchor(frame.id, predicted);
                diag.reanchored = true;
            } else {
                if let Some(out) = slide_window(&mut self.problem, self.config, NewKeyframe::State(predicted))? {
                    self.states.insert(self.window_frames.remove(0), out);
                }
                self.window_frames.push(frame.id);
            }
        }
        let kf = self.problem.keyframes.len() - 1;

        // Associate with window landmarks, then start new ones.
        let index: HashMap<u64, usize> = self.problem.landmark_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut fresh = Vec::new();
        for m in &meas {
            match index.get(&m.id) {
                Some(&l) => {
                    self.add_measurement(kf, l, m, &mut diag);
                    diag.landmarks += 1;
                }
                None => fresh.push(*m),
            }
        }
        fresh.sort_by_key(|m| scramble(m.id));
        let mut budget = self.config.max_features.saturating_sub(diag.landmarks);
        let mut deferred = Vec::new();
        for m in &fresh {
            match m.depth {
                Some(d) if budget > 0 => {
                    let p_c = self.camera.intrinsics.unproject(&m.cam0, d);
                    let p_w = self.camera.world_point(&self.problem.keyframes[kf], 0, &p_c);
                    let l = self.add_landmark(m.id, p_w);
                    self.add_measurement(kf, l, m, &mut diag);
                    self.pending.remove(&m.id);
                    diag.landmarks += 1;
                    diag.new_landmarks += 1;
                    budget -= 1;
                }
                _ => deferred.push(*m),
            }
        }
        for m in &deferred {
            let track = self.pending.entry(m.id).or_default();
            track.push(PendingObs { frame_id: frame.id, camera: 0, pixel: m.cam0 });
            if let Some(px1) = m.cam1 {
                track.push(PendingObs { frame_id: frame.id, camera: 1, pixel: px1 });
            }
        }
        let window = self.window_frames.clone();
        self.pending.retain(|_, obs| {
            obs.retain(|o| window.contains(&o.frame_id));
            !obs.is_empty()
        });
        let min_parallax = self.config.min_parallax_deg.to_radians();
        for m in &deferred {
            if budget == 0 {
                break;
            }
            let Some(track) = self.pending.get(&m.id) else { continue };
            let rays: Vec<_> = track
                .iter()
                .filter_map(|o| self.kf_index(o.frame_id).map(|k| self.ray(k, o.camera, &o.pixel)))
                .collect();
            let Some(p_w) = triangulate_rays(&rays, min_parallax) else { continue };
            let track = self.pending.remove(&m.id).expect("track present");
            let l = self.add_landmark(m.id, p_w);
            for o in track {
                let k = self.kf_index(o.frame_id).expect("pruned to window");
                self.problem.observations.push(VisualObservation {
                    keyframe: k,
                    landmark: l,
                    camera: o.camera,
                    pixel: o.pixel,
                    depth: None,
                });
                if k == kf {
                    diag.reprojection_residuals += 1;
                }
            }
            diag.landmarks += 1;
            diag.new_landmarks += 1;
            budget -= 1;
        }
        diag.gap = diag.landmarks < MIN_LANDMARKS;

        let report =
            solve_window(&mut self.problem, self.config).map_err(|e| match e {
                EstimatorError::SolverDiverged { .. } => EstimatorError::SolverDiverged { frame: frame.id },
                e => e,
            })?;
        self.drop_behind_camera();
        diag.iterations = report.iterations;
        diag.rms = report.rms();
        diag.window_landmarks = self.problem.landmarks.len();
        self.diagnostics.push(diag);
        Ok(())
    }

    /// Removes landmarks that ended up behind any observing camera.
    fn drop_behind_camera(&mut self) {
        let p = &self.problem;
        let mut keep = vec![true; p.landmarks.len()];
        for o in &p.observations {
            let t_wc = p.keyframes[o.keyframe].pose.compose(&p.camera.body_cam[o.camera as usize]);
            if t_wc.inverse_transform_point(&p.landmarks[o.landmark]).z <= 0.1 {
                keep[o.landmark] = false;
            }
        }
        if keep.iter().all(|&k| k) {
            return;
        }
        self.problem.retain_landmarks(&keep);
    }
}

/// Runs the sliding-window estimator over every frame of `log`.
///
/// The first keyframe is anchored at the identity pose. Inertial modes start
/// from `initial_velocity` (world frame) with zero biases under Gaussian
/// priors. Each frame's reported pose is the estimate at the moment it
/// leaves the window, so every pose is smoothed over `window_size` frames.
pub fn run_estimator(
    log: &SensorLog,
    config: &EstimatorConfig,
    initial_velocity: Vector3<f64>,
) -> Result<EstimatorOutput, EstimatorError> {
    config.validate()?;
    if log.frames.is_empty() {
        return Err(EstimatorError::InvalidLog("no frames".into()));
    }
    if log.frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
        return Err(EstimatorError::InvalidLog("frame timestamps not strictly increasing".into()));
    }
    if config.mode.uses_imu() {
        let (first, last) = (log.frames[0].timestamp, log.frames[log.frames.len() - 1].timestamp);
        let covered = log.imu.first().is_some_and(|s| s.timestamp <= first + 1e-9)
            && log.imu.last().is_some_and(|s| s.timestamp >= last - 1e-9);
        if !covered {
            return Err(EstimatorError::InvalidLog("IMU stream does not cover the frames".into()));
        }
    }
    let camera = CameraModel::new(log.intrinsics, log.body_cam0, &log.rig);
    let mut runner = Runner {
        log,
        config,
        camera,
        noise: floored_noise(&log.imu_noise),
        problem: Runner::empty_problem(camera, config.mode),
        window_frames: Vec::new(),
        pending: BTreeMap::new(),
        states: BTreeMap::new(),
        diagnostics: Vec::new(),
        initial_velocity,
    };
    for i in 0..log.frames.len() {
        runner.process(i)?;
    }
    runner.emit_window();
    Ok(EstimatorOutput { states: runner.states.into_values().collect(), diagnostics: runner.diagnostics })
}
