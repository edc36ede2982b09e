use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::landmarks::LandmarkWorld;
use super::trajectory::GroundTruthSample;
use super::ScenarioConfig;
use crate::geometry::{triangulate_stereo, CameraIntrinsics, Pose, StereoRig, MIN_DEPTH};
use crate::preintegration::{ImuNoise, ImuSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub timestamp: f64,
}

/// One pixel measurement. `landmark_id` is the association the front-end
/// reports; `true_landmark_id` is the landmark that produced the pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub frame_id: usize,
    pub timestamp: f64,
    pub camera: u8,
    pub landmark_id: u64,
    pub true_landmark_id: u64,
    pub pixel: Vector2<f64>,
    /// Triangulated cam0 depth; set on cam0 observations with a stereo match.
    pub depth: Option<f64>,
}

impl Observation {
    pub fn is_mismatch(&self) -> bool {
        self.landmark_id != self.true_landmark_id
    }
}

/// Everything an estimator may consume. Both cameras share `intrinsics`;
/// `rig` is the reported (possibly miscalibrated) extrinsic.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLog {
    pub imu: Vec<ImuSample>,
    pub imu_noise: ImuNoise,
    pub frames: Vec<Frame>,
    /// Sorted by frame, then camera, then landmark id.
    pub observations: Vec<Observation>,
    pub intrinsics: CameraIntrinsics,
    pub rig: StereoRig,
    pub body_cam0: Pose,
}

impl SensorLog {
    pub fn frame_observations(&self, frame_id: usize) -> &[Observation] {
        let lo = self.observations.partition_point(|o| o.frame_id < frame_id);
        let hi = self.observations.partition_point(|o| o.frame_id <= frame_id);
        &self.observations[lo..hi]
    }

    /// Observations grouped by associated landmark id.
    pub fn tracks(&self) -> BTreeMap<u64, Vec<&Observation>> {
        let mut tracks: BTreeMap<u64, Vec<&Observation>> = BTreeMap::new();
        for o in &self.observations {
            tracks.entry(o.landmark_id).or_default().push(o);
        }
        tracks
    }

    /// IMU samples with `t0 <= t <= t1`.
    pub fn imu_between(&self, t0: f64, t1: f64) -> &[ImuSample] {
        let lo = self.imu.partition_point(|s| s.timestamp < t0 - 1e-9);
        let hi = self.imu.partition_point(|s| s.timestamp <= t1 + 1e-9);
        &self.imu[lo..hi]
    }
}

/// Counts over visible aliasing-row observations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MismatchStats {
    pub pattern_observations: usize,
    pub mismatched: usize,
}

struct Visible {
    px0: Vector2<f64>,
    depth: f64,
}

fn visible_cam0(k: &CameraIntrinsics, t_c0_w: &Pose, p: &nalgebra::Vector3<f64>, max_range: f64) -> Option<Visible> {
    let pc = t_c0_w.transform_point(p);
    if pc.z <= MIN_DEPTH || pc.norm() > max_range {
        return None;
    }
    let px0 = k.project_camera(&pc).ok()?;
    k.contains(&px0).then_some(Visible { px0, depth: pc.z })
}

/// Renders noisy pixel observations at every frame.
///
/// Aliasing is drawn once per frame: in an aliased frame every visible
/// pattern landmark is reported at its farther neighbor's position, the
/// whole row shifted by one period along the flow.
///
/// Pixels always come from the true extrinsics in `config`; stereo depths
/// are triangulated with `reported_rig`, so a calibration perturbation shows
/// up as biased depth and cam1 reprojection, not as pixel error.
pub fn render_observations<R: Rng, M: Rng>(
    frames: &[(Frame, GroundTruthSample)],
    world: &LandmarkWorld,
    config: &ScenarioConfig,
    reported_rig: &StereoRig,
    noise_rng: &mut R,
    mismatch_rng: &mut M,
) -> (Vec<Observation>, MismatchStats) {
    let k = &config.intrinsics;
    let true_rig = config.true_rig();
    let t_c1_c0 = true_rig.t_cam1_cam0();
    let stereo_range = config.max_range_factor * true_rig.baseline;
    let sigma = config.pixel_sigma;
    let mut next_in_pattern = vec![None; world.len()];
    for w in world.pattern.windows(2) {
        next_in_pattern[w[0]] = Some(w[1]);
    }
    let mut is_pattern = vec![false; world.len()];
    for &i in &world.pattern {
        is_pattern[i] = true;
    }

    let mut out = Vec::new();
    let mut stats = MismatchStats::default();
    let noisy = |px: Vector2<f64>, rng: &mut R| {
        if sigma == 0.0 {
            return px;
        }
        px + sigma * Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    };

    for (frame, gt) in frames {
        if config.dropouts.iter().any(|&(t0, t1)| frame.timestamp >= t0 && frame.timestamp <= t1) {
            continue;
        }
        let aliased = config.aliasing.mismatch_prob > 0.0 && mismatch_rng.random_bool(config.aliasing.mismatch_prob);
        let t_c0_w = gt.pose.compose(&config.body_cam0).inverse();
        let t_c1_w = t_c1_c0.compose(&t_c0_w);
        let mut cam0 = Vec::new();
        let mut cam1 = Vec::new();
        for (idx, lm) in world.landmarks.iter().enumerate() {
            let Some(vis) = visible_cam0(k, &t_c0_w, &lm.position, config.max_range) else {
                continue;
            };
            let mut source = idx;
            let mut vis = vis;
            if is_pattern[idx] {
                stats.pattern_observations += 1;
                if aliased {
                    if let Some(n) = next_in_pattern[idx] {
                        if let Some(v) = visible_cam0(k, &t_c0_w, &world.landmarks[n].position, config.max_range) {
                            source = n;
                            vis = v;
                            stats.mismatched += 1;
                        }
                    }
                }
            }
            let src = &world.landmarks[source];
            let px0 = noisy(vis.px0, noise_rng);
            let mut depth = None;
            let mut px1_obs = None;
            if vis.depth < stereo_range {
                let pc1 = t_c1_w.transform_point(&src.position);
                if pc1.z > MIN_DEPTH {
                    if let Ok(px1) = k.project_camera(&pc1) {
                        if k.contains(&px1) {
                            let px1 = noisy(px1, noise_rng);
                            if let Ok((_, d)) = triangulate_stereo(reported_rig, k, k, &px0, &px1) {
                                depth = Some(d);
                                px1_obs = Some(px1);
                            }
                        }
                    }
                }
            }
            let masked = |px: &Vector2<f64>| config.mask.is_some_and(|m| m.contains(px));
            if masked(&px0) {
                continue;
            }
            let (depth, px1_obs) = match px1_obs {
                Some(px1) if !masked(&px1) => (depth, Some(px1)),
                _ => (None, None),
            };
            let base = Observation {
                frame_id: frame.id,
                timestamp: frame.timestamp,
                camera: 0,
                landmark_id: lm.id,
                true_landmark_id: src.id,
                pixel: px0,
                depth,
            };
            cam0.push(base);
            if let Some(px1) = px1_obs {
                cam1.push(Observation { camera: 1, pixel: px1, depth: None, ..base });
            }
        }
        out.extend(cam0);
        out.extend(cam1);
    }
    (out, stats)
}
