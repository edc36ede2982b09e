use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};

use super::{EstimatorError, KeyframeState};
use crate::geometry::{so3, CameraIntrinsics, Pose, StereoRig, MIN_DEPTH};
use crate::preintegration::PreintegratedImu;

pub type Matrix2x3 = SMatrix<f64, 2, 3>;
pub type Matrix2x6 = SMatrix<f64, 2, 6>;
pub type Matrix1x6 = SMatrix<f64, 1, 6>;
pub type Matrix1x3 = SMatrix<f64, 1, 3>;
pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;

/// Intrinsics plus body-from-camera extrinsics of both cameras.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub body_cam: [Pose; 2],
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, body_cam0: Pose, rig: &StereoRig) -> Self {
        Self { intrinsics, body_cam: [body_cam0, body_cam0.compose(&rig.t_cam0_cam1)], baseline: rig.baseline }
    }

    pub fn world_point(&self, state: &KeyframeState, camera: u8, p_cam: &Vector3<f64>) -> Vector3<f64> {
        state.pose.transform_point(&self.body_cam[camera as usize].transform_point(p_cam))
    }
}

/// Pixel error divided by `sigma_px`, with Jacobians with respect to the
/// keyframe pose perturbation `(dtheta, dp)` and the world landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprojectionResidual {
    pub residual: Vector2<f64>,
    pub d_pose: Matrix2x6,
    pub d_landmark: Matrix2x3,
}

/// Body-frame landmark and its derivative blocks shared by the visual residuals.
struct BodyPoint {
    p_body: Vector3<f64>,
    d_theta: Matrix3<f64>,
    d_position: Matrix3<f64>,
    d_landmark: Matrix3<f64>,
}

fn body_point(state: &KeyframeState, landmark: &Vector3<f64>) -> BodyPoint {
    let rt = state.pose.rotation_matrix().transpose();
    let p_body = rt * (landmark - state.pose.translation);
    BodyPoint { p_body, d_theta: so3::hat(&p_body), d_position: -rt, d_landmark: rt }
}

pub fn reprojection_residual(
    state: &KeyframeState,
    camera: &CameraModel,
    cam: u8,
    landmark: &Vector3<f64>,
    pixel_obs: &Vector2<f64>,
    sigma_px: f64,
) -> Result<ReprojectionResidual, EstimatorError> {
    let b = body_point(state, landmark);
    let t_bc = &camera.body_cam[cam as usize];
    let r_cb = t_bc.rotation_matrix().transpose();
    let pc = r_cb * (b.p_body - t_bc.translation);
    if pc.z <= MIN_DEPTH {
        return Err(EstimatorError::BehindCamera { depth: pc.z });
    }
    let k = &camera.intrinsics;
    let iz = 1.0 / pc.z;
    let px = Vector2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy);
    let d_proj = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y * iz * iz) / sigma_px;
    let d_body = d_proj * r_cb;
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_body * b.d_theta));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(d_body * b.d_position));
    Ok(ReprojectionResidual { residual: (px - pixel_obs) / sigma_px, d_pose, d_landmark: d_body * b.d_landmark })
}

/// First-order stereo depth standard deviation, `d^2 sigma_px sqrt(2) / (fx B)`.
pub fn depth_sigma(depth: f64, sigma_px: f64, fx: f64, baseline: f64) -> f64 {
    depth * depth * sigma_px * std::f64::consts::SQRT_2 / (fx * baseline)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthResidual {
    pub residual: f64,
    pub d_pose: Matrix1x6,
    pub d_landmark: Matrix1x3,
    pub sigma: f64,
}

/// Parameters of the depth term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthModel {
    pub sigma_px: f64,
    pub weight: f64,
    pub cutoff_factor: f64,
}

/// `sqrt(w_d) (d_meas - z_cam0) / sigma_d`, or `None` once the measured depth
/// reaches `cutoff_factor * baseline`.
pub fn depth_residual(
    state: &KeyframeState,
    camera: &CameraModel,
    landmark: &Vector3<f64>,
    measured_depth: f64,
    model: &DepthModel,
) -> Option<DepthResidual> {
    if !(measured_depth > 0.0) || measured_depth >= model.cutoff_factor * camera.baseline {
        return None;
    }
    let sigma = depth_sigma(measured_depth, model.sigma_px, camera.intrinsics.fx, camera.baseline);
    let scale = model.weight.sqrt() / sigma;
    let b = body_point(state, landmark);
    let t_bc = &camera.body_cam[0];
    let r_cb = t_bc.rotation_matrix().transpose();
    let z = (r_cb * (b.p_body - t_bc.translation)).z;
    let dz_dbody: Matrix1x3 = -scale * r_cb.row(2);
    let mut d_pose = Matrix1x6::zeros();
    d_pose.fixed_view_mut::<1, 3>(0, 0).copy_from(&(dz_dbody * b.d_theta));
    d_pose.fixed_view_mut::<1, 3>(0, 3).copy_from(&(dz_dbody * b.d_position));
    Some(DepthResidual { residual: scale * (measured_depth - z), d_pose, d_landmark: dz_dbody * b.d_landmark, sigma })
}

/// Whitened 15-vector `(r_R, r_v, r_p, r_bg, r_ba)` and its Jacobians with
/// respect to the 15-dof perturbations `(dtheta, dp, dv, dbg, dba)` of both
/// keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct InertialResidual {
    pub residual: Vector15,
    pub d_state_i: Matrix15,
    pub d_state_j: Matrix15,
}

/// Upper-triangular `W` with `W^T W = Sigma^-1` for the preintegration block.
pub fn preintegration_whitener(pre: &PreintegratedImu) -> SMatrix<f64, 9, 9> {
    let cov = pre.covariance + SMatrix::<f64, 9, 9>::identity() * 1e-14;
    let info = cov.try_inverse().unwrap_or_else(SMatrix::<f64, 9, 9>::zeros);
    let info = 0.5 * (info + info.transpose());
    match info.cholesky() {
        Some(c) => c.l().transpose(),
        None => SMatrix::<f64, 9, 9>::zeros(),
    }
}

pub fn inertial_residual(
    si: &KeyframeState,
    sj: &KeyframeState,
    pre: &PreintegratedImu,
    whitener: &SMatrix<f64, 9, 9>,
    gravity: &Vector3<f64>,
) -> Result<InertialResidual, EstimatorError> {
    let dt_states = sj.timestamp - si.timestamp;
    if (dt_states - pre.dt).abs() > 1e-6 {
        return Err(EstimatorError::NonAdjacentStates { span: dt_states, preintegrated: pre.dt });
    }
    let dt = pre.dt;
    let ri = si.pose.rotation_matrix();
    let rj = sj.pose.rotation_matrix();
    let rit = ri.transpose();
    let dbg = si.bias.gyro - pre.linearization_bias.gyro;
    let corrected = pre.correct_bias(&si.bias);

    let r_rot = so3::log(&(corrected.rotation.transpose() * rit * rj));
    let dv_world = sj.velocity - si.velocity - gravity * dt;
    let dp_world = sj.pose.translation - si.pose.translation - si.velocity * dt - 0.5 * gravity * dt * dt;
    let r_vel = rit * dv_world - corrected.velocity;
    let r_pos = rit * dp_world - corrected.position;

    let jr_inv = so3::right_jacobian_inv(&r_rot);
    let mut raw = SVector::<f64, 9>::zeros();
    raw.fixed_rows_mut::<3>(0).copy_from(&r_rot);
    raw.fixed_rows_mut::<3>(3).copy_from(&r_vel);
    raw.fixed_rows_mut::<3>(6).copy_from(&r_pos);

    // Rows (r_R, r_v, r_p); columns (theta, p, v, bg, ba).
    let mut ji = SMatrix::<f64, 9, 15>::zeros();
    let mut jj = SMatrix::<f64, 9, 15>::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * rj.transpose() * ri));
    let jr_bias = so3::right_jacobian(&(pre.d_rotation_d_gyro_bias * dbg));
    ji.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-jr_inv * so3::exp(&r_rot).transpose() * jr_bias * pre.d_rotation_d_gyro_bias));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);

    ji.fixed_view_mut::<3, 3>(3, 0).copy_from(&so3::hat(&(rit * dv_world)));
    ji.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-rit));
    ji.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-pre.d_velocity_d_gyro_bias));
    ji.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-pre.d_velocity_d_accel_bias));
    jj.fixed_view_mut::<3, 3>(3, 6).copy_from(&rit);

    ji.fixed_view_mut::<3, 3>(6, 0).copy_from(&so3::hat(&(rit * dp_world)));
    ji.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-rit));
    ji.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-rit * dt));
    ji.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-pre.d_position_d_gyro_bias));
    ji.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-pre.d_position_d_accel_bias));
    jj.fixed_view_mut::<3, 3>(6, 3).copy_from(&rit);

    let mut residual = Vector15::zeros();
    let mut d_i = Matrix15::zeros();
    let mut d_j = Matrix15::zeros();
    residual.fixed_rows_mut::<9>(0).copy_from(&(whitener * raw));
    d_i.fixed_view_mut::<9, 15>(0, 0).copy_from(&(whitener * ji));
    d_j.fixed_view_mut::<9, 15>(0, 0).copy_from(&(whitener * jj));

    let n = &pre.noise;
    let wg = 1.0 / (n.gyro_walk * dt.sqrt()).max(1e-12);
    let wa = 1.0 / (n.accel_walk * dt.sqrt()).max(1e-12);
    residual.fixed_rows_mut::<3>(9).copy_from(&(wg * (sj.bias.gyro - si.bias.gyro)));
    residual.fixed_rows_mut::<3>(12).copy_from(&(wa * (sj.bias.accel - si.bias.accel)));
    for k in 0..3 {
        d_i[(9 + k, 9 + k)] = -wg;
        d_j[(9 + k, 9 + k)] = wg;
        d_i[(12 + k, 12 + k)] = -wa;
        d_j[(12 + k, 12 + k)] = wa;
    }
    Ok(InertialResidual { residual, d_state_i: d_i, d_state_j: d_j })
}

/// Huber weight for a whitened residual of norm `r` and threshold `k`.
pub fn huber_weight(r: f64, k: f64) -> f64 {
    if r <= k {
        1.0
    } else {
        k / r
    }
}

/// Huber cost of a whitened residual norm (`r^2` in the quadratic region).
pub fn huber_cost(r: f64, k: f64) -> f64 {
    if r <= k {
        r * r
    } else {
        2.0 * k * r - k * k
    }
}
