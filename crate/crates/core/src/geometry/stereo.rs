use nalgebra::{Vector2, Vector3};

use super::{CameraIntrinsics, GeometryError, Pose};

/// Two-camera rig. `t_cam0_cam1` maps cam1 coordinates into cam0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub t_cam0_cam1: Pose,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(t_cam0_cam1: Pose) -> Result<Self, GeometryError> {
        let baseline = t_cam0_cam1.translation.norm();
        if !(baseline > 0.0) {
            return Err(GeometryError::InvalidRig("baseline must be positive".into()));
        }
        Ok(Self { t_cam0_cam1, baseline })
    }

    /// Rectified pair with cam1 displaced `baseline` meters along cam0's x axis.
    pub fn fronto_parallel(baseline: f64) -> Result<Self, GeometryError> {
        Self::new(Pose::from_translation(baseline, 0.0, 0.0))
    }

    /// True when the rig has identity rotation and a pure x translation.
    pub fn is_rectified(&self) -> bool {
        let t = &self.t_cam0_cam1.translation;
        self.t_cam0_cam1.rotation.angle() < 1e-12 && t.y.abs() < 1e-12 && t.z.abs() < 1e-12 && t.x > 0.0
    }

    /// cam1-from-cam0.
    pub fn t_cam1_cam0(&self) -> Pose {
        self.t_cam0_cam1.inverse()
    }
}

/// Triangulates a stereo match.
///
/// Returns the point in cam0 coordinates and its cam0 depth (z). Rectified
/// rigs with matching vertical intrinsics use the closed form
/// `depth = fx * B / disparity`; anything else goes through the midpoint of
/// the shortest segment between the two viewing rays.
pub fn triangulate_stereo(
    rig: &StereoRig,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    px0: &Vector2<f64>,
    px1: &Vector2<f64>,
) -> Result<(Vector3<f64>, f64), GeometryError> {
    if rig.is_rectified() && k0.fy == k1.fy && k0.cy == k1.cy {
        let b = rig.t_cam0_cam1.translation.x;
        let x0 = (px0.x - k0.cx) / k0.fx;
        let x1 = (px1.x - k1.cx) / k1.fx;
        let disparity = x0 - x1;
        if disparity <= 0.0 {
            return Err(GeometryError::DegenerateRay);
        }
        let z = b / disparity;
        let p = Vector3::new(x0 * z, (px0.y - k0.cy) / k0.fy * z, z);
        return Ok((p, z));
    }
    let d0 = k0.ray(px0);
    let c1 = rig.t_cam0_cam1.translation;
    let d1 = rig.t_cam0_cam1.rotation * k1.ray(px1);
    midpoint(&Vector3::zeros(), &d0, &c1, &d1).map(|p| (p, p.z))
}

/// Midpoint of the common perpendicular of two rays `o + s d`. Both ray
/// parameters must be positive.
pub fn midpoint(
    o0: &Vector3<f64>,
    d0: &Vector3<f64>,
    o1: &Vector3<f64>,
    d1: &Vector3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let u0 = d0.normalize();
    let u1 = d1.normalize();
    if u0.cross(&u1).norm() < 1e-12 {
        return Err(GeometryError::DegenerateRay);
    }
    let w = o0 - o1;
    let b = u0.dot(&u1);
    let d = u0.dot(&w);
    let e = u1.dot(&w);
    let denom = 1.0 - b * b;
    let s0 = (b * e - d) / denom;
    let s1 = (e - b * d) / denom;
    if s0 <= 0.0 || s1 <= 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    Ok(0.5 * ((o0 + s0 * u0) + (o1 + s1 * u1)))
}
