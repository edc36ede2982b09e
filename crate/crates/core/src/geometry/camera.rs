use nalgebra::{Vector2, Vector3};

use super::{GeometryError, Pose};

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Zero-distortion pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    /// 1920x1200 sensor behind an 8 mm lens, principal point at the center.
    pub fn rail_default() -> Self {
        Self {
            fx: 979.5,
            fy: 979.5,
            cx: 960.0,
            cy: 600.0,
            width: 1920,
            height: 1200,
        }
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Projects a camera-frame point without bounds checks.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at `depth` along the ray through `px`.
    pub fn unproject(&self, px: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx * depth, (px.y - self.cy) / self.fy * depth, depth)
    }

    /// Unit-depth ray direction through `px`.
    pub fn ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        self.unproject(px, 1.0)
    }
}

/// Result of [`project`]. Points outside the image are still projected and
/// reported with `in_image = false`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub in_image: bool,
}

pub fn project(
    k: &CameraIntrinsics,
    t_camera_world: &Pose,
    p_world: &Vector3<f64>,
) -> Result<Projection, GeometryError> {
    let pc = t_camera_world.transform_point(p_world);
    let pixel = k.project_camera(&pc)?;
    Ok(Projection { pixel, depth: pc.z, in_image: k.contains(&pixel) })
}
