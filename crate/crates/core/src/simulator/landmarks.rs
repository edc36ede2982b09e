use nalgebra::Vector3;
use rand::Rng;

use super::path::RailPath;
use super::SimulatorError;
use crate::geometry::Landmark;

/// Landmark set plus the indices of the periodic ground row, ordered along
/// the track so that `pattern[k + 1]` is the next repetition after
/// `pattern[k]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkWorld {
    pub landmarks: Vec<Landmark>,
    pub pattern: Vec<usize>,
}

impl LandmarkWorld {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }
}

pub const LATERAL_RANGE: (f64, f64) = (2.0, 20.0);
pub const HEIGHT_RANGE: (f64, f64) = (-1.0, 8.0);

/// Scatters `round(density * length)` landmarks uniformly along the track in
/// a corridor on either side, then appends the aliasing row (ground level,
/// on the track centerline) when `aliasing_period > 0`.
pub fn generate_landmarks<R: Rng>(
    path: &RailPath,
    density: f64,
    aliasing_period: f64,
    rng: &mut R,
) -> Result<LandmarkWorld, SimulatorError> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(SimulatorError::InvalidConfig("landmark density must be > 0".into()));
    }
    if !(aliasing_period >= 0.0) {
        return Err(SimulatorError::InvalidConfig("aliasing period must be >= 0".into()));
    }
    let length = path.total_length();
    let count = (density * length).round() as usize;
    let mut landmarks = Vec::with_capacity(count);
    for id in 0..count {
        let s = rng.random_range(0.0..length);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = rng.random_range(LATERAL_RANGE.0..LATERAL_RANGE.1);
        let height = rng.random_range(HEIGHT_RANGE.0..HEIGHT_RANGE.1);
        let p = path.at(s);
        let xy = p.position + side * lateral * p.normal();
        landmarks.push(Landmark { id: id as u64, position: Vector3::new(xy.x, xy.y, height) });
    }
    let mut pattern = Vec::new();
    if aliasing_period > 0.0 {
        let n = (length / aliasing_period + 1e-9).floor() as usize;
        for k in 0..n {
            let p = path.at((k as f64 + 0.5) * aliasing_period);
            pattern.push(landmarks.len());
            landmarks.push(Landmark {
                id: landmarks.len() as u64,
                position: Vector3::new(p.position.x, p.position.y, 0.0),
            });
        }
    }
    Ok(LandmarkWorld { landmarks, pattern })
}
