use nalgebra::Vector2;

use super::SimulatorError;

/// One planar track element. Arc angles are signed: positive turns left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathElement {
    Straight { length: f64 },
    Arc { radius: f64, angle: f64 },
}

impl PathElement {
    pub fn length(&self) -> f64 {
        match *self {
            PathElement::Straight { length } => length,
            PathElement::Arc { radius, angle } => radius * angle.abs(),
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            PathElement::Straight { .. } => 0.0,
            PathElement::Arc { radius, angle } => angle.signum() / radius,
        }
    }
}

/// Ordered track elements at fixed height. An element may pin the heading
/// it expects to start with; a mismatch means the track has a kink.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathSpec {
    pub elements: Vec<(PathElement, Option<f64>)>,
}

impl PathSpec {
    pub fn new(elements: Vec<PathElement>) -> Self {
        Self { elements: elements.into_iter().map(|e| (e, None)).collect() }
    }

    pub fn straight(mut self, length: f64) -> Self {
        self.elements.push((PathElement::Straight { length }, None));
        self
    }

    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        self.elements.push((PathElement::Arc { radius, angle }, None));
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    start_s: f64,
    length: f64,
    curvature: f64,
    origin: Vector2<f64>,
    heading: f64,
}

impl Piece {
    fn position(&self, u: f64) -> Vector2<f64> {
        let h = self.heading;
        if self.curvature == 0.0 {
            return self.origin + u * Vector2::new(h.cos(), h.sin());
        }
        let k = self.curvature;
        let h1 = h + k * u;
        self.origin + Vector2::new((h1.sin() - h.sin()) / k, -(h1.cos() - h.cos()) / k)
    }

    fn heading_at(&self, u: f64) -> f64 {
        self.heading + self.curvature * u
    }
}

/// Arc-length parameterized planar curve starting at the origin heading +x.
///
/// Queries outside `[0, total]` extrapolate along the end tangents.
#[derive(Clone, Debug)]
pub struct RailPath {
    pieces: Vec<Piece>,
    total: f64,
}

/// Position, tangent heading and signed curvature at one arc length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub position: Vector2<f64>,
    pub heading: f64,
    pub curvature: f64,
}

impl PathPoint {
    pub fn tangent(&self) -> Vector2<f64> {
        Vector2::new(self.heading.cos(), self.heading.sin())
    }

    /// Left-pointing unit normal.
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.heading.sin(), self.heading.cos())
    }
}

pub fn build_path(spec: &PathSpec) -> Result<RailPath, SimulatorError> {
    if spec.elements.is_empty() {
        return Err(SimulatorError::InvalidPath("path has no elements".into()));
    }
    let mut pieces = Vec::with_capacity(spec.elements.len());
    let mut origin = Vector2::zeros();
    let mut heading = 0.0;
    let mut s = 0.0;
    for (i, (el, pinned)) in spec.elements.iter().enumerate() {
        match *el {
            PathElement::Straight { length } if !(length > 0.0) => {
                return Err(SimulatorError::InvalidPath(format!("element {i}: length must be > 0")));
            }
            PathElement::Arc { radius, angle } if !(radius > 10.0) || !(angle != 0.0) || !angle.is_finite() => {
                return Err(SimulatorError::InvalidPath(format!(
                    "element {i}: arc needs radius > 10 m and nonzero angle"
                )));
            }
            _ => {}
        }
        if let Some(h) = pinned {
            let diff = crate::geometry::wrap_angle(h - heading);
            if diff.abs() > 1e-9 {
                return Err(SimulatorError::DiscontinuousTangent { element: i, jump: diff });
            }
        }
        let piece = Piece { start_s: s, length: el.length(), curvature: el.curvature(), origin, heading };
        origin = piece.position(piece.length);
        heading = piece.heading_at(piece.length);
        s += piece.length;
        pieces.push(piece);
    }
    Ok(RailPath { pieces, total: s })
}

impl RailPath {
    pub fn total_length(&self) -> f64 {
        self.total
    }

    pub fn at(&self, s: f64) -> PathPoint {
        if s < 0.0 {
            let p = &self.pieces[0];
            return PathPoint { position: p.position(s), heading: p.heading, curvature: 0.0 };
        }
        if s > self.total {
            let last = self.pieces.last().expect("non-empty path");
            let end = last.position(last.length);
            let heading = last.heading_at(last.length);
            let u = s - self.total;
            return PathPoint {
                position: end + u * Vector2::new(heading.cos(), heading.sin()),
                heading,
                curvature: 0.0,
            };
        }
        let idx = match self.pieces.binary_search_by(|p| p.start_s.partial_cmp(&s).expect("finite arc length")) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let p = &self.pieces[idx];
        let u = s - p.start_s;
        PathPoint { position: p.position(u), heading: p.heading_at(u), curvature: p.curvature }
    }
}
