//! Segment-based odometry error metrics.
//!
//! The ground truth is cut into consecutive pieces of fixed arc length. Each
//! estimated piece is rigidly aligned to the ground truth on its first tenth
//! and then scored by the endpoint distance (percent of the piece length) and
//! by the heading change error (degrees per meter).

mod report;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{heading_of, wrap_angle, GeometryError, Pose};

pub use report::{render_report, ReportRow};

pub const DEFAULT_MAX_DT: f64 = 0.025;
pub const DEFAULT_ALIGN_FRACTION: f64 = 0.10;
pub const DEFAULT_SEGMENT_LENGTHS: [f64; 2] = [10.0, 50.0];

const ARC_TOLERANCE: f64 = 1e-9;
const COINCIDENT: f64 = 1e-6;
/// Ratio of the second to the first position-scatter eigenvalue below which
/// the alignment window counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("trajectory needs at least two poses, found {0}")]
    TooFewPoses(usize),
    #[error("trajectory timestamps must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("estimate and ground truth do not overlap in time")]
    NoOverlap,
    #[error("ground truth covers {length:.3} m, shorter than one {segment} m segment")]
    TrajectoryTooShort { length: f64, segment: f64 },
    #[error("alignment window positions are coincident")]
    DegenerateAlignment,
    #[error("no segment errors to aggregate")]
    EmptyErrorSet,
    #[error("invalid evaluation setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Timestamped poses with strictly increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvaluationError> {
        if samples.len() < 2 {
            return Err(EvaluationError::TooFewPoses(samples.len()));
        }
        if let Some(i) = samples.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvaluationError::NotIncreasing(i + 1));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Applies `transform` on the left of every pose.
    pub fn transformed(&self, transform: &Pose) -> Self {
        Self { samples: self.samples.iter().map(|(t, p)| (*t, transform.compose(p))).collect() }
    }

    /// Total path length of the positions.
    pub fn arc_length(&self) -> f64 {
        self.samples.windows(2).map(|w| (w[1].1.translation - w[0].1.translation).norm()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePair {
    pub timestamp: f64,
    pub estimate: Pose,
    pub ground_truth: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    pub pairs: Vec<PosePair>,
    /// Ground-truth samples with no estimate within `max_dt`.
    pub unmatched: usize,
}

/// Pairs every ground-truth sample with the nearest estimate within `max_dt`.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Association, EvaluationError> {
    if !(max_dt >= 0.0) {
        return Err(EvaluationError::InvalidConfig("max_dt must be >= 0".into()));
    }
    let e = est.samples();
    let mut pairs = Vec::with_capacity(gt.len());
    let mut unmatched = 0;
    for &(t, ground_truth) in gt.samples() {
        let i = e.partition_point(|(te, _)| *te < t);
        let nearest = [i.checked_sub(1), (i < e.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (e[a].0 - t).abs().total_cmp(&(e[b].0 - t).abs()));
        match nearest {
            Some(k) if (e[k].0 - t).abs() <= max_dt => {
                pairs.push(PosePair { timestamp: t, estimate: e[k].1, ground_truth })
            }
            _ => unmatched += 1,
        }
    }
    if pairs.len() < 2 {
        return Err(EvaluationError::NoOverlap);
    }
    Ok(Association { pairs, unmatched })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Ground-truth arc length at the first pair.
    pub start_arclength: f64,
    pub length: f64,
    pub pairs: Vec<PosePair>,
}

/// Cuts `pairs` into consecutive segments spanning `length` meters of
/// ground-truth arc length. Neighboring segments share their boundary pair;
/// the trailing remainder is dropped.
pub fn split_segments(pairs: &[PosePair], length: f64) -> Result<Vec<Segment>, EvaluationError> {
    if !(length > 0.0) {
        return Err(EvaluationError::InvalidConfig(format!("segment length {length} must be > 0")));
    }
    let mut arc = Vec::with_capacity(pairs.len());
    let mut s = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        if i > 0 {
            s += (p.ground_truth.translation - pairs[i - 1].ground_truth.translation).norm();
        }
        arc.push(s);
    }
    let total = arc.last().copied().unwrap_or(0.0);
    if total + ARC_TOLERANCE < length {
        return Err(EvaluationError::TrajectoryTooShort { length: total, segment: length });
    }
    let mut segments = Vec::new();
    let mut start = 0;
    while start < pairs.len() {
        let Some(end) = (start + 1..pairs.len()).find(|&j| arc[j] - arc[start] >= length - ARC_TOLERANCE) else {
            break;
        };
        segments.push(Segment { start_arclength: arc[start], length, pairs: pairs[start..=end].to_vec() });
        start = end;
    }
    Ok(segments)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSegment {
    pub start_arclength: f64,
    pub length: f64,
    /// Estimate poses after applying `transform`.
    pub estimate: Vec<Pose>,
    pub ground_truth: Vec<Pose>,
    pub transform: Pose,
    /// Number of leading pairs used for the fit.
    pub window: usize,
    /// The fraction covered fewer than two pairs and was widened.
    pub extended: bool,
}

/// Rigidly aligns the estimate to the ground truth using the positions of the
/// first `fraction` of the pairs (at least two).
///
/// When those positions are (nearly) collinear the rotation about the common
/// line is not determined by positions; it is then taken from the body up
/// axes.
pub fn align_segment(segment: &Segment, fraction: f64) -> Result<AlignedSegment, EvaluationError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvaluationError::InvalidConfig(format!("alignment fraction {fraction} outside (0, 1]")));
    }
    let n = segment.pairs.len();
    if n < 2 {
        return Err(EvaluationError::TooFewPoses(n));
    }
    let wanted = (fraction * n as f64).ceil() as usize;
    let window = wanted.max(2).min(n);
    let head = &segment.pairs[..window];
    let transform = fit_rigid(head)?;
    Ok(AlignedSegment {
        start_arclength: segment.start_arclength,
        length: segment.length,
        estimate: segment.pairs.iter().map(|p| transform.compose(&p.estimate)).collect(),
        ground_truth: segment.pairs.iter().map(|p| p.ground_truth).collect(),
        transform,
        window,
        extended: wanted < 2,
    })
}

fn centroid<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Vector3<f64> {
    let mut n = 0.0;
    let sum = points.fold(Vector3::zeros(), |acc, p| {
        n += 1.0;
        acc + p
    });
    sum / n
}

/// Least-squares `T` with `T * estimate ~ ground truth` on positions.
fn fit_rigid(pairs: &[PosePair]) -> Result<Pose, EvaluationError> {
    let ce = centroid(pairs.iter().map(|p| &p.estimate.translation));
    let cg = centroid(pairs.iter().map(|p| &p.ground_truth.translation));
    let spread = |c: &Vector3<f64>, f: &dyn Fn(&PosePair) -> Vector3<f64>| {
        pairs.iter().map(|p| (f(p) - c).norm()).fold(0.0_f64, f64::max)
    };
    if spread(&cg, &|p| p.ground_truth.translation) < COINCIDENT
        || spread(&ce, &|p| p.estimate.translation) < COINCIDENT
    {
        return Err(EvaluationError::DegenerateAlignment);
    }
    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for p in pairs {
        let de = p.estimate.translation - ce;
        let dg = p.ground_truth.translation - cg;
        cross += dg * de.transpose();
        scatter += dg * dg.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let rotation = if ev[1] <= COLLINEAR_RATIO * ev[0] {
        collinear_rotation(pairs, &ce, &cg)
    } else {
        let svd = cross.svd(true, true);
        let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let d = (u * v_t).determinant().signum();
        u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
    };
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
    Ok(Pose::new(rotation, cg - rotation * ce))
}

fn principal_direction(points: impl Iterator<Item = Vector3<f64>> + Clone, c: &Vector3<f64>) -> Vector3<f64> {
    let scatter = points.clone().fold(Matrix3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
    let eig = scatter.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let mut d: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
    // Polish with power iteration; the dominant eigenvalue is well separated.
    for _ in 0..3 {
        d = (scatter * d).normalize();
    }
    let last = points.fold(None, |_, p| Some(p)).expect("non-empty");
    if d.dot(&(last - c)) < 0.0 {
        d = -d;
    }
    d
}

fn collinear_rotation(pairs: &[PosePair], ce: &Vector3<f64>, cg: &Vector3<f64>) -> Matrix3<f64> {
    let de = principal_direction(pairs.iter().map(|p| p.estimate.translation), ce);
    let dg = principal_direction(pairs.iter().map(|p| p.ground_truth.translation), cg);
    let cross = de.cross(&dg);
    let angle = cross.norm().atan2(de.dot(&dg));
    let axis = cross.try_normalize(1e-300).unwrap_or_else(|| {
        // Parallel or antiparallel: any perpendicular axis works.
        de.cross(&Vector3::x()).try_normalize(1e-6).unwrap_or_else(|| de.cross(&Vector3::y()).normalize())
    });
    let base = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), angle);
    let (mut s, mut c) = (0.0, 0.0);
    for p in pairs {
        let ue = base * (p.estimate.rotation * Vector3::z());
        let ug = p.ground_truth.rotation * Vector3::z();
        let pe = ue - dg * ue.dot(&dg);
        let pg = ug - dg * ug.dot(&dg);
        s += pe.cross(&pg).dot(&dg);
        c += pe.dot(&pg);
    }
    let roll = Rotation3::from_axis_angle(&Unit::new_unchecked(dg), s.atan2(c));
    (roll * base).into_inner()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentError {
    pub start_arclength: f64,
    pub length: f64,
    /// Endpoint distance as percent of `length`.
    pub distance_pct: f64,
    /// Heading change error in degrees per meter.
    pub heading_degpm: f64,
}

pub fn segment_errors(aligned: &AlignedSegment) -> Result<SegmentError, EvaluationError> {
    let (e0, e1) = (aligned.estimate[0], aligned.estimate[aligned.estimate.len() - 1]);
    let (g0, g1) = (aligned.ground_truth[0], aligned.ground_truth[aligned.ground_truth.len() - 1]);
    let d_est = wrap_angle(heading_of(&e1)? - heading_of(&e0)?);
    let d_gt = wrap_angle(heading_of(&g1)? - heading_of(&g0)?);
    Ok(SegmentError {
        start_arclength: aligned.start_arclength,
        length: aligned.length,
        distance_pct: (e1.translation - g1.translation).norm() / aligned.length * 100.0,
        heading_degpm: wrap_angle(d_est - d_gt).abs().to_degrees() / aligned.length,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Statistics {
    pub median: f64,
    pub rmse: f64,
}

impl Statistics {
    pub fn of(values: &[f64]) -> Result<Self, EvaluationError> {
        if values.is_empty() {
            return Err(EvaluationError::EmptyErrorSet);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let rmse = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        Ok(Self { median, rmse })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthReport {
    pub length: f64,
    /// `None` when every segment of this length was skipped.
    pub distance: Option<Statistics>,
    pub heading: Option<Statistics>,
    pub segments: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub lengths: Vec<LengthReport>,
    pub matched: usize,
    pub unmatched: usize,
}

/// Median and RMSE of both metrics over `errors`.
pub fn aggregate(errors: &[SegmentError]) -> Result<(Statistics, Statistics), EvaluationError> {
    let d: Vec<f64> = errors.iter().map(|e| e.distance_pct).collect();
    let h: Vec<f64> = errors.iter().map(|e| e.heading_degpm).collect();
    Ok((Statistics::of(&d)?, Statistics::of(&h)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub segment_lengths: Vec<f64>,
    pub max_dt: f64,
    pub align_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            segment_lengths: DEFAULT_SEGMENT_LENGTHS.to_vec(),
            max_dt: DEFAULT_MAX_DT,
            align_fraction: DEFAULT_ALIGN_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub segments: Vec<SegmentError>,
}

/// Runs association, segmentation, alignment and scoring for every
/// configured segment length. Segments whose alignment or heading is
/// degenerate are skipped and counted.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, config: &EvalConfig) -> Result<Evaluation, EvaluationError> {
    if config.segment_lengths.is_empty() {
        return Err(EvaluationError::InvalidConfig("no segment lengths".into()));
    }
    let assoc = associate(est, gt, config.max_dt)?;
    let mut lengths = Vec::new();
    let mut all = Vec::new();
    for &length in &config.segment_lengths {
        let mut errors = Vec::new();
        let mut skipped = 0;
        for segment in split_segments(&assoc.pairs, length)? {
            let scored = align_segment(&segment, config.align_fraction).and_then(|a| segment_errors(&a));
            match scored {
                Ok(e) => errors.push(e),
                Err(EvaluationError::DegenerateAlignment | EvaluationError::Geometry(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let stats = aggregate(&errors).ok();
        lengths.push(LengthReport {
            length,
            distance: stats.map(|s| s.0),
            heading: stats.map(|s| s.1),
            segments: errors.len(),
            skipped,
        });
        all.extend(errors);
    }
    Ok(Evaluation {
        report: EvalReport { lengths, matched: assoc.pairs.len(), unmatched: assoc.unmatched },
        segments: all,
    })
}
