use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};

use super::residuals::{
    depth_residual, huber_cost, huber_weight, inertial_residual, reprojection_residual, CameraModel, Vector15,
};
use super::{EstimatorConfig, EstimatorError, KeyframeState};
use crate::geometry::so3;
use crate::preintegration::PreintegratedImu;

type Matrix6x3 = SMatrix<f64, 6, 3>;
type Matrix9 = SMatrix<f64, 9, 9>;

pub const STATE_DIM: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualObservation {
    /// Index into [`WindowProblem::keyframes`].
    pub keyframe: usize,
    /// Index into [`WindowProblem::landmarks`].
    pub landmark: usize,
    pub camera: u8,
    pub pixel: Vector2<f64>,
    /// Stereo depth, only ever set on cam0 observations.
    pub depth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InertialFactor {
    pub i: usize,
    pub j: usize,
    pub pre: PreintegratedImu,
    pub whitener: Matrix9,
}

impl InertialFactor {
    pub fn new(i: usize, j: usize, pre: PreintegratedImu) -> Self {
        let whitener = super::residuals::preintegration_whitener(&pre);
        Self { i, j, pre, whitener }
    }
}

/// Linear residual `r0 + J (x [-] x0)` on a set of keyframes, the result of
/// marginalization or an initial prior. Columns of `J` run over the
/// 15-dof blocks of `keyframes` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPrior {
    pub keyframes: Vec<usize>,
    pub anchors: Vec<KeyframeState>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl LinearPrior {
    pub fn dim(&self) -> usize {
        self.residual.len()
    }

    /// Residual and Jacobian with respect to the perturbations of `keyframes`.
    pub fn evaluate(&self, states: &[KeyframeState]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.keyframes.len();
        let mut err = DVector::zeros(STATE_DIM * n);
        let mut jac = self.jacobian.clone();
        for (b, (&k, anchor)) in self.keyframes.iter().zip(&self.anchors).enumerate() {
            let e = anchor.local(&states[k]);
            err.rows_mut(b * STATE_DIM, STATE_DIM).copy_from(&e);
            let jr_inv = so3::right_jacobian_inv(&e.fixed_rows::<3>(0).into_owned());
            let cols = self.jacobian.columns(b * STATE_DIM, 3) * jr_inv;
            jac.columns_mut(b * STATE_DIM, 3).copy_from(&cols);
        }
        (&self.residual + &self.jacobian * err, jac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowProblem {
    pub keyframes: Vec<KeyframeState>,
    pub landmarks: Vec<Vector3<f64>>,
    /// External id per landmark slot.
    pub landmark_ids: Vec<u64>,
    pub observations: Vec<VisualObservation>,
    pub inertial: Vec<InertialFactor>,
    pub prior: Option<LinearPrior>,
    /// Keyframe whose pose is held constant.
    pub fixed_pose: Option<usize>,
    /// Whether velocity and biases are optimized; otherwise held constant.
    pub estimate_motion: bool,
    pub camera: CameraModel,
    pub gravity: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    CostConverged,
    StepConverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    pub termination: Termination,
    pub residual_count: usize,
    /// Visual residuals skipped because the landmark fell behind a camera.
    pub behind_camera: usize,
}

impl SolveReport {
    pub fn rms(&self) -> f64 {
        if self.residual_count == 0 {
            0.0
        } else {
            (self.final_cost / self.residual_count as f64).sqrt()
        }
    }
}

pub(super) struct Thresholds {
    sigma_px: f64,
    huber_reproj: f64,
    huber_depth: f64,
    depth: super::DepthModel,
}

impl Thresholds {
    pub(super) fn new(config: &EstimatorConfig) -> Self {
        Self {
            sigma_px: config.pixel_sigma,
            huber_reproj: config.huber_px / config.pixel_sigma,
            huber_depth: 2.0,
            depth: config.depth_model(),
        }
    }
}

/// Normal equations with landmark blocks kept apart for Schur elimination.
pub(super) struct Linearization {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub h_ll: Vec<Matrix3<f64>>,
    pub g_l: Vec<Vector3<f64>>,
    /// Pose-landmark coupling blocks per landmark, keyed by keyframe.
    pub h_kl: Vec<Vec<(usize, Matrix6x3)>>,
}

fn add_visual(lin: &mut Linearization, k: usize, l: usize, jp: &SMatrix<f64, 6, 1>, jl: &Vector3<f64>, r: f64, w: f64) {
    let base = STATE_DIM * k;
    let mut block = lin.h.view_mut((base, base), (6, 6));
    block += jp * jp.transpose() * w;
    let mut gp = lin.g.rows_mut(base, 6);
    gp += jp * (r * w);
    lin.h_ll[l] += jl * jl.transpose() * w;
    lin.g_l[l] += jl * (r * w);
    let hkl = jp * jl.transpose() * w;
    match lin.h_kl[l].iter_mut().find(|(kk, _)| *kk == k) {
        Some((_, m)) => *m += hkl,
        None => lin.h_kl[l].push((k, hkl)),
    }
}

impl WindowProblem {
    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.keyframes.len()
    }

    /// Keeps landmarks with `keep[l]`, dropping their observations otherwise
    /// and compacting indices.
    pub fn retain_landmarks(&mut self, keep: &[bool]) {
        let mut remap = vec![usize::MAX; self.landmarks.len()];
        let mut next = 0;
        for (l, &k) in keep.iter().enumerate() {
            if k {
                remap[l] = next;
                next += 1;
            }
        }
        let mut l = 0;
        self.landmarks.retain(|_| {
            l += 1;
            keep[l - 1]
        });
        let mut l = 0;
        self.landmark_ids.retain(|_| {
            l += 1;
            keep[l - 1]
        });
        self.observations.retain(|o| keep[o.landmark]);
        for o in &mut self.observations {
            o.landmark = remap[o.landmark];
        }
    }

    fn check(&self) -> Result<(), EstimatorError> {
        if self.prior.is_none() && self.fixed_pose.is_none() {
            return Err(EstimatorError::RankDeficient);
        }
        let nk = self.keyframes.len();
        let bad = self.observations.iter().any(|o| o.keyframe >= nk || o.landmark >= self.landmarks.len())
            || self.inertial.iter().any(|f| f.i >= nk || f.j >= nk)
            || self.prior.as_ref().is_some_and(|p| p.keyframes.iter().any(|&k| k >= nk));
        if bad || self.landmark_ids.len() != self.landmarks.len() {
            return Err(EstimatorError::InvalidLog("residual references a missing state".into()));
        }
        Ok(())
    }

    /// Robustified cost (sum of squared whitened residuals in the quadratic
    /// region) and the number of scalar residuals.
    pub(super) fn cost(&self, th: &Thresholds) -> Result<(f64, usize, usize), EstimatorError> {
        let mut cost = 0.0;
        let mut count = 0;
        let mut behind = 0;
        for o in &self.observations {
            let kf = &self.keyframes[o.keyframe];
            let l = &self.landmarks[o.landmark];
            match reprojection_residual(kf, &self.camera, o.camera, l, &o.pixel, th.sigma_px) {
                Ok(r) => {
                    cost += huber_cost(r.residual.norm(), th.huber_reproj);
                    count += 2;
                }
                Err(EstimatorError::BehindCamera { .. }) => {
                    behind += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            if let Some(d) = o.depth.and_then(|d| depth_residual(kf, &self.camera, l, d, &th.depth)) {
                cost += huber_cost(d.residual.abs(), th.huber_depth);
                count += 1;
            }
        }
        for f in &self.inertial {
            let r = inertial_residual(&self.keyframes[f.i], &self.keyframes[f.j], &f.pre, &f.whitener, &self.gravity)?;
            cost += r.residual.norm_squared();
            count += 15;
        }
        if let Some(p) = &self.prior {
            cost += p.evaluate(&self.keyframes).0.norm_squared();
            count += p.dim();
        }
        Ok((cost, count, behind))
    }

    /// Linearization point fixed for keyframes that carry prior information.
    pub fn first_estimate(&self, k: usize) -> Option<&KeyframeState> {
        let p = self.prior.as_ref()?;
        p.keyframes.iter().position(|&x| x == k).map(|i| &p.anchors[i])
    }

    /// Normal equations at the current estimate. Jacobians of keyframes
    /// with prior information are taken at their first estimates so that
    /// all information on a state shares one linearization point.
    pub(super) fn linearize(&self, th: &Thresholds) -> Result<Linearization, EstimatorError> {
        let n = self.state_dim();
        let nl = self.landmarks.len();
        let mut lin = Linearization {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            h_ll: vec![Matrix3::zeros(); nl],
            g_l: vec![Vector3::zeros(); nl],
            h_kl: vec![Vec::new(); nl],
        };
        for o in &self.observations {
            let kf = &self.keyframes[o.keyframe];
            let fej = self.first_estimate(o.keyframe);
            let l = &self.landmarks[o.landmark];
            let r = match reprojection_residual(kf, &self.camera, o.camera, l, &o.pixel, th.sigma_px) {
                Ok(r) => r,
                Err(EstimatorError::BehindCamera { .. }) => continue,
                Err(e) => return Err(e),
            };
            let w = huber_weight(r.residual.norm(), th.huber_reproj);
            let jac = fej
                .and_then(|s| reprojection_residual(s, &self.camera, o.camera, l, &o.pixel, th.sigma_px).ok())
                .unwrap_or(r);
            for row in 0..2 {
                let jp = jac.d_pose.row(row).transpose();
                let jl = jac.d_landmark.row(row).transpose();
                add_visual(&mut lin, o.keyframe, o.landmark, &jp, &jl, r.residual[row], w);
            }
            let Some(z) = o.depth else { continue };
            if let Some(d) = depth_residual(kf, &self.camera, l, z, &th.depth) {
                let w = huber_weight(d.residual.abs(), th.huber_depth);
                let jac = fej.and_then(|s| depth_residual(s, &self.camera, l, z, &th.depth)).unwrap_or(d);
                add_visual(&mut lin, o.keyframe, o.landmark, &jac.d_pose.transpose(), &jac.d_landmark.transpose(), d.residual, w);
            }
        }
        for f in &self.inertial {
            let (si, sj) = (&self.keyframes[f.i], &self.keyframes[f.j]);
            let r = inertial_residual(si, sj, &f.pre, &f.whitener, &self.gravity)?;
            let (fi, fj) = (self.first_estimate(f.i), self.first_estimate(f.j));
            let jac = if fi.is_some() || fj.is_some() {
                inertial_residual(fi.unwrap_or(si), fj.unwrap_or(sj), &f.pre, &f.whitener, &self.gravity)?
            } else {
                r.clone()
            };
            let blocks = [(f.i, &jac.d_state_i), (f.j, &jac.d_state_j)];
            for &(a, ja) in &blocks {
                let mut ga = lin.g.rows_mut(STATE_DIM * a, STATE_DIM);
                ga += ja.transpose() * r.residual;
                for &(b, jb) in &blocks {
                    let mut hab = lin.h.view_mut((STATE_DIM * a, STATE_DIM * b), (STATE_DIM, STATE_DIM));
                    hab += ja.transpose() * jb;
                }
            }
        }
        if let Some(p) = &self.prior {
            let (r, j) = p.evaluate(&self.keyframes);
            let jtj = j.transpose() * &j;
            let jtr = j.transpose() * r;
            for (a, &ka) in p.keyframes.iter().enumerate() {
                let mut ga = lin.g.rows_mut(STATE_DIM * ka, STATE_DIM);
                ga += jtr.rows(STATE_DIM * a, STATE_DIM);
                for (b, &kb) in p.keyframes.iter().enumerate() {
                    let mut hab = lin.h.view_mut((STATE_DIM * ka, STATE_DIM * kb), (STATE_DIM, STATE_DIM));
                    hab += jtj.view((STATE_DIM * a, STATE_DIM * b), (STATE_DIM, STATE_DIM));
                }
            }
        }
        Ok(lin)
    }

    /// Mask of state dimensions held constant.
    pub fn fixed_dims(&self) -> Vec<bool> {
        let mut fixed = vec![false; self.state_dim()];
        for k in 0..self.keyframes.len() {
            let base = STATE_DIM * k;
            if !self.estimate_motion {
                fixed[base + 6..base + STATE_DIM].iter_mut().for_each(|f| *f = true);
            }
            if self.fixed_pose == Some(k) {
                fixed[base..base + 6].iter_mut().for_each(|f| *f = true);
            }
        }
        fixed
    }

    /// Damped Schur-reduced step for states and landmarks.
    fn step(&self, lin: &Linearization, lambda: f64, fixed: &[bool]) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
        let n = self.state_dim();
        let mut h = lin.h.clone();
        let mut g = lin.g.clone();
        // isotropic damping per 3-vector block
        for b in (0..n).step_by(3) {
            let m = ((h[(b, b)] + h[(b + 1, b + 1)] + h[(b + 2, b + 2)]) / 3.0).max(1e-6);
            for i in b..b + 3 {
                h[(i, i)] += lambda * m;
            }
        }
        let mut h_ll_inv = Vec::with_capacity(lin.h_ll.len());
        for (l, hll) in lin.h_ll.iter().enumerate() {
            let mut d = *hll;
            let m = (d.trace() / 3.0).max(1e-6);
            for i in 0..3 {
                d[(i, i)] += lambda * m + 1e-12;
            }
            let inv = d.try_inverse()?;
            let blocks = &lin.h_kl[l];
            for (a, hal) in blocks {
                let t = hal * inv;
                let mut ga = g.rows_mut(STATE_DIM * a, 6);
                ga -= t * lin.g_l[l];
                for (b, hbl) in blocks {
                    let mut hab = h.view_mut((STATE_DIM * a, STATE_DIM * b), (6, 6));
                    hab -= t * hbl.transpose();
                }
            }
            h_ll_inv.push(inv);
        }
        for (i, &f) in fixed.iter().enumerate() {
            if f {
                h.row_mut(i).fill(0.0);
                h.column_mut(i).fill(0.0);
                h[(i, i)] = 1.0;
                g[i] = 0.0;
            }
        }
        let h = 0.5 * (&h + h.transpose());
        let dx = -h.cholesky()?.solve(&g);
        let dl = (0..lin.h_ll.len())
            .map(|l| {
                let mut rhs = -lin.g_l[l];
                for (k, hkl) in &lin.h_kl[l] {
                    rhs -= hkl.transpose() * dx.rows(STATE_DIM * k, 6);
                }
                h_ll_inv[l] * rhs
            })
            .collect();
        Some((dx, dl))
    }

    fn apply(&self, dx: &DVector<f64>, dl: &[Vector3<f64>]) -> WindowProblem {
        let mut next = self.clone();
        for (k, kf) in next.keyframes.iter_mut().enumerate() {
            let d = Vector15::from_iterator(dx.rows(STATE_DIM * k, STATE_DIM).iter().copied());
            *kf = kf.retract(&d);
        }
        for (l, d) in next.landmarks.iter_mut().zip(dl) {
            *l += d;
        }
        next
    }
}

const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e16;

/// Levenberg-Marquardt on the robustified window cost.
///
/// Stops after `config.max_iterations` accepted or rejected linearizations,
/// when an accepted step lowers the cost by less than 1e-6 relative, or when
/// the step norm drops below 1e-8.
pub fn solve_window(problem: &mut WindowProblem, config: &EstimatorConfig) -> Result<SolveReport, EstimatorError> {
    problem.check()?;
    let th = Thresholds::new(config);
    let fixed = problem.fixed_dims();
    let (mut cost, count, behind) = problem.cost(&th)?;
    let mut report = SolveReport {
        iterations: 0,
        initial_cost: cost,
        final_cost: cost,
        accepted_costs: vec![cost],
        termination: Termination::MaxIterations,
        residual_count: count,
        behind_camera: behind,
    };
    let mut lambda = LAMBDA_INIT;
    'outer: while report.iterations < config.max_iterations {
        report.iterations += 1;
        let lin = problem.linearize(&th)?;
        loop {
            let Some((dx, dl)) = problem.step(&lin, lambda, &fixed) else {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    return Err(EstimatorError::SolverDiverged { frame: 0 });
                }
                continue;
            };
            let norm = (dx.norm_squared() + dl.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
            if norm < 1e-8 {
                report.termination = Termination::StepConverged;
                break 'outer;
            }
            let candidate = problem.apply(&dx, &dl);
            let (new_cost, new_count, new_behind) = candidate.cost(&th)?;
            if new_cost.is_finite() && new_cost <= cost {
                let relative = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                *problem = candidate;
                cost = new_cost;
                report.residual_count = new_count;
                report.behind_camera = new_behind;
                report.accepted_costs.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if relative < 1e-6 {
                    report.termination = Termination::CostConverged;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                return Err(EstimatorError::SolverDiverged { frame: 0 });
            }
        }
    }
    report.final_cost = cost;
    Ok(report)
}
