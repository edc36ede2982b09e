use nalgebra::{DMatrix, DVector};

use super::problem::{InertialFactor, LinearPrior, Thresholds, WindowProblem, STATE_DIM};
use super::{EstimatorConfig, EstimatorError, KeyframeState};

/// Eliminates the variables `marg` from the quadratic `0.5 x^T H x + g^T x`.
///
/// Returns the reduced `(H, g)` over the remaining indices in ascending order.
/// `H_mm` is inverted through its eigen-decomposition so rank-deficient
/// blocks are tolerated.
pub fn schur_marginalize(h: &DMatrix<f64>, g: &DVector<f64>, marg: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let n = h.nrows();
    let mut is_marg = vec![false; n];
    for &m in marg {
        is_marg[m] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !is_marg[i]).collect();
    let mi: Vec<usize> = (0..n).filter(|&i| is_marg[i]).collect();
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| h[(rows[r], cols[c])]);
    let h_kk = sub(&keep, &keep);
    let h_km = sub(&keep, &mi);
    let h_mm = sub(&mi, &mi);
    let g_k = DVector::from_fn(keep.len(), |r, _| g[keep[r]]);
    let g_m = DVector::from_fn(mi.len(), |r, _| g[mi[r]]);
    let h_mm_inv = pseudo_inverse(&h_mm);
    let t = &h_km * h_mm_inv;
    let h_red = &h_kk - &t * h_km.transpose();
    let g_red = g_k - t * g_m;
    (0.5 * (&h_red + h_red.transpose()), g_red)
}

/// Diagonal scaling `D` with `D H D` having unit diagonal where possible.
fn jacobi_scale(h: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(h.nrows(), h.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }))
}

fn pseudo_inverse(h: &DMatrix<f64>) -> DMatrix<f64> {
    if h.is_empty() {
        return h.clone();
    }
    let d = jacobi_scale(h);
    let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |r, c| d[r] * h[(r, c)] * d[c]);
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let inv = eig.eigenvalues.map(|l| if l > max * 1e-12 && l > 0.0 { 1.0 / l } else { 0.0 });
    let core = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    DMatrix::from_fn(h.nrows(), h.ncols(), |r, c| d[r] * core[(r, c)] * d[c])
}

/// Factors `(H, g)` into a residual form with `J^T J = H`, `J^T r0 = g`.
fn to_residual_form(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let d = jacobi_scale(h);
    let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |r, c| d[r] * h[(r, c)] * d[c]);
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let kept: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > (max * 1e-12).max(1e-300)).collect();
    if kept.is_empty() {
        return None;
    }
    let n = h.nrows();
    let scaled_g = g.component_mul(&d);
    let mut j = DMatrix::zeros(kept.len(), n);
    let mut r = DVector::zeros(kept.len());
    for (row, &i) in kept.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let u = eig.eigenvectors.column(i);
        for c in 0..n {
            j[(row, c)] = s * u[c] / d[c];
        }
        r[row] = u.dot(&scaled_g) / s;
    }
    Some((j, r))
}

/// Marginalizes the oldest keyframe together with every landmark it observes.
///
/// The oldest keyframe's prior and inertial factors, and all observations of
/// its landmarks from any keyframe, are linearized at the current estimate
/// and reduced onto the keyframes they connect to, forming the new
/// [`LinearPrior`]. The marginalized landmarks leave the window; later
/// sightings start fresh tracks. When nothing connects to the oldest keyframe
/// the new oldest keyframe's pose is held fixed instead.
pub fn marginalize_oldest(problem: &mut WindowProblem, config: &EstimatorConfig) -> Result<KeyframeState, EstimatorError> {
    if problem.keyframes.len() < 2 {
        return Err(EstimatorError::InvalidConfig("cannot marginalize the only keyframe".into()));
    }
    let nl = problem.landmarks.len();
    let mut marg_landmark = vec![false; nl];
    for o in problem.observations.iter().filter(|o| o.keyframe == 0) {
        marg_landmark[o.landmark] = true;
    }
    let marg_ids: Vec<usize> = (0..nl).filter(|&l| marg_landmark[l]).collect();

    // Subproblem holding only the factors that touch the marginalized variables.
    let inertial: Vec<InertialFactor> = problem.inertial.iter().filter(|f| f.i == 0 || f.j == 0).cloned().collect();
    let mut connected: Vec<usize> = inertial.iter().map(|f| if f.i == 0 { f.j } else { f.i }).collect();
    if let Some(p) = &problem.prior {
        connected.extend(p.keyframes.iter().copied().filter(|&k| k != 0));
    }
    connected.extend(problem.observations.iter().filter(|o| marg_landmark[o.landmark] && o.keyframe != 0).map(|o| o.keyframe));
    connected.sort_unstable();
    connected.dedup();

    let mut local_index = vec![usize::MAX; nl];
    for (i, &l) in marg_ids.iter().enumerate() {
        local_index[l] = i;
    }
    let mut sub = problem.clone();
    sub.landmarks = marg_ids.iter().map(|&l| problem.landmarks[l]).collect();
    sub.landmark_ids = marg_ids.iter().map(|&l| problem.landmark_ids[l]).collect();
    sub.observations = problem
        .observations
        .iter()
        .filter(|o| marg_landmark[o.landmark])
        .map(|o| super::VisualObservation { landmark: local_index[o.landmark], ..*o })
        .collect();
    sub.inertial = inertial;
    let th = Thresholds::new(config);
    let lin = sub.linearize(&th)?;

    // Dense system over [window states, marginalized landmarks].
    let ns = sub.state_dim();
    let ne = 3 * marg_ids.len();
    let mut h = DMatrix::zeros(ns + ne, ns + ne);
    let mut g = DVector::zeros(ns + ne);
    h.view_mut((0, 0), (ns, ns)).copy_from(&lin.h);
    g.rows_mut(0, ns).copy_from(&lin.g);
    for l in 0..marg_ids.len() {
        let base = ns + 3 * l;
        h.view_mut((base, base), (3, 3)).copy_from(&lin.h_ll[l]);
        g.rows_mut(base, 3).copy_from(&lin.g_l[l]);
        for (k, hkl) in &lin.h_kl[l] {
            h.view_mut((STATE_DIM * k, base), (6, 3)).copy_from(hkl);
            h.view_mut((base, STATE_DIM * k), (3, 6)).copy_from(&hkl.transpose());
        }
    }

    // Drop constant dimensions and states outside the connected set, then
    // eliminate keyframe 0 and the marginalized landmarks.
    let fixed = problem.fixed_dims();
    let mut active: Vec<usize> = Vec::new();
    let mut marg: Vec<usize> = Vec::new();
    for (i, _) in fixed.iter().enumerate().take(STATE_DIM).filter(|(_, f)| !**f) {
        marg.push(active.len());
        active.push(i);
    }
    for &k in &connected {
        active.extend(STATE_DIM * k..STATE_DIM * (k + 1));
    }
    for i in ns..ns + ne {
        marg.push(active.len());
        active.push(i);
    }
    let h_active = DMatrix::from_fn(active.len(), active.len(), |r, c| h[(active[r], active[c])]);
    let g_active = DVector::from_fn(active.len(), |r, _| g[active[r]]);
    let (h_red, g_red) = schur_marginalize(&h_active, &g_active, &marg);

    // The reduced gradient is taken at the current estimate; re-express it
    // about each kept keyframe's first estimate.
    let anchors: Vec<KeyframeState> = connected
        .iter()
        .map(|&k| *problem.first_estimate(k).unwrap_or(&problem.keyframes[k]))
        .collect();
    let mut shift = DVector::zeros(STATE_DIM * connected.len());
    for (b, (&k, a)) in connected.iter().zip(&anchors).enumerate() {
        shift.rows_mut(STATE_DIM * b, STATE_DIM).copy_from(&a.local(&problem.keyframes[k]));
    }
    let g_anchor = g_red - &h_red * shift;

    let new_prior = if connected.is_empty() {
        None
    } else {
        to_residual_form(&h_red, &g_anchor).map(|(jacobian, residual)| LinearPrior {
            keyframes: connected.iter().map(|k| k - 1).collect(),
            anchors,
            jacobian,
            residual,
        })
    };

    let removed = problem.keyframes.remove(0);
    let keep_landmark: Vec<bool> = marg_landmark.iter().map(|m| !m).collect();
    problem.observations.retain(|o| !marg_landmark[o.landmark]);
    for o in &mut problem.observations {
        o.keyframe -= 1;
    }
    problem.retain_landmarks(&keep_landmark);
    problem.inertial.retain(|f| f.i != 0 && f.j != 0);
    for f in &mut problem.inertial {
        f.i -= 1;
        f.j -= 1;
    }
    problem.fixed_pose = match (problem.fixed_pose, &new_prior) {
        (Some(k), _) if k > 0 => Some(k - 1),
        (_, Some(_)) => None,
        _ => Some(0),
    };
    problem.prior = new_prior;
    Ok(removed)
}

/// How the next keyframe's initial state is obtained.
#[derive(Clone, Debug)]
pub enum NewKeyframe {
    /// Predict from the newest keyframe and link it with an inertial factor.
    Inertial(Box<crate::preintegration::PreintegratedImu>),
    /// Use the given state with no inertial link.
    State(KeyframeState),
}

/// Marginalizes the oldest keyframe if the window is full, then appends the
/// new one. Returns the marginalized state, if any.
pub fn slide_window(
    problem: &mut WindowProblem,
    config: &EstimatorConfig,
    next: NewKeyframe,
) -> Result<Option<KeyframeState>, EstimatorError> {
    let removed = if problem.keyframes.len() >= config.window_size {
        Some(marginalize_oldest(problem, config)?)
    } else {
        None
    };
    let last_index = problem.keyframes.len().checked_sub(1);
    match next {
        NewKeyframe::Inertial(pre) => {
            let last = last_index.map(|i| problem.keyframes[i]).ok_or(EstimatorError::InvalidConfig(
                "inertial keyframe needs a predecessor".into(),
            ))?;
            let start = crate::preintegration::NavState { pose: last.pose, velocity: last.velocity };
            let predicted = pre.predict(&start, &last.bias, &problem.gravity);
            problem.keyframes.push(KeyframeState {
                timestamp: last.timestamp + pre.dt,
                pose: predicted.pose,
                velocity: predicted.velocity,
                bias: last.bias,
            });
            let j = problem.keyframes.len() - 1;
            problem.inertial.push(InertialFactor::new(j - 1, j, *pre));
        }
        NewKeyframe::State(s) => problem.keyframes.push(s),
    }
    Ok(removed)
}
