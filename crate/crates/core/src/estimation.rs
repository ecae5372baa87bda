//! Set-membership identification of the parameter hypercube and the LMS
//! point estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{box_vertices, support, HPolytope, Hyperbox};
use crate::model::{d_matrix, ParametricSystem};
use crate::solvers::{lp_solve, LinearProgram, SolveStatus};
use crate::{Error, Result};

/// Slack added to the non-falsified offsets before intersecting. Rows of
/// `W` with zero width otherwise turn rounding noise in the data into a
/// spurious empty intersection.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub theta_set: Hyperbox,
    #[serde(with = "crate::serde_mat::vector")]
    pub theta_hat: DVector<f64>,
    pub mu: f64,
    pub theta0: Hyperbox,
}

impl EstimatorState {
    /// Starts from `Θ₀` with the point estimate projected into it.
    pub fn new(theta0: Hyperbox, theta_hat: DVector<f64>, mu: f64) -> Result<Self> {
        if theta_hat.len() != theta0.dim() {
            return Err(Error::dim("point estimate and parameter set differ in dimension"));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("LMS gain must be positive, got {mu}")));
        }
        let theta_hat = theta0.project(&theta_hat);
        Ok(EstimatorState { theta_set: theta0.clone(), theta_hat, mu, theta0 })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.theta_set.center
    }

    pub fn eta(&self) -> f64 {
        self.theta_set.side
    }
}

fn check_regression(d_prev: &DMatrix<f64>, d_now: &DVector<f64>, w: &HPolytope) -> Result<()> {
    if d_prev.nrows() != d_now.len() || w.dim() != d_now.len() {
        return Err(Error::dim(format!(
            "regressor is {:?}, offset has length {}, W lives in ℝ^{}",
            d_prev.shape(),
            d_now.len(),
            w.dim()
        )));
    }
    Ok(())
}

/// Parameters consistent with one observed transition: `−H_w D θ ≤ h_w + H_w d`.
pub fn nonfalsified_halfspaces(
    d_prev: &DMatrix<f64>,
    d_now: &DVector<f64>,
    w: &HPolytope,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_regression(d_prev, d_now, w)?;
    Ok((-(&w.a * d_prev), &w.b + &w.a * d_now))
}

/// Per-row widening of the non-falsified offsets that accounts for bounded
/// measurement noise on both ends of the transition:
/// `max_{m∈M} [H_w]_i m + max_{θ∈Θ, m∈M} −[H_w]_i A(θ) m`.
pub fn noise_dilation(w: &HPolytope, noise: &HPolytope, theta_prev: &Hyperbox, sys: &ParametricSystem) -> Result<DVector<f64>> {
    if noise.dim() != w.dim() || sys.n() != w.dim() {
        return Err(Error::dim("noise set, disturbance set and system disagree in dimension"));
    }
    let a_vertices: Vec<DMatrix<f64>> =
        box_vertices(theta_prev)?.iter().map(|t| sys.a_at(t)).collect::<Result<_>>()?;
    let mut out = DVector::zeros(w.nrows());
    for i in 0..w.nrows() {
        let row = w.a.row(i);
        let direct = support(noise, &row.transpose())?;
        let mut worst = f64::NEG_INFINITY;
        for a in &a_vertices {
            worst = worst.max(support(noise, &(-(row * a)).transpose())?);
        }
        out[i] = direct + worst;
    }
    Ok(out)
}

/// [`nonfalsified_halfspaces`] with offsets widened by [`noise_dilation`],
/// for data measured through noise bounded by `M`.
pub fn nonfalsified_halfspaces_noisy(
    d_prev: &DMatrix<f64>,
    d_now: &DVector<f64>,
    w: &HPolytope,
    noise: &HPolytope,
    theta_prev: &Hyperbox,
    sys: &ParametricSystem,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (h, off) = nonfalsified_halfspaces(d_prev, d_now, w)?;
    Ok((h, off + noise_dilation(w, noise, theta_prev, sys)?))
}

/// Per-coordinate bounds of `Θ ∩ {θ : H θ ≤ h}` via `2p` LPs.
pub fn intersection_bounds(theta: &Hyperbox, h: &DMatrix<f64>, off: &DVector<f64>) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
    let p = theta.dim();
    if h.ncols() != p || h.nrows() != off.len() {
        return Err(Error::dim("half-space data does not match the parameter dimension"));
    }
    let boxp = theta.to_polytope()?;
    let rows = h.nrows() + boxp.nrows();
    let mut a = DMatrix::zeros(rows, p);
    a.view_mut((0, 0), (h.nrows(), p)).copy_from(h);
    a.view_mut((h.nrows(), 0), (boxp.nrows(), p)).copy_from(&boxp.a);
    let mut b = DVector::zeros(rows);
    b.rows_mut(0, h.nrows()).copy_from(&off.add_scalar(FEASIBILITY_SLACK));
    b.rows_mut(h.nrows(), boxp.nrows()).copy_from(&boxp.b);

    let mut lower = DVector::zeros(p);
    let mut upper = DVector::zeros(p);
    for i in 0..p {
        for s in [1.0, -1.0] {
            let mut c = DVector::zeros(p);
            c[i] = s;
            let rep = lp_solve(&LinearProgram::new(c, a.clone(), b.clone()))?;
            match rep.status {
                SolveStatus::Optimal => {
                    if s > 0.0 {
                        upper[i] = rep.objective;
                    } else {
                        lower[i] = -rep.objective;
                    }
                }
                SolveStatus::Infeasible => return Ok(None),
                SolveStatus::Unbounded => return Err(Error::Unbounded("parameter box is unbounded".into())),
                SolveStatus::MaxIterations => return Err(Error::Solver("parameter-bound LP hit the pivot cap".into())),
            }
        }
    }
    Ok(Some((lower, upper)))
}

/// Replaces `Θ` by the smallest hypercube around the tight bounding box of
/// `Θ ∩ Δ`. The new side never exceeds the old one. `step` only labels the
/// error when the intersection is empty.
pub fn update_theta_set(state: &EstimatorState, halfspaces: &(DMatrix<f64>, DVector<f64>), step: usize) -> Result<EstimatorState> {
    let (h, off) = halfspaces;
    let Some((lower, upper)) = intersection_bounds(&state.theta_set, h, off)? else {
        return Err(Error::ModelFalsified { step });
    };
    let old = &state.theta_set;
    let (old_lo, old_hi) = (old.lower(), old.upper());
    let mut next = if lower == old_lo && upper == old_hi {
        old.clone()
    } else {
        Hyperbox::covering(&lower, &upper)?
    };
    next.side = next.side.min(old.side);
    let theta_hat = next.project(&state.theta_hat);
    Ok(EstimatorState { theta_set: next, theta_hat, ..state.clone() })
}

/// LMS step `θ̂ + μ Dᵀ(x_now − A(θ̂)x_prev − B(θ̂)u_prev)` followed by
/// projection onto the current parameter set.
pub fn update_point_estimate(
    state: &EstimatorState,
    d_prev: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    x_now: &DVector<f64>,
    sys: &ParametricSystem,
) -> Result<EstimatorState> {
    let predicted = sys.step(&state.theta_hat, x_prev, u_prev)?;
    if x_now.len() != predicted.len() || d_prev.shape() != (sys.n(), sys.p()) {
        return Err(Error::dim("LMS data does not match the system dimensions"));
    }
    let raw = &state.theta_hat + state.mu * d_prev.transpose() * (x_now - predicted);
    Ok(EstimatorState { theta_hat: state.theta_set.project(&raw), ..state.clone() })
}

/// How the lower bound is widened after a suspected actuator failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilationVariant {
    /// `max(factor·θ_min, floor)`: widen, but never below the floor.
    #[default]
    Max,
    /// `min(factor·θ_min, floor)`: jump straight to the floor (or below).
    Min,
}

/// Lowers each coordinate's lower bound to `factor·θ_min`, clamped against
/// `floor` per `variant`. Upper bounds are unchanged.
pub fn dilate_lower_bound(state: &EstimatorState, factor: f64, floor: &DVector<f64>, variant: DilationVariant) -> Result<EstimatorState> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!("dilation factor must lie in (0, 1], got {factor}")));
    }
    if floor.len() != state.theta_set.dim() {
        return Err(Error::dim("dilation floor and parameter set differ in dimension"));
    }
    if factor == 1.0 && variant == DilationVariant::Max {
        return Ok(state.clone());
    }
    let mut lower = state.theta_set.lower();
    let upper = state.theta_set.upper();
    for i in 0..lower.len() {
        let scaled = factor * lower[i];
        lower[i] = match variant {
            DilationVariant::Max => scaled.max(floor[i]),
            DilationVariant::Min => scaled.min(floor[i]),
        }
        .min(lower[i]);
    }
    let set = Hyperbox::covering(&lower, &upper)?;
    let theta_hat = set.project(&state.theta_hat);
    Ok(EstimatorState { theta_set: set, theta_hat, ..state.clone() })
}

/// `0.5 / max‖D‖²` over the given state and input samples. For systems
/// whose regressor is linear in `(x, u)`, passing the vertices of the
/// state and input boxes gives the exact maximum.
pub fn lms_gain(sys: &ParametricSystem, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in states {
        for u in inputs {
            worst = worst.max(d_matrix(sys, x, u)?.norm_squared());
        }
    }
    if worst == 0.0 {
        return Err(Error::invalid("regressor vanishes on every sample; LMS gain undefined"));
    }
    Ok(0.5 / worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// `x⁺ = θu + w`, scalar.
    fn toy() -> ParametricSystem {
        ParametricSystem::new(
            vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
            vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap()
    }

    fn interval_of(h: &(DMatrix<f64>, DVector<f64>)) -> (f64, f64) {
        let theta = Hyperbox::interval(-10.0, 10.0).unwrap();
        let (lo, hi) = intersection_bounds(&theta, &h.0, &h.1).unwrap().unwrap();
        (lo[0], hi[0])
    }

    #[test]
    fn toy_nonfalsified_interval() {
        let sys = toy();
        let d = d_matrix(&sys, &v(&[0.0]), &v(&[1.0])).unwrap();
        let off = crate::model::d_offset(&sys, &v(&[0.0]), &v(&[1.0]), &v(&[0.5])).unwrap();
        let w = HPolytope::symmetric_box(&v(&[0.1])).unwrap();
        let h = nonfalsified_halfspaces(&d, &off, &w).unwrap();
        let (lo, hi) = interval_of(&h);
        assert_abs_diff_eq!(lo, 0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 0.6, epsilon = 1e-9);

        let m = HPolytope::symmetric_box(&v(&[0.05])).unwrap();
        let theta = Hyperbox::interval(0.0, 1.0).unwrap();
        let hn = nonfalsified_halfspaces_noisy(&d, &off, &w, &m, &theta, &sys).unwrap();
        let (lo, hi) = interval_of(&hn);
        assert_abs_diff_eq!(lo, 0.35, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 0.65, epsilon = 1e-9);

        let zero = HPolytope::symmetric_box(&v(&[0.0])).unwrap();
        let hz = nonfalsified_halfspaces_noisy(&d, &off, &w, &zero, &theta, &sys).unwrap();
        assert_eq!(hz, h);
    }

    #[test]
    fn zero_regressor_is_all_or_nothing() {
        let w = HPolytope::symmetric_box(&v(&[0.1])).unwrap();
        let (h, off) = nonfalsified_halfspaces(&DMatrix::zeros(1, 1), &v(&[0.05]), &w).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 1));
        assert!(off.iter().all(|o| *o >= 0.0));
        let state = EstimatorState::new(Hyperbox::interval(0.0, 1.0).unwrap(), v(&[0.5]), 0.1).unwrap();
        assert_eq!(update_theta_set(&state, &(h, off), 0).unwrap().theta_set, state.theta_set);
        let falsified = nonfalsified_halfspaces(&DMatrix::zeros(1, 1), &v(&[0.5]), &w).unwrap();
        assert!(matches!(update_theta_set(&state, &falsified, 7), Err(Error::ModelFalsified { step: 7 })));
    }

    #[test]
    fn hypercube_update() {
        let state = EstimatorState::new(Hyperbox::interval(0.0, 1.0).unwrap(), v(&[0.9]), 0.1).unwrap();
        let h = (DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[0.6, -0.4]));
        let next = update_theta_set(&state, &h, 1).unwrap();
        assert_abs_diff_eq!(next.theta_set.center[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(next.theta_set.side, 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(next.theta_hat[0], 0.6, epsilon = 1e-9);

        let loose = (DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[5.0, 5.0]));
        assert_eq!(update_theta_set(&state, &loose, 1).unwrap().theta_set, state.theta_set);

        let sq = EstimatorState::new(Hyperbox::new(v(&[0.0, 0.0]), 1.0).unwrap(), v(&[0.0, 0.0]), 0.1).unwrap();
        let rect = (
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            v(&[0.2, 0.0, 0.1, 0.0]),
        );
        let next = update_theta_set(&sq, &rect, 1).unwrap();
        assert_abs_diff_eq!(next.theta_set.side, 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(next.theta_set.center[0], 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(next.theta_set.center[1], 0.05, epsilon = 1e-9);
    }

    #[test]
    fn lms_examples() {
        let sys = toy();
        let base = EstimatorState::new(Hyperbox::interval(0.4, 0.6).unwrap(), v(&[0.5]), 0.1).unwrap();
        let d = DMatrix::from_element(1, 1, 1.0);
        // residual 0.2 with D = 1, u = 1
        let next = update_point_estimate(&base, &d, &v(&[0.0]), &v(&[1.0]), &v(&[0.7]), &sys).unwrap();
        assert_abs_diff_eq!(next.theta_hat[0], 0.52, epsilon = 1e-12);
        let same = update_point_estimate(&base, &d, &v(&[0.0]), &v(&[1.0]), &v(&[0.5]), &sys).unwrap();
        assert_eq!(same.theta_hat, base.theta_hat);
        let big = EstimatorState { mu: 1.0, ..base };
        let clamped = update_point_estimate(&big, &d, &v(&[0.0]), &v(&[1.0]), &v(&[0.7]), &sys).unwrap();
        assert_abs_diff_eq!(clamped.theta_hat[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn lower_bound_dilation() {
        let floor = v(&[0.7 / 0.037]);
        let mk = |lo: f64| EstimatorState::new(Hyperbox::interval(lo, 1.0 / 0.027).unwrap(), v(&[lo]), 1.0).unwrap();
        let s = dilate_lower_bound(&mk(30.0), 0.7, &floor, DilationVariant::Max).unwrap();
        assert_abs_diff_eq!(s.theta_set.lower()[0], 21.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.theta_set.upper()[0], 1.0 / 0.027, epsilon = 1e-12);
        let s = dilate_lower_bound(&mk(20.0), 0.7, &floor, DilationVariant::Max).unwrap();
        assert_abs_diff_eq!(s.theta_set.lower()[0], floor[0], epsilon = 1e-12);
        let s = dilate_lower_bound(&mk(30.0), 1.0, &floor, DilationVariant::Max).unwrap();
        assert_eq!(s, mk(30.0));
        let s = dilate_lower_bound(&mk(30.0), 0.7, &floor, DilationVariant::Min).unwrap();
        assert_abs_diff_eq!(s.theta_set.lower()[0], floor[0], epsilon = 1e-12);
    }

    #[test]
    fn lms_gain_altitude() {
        let sys = crate::model::quadrotor_altitude_model(&Default::default(), 1.0 / 0.037, 1.0 / 0.027).unwrap().0;
        let mu = lms_gain(&sys, &[DVector::zeros(2)], &[v(&[0.0]), v(&[0.64])]).unwrap();
        assert_abs_diff_eq!(mu, 0.5 / (0.064 * 0.064), epsilon = 1e-9);
    }
}
