//! Per-step tube MPC problem, its condensed QP and the online loop that
//! interleaves parameter identification with control.
//!
//! The decision vector is `z = (v₀, …, v_{N−1}, α₁, …, α_N)`. The nominal
//! trajectory `x̄` is propagated with the center of the current parameter
//! set and the cost trajectory `x̂` with the point estimate; both are affine
//! in `z` so the whole problem stays a dense QP.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimation::{
    dilate_lower_bound, nonfalsified_halfspaces, nonfalsified_halfspaces_noisy, update_point_estimate, update_theta_set,
    DilationVariant, EstimatorState,
};
use crate::geometry::{unit_cube_vertices, HPolytope};
use crate::model::{d_matrix, d_offset, ConstraintSet, ParametricSystem, Trim};
use crate::solvers::{qp_solve, QuadraticProgram, SolveStatus};
use crate::synthesis::SynthesisArtifacts;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Identification on, tube sized by the current parameter set.
    #[default]
    Adaptive,
    /// Parameter set frozen at `Θ₀`, point estimate and hover input frozen
    /// at the initial assumption.
    RobustBaseline,
}

/// Widening of the parameter lower bound applied after every set update,
/// so that a sudden loss of actuator efficiency is never falsified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDilation {
    pub factor: f64,
    #[serde(with = "crate::serde_mat::vector")]
    pub floor: DVector<f64>,
    #[serde(default)]
    pub variant: DilationVariant,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub artifacts: SynthesisArtifacts,
    pub mode: ControlMode,
    pub steady_state_update: bool,
    /// Add the worst hover-input mismatch `ũ` to the tube growth.
    pub robustify_ss_error: bool,
    pub failure_dilation: Option<FailureDilation>,
    /// Measurement-noise bound used to widen the non-falsified sets. `None`
    /// treats measurements as exact.
    pub measurement_noise: Option<HPolytope>,
}

impl ControllerConfig {
    /// Adaptive mode with hover re-centering, horizon taken from the artifacts.
    pub fn new(artifacts: SynthesisArtifacts) -> Self {
        ControllerConfig {
            horizon: artifacts.horizon,
            artifacts,
            mode: ControlMode::Adaptive,
            steady_state_update: true,
            robustify_ss_error: false,
            failure_dilation: None,
            measurement_noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.mode == ControlMode::RobustBaseline && self.steady_state_update {
            return Err(Error::invalid("the robust baseline keeps the hover input fixed; disable steady-state updates"));
        }
        if self.robustify_ss_error && self.artifacts.u_tilde.is_none() {
            return Err(Error::invalid("hover-error robustification requested but the artifacts carry no ũ"));
        }
        if let Some(u) = &self.artifacts.u_tilde {
            if u.len() != self.artifacts.n_x() {
                return Err(Error::dim("ũ must have one entry per row of X₀"));
            }
        }
        let a = &self.artifacts;
        let (n, m) = (a.system.n(), a.system.m());
        if a.k.shape() != (m, n) || a.p.shape() != (n, n) || a.q.shape() != (n, n) || a.r.shape() != (m, m) {
            return Err(Error::dim("gain or weights do not match the system"));
        }
        if a.x0.dim() != n || a.constraints.f.ncols() != n || a.constraints.g.ncols() != m {
            return Err(Error::dim("X₀ or constraints do not match the system"));
        }
        if a.c.len() != a.constraints.nrows() {
            return Err(Error::dim("tube constants must have one entry per constraint row"));
        }
        if let Some(fd) = &self.failure_dilation {
            if fd.floor.len() != a.system.p() {
                return Err(Error::dim("dilation floor must have one entry per parameter"));
            }
            if !(fd.factor > 0.0 && fd.factor <= 1.0) {
                return Err(Error::invalid(format!("dilation factor must lie in (0, 1], got {}", fd.factor)));
            }
        }
        if let Some(mn) = &self.measurement_noise {
            if mn.dim() != n {
                return Err(Error::dim("measurement-noise set must live in the state space"));
            }
        }
        Ok(())
    }
}

/// Optimal tube for one step. All trajectories are in deviation
/// coordinates (state minus reference, input minus hover input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSolution {
    pub v: Vec<DVector<f64>>,
    /// `α₀ = 0, α₁, …, α_N`.
    pub alpha: Vec<f64>,
    pub x_bar: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub u0: DVector<f64>,
    pub cost: f64,
    pub z: DVector<f64>,
    pub iterations: usize,
}

/// `c + M z`.
#[derive(Debug, Clone)]
struct Affine {
    c: DVector<f64>,
    m: DMatrix<f64>,
}

impl Affine {
    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c + &self.m * z
    }
}

/// State and input trajectories under `x⁺ = A_cl x + B v_l`, `u = Kx + v_l`.
fn condense(
    a_cl: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    x_k: &DVector<f64>,
    horizon: usize,
    nz: usize,
) -> (Vec<Affine>, Vec<Affine>) {
    let (n, m) = (b.nrows(), b.ncols());
    let mut xs = vec![Affine { c: x_k.clone(), m: DMatrix::zeros(n, nz) }];
    let mut us = Vec::with_capacity(horizon);
    for l in 0..horizon {
        let x = &xs[l];
        let mut u = Affine { c: k * &x.c, m: k * &x.m };
        for i in 0..m {
            u.m[(i, l * m + i)] += 1.0;
        }
        let mut next = Affine { c: a_cl * &x.c, m: a_cl * &x.m };
        next.m.view_mut((0, l * m), (n, m)).add_assign(b);
        xs.push(next);
        us.push(u);
    }
    (xs, us)
}

trait AddAssignView {
    fn add_assign(&mut self, other: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DMatrix<f64>) {
        *self += other;
    }
}

/// The condensed problem together with what is needed to unpack it.
#[derive(Debug, Clone)]
pub struct TubeProgram {
    pub qp: QuadraticProgram,
    /// Cost at `z = 0` that the QP objective omits.
    pub constant: f64,
    horizon: usize,
    m: usize,
    x_bar: Vec<Affine>,
    x_hat: Vec<Affine>,
    k: DMatrix<f64>,
    x_k: DVector<f64>,
}

impl TubeProgram {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn unpack(&self, z: &DVector<f64>, iterations: usize) -> TubeSolution {
        let (n_v, m) = (self.horizon * self.m, self.m);
        let v: Vec<DVector<f64>> = (0..self.horizon).map(|l| z.rows(l * m, m).into_owned()).collect();
        let mut alpha = vec![0.0];
        alpha.extend(z.rows(n_v, self.horizon).iter().map(|a| a.max(0.0)));
        let cost = (self.qp.objective_at(z) + self.constant).max(0.0);
        TubeSolution {
            u0: &self.k * &self.x_k + &v[0],
            v,
            alpha,
            x_bar: self.x_bar.iter().map(|x| x.eval(z)).collect(),
            x_hat: self.x_hat.iter().map(|x| x.eval(z)).collect(),
            cost,
            z: z.clone(),
            iterations,
        }
    }
}

/// Row-wise right-hand side `1 − F·reference` of the state-input
/// constraints after shifting the state by the reference.
pub fn shifted_offsets(z: &ConstraintSet, reference: &DVector<f64>) -> Result<DVector<f64>> {
    if reference.len() != z.f.ncols() {
        return Err(Error::dim("reference length differs from the state dimension"));
    }
    Ok((&z.f * reference).map(|v| 1.0 - v))
}

/// Assembles the condensed QP for deviation state `x_k` (measured state
/// minus `reference`).
///
/// Rows, in order: `N·n_z` stage constraints, `N·n_x·2^p` tube-growth
/// constraints, `n_x` terminal constraints and `N` sign constraints on `α`.
pub fn build_qp(x_k: &DVector<f64>, reference: &DVector<f64>, est: &EstimatorState, cfg: &ControllerConfig) -> Result<TubeProgram> {
    cfg.validate()?;
    let a = &cfg.artifacts;
    let sys = &a.system;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let horizon = cfg.horizon;
    if x_k.len() != n {
        return Err(Error::dim(format!("state has length {}, system has {n} states", x_k.len())));
    }
    if est.theta_set.dim() != p || est.theta_hat.len() != p {
        return Err(Error::dim("estimator and system disagree on the parameter dimension"));
    }
    let offsets = shifted_offsets(&a.constraints, reference)?;
    let s_ref = offsets.min();
    if s_ref <= 0.0 {
        return Err(Error::invalid("reference lies on or outside the constraint set"));
    }

    let nz_vars = horizon * m + horizon;
    let alpha_col = |l: usize| horizon * m + l - 1;

    let center = est.center();
    let k = &a.k;
    let (x_bar, u_bar) = condense(&sys.closed_loop(center, k)?, &sys.b_at(center)?, k, x_k, horizon, nz_vars);
    let theta_hat = &est.theta_hat;
    let (x_hat, u_hat) = condense(&sys.closed_loop(theta_hat, k)?, &sys.b_at(theta_hat)?, k, x_k, horizon, nz_vars);

    // cost
    let mut hessian = DMatrix::zeros(nz_vars, nz_vars);
    let mut linear = DVector::zeros(nz_vars);
    let mut constant = 0.0;
    let mut add_quadratic = |y: &Affine, w: &DMatrix<f64>| {
        let wm = w * &y.m;
        hessian += 2.0 * y.m.transpose() * &wm;
        linear += 2.0 * wm.transpose() * &y.c;
        constant += y.c.dot(&(w * &y.c));
    };
    for l in 0..horizon {
        add_quadratic(&x_hat[l], &a.q);
        add_quadratic(&u_hat[l], &a.r);
    }
    add_quadratic(&x_hat[horizon], &a.p);
    let hessian = 0.5 * (&hessian + hessian.transpose());

    let z = &a.constraints;
    let nz = z.nrows();
    let hx = &a.x0.a;
    let nx = hx.nrows();
    let vertices = unit_cube_vertices(p)?;
    let nv = vertices.len();
    let rows = horizon * nz + horizon * nx * nv + nx + horizon;
    let mut amat = DMatrix::zeros(rows, nz_vars);
    let mut upper = DVector::zeros(rows);
    let mut r = 0;

    // stage constraints (F + GK)x̄_l + G v_l + c α_l ≤ 1 − F·ref
    let fgk = &z.f + &z.g * k;
    for l in 0..horizon {
        let lhs = &fgk * &x_bar[l].m;
        amat.view_mut((r, 0), (nz, nz_vars)).copy_from(&lhs);
        amat.view_mut((r, l * m), (nz, m)).add_assign(&z.g);
        if l > 0 {
            for i in 0..nz {
                amat[(r + i, alpha_col(l))] += a.c[i];
            }
        }
        let rhs = &offsets - &fgk * &x_bar[l].c;
        upper.rows_mut(r, nz).copy_from(&rhs);
        r += nz;
    }

    // tube growth η H_i D(x̄_l, ū_l) ẽ_j + λ α_l + w̄ + ũ_i ≤ α_{l+1}
    let eta = est.eta();
    let directions: Vec<(DMatrix<f64>, DMatrix<f64>)> = vertices
        .iter()
        .map(|e| {
            let mut ma = DMatrix::zeros(n, n);
            let mut mb = DMatrix::zeros(n, m);
            for s in 0..p {
                ma += e[s] * &sys.a[s + 1];
                mb += e[s] * &sys.b[s + 1];
            }
            (eta * hx * ma, eta * hx * mb)
        })
        .collect();
    let u_tilde = match (&a.u_tilde, cfg.robustify_ss_error) {
        (Some(u), true) => u.clone(),
        _ => DVector::zeros(nx),
    };
    for l in 0..horizon {
        for (ha, hb) in &directions {
            let lin = ha * &x_bar[l].m + hb * &u_bar[l].m;
            let con = ha * &x_bar[l].c + hb * &u_bar[l].c;
            amat.view_mut((r, 0), (nx, nz_vars)).copy_from(&lin);
            for i in 0..nx {
                if l > 0 {
                    amat[(r + i, alpha_col(l))] += a.lambda;
                }
                amat[(r + i, alpha_col(l + 1))] -= 1.0;
                upper[r + i] = -a.w_bar - u_tilde[i] - con[i];
            }
            r += nx;
        }
    }

    // terminal c_max (α_N + H_i x̄_N) ≤ min_j (1 − F_j·ref)
    let c_max = a.c_max();
    let term = c_max * hx * &x_bar[horizon].m;
    let term_c = c_max * hx * &x_bar[horizon].c;
    amat.view_mut((r, 0), (nx, nz_vars)).copy_from(&term);
    for i in 0..nx {
        amat[(r + i, alpha_col(horizon))] += c_max;
        upper[r + i] = s_ref - term_c[i];
    }
    r += nx;

    for l in 1..=horizon {
        amat[(r, alpha_col(l))] = -1.0;
        upper[r] = 0.0;
        r += 1;
    }
    debug_assert_eq!(r, rows);

    let lower = DVector::from_element(rows, f64::NEG_INFINITY);
    Ok(TubeProgram {
        qp: QuadraticProgram::new(hessian, linear, amat, lower, upper),
        constant,
        horizon,
        m,
        x_bar,
        x_hat,
        k: k.clone(),
        x_k: x_k.clone(),
    })
}

/// Solves one step. An infeasible QP is reported as
/// [`Error::Infeasible`] carrying `step`.
pub fn solve_step(
    x_k: &DVector<f64>,
    reference: &DVector<f64>,
    est: &EstimatorState,
    cfg: &ControllerConfig,
    warm: Option<&DVector<f64>>,
    step: usize,
) -> Result<TubeSolution> {
    let prog = build_qp(x_k, reference, est, cfg)?;
    let warm = warm.filter(|w| w.len() == prog.qp.dim());
    let rep = qp_solve(&prog.qp, warm)?;
    match rep.status {
        SolveStatus::Optimal => {
            let z = rep.solution.expect("optimal report carries a solution");
            Ok(prog.unpack(&z, rep.iterations))
        }
        SolveStatus::Infeasible => Err(Error::Infeasible { step }),
        SolveStatus::Unbounded => Err(Error::Solver(format!("tube QP unbounded at step {step}"))),
        SolveStatus::MaxIterations => Err(Error::Solver(format!("tube QP did not converge at step {step}"))),
    }
}

/// Hover input the controller applies around: `hover(θ̄_k)` when updates
/// are on, otherwise the fixed `initial` input.
pub fn update_steady_state(cfg: &ControllerConfig, est: &EstimatorState, trim: &Trim, initial: &DVector<f64>) -> Result<DVector<f64>> {
    if cfg.mode == ControlMode::RobustBaseline || !cfg.steady_state_update {
        return Ok(initial.clone());
    }
    trim.input(est.center())
}

pub fn reference_shift(x_abs: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    x_abs - reference
}

pub fn reference_unshift(x_dev: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    x_dev + reference
}

/// Per-input bounds implied by the rows of `G u ≤ 1` that involve a single
/// input and no state.
pub fn input_bounds(z: &ConstraintSet) -> (DVector<f64>, DVector<f64>) {
    let m = z.g.ncols();
    let mut lo = DVector::from_element(m, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(m, f64::INFINITY);
    for i in 0..z.nrows() {
        if z.f.row(i).amax() != 0.0 {
            continue;
        }
        let nonzero: Vec<usize> = (0..m).filter(|&j| z.g[(i, j)] != 0.0).collect();
        if let [j] = nonzero[..] {
            let bound = 1.0 / z.g[(i, j)];
            if bound > 0.0 {
                hi[j] = hi[j].min(bound);
            } else {
                lo[j] = lo[j].max(bound);
            }
        }
    }
    (lo, hi)
}

/// What one call of [`OnlineController::step`] produced.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Input sent to the plant (hover input plus deviation).
    pub u_abs: DVector<f64>,
    pub u_dev: DVector<f64>,
    pub u_ss: DVector<f64>,
    /// `None` when the QP was infeasible and the fallback was applied.
    pub solution: Option<TubeSolution>,
    pub infeasible: bool,
    /// The latest transition was inconsistent with the current parameter
    /// set; the set was left unchanged.
    pub falsified: bool,
}

/// Stateful controller: identification, hover re-centering and the tube QP.
#[derive(Debug, Clone)]
pub struct OnlineController {
    cfg: ControllerConfig,
    trim: Trim,
    est: EstimatorState,
    initial_u_ss: DVector<f64>,
    u_ss: DVector<f64>,
    last: Option<(DVector<f64>, DVector<f64>)>,
    plan: Option<TubeSolution>,
    plan_age: usize,
    step: usize,
}

impl OnlineController {
    /// `est` holds `Θ₀` and the initial point estimate; the hover input
    /// starts at `hover(θ̂₀)`.
    pub fn new(cfg: ControllerConfig, trim: Trim, est: EstimatorState) -> Result<Self> {
        cfg.validate()?;
        let sys = &cfg.artifacts.system;
        if trim.hover_unit.len() != sys.m() || trim.drift.len() != sys.n() {
            return Err(Error::dim("trim does not match the system"));
        }
        if est.theta_set.dim() != sys.p() {
            return Err(Error::dim("estimator and system disagree on the parameter dimension"));
        }
        let initial_u_ss = trim.input(&est.theta_hat)?;
        let u_ss = update_steady_state(&cfg, &est, &trim, &initial_u_ss)?;
        Ok(OnlineController { cfg, trim, est, initial_u_ss, u_ss, last: None, plan: None, plan_age: 0, step: 0 })
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.est
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn steady_state(&self) -> &DVector<f64> {
        &self.u_ss
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn system(&self) -> &ParametricSystem {
        &self.cfg.artifacts.system
    }

    /// Identification from the previous transition. Returns whether the
    /// transition falsified the current set.
    fn identify(&mut self, x_now: &DVector<f64>) -> Result<bool> {
        let Some((x_prev, u_prev)) = self.last.clone() else {
            return Ok(false);
        };
        let sys = self.system().clone();
        let observed = x_now - &self.trim.drift;
        let d_prev = d_matrix(&sys, &x_prev, &u_prev)?;
        let d_now = d_offset(&sys, &x_prev, &u_prev, &observed)?;
        let w = &self.cfg.artifacts.disturbance;
        let halfspaces = match &self.cfg.measurement_noise {
            Some(noise) => nonfalsified_halfspaces_noisy(&d_prev, &d_now, w, noise, &self.est.theta_set, &sys)?,
            None => nonfalsified_halfspaces(&d_prev, &d_now, w)?,
        };
        let falsified = match update_theta_set(&self.est, &halfspaces, self.step) {
            Ok(next) => {
                self.est = next;
                false
            }
            Err(Error::ModelFalsified { step }) => {
                log::warn!("transition at step {step} falsified the parameter set; keeping the previous set");
                true
            }
            Err(e) => return Err(e),
        };
        if let Some(fd) = &self.cfg.failure_dilation {
            self.est = dilate_lower_bound(&self.est, fd.factor, &fd.floor, fd.variant)?;
        }
        self.est = update_point_estimate(&self.est, &d_prev, &x_prev, &u_prev, &observed, &sys)?;
        Ok(falsified)
    }

    fn fallback(&self, x_dev: &DVector<f64>) -> DVector<f64> {
        let a = &self.cfg.artifacts;
        let m = a.system.m();
        let v = match &self.plan {
            Some(plan) if self.plan_age < plan.v.len() => plan.v[self.plan_age].clone(),
            _ => DVector::zeros(m),
        };
        let u = &a.k * x_dev + v;
        let (lo, hi) = input_bounds(&a.constraints);
        DVector::from_fn(m, |i, _| u[i].clamp(lo[i], hi[i]))
    }

    /// One control step from a measured state (in the same coordinates as
    /// `reference`, i.e. relative to the trim point).
    pub fn step(&mut self, measured: &DVector<f64>, reference: &DVector<f64>) -> Result<ControlOutput> {
        let n = self.system().n();
        if measured.len() != n || reference.len() != n {
            return Err(Error::dim("measured state or reference has the wrong length"));
        }
        let falsified = if self.cfg.mode == ControlMode::Adaptive { self.identify(measured)? } else { false };
        self.u_ss = update_steady_state(&self.cfg, &self.est, &self.trim, &self.initial_u_ss)?;

        let x_dev = reference_shift(measured, reference);
        let warm = self.plan.as_ref().map(|p| p.z.clone());
        let (u_dev, solution, infeasible) = match solve_step(&x_dev, reference, &self.est, &self.cfg, warm.as_ref(), self.step) {
            Ok(sol) => (sol.u0.clone(), Some(sol), false),
            Err(Error::Infeasible { step }) => {
                log::warn!("tube QP infeasible at step {step}; applying the shifted previous plan");
                self.plan_age += 1;
                (self.fallback(&x_dev), None, true)
            }
            Err(e) => return Err(e),
        };
        if let Some(sol) = &solution {
            self.plan = Some(sol.clone());
            self.plan_age = 0;
        }
        let u_abs = &self.u_ss + &u_dev;
        self.last = Some((measured.clone(), u_abs.clone()));
        self.step += 1;
        Ok(ControlOutput { u_abs, u_dev, u_ss: self.u_ss.clone(), solution, infeasible, falsified })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hyperbox;
    use crate::model::{wind_box, ModelKind, QuadrotorParams, WIND_DRAG};
    use crate::synthesis::{synthesize, SynthesisInputs};
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    fn altitude_artifacts() -> &'static SynthesisArtifacts {
        static A: OnceLock<SynthesisArtifacts> = OnceLock::new();
        A.get_or_init(|| {
            let q = QuadrotorParams::default();
            let (lo, hi) = (1.0 / 0.037, 1.0 / 0.027);
            let (system, constraints) = ModelKind::Altitude.build(&q, lo, hi).unwrap();
            synthesize(&SynthesisInputs {
                system,
                constraints,
                theta0: Hyperbox::interval(lo, hi).unwrap(),
                disturbance: wind_box(ModelKind::Altitude, 2.0, WIND_DRAG, 0.028).unwrap(),
                q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.01])),
                r: DMatrix::from_element(1, 1, 0.0025),
                horizon: 10,
                lambda: 0.9,
                max_rows: 200,
                robustify: None,
            })
            .unwrap()
        })
    }

    fn estimator(a: &SynthesisArtifacts) -> EstimatorState {
        EstimatorState::new(a.theta0.clone(), DVector::from_element(1, 1.0 / 0.037), 100.0).unwrap()
    }

    #[test]
    fn constraint_count_matches_layout() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let x = DVector::from_vec(vec![0.1, 0.0]);
        let prog = build_qp(&x, &DVector::zeros(2), &estimator(a), &cfg).unwrap();
        let expected = 10 * a.constraints.nrows() + 10 * a.n_x() * 2 + a.n_x() + 10;
        assert_eq!(prog.qp.a.nrows(), expected);
        assert_eq!(prog.qp.dim(), 20);
    }

    #[test]
    fn origin_is_optimal_with_minimal_tube() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let mut est = estimator(a);
        est.theta_hat = est.center().clone();
        let zero = DVector::zeros(2);
        let sol = solve_step(&zero, &zero, &est, &cfg, None, 0).unwrap();
        assert_abs_diff_eq!(sol.u0[0], 0.0, epsilon = 1e-7);
        assert!(sol.cost < 1e-10);
        assert_eq!(sol.alpha.len(), 11);
        assert_eq!(sol.alpha[0], 0.0);
        assert!(sol.alpha.iter().all(|&x| x >= 0.0));
        // with x̄ ≡ 0 the growth rows reduce to α_{l+1} ≥ λ α_l + w̄
        let mut minimal = 0.0;
        for l in 1..=10 {
            minimal = a.lambda * minimal + a.w_bar;
            assert!(sol.alpha[l] >= minimal - 1e-8, "α_{l} = {} < {minimal}", sol.alpha[l]);
        }
    }

    #[test]
    fn zero_spread_collapses_tube_rows() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let mut est = estimator(a);
        est.theta_set = Hyperbox::new(DVector::from_element(1, 1.0 / 0.028), 0.0).unwrap();
        let prog = build_qp(&DVector::from_vec(vec![0.2, -0.1]), &DVector::zeros(2), &est, &cfg).unwrap();
        let start = 10 * a.constraints.nrows();
        for r in start..start + 10 * a.n_x() * 2 {
            for j in 0..10 {
                assert_eq!(prog.qp.a[(r, j)], 0.0);
            }
        }
    }

    #[test]
    fn trajectories_follow_the_dynamics() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let est = estimator(a);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let sol = solve_step(&x, &DVector::zeros(2), &est, &cfg, None, 0).unwrap();
        let sys = &a.system;
        assert_eq!(sol.x_bar[0], x);
        assert_eq!(sol.x_hat[0], x);
        for l in 0..10 {
            let ub = &a.k * &sol.x_bar[l] + &sol.v[l];
            let nb = sys.step(est.center(), &sol.x_bar[l], &ub).unwrap();
            assert!((nb - &sol.x_bar[l + 1]).amax() < 1e-8);
            let uh = &a.k * &sol.x_hat[l] + &sol.v[l];
            let nh = sys.step(&est.theta_hat, &sol.x_hat[l], &uh).unwrap();
            assert!((nh - &sol.x_hat[l + 1]).amax() < 1e-8);
        }
        assert_abs_diff_eq!(sol.u0[0], (&a.k * &x)[0] + sol.v[0][0], epsilon = 1e-12);
    }

    #[test]
    fn warm_start_gives_the_same_input() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let est = estimator(a);
        let x = DVector::from_vec(vec![-0.4, 0.3]);
        let cold = solve_step(&x, &DVector::zeros(2), &est, &cfg, None, 0).unwrap();
        let warm = solve_step(&x, &DVector::zeros(2), &est, &cfg, Some(&cold.z), 0).unwrap();
        assert_abs_diff_eq!(cold.u0[0], warm.u0[0], epsilon = 1e-6);
    }

    #[test]
    fn unrecoverable_state_is_infeasible() {
        let a = altitude_artifacts();
        let cfg = ControllerConfig::new(a.clone());
        let x = DVector::from_vec(vec![0.7, 2.0]);
        match solve_step(&x, &DVector::zeros(2), &estimator(a), &cfg, None, 7) {
            Err(Error::Infeasible { step }) => assert_eq!(step, 7),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn steady_state_follows_the_center() {
        let a = altitude_artifacts();
        let trim = Trim::new(ModelKind::Altitude, &QuadrotorParams::default()).unwrap();
        let mut est = estimator(a);
        est.theta_set = Hyperbox::new(DVector::from_element(1, 1.0 / 0.028), 1.0).unwrap();
        let initial = trim.input(&DVector::from_element(1, 1.0 / 0.037)).unwrap();
        let cfg = ControllerConfig::new(a.clone());
        let u = update_steady_state(&cfg, &est, &trim, &initial).unwrap();
        assert_abs_diff_eq!(u[0], 0.27468, epsilon = 1e-12);
        assert_eq!(u, update_steady_state(&cfg, &est, &trim, &initial).unwrap());
        let mut base = cfg.clone();
        base.mode = ControlMode::RobustBaseline;
        base.steady_state_update = false;
        assert_abs_diff_eq!(update_steady_state(&base, &est, &trim, &initial).unwrap()[0], 0.36297, epsilon = 1e-12);
    }

    #[test]
    fn baseline_with_updates_is_rejected() {
        let mut cfg = ControllerConfig::new(altitude_artifacts().clone());
        cfg.mode = ControlMode::RobustBaseline;
        assert!(cfg.validate().is_err());
        cfg.steady_state_update = false;
        assert!(cfg.validate().is_ok());
        cfg.robustify_ss_error = true;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_shift_round_trips() {
        let x = DVector::from_vec(vec![0.3, -0.1]);
        let r = DVector::from_vec(vec![0.5, 0.0]);
        assert_eq!(reference_shift(&x, &DVector::zeros(2)), x);
        assert_eq!(reference_shift(&r, &r), DVector::zeros(2));
        assert!((reference_unshift(&reference_shift(&x, &r), &r) - &x).amax() < 1e-15);
    }

    #[test]
    fn input_bounds_read_the_thrust_box() {
        let a = altitude_artifacts();
        let (lo, hi) = input_bounds(&a.constraints);
        assert!(lo[0] < 0.0 && hi[0] > 0.0);
        assert_abs_diff_eq!(hi[0], 0.64 - 9.81 * 0.037, epsilon = 1e-12);
    }
}
